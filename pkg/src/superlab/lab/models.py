"""Named models shipped with the package (``builtin:<name>`` on the command line)."""
from __future__ import annotations

import math

from ..model import AtomList, LogPerturbedTail, ModelSpec, TruncatedPowerLaw, ZeroMeasure, feller


def _log_tail(theta: float) -> ModelSpec:
    return ModelSpec([[0.0]], [-1.0], [1.0], (LogPerturbedTail(theta, math.e, 1.0),))


BUILTIN = {
    "feller": lambda: feller(1.0, 1.0),
    "feller_c2": lambda: feller(1.0, 2.0),
    "feller_2type": lambda: ModelSpec([[-1.0, 1.0], [1.0, -1.0]], [-1.0, -1.0], [1.0, 1.0],
                                      (ZeroMeasure(), ZeroMeasure())),
    "atoms": lambda: ModelSpec([[0.0]], [-1.0], [0.0], (AtomList(((1.0, 0.5),)),)),
    "log_tail_1_5": lambda: _log_tail(1.5),
    "log_tail_2": lambda: _log_tail(2.0),
    "log_tail_2_5": lambda: _log_tail(2.5),
    "mixed_2type": lambda: ModelSpec(
        [[-2.0, 2.0], [1.0, -1.0]], [-0.5, -1.5], [0.5, 0.8],
        (TruncatedPowerLaw(1.5, 0.0, math.inf, 0.3), AtomList(((0.5, 1.0), (2.0, 0.2)))),
    ),
}


def builtin(name: str) -> ModelSpec:
    try:
        return BUILTIN[name]()
    except KeyError:
        raise KeyError(f"unknown builtin model {name!r}; choose from {sorted(BUILTIN)}") from None
