"""JSON model files.

Layout::

    {"n": 2,
     "motion": [[-1.0, 1.0], [0.5, -0.5]],
     "beta": [-1.0, -1.0],
     "sigma": [1.0, 1.0],
     "pi": [{"kind": "zero"},
            {"kind": "atoms", "atoms": [[2.0, 0.5]]}]}

Jump entries are tagged by ``kind``: ``zero``; ``atoms`` (list of
``[u, w]``); ``truncated_power_law`` (``alpha``, ``u_min``, ``u_max``, ``c``;
``u_max`` may be ``null`` for an unbounded support); ``log_perturbed_tail``
(``theta``, ``u_min``, ``c``). Floats are written with ``repr`` precision, so
parse -> serialize -> parse is bit-exact.
"""
from __future__ import annotations

import json
from pathlib import Path

from .jumps import INF, AtomList, LogPerturbedTail, TruncatedPowerLaw, ZeroMeasure
from .spec import ModelError, ModelSpec


def jump_to_dict(pi) -> dict:
    if isinstance(pi, ZeroMeasure):
        return {"kind": "zero"}
    if isinstance(pi, AtomList):
        return {"kind": "atoms", "atoms": [[u, w] for u, w in pi.atoms]}
    if isinstance(pi, TruncatedPowerLaw):
        return {
            "kind": "truncated_power_law",
            "alpha": pi.alpha,
            "u_min": pi.u_min,
            "u_max": None if pi.u_max == INF else pi.u_max,
            "c": pi.c,
        }
    if isinstance(pi, LogPerturbedTail):
        return {"kind": "log_perturbed_tail", "theta": pi.theta, "u_min": pi.u_min, "c": pi.c}
    raise ModelError(f"cannot serialize jump measure {pi!r}")


def jump_from_dict(d: dict):
    try:
        kind = d["kind"]
        if kind == "zero":
            return ZeroMeasure()
        if kind == "atoms":
            return AtomList(tuple((float(u), float(w)) for u, w in d["atoms"]))
        if kind == "truncated_power_law":
            u_max = d.get("u_max")
            return TruncatedPowerLaw(
                float(d["alpha"]), float(d["u_min"]),
                INF if u_max is None else float(u_max), float(d["c"]),
            )
        if kind == "log_perturbed_tail":
            return LogPerturbedTail(float(d["theta"]), float(d["u_min"]), float(d["c"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"malformed jump entry {d!r}: {exc}") from None
    raise ModelError(f"unknown jump kind {kind!r}")


def model_to_dict(spec: ModelSpec) -> dict:
    return {
        "n": spec.n,
        "motion": spec.motion.tolist(),
        "beta": spec.beta.tolist(),
        "sigma": spec.sigma.tolist(),
        "pi": [jump_to_dict(p) for p in spec.pi],
    }


def model_from_dict(d: dict) -> ModelSpec:
    missing = {"n", "motion", "beta", "sigma", "pi"} - set(d)
    if missing:
        raise ModelError(f"model file missing keys {sorted(missing)}")
    spec = ModelSpec(d["motion"], d["beta"], d["sigma"], tuple(jump_from_dict(p) for p in d["pi"]))
    if spec.n != d["n"]:
        raise ModelError(f"declared n={d['n']} but motion is {spec.n}x{spec.n}")
    return spec


def dumps_model(spec: ModelSpec) -> str:
    return json.dumps(model_to_dict(spec), indent=2)


def loads_model(text: str) -> ModelSpec:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"model file is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise ModelError("model file must hold a JSON object")
    return model_from_dict(d)


def load_model(path: str | Path) -> ModelSpec:
    return loads_model(Path(path).read_text())


def save_model(spec: ModelSpec, path: str | Path) -> None:
    Path(path).write_text(dumps_model(spec) + "\n")
