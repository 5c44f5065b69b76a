import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from superlab.model import AtomList, LogPerturbedTail, ModelSpec, TruncatedPowerLaw, ZeroMeasure

settings.register_profile(
    "default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

pos = st.floats(0.05, 3.0, allow_nan=False)


@st.composite
def jump_measures(draw):
    kind = draw(st.sampled_from(["zero", "atoms", "power", "log"]))
    if kind == "zero":
        return ZeroMeasure()
    if kind == "atoms":
        k = draw(st.integers(1, 3))
        return AtomList(tuple((draw(pos), draw(st.floats(0.0, 2.0))) for _ in range(k)))
    if kind == "power":
        u_min = draw(st.sampled_from([0.0, 0.01, 0.5]))
        u_max = draw(st.sampled_from([math.inf, 5.0, 50.0]))
        # an unbounded tail needs alpha > 1 for a finite first moment
        alpha = draw(st.floats(1.1, 1.9) if u_max == math.inf else st.floats(0.1, 1.9))
        return TruncatedPowerLaw(alpha, u_min, u_max, draw(st.floats(0.0, 1.0)))
    return LogPerturbedTail(draw(st.floats(1.1, 4.0)), draw(st.floats(1.5, 10.0)), draw(st.floats(0.0, 1.0)))


@st.composite
def conservative_motion(draw, n):
    off = np.array([[draw(st.floats(0.05, 2.0)) if i != j else 0.0 for j in range(n)] for i in range(n)])
    return off - np.diag(off.sum(axis=1))


@st.composite
def models(draw, max_types=3, jumps=True, subcritical=True):
    n = draw(st.integers(1, max_types))
    A = draw(conservative_motion(n))
    lo, hi = (-2.0, -0.3) if subcritical else (-2.0, 1.0)
    beta = [draw(st.floats(lo, hi)) for _ in range(n)]
    sigma = [draw(st.floats(0.3, 1.5)) for _ in range(n)]
    pi = tuple(draw(jump_measures()) if jumps else ZeroMeasure() for _ in range(n))
    return ModelSpec(A, beta, sigma, pi)


@pytest.fixture
def store_dir(tmp_path, monkeypatch):
    root = tmp_path / "store"
    monkeypatch.setenv("LAB_RESULT_DIR", str(root))
    return root
