import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import linalg

from superlab.lab.models import builtin
from superlab.model import LogPerturbedTail, ModelSpec, ZeroMeasure, feller
from superlab.spectral import (
    NotSubcriticalWarning, SpectralError, eigen_triplet, h2_remainder, l_log_l_functional,
    mean_generator, spine_generator, triplet_for,
)

from conftest import models


@given(models(), st.floats(0.0, 20.0))
def test_eigenfunctions_are_invariant_under_the_semigroup(spec, t):
    tr = triplet_for(spec)
    T = linalg.expm(t * mean_generator(spec))
    scale = math.exp(tr.lam * t)
    assert np.max(np.abs(T @ tr.phi - scale * tr.phi)) <= 1e-8 * scale * np.max(tr.phi)
    assert np.max(np.abs(tr.nu @ T - scale * tr.nu)) <= 1e-8 * scale * np.max(tr.nu)


@given(models())
def test_triplet_normalization(spec):
    tr = triplet_for(spec)
    assert np.all(tr.phi > 0) and np.all(tr.nu > 0)
    assert tr.nu.sum() == pytest.approx(1.0, abs=1e-12)
    assert tr.nu @ tr.phi == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("b", [0.5, 1.0, 3.0])
def test_single_type_triplet(b):
    tr = triplet_for(feller(b, 1.0))
    assert tr.lam == -b
    assert tr.phi.tolist() == [1.0] and tr.nu.tolist() == [1.0]


def test_symmetric_two_type_triplet():
    tr = triplet_for(builtin("feller_2type"))
    assert tr.lam == pytest.approx(-1.0, abs=1e-14)
    assert tr.gap == pytest.approx(2.0, abs=1e-12)
    np.testing.assert_allclose(tr.nu, [0.5, 0.5], atol=1e-14)


def test_reducible_motion_rejected():
    with pytest.raises(SpectralError):
        eigen_triplet(np.array([[-1.0, 1.0], [0.0, -1.0]]))


def test_critical_model_warns():
    with pytest.warns(NotSubcriticalWarning):
        eigen_triplet(np.array([[0.0]]))


@st.composite
def symmetric_models(draw):
    n = draw(st.integers(2, 4))
    off = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            off[i, j] = off[j, i] = draw(st.floats(0.1, 2.0))
    A = off - np.diag(off.sum(axis=1))
    beta = [draw(st.floats(-2.0, -0.3)) for _ in range(n)]
    return ModelSpec(A, beta, [1.0] * n, tuple(ZeroMeasure() for _ in range(n)))


@given(symmetric_models())
def test_remainder_decreases_at_the_gap_rate(spec):
    # reversible motion keeps every eigenvalue real, so the profile is monotone
    tr = triplet_for(spec)
    t = np.linspace(0.2, 8.0, 30) / tr.gap
    prof = h2_remainder(spec, tr, t)
    assert np.all(np.diff(prof.sup_abs_h[1:]) <= 1e-12)
    scaled = prof.sup_abs_h * np.exp(tr.gap * t)
    assert np.max(scaled[1:]) <= 1.01 * scaled[1] + 1e-9


@given(models(), st.floats(0.01, 10.0))
def test_spine_stationary_law(spec, t):
    tr = triplet_for(spec)
    gen = spine_generator(spec, tr)
    assert np.all(gen.stationary >= 0) and gen.stationary.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(gen.G.sum(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(gen.stationary @ linalg.expm(t * gen.G), gen.stationary, atol=1e-10)


def test_random_three_type_spine_generator():
    rng = np.random.default_rng(3)
    off = rng.uniform(0.1, 2.0, (3, 3))
    np.fill_diagonal(off, 0.0)
    L = off - np.diag(off.sum(axis=1)) + np.diag(rng.uniform(-2, -0.5, 3))
    gen = spine_generator(L, eigen_triplet(L))
    assert np.max(np.abs(gen.stationary @ gen.G)) <= 1e-12
    assert np.max(np.abs(gen.G.sum(axis=1))) <= 1e-12


@pytest.mark.parametrize("theta,finite", [(1.5, False), (2.0, False), (2.5, True)])
def test_llogl_threshold(theta, finite):
    spec = ModelSpec([[0.0]], [-1.0], [1.0], (LogPerturbedTail(theta, math.e, 1.0),))
    assert math.isfinite(l_log_l_functional(spec, triplet_for(spec))) is finite


def test_llogl_closed_form_at_theta_two_and_a_half():
    # int_e^inf u^-1 (log u)^(1-theta) du = 1 / (theta - 2) = 2
    spec = builtin("log_tail_2_5")
    assert l_log_l_functional(spec, triplet_for(spec)) == pytest.approx(2.0, rel=1e-9)


@given(st.floats(0.1, 1.0), st.floats(1.1, 3.0))
def test_llogl_monotone_in_tail_weight(c, factor):
    def ell(w):
        spec = ModelSpec([[0.0]], [-1.0], [1.0], (LogPerturbedTail(3.0, 3.0, w),))
        return l_log_l_functional(spec, triplet_for(spec))

    assert ell(c * factor) > ell(c)


def test_llogl_zero_without_jumps():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert l_log_l_functional(feller(), triplet_for(feller())) == 0.0
