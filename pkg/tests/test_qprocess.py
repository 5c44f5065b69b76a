import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from superlab.cumulant import conditioned_laplace, kappa_deterministic
from superlab.lab.models import builtin
from superlab.model import feller
from superlab.qprocess import (
    ConditioningError, EmpiricalLaw, StalenessWarning, double_limit_panel, laplace_panel, law_conditioned,
    law_conditioned_markov, law_htransform, law_qinfty_infty, law_qinfty_r, qsd_check, yaglom_estimate,
)
from superlab.simulate import SimConfig, simulate_ensemble
from superlab.spectral import triplet_for

FELLER = feller()
TR = triplet_for(FELLER)


@pytest.fixture(scope="module")
def feller_ensemble():
    cfg = SimConfig(n_paths=200_000, seed=21, record_times=(1.0, 2.0))
    return simulate_ensemble(FELLER, [1.0], cfg)


@pytest.fixture(scope="module")
def feller_yaglom():
    # a larger starting mass keeps enough survivors at t = 6 for the restart checks
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StalenessWarning)
        return yaglom_estimate(FELLER, TR, [5.0], 6.0, SimConfig(n_paths=200_000, seed=22))


def test_laplace_panel_removes_duplicate_bases():
    assert [label for label, _ in laplace_panel(TR)] == ["0.5*phi", "1*phi", "2*phi"]
    assert len(laplace_panel(triplet_for(builtin("mixed_2type")))) == 9


@given(arrays(float, st.integers(1, 50), elements=st.floats(0.0, 10.0)).filter(lambda w: w.sum() > 0))
def test_weights_normalize_and_ess_bounds(w):
    law = EmpiricalLaw(np.ones((w.size, 1)), w, "test")
    assert law.normalized_weights.sum() == pytest.approx(1.0)
    assert 1.0 - 1e-9 <= law.ess <= w.size + 1e-9


def test_equal_weights_have_full_ess_and_negative_weights_rejected():
    assert EmpiricalLaw(np.zeros((7, 1)), np.full(7, 3.0), "x").ess == pytest.approx(7.0)
    with pytest.raises(ValueError):
        EmpiricalLaw(np.zeros((2, 1)), np.array([1.0, -1.0]), "x")
    with pytest.raises(ConditioningError):
        EmpiricalLaw(np.zeros((5, 1)), np.ones(5), "x").require_ess(200)


def test_conditioning_without_survivors_is_an_error():
    ens = simulate_ensemble(FELLER, [0.01], SimConfig(n_paths=20, seed=1, record_times=(1.0, 30.0)))
    with pytest.raises(ConditioningError):
        law_conditioned(ens, 1.0, 29.0)


def test_survival_and_markov_conditioning_agree(feller_ensemble):
    direct = law_conditioned(feller_ensemble, 1.0, 1.0)
    markov = law_conditioned_markov(feller_ensemble, FELLER, 1.0, 1.0)
    for _, f in laplace_panel(TR):
        a, b = direct.laplace(f), markov.laplace(f)
        # the two estimators share paths; the sum of variances bounds the joint one
        assert abs(a.value - b.value) <= 3 * math.hypot(a.se, b.se)
        assert a.within(conditioned_laplace(FELLER, [1.0], f, 1.0, 1.0), 3.0)


def test_markov_conditioning_at_zero_horizon_is_plain_survival(feller_ensemble):
    law = law_conditioned_markov(feller_ensemble, FELLER, 2.0, 0.0)
    assert np.all(law.weights == 1.0)
    assert law.size == int(feller_ensemble.alive(2.0).sum())


def test_htransform_at_time_zero_is_point_mass():
    law = law_htransform(FELLER, TR, [2.0], 0.0, SimConfig())
    assert law.samples.tolist() == [[2.0]] and law.meta["martingale_ok"]


def test_htransform_weight_mean_is_one():
    law = law_htransform(FELLER, TR, [1.0], 3.0, SimConfig(n_paths=200_000, seed=5))
    wm = law.meta["weight_mean"]
    assert abs(wm["value"] - 1.0) <= 3 * wm["se"]
    assert law.laplace(TR.phi).within(conditioned_laplace(FELLER, [1.0], TR.phi, 3.0, 60.0), 3.0, bias=1e-6)


def test_htransform_rejects_null_measure():
    with pytest.raises(ValueError):
        law_htransform(FELLER, TR, [0.0], 1.0, SimConfig())


def test_yaglom_feller(feller_yaglom):
    # Yaglom limit of Feller b = c = 1 is Exponential(1): Laplace 1/(1 + theta), mean 1
    assert feller_yaglom.size > 1000
    assert feller_yaglom.laplace([1.0]).within(0.5, 3.0, bias=5e-3)
    k = kappa_deterministic(FELLER).kappa
    est = feller_yaglom.mean(TR.phi)
    assert abs(est.value * k - 1.0) <= 3 * est.se * k + 2e-2


def test_yaglom_staleness_warns_at_short_horizon():
    with pytest.warns(StalenessWarning):
        yaglom_estimate(FELLER, TR, [1.0], 0.5, SimConfig(n_paths=2000, seed=1))


def test_symmetric_two_type_yaglom_marginals_match():
    spec = builtin("feller_2type")
    tr = triplet_for(spec)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StalenessWarning)
        law = yaglom_estimate(spec, tr, [1.0, 1.0], 5.0, SimConfig(dt=0.02, n_paths=50_000, seed=9))
    for theta in (0.5, 1.0, 2.0):
        diff = law.expectation(np.exp(-theta * law.samples[:, 0]) - np.exp(-theta * law.samples[:, 1]))
        assert abs(diff.value) <= 3 * diff.se


def test_qsd_restart(feller_yaglom):
    rep = qsd_check(FELLER, TR, feller_yaglom, [0.0, 1.0], SimConfig(n_paths=80_000, seed=4),
                    bias=(0.0, 5e-3))
    assert rep.survival[0].value == 1.0 and rep.survival[0].se == 0.0
    assert rep.target[1] == pytest.approx(math.exp(-1.0))
    assert rep.passed


def test_qinfty_r_at_zero_is_the_yaglom_law(feller_yaglom):
    law = law_qinfty_r(feller_yaglom, FELLER, 0.0)
    assert np.array_equal(law.weights, feller_yaglom.weights)
    assert np.array_equal(law.samples, feller_yaglom.samples)


def test_qinfty_r_approaches_size_biased_law(feller_yaglom):
    infty = law_qinfty_infty(feller_yaglom, TR)
    # Gamma(2, 1) Laplace transform (1 + theta)^-2
    assert infty.laplace([1.0]).within(0.25, 3.0, bias=5e-3)
    gaps = []
    for r in (0.5, 1.0, 2.0, 4.0, 8.0):
        law = law_qinfty_r(feller_yaglom, FELLER, r)
        gaps.append(max(abs(law.laplace(f).value - infty.laplace(f).value) for _, f in laplace_panel(TR)))
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 2e-3


def test_panel_finite_regime_settles_at_size_biased_value():
    rep = double_limit_panel(FELLER, TR, [1.0], [2, 4, 8], [2, 4, 8], SimConfig(n_paths=50_000, seed=3),
                             target=0.25, mc_t_max=2.0)
    assert rep.oracle[-1][-1] == pytest.approx(0.25, abs=1e-3)
    assert rep.passed, rep.checks


def test_panel_infinite_regime_is_a_negative_control():
    spec = builtin("log_tail_1_5")
    tr = triplet_for(spec)
    rep = double_limit_panel(spec, tr, [1.0], [1, 4, 16, 32], [1, 4], SimConfig(n_paths=2_000, seed=3, dt=0.01),
                             regime="infinite", mc_t_max=0.5)
    ns, pm = rep.normalized_survival, rep.phi_mass_yaglom
    assert all(b < a for a, b in zip(ns, ns[1:]))
    assert all(b > a for a, b in zip(pm, pm[1:]))
