import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, linalg

from superlab.cumulant import (
    CumulantError, HorizonWarning, conditioned_laplace, extinction_curve, extinction_remainder, flow_defect, htransform_laplace,
    kappa_deterministic, laplace_functional, rate_identity_rhs, rate_ratio, solve_cumulant,
    survival_probability, yaglom_laplace,
)
from superlab.lab.models import BUILTIN, builtin
from superlab.model import AtomList, ModelSpec, ZeroMeasure, feller
from superlab.spectral import mean_generator, triplet_for

from conftest import models

TOL = 1e-10

# Brute-force solve of dV/dt = -(b V + c V^2), V_0 = 1, at t = 1 with b = c = 1 by an
# explicit RK45 run at tight tolerance; frozen here so the package solver is checked
# against a number it did not produce.
FELLER_V1_BRUTE = 0.2253996735608

# diffusion plus atom jumps: cheap to evaluate, still exercises the jump code
ATOMS_2TYPE = ModelSpec([[-1.0, 1.0], [0.5, -0.5]], [-1.0, -0.6], [1.0, 0.5],
                        (AtomList(((0.5, 1.0), (3.0, 0.1))), ZeroMeasure()))


def test_brute_force_oracle_reproduces_riccati_closed_form():
    sol = integrate.solve_ivp(lambda t, v: -(v + v * v), (0, 1), [1.0], method="RK45",
                              rtol=1e-13, atol=1e-15)
    brute = sol.y[0, -1]
    closed = math.exp(-1) / (1 + (1 - math.exp(-1)))
    assert brute == pytest.approx(closed, rel=1e-11)
    assert brute == pytest.approx(FELLER_V1_BRUTE, rel=1e-12)


def test_cumulant_matches_frozen_oracle():
    assert solve_cumulant(feller(), [1.0], 1.0, TOL).final[0] == pytest.approx(FELLER_V1_BRUTE, rel=1e-9)


@given(st.floats(0.2, 3), st.floats(0.2, 3), st.floats(0.1, 5), st.floats(0.05, 5))
def test_feller_cumulant_closed_form(b, c, theta, t):
    got = solve_cumulant(feller(b, math.sqrt(c) ** 2), [theta], t, TOL).final[0]
    e = math.exp(-b * t)
    assert got == pytest.approx(theta * e / (1 + (c / b) * theta * (1 - e)), rel=1e-8)


@settings(max_examples=10)
@given(st.floats(0.2, 3), st.floats(0.2, 3), st.floats(0.1, 10))
def test_feller_extinction_closed_form(b, c, t):
    curve = extinction_curve(feller(b, c), [t], TOL)
    e = math.exp(-b * t)
    assert curve.v[0, 0] == pytest.approx(b * e / (c * (1 - e)), rel=1e-7)


@settings(max_examples=10)
@given(models(max_types=2), st.floats(0.1, 2.0), st.floats(0.1, 2.0), st.data())
def test_flow_property(spec, t, s, data):
    f = np.array([data.draw(st.floats(0.0, 3.0)) for _ in range(spec.n)])
    assert flow_defect(spec, f, t, s, TOL) <= 10 * TOL * max(1.0, float(f.max()))


@settings(max_examples=10)
@given(models(max_types=2), st.floats(0.1, 3.0), st.data())
def test_monotone_in_test_function(spec, t, data):
    f = np.array([data.draw(st.floats(0.0, 2.0)) for _ in range(spec.n)])
    g = f + np.array([data.draw(st.floats(0.0, 2.0)) for _ in range(spec.n)])
    assert np.all(solve_cumulant(spec, f, t, TOL).final <= solve_cumulant(spec, g, t, TOL).final + 1e-9)


@settings(max_examples=10)
@given(models(max_types=2), st.floats(0.1, 3.0), st.data())
def test_dominated_by_mean_semigroup(spec, t, data):
    f = np.array([data.draw(st.floats(0.0, 2.0)) for _ in range(spec.n)])
    V = solve_cumulant(spec, f, t, TOL).final
    assert np.all(V >= -1e-12)
    assert np.all(V <= linalg.expm(t * mean_generator(spec)) @ f + 1e-9)


@pytest.mark.parametrize("name,order,rtol", [
    ("feller_2type", 1.0, 1e-6),
    ("atoms", 1.0, 1e-6),
    # an alpha-stable small-jump part makes the leading correction O(h^(alpha - 1))
    ("mixed_2type", 0.5, 1e-4),
])
def test_linearization_at_zero(name, order, rtol):
    spec = builtin(name)
    f, t = np.ones(spec.n), 1.5
    d = [solve_cumulant(spec, h * f, t, 1e-13).final / h for h in (1e-4, 1e-5)]
    k = 10.0 ** order
    richardson = (k * d[1] - d[0]) / (k - 1)
    np.testing.assert_allclose(richardson, linalg.expm(t * mean_generator(spec)) @ f, rtol=rtol)


def test_zero_test_function_stays_zero():
    assert laplace_functional(feller(), [2.0], [0.0], 3.0) == 1.0
    assert np.all(solve_cumulant(builtin("mixed_2type"), [0.0, 0.0], 2.0).values == 0)


def test_extinction_refused_when_grey_fails():
    with pytest.raises(CumulantError):
        extinction_curve(builtin("atoms"), [1.0], TOL)


@pytest.mark.parametrize("name", sorted(set(BUILTIN) - {"atoms"}))
def test_extinction_curve_invariants(name):
    spec = builtin(name)
    curve = extinction_curve(spec, np.linspace(0.1, 10, 50), TOL)
    assert np.all(np.isfinite(curve.v))
    assert np.all(np.diff(curve.v, axis=0) <= 1e-9)
    p = curve.survival([1.0] * spec.n)
    assert np.all((p >= 0) & (p <= 1))


@pytest.mark.parametrize("name", ["feller_2type", "mixed_2type"])
def test_extinction_shape_remainder_decays(name):
    spec = builtin(name)
    tr = triplet_for(spec)
    curve = extinction_curve(spec, np.arange(1.0, 15.0, 1.0), TOL, tr)
    rem = extinction_remainder(curve, tr)
    assert np.all(np.diff(rem[2:]) <= 1e-10)
    assert rem[-1] <= 1e-2 * rem[0] + 1e-10


@pytest.mark.parametrize("name", ["feller_2type", "mixed_2type"])
def test_survival_ratio_asymptotics(name):
    spec = builtin(name)
    tr = triplet_for(spec)
    rng = np.random.default_rng(1)
    eta, mu = rng.uniform(0.2, 2.0, (2, spec.n))
    s, t = 2.0, 14.0
    curve = extinction_curve(spec, [t - s, t], TOL, tr)
    ratio = -math.expm1(-eta @ curve.v[0]) / -math.expm1(-mu @ curve.v[1])
    # masses are tiny only in the limit; the mismatch shrinks with eta, mu -> 0 and t
    target = math.exp(-tr.lam * s) * (eta @ tr.phi) / (mu @ tr.phi)
    assert ratio == pytest.approx(target, rel=2e-3)


@pytest.mark.parametrize("b,c", [(1.0, 1.0), (1.0, 2.0), (2.0, 0.5)])
def test_kappa_feller(b, c):
    est = kappa_deterministic(feller(b, c))
    assert est.regime == "converged"
    assert est.kappa == pytest.approx(b / c, rel=1e-6)


def test_kappa_decays_when_llogl_infinite():
    est = kappa_deterministic(builtin("log_tail_1_5"), horizon=40.0)
    assert est.regime == "decaying" and est.kappa == 0.0


def test_kappa_slow_log_tail_is_unsettled_not_zero():
    # finite L log L: the limit is positive but the approach is logarithmic
    with pytest.warns(HorizonWarning):
        est = kappa_deterministic(builtin("log_tail_2_5"), horizon=40.0)
    assert est.regime == "unsettled"
    assert 0.0 < est.kappa < est.table[len(est.table) // 2][1]


def test_rate_ratio_two_routes_agree():
    spec = ATOMS_2TYPE
    tr = triplet_for(spec)
    table = rate_ratio(spec, tr, [1.0, 3.0], [0.0, 2.0], TOL)
    assert table.ratio[0, 0] == 1.0
    for i, t in enumerate([1.0, 3.0]):
        assert table.ratio[i, 1] == pytest.approx(rate_identity_rhs(spec, tr, t, 2.0, TOL), rel=1e-6)


def test_conditioned_laplace_special_cases():
    spec = feller()
    assert conditioned_laplace(spec, [2.0], [0.5], 0.0, 0.0) == pytest.approx(math.exp(-1.0))
    # t = 0 column: X_0 is deterministic
    for r in (0.5, 3.0):
        assert conditioned_laplace(spec, [2.0], [0.5], 0.0, r) == pytest.approx(math.exp(-1.0), rel=1e-12)


# E[exp(-X_t) | X_{t+r} > 0] for Feller b = c = 1 from X_0 = 1, evaluated from the closed
# forms of V_t and v_t in 50-digit arithmetic
FELLER_CONDITIONED = {(2.0, 2.0): 0.28496076868179407, (8.0, 8.0): 0.25008387269022729,
                      (20.0, 20.0): 0.25000000051528841}


@pytest.mark.parametrize("t,r", sorted(FELLER_CONDITIONED))
def test_conditioned_laplace_matches_high_precision_values(t, r):
    got = conditioned_laplace(feller(), [1.0], [1.0], t, r)
    assert got == pytest.approx(FELLER_CONDITIONED[t, r], rel=1e-8)


def test_conditioned_laplace_joint_limit_feller():
    # size-biased Exponential(1) is Gamma(2, 1); Laplace at 1 is 1/4
    assert conditioned_laplace(feller(), [1.0], [1.0], 40.0, 40.0) == pytest.approx(0.25, abs=1e-9)


@settings(max_examples=15)
@given(st.floats(0.1, 5.0), st.floats(1e-12, 1.0))
def test_increment_flow_matches_difference_when_resolvable(t, g):
    from superlab.cumulant import solve_increment

    spec = ATOMS_2TYPE
    f = np.array([0.7, 1.3])
    V, D = solve_increment(spec, f, [g, g], t, 1e-12)
    direct = solve_cumulant(spec, f + g, t, 1e-12).final - V.final
    assert np.all(D.final > 0)
    np.testing.assert_allclose(D.final, direct, rtol=1e-6, atol=1e-11 * np.max(V.final))


def test_htransform_and_yaglom_limits_feller():
    tr = triplet_for(feller())
    assert htransform_laplace(feller(), tr, [1.0], [1.0], 25.0) == pytest.approx(0.25, abs=1e-8)
    assert yaglom_laplace(feller(), tr, [1.0], 25.0) == pytest.approx(0.5, abs=1e-8)


def test_survival_probability_feller():
    e = math.exp(-1.0)
    assert survival_probability(feller(), [1.0], 1.0) == pytest.approx(-math.expm1(-e / (1 - e)), rel=1e-9)
