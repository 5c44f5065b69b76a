import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from superlab.model import (
    AtomList, LogPerturbedTail, ModelError, ModelSpec, MomentKind, TruncatedPowerLaw, ZeroMeasure,
    dumps_model, feller, grey_condition, load_model, loads_model, pi_moment, save_model, validate_model,
)

from conftest import jump_measures, models


@given(models())
def test_json_round_trip_preserves_model_and_fingerprint(spec):
    back = loads_model(dumps_model(spec))
    assert back == spec
    assert back.fingerprint() == spec.fingerprint()


def test_file_round_trip(tmp_path):
    spec = ModelSpec([[-1, 1], [2, -2]], [-1, -0.5], [1, 0], (ZeroMeasure(), AtomList(((2.0, 0.5),))))
    save_model(spec, tmp_path / "m.json")
    assert load_model(tmp_path / "m.json") == spec


@given(jump_measures())
def test_u_and_u2_moment_finite_on_legal_parameters(pi):
    m = pi_moment(pi, MomentKind.U_AND_U2)
    assert math.isfinite(m) and m >= 0


@pytest.mark.parametrize("theta", [1.2, 1.5, 3.0])
def test_log_tail_first_moment_finite_above_one(theta):
    pi = LogPerturbedTail(theta, math.e, 1.0)
    # closed form: int_e^inf u^-1 (log u)^-theta du = 1 / (theta - 1)
    assert pi_moment(pi, MomentKind.FIRST_MOMENT_ABOVE, math.e) == pytest.approx(1 / (theta - 1), rel=1e-9)


@pytest.mark.parametrize("theta,finite", [(1.5, False), (2.0, False), (2.5, True), (3.5, True)])
def test_log_tail_ulogu_finite_exactly_above_two(theta, finite):
    pi = LogPerturbedTail(theta, math.e, 1.0)
    assert math.isfinite(pi.ulogu(1.0)) is finite


def test_log_tail_ulogu_matches_truncated_quadrature():
    from scipy import integrate

    theta = 3.0
    pi = LogPerturbedTail(theta, math.e, 1.0)
    # substitute u = e^s: integrand s^(1 - theta) on (1, inf)
    val, _ = integrate.quad(lambda s: s ** (1 - theta), 1.0, np.inf)
    assert pi.ulogu(1.0) == pytest.approx(val, rel=1e-8)


@given(models())
def test_valid_models_pass_every_check(spec):
    assert validate_model(spec).ok


def _failed(spec):
    return {name for name, ok, _ in validate_model(spec).checks if not ok}


@given(models())
def test_single_perturbation_produces_single_failure(spec):
    A = np.array(spec.motion)
    A[0, 0] += 0.5
    assert _failed(spec.with_changes(motion=A)) == {"motion_conservative"}
    sigma = np.array(spec.sigma)
    sigma[-1] = -0.1
    assert _failed(spec.with_changes(sigma=sigma)) == {"sigma_nonnegative"}
    pi = list(spec.pi)
    pi[0] = TruncatedPowerLaw(2.5, 0.0, math.inf, 1.0)
    assert "jump_parameters" in _failed(spec.with_changes(pi=tuple(pi)))


def test_infinite_moment_flagged():
    bad = ModelSpec([[0.0]], [-1.0], [1.0], (TruncatedPowerLaw(0.5, 1.0, math.inf, 1.0),))
    # alpha = 0.5 is legal, but alpha <= 1 on an unbounded tail has an infinite first moment
    assert "pi_moment_u_and_u2" in _failed(bad)


def test_structural_errors_raise():
    with pytest.raises(ModelError):
        ModelSpec([[0.0, 0.0]], [-1.0], [1.0], (ZeroMeasure(),))
    with pytest.raises(ModelError):
        ModelSpec([[0.0]], [-1.0], [1.0], ())


def test_model_arrays_are_frozen():
    spec = feller()
    with pytest.raises(ValueError):
        spec.beta[0] = 3.0


@given(st.floats(0.1, 3.0), st.floats(0.1, 3.0))
def test_grey_holds_for_feller(b, c):
    res = grey_condition(feller(b, c))
    assert res.holds
    # int_{z0}^inf dz / (b z + c z^2) = log(1 + b / (c z0)) / b
    assert res.integral == pytest.approx(math.log(1 + b / (c * res.z_start)) / b, rel=1e-6)


def test_grey_fails_without_diffusion_or_heavy_small_jumps():
    spec = ModelSpec([[0.0]], [-1.0], [0.0], (AtomList(((1.0, 0.5),)),))
    assert grey_condition(spec).holds is False


def test_grey_holds_with_diffusion_and_atoms():
    spec = ModelSpec([[0.0]], [-1.0], [1.0], (AtomList(((1.0, 3.0), (4.0, 0.2))),))
    assert grey_condition(spec).holds


def test_grey_inapplicable_for_type_dependent_mechanism():
    spec = ModelSpec([[-1, 1], [1, -1]], [-1, -2], [1, 1], (ZeroMeasure(), ZeroMeasure()))
    assert grey_condition(spec).applicable is False
