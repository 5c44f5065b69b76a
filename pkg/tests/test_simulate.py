import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from superlab.cumulant import survival_probability
from superlab.lab.models import builtin
from superlab.model import AtomList, ModelSpec, ZeroMeasure, feller
from superlab.rng import Purpose, blocks, stream
from superlab.simulate import (
    PathEnsemble, SimConfig, martingale_check, moment_check, simulate_ensemble,
)
from superlab.spectral import triplet_for

ATOMS_2TYPE = ModelSpec([[-1.0, 1.0], [0.5, -0.5]], [-1.0, -0.6], [1.0, 0.5],
                        (AtomList(((0.5, 1.0), (3.0, 0.1))), ZeroMeasure()))


def test_streams_are_keyed_by_position():
    a = stream(7, Purpose.SIMULATE, 3).random(5)
    assert np.array_equal(a, stream(7, Purpose.SIMULATE, 3).random(5))
    assert not np.array_equal(a, stream(7, Purpose.SIMULATE, 4).random(5))
    assert not np.array_equal(a, stream(7, Purpose.RESTART, 3).random(5))
    with pytest.raises(ValueError):
        stream(-1, Purpose.SIMULATE)


@given(st.integers(1, 10_000), st.integers(1, 500))
def test_blocks_partition_paths(n, size):
    spans = blocks(n, size)
    assert spans[0][1] == 0 and spans[-1][2] == n
    assert all(a[2] == b[1] for a, b in zip(spans, spans[1:]))
    assert [b for b, _, _ in spans] == list(range(len(spans)))


@pytest.mark.parametrize("spec", [feller(), ATOMS_2TYPE], ids=["feller", "atoms_2type"])
def test_same_seed_same_ensemble_for_any_thread_count(spec):
    cfg = SimConfig(dt=0.05, n_paths=3000, seed=42, record_times=(0.5, 1.0), block_size=512)
    mu0 = np.ones(spec.n)
    one = simulate_ensemble(spec, mu0, cfg)
    many = simulate_ensemble(spec, mu0, cfg.with_changes(threads=4))
    assert one.content_hash() == many.content_hash()
    assert np.array_equal(one.states, many.states)
    other = simulate_ensemble(spec, mu0, cfg.with_changes(seed=43))
    assert other.content_hash() != one.content_hash()


@settings(max_examples=10)
@given(st.integers(0, 2**64 - 1), st.floats(0.1, 5.0))
def test_masses_are_non_negative(seed, m):
    ens = simulate_ensemble(ATOMS_2TYPE, [m, 0.0], SimConfig(dt=0.1, n_paths=200, seed=seed,
                                                              record_times=(0.3, 1.0, 2.0)))
    assert np.all(ens.states >= 0) and np.all(np.isfinite(ens.states))


def test_binary_round_trip(tmp_path):
    ens = simulate_ensemble(ATOMS_2TYPE, [1.0, 2.0], SimConfig(dt=0.1, n_paths=50, seed=5,
                                                              record_times=(0.5, 1.0)))
    ens.save(tmp_path / "e.bin")
    back = PathEnsemble.load(tmp_path / "e.bin")
    assert back.content_hash() == ens.content_hash()
    assert np.array_equal(back.states, ens.states) and back.config == ens.config
    with pytest.raises(ValueError):
        PathEnsemble.from_bytes(b"garbage!" + bytes(8))


def test_csv_mirror(tmp_path):
    ens = simulate_ensemble(feller(), [1.0], SimConfig(n_paths=3, seed=1))
    ens.to_csv(tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "path,t,weight,m0"
    assert len(lines) == 1 + 3 * 2


def test_null_initial_measure_is_a_trap():
    with pytest.raises(ValueError):
        simulate_ensemble(feller(), [0.0], SimConfig(n_paths=10))
    ens = simulate_ensemble(feller(), [0.0], SimConfig(n_paths=10), allow_null=True)
    assert np.all(ens.states == 0)


def test_time_zero_is_identity():
    ens = simulate_ensemble(feller(), [2.5], SimConfig(n_paths=100, record_times=(0.0, 1.0)))
    assert np.all(ens.at(0.0) == 2.5)
    rep = moment_check(ens, feller(), [1.0], 0.0)
    assert rep.passed and rep.se == 0


def test_feller_mean_oracle():
    ens = simulate_ensemble(feller(), [1.0], SimConfig(n_paths=100_000, seed=11))
    rep = moment_check(ens, feller(), [1.0], 1.0)
    assert rep.target == pytest.approx(math.exp(-1.0), rel=1e-12)
    assert rep.passed


def test_symmetric_two_type_mean_oracle():
    spec = ModelSpec([[-1.0, 1.0], [1.0, -1.0]], [-0.5, -0.5], [1.0, 1.0], (ZeroMeasure(), ZeroMeasure()))
    t = 1.3
    ens = simulate_ensemble(spec, [1.0, 0.0], SimConfig(dt=0.01, n_paths=40_000, seed=3, record_times=(t,)))
    rep = moment_check(ens, spec, [1.0, 0.0], t)
    assert rep.target == pytest.approx((math.exp(-0.5 * t) + math.exp(-2.5 * t)) / 2, rel=1e-12)
    assert rep.passed


def test_martingale_feller():
    ens = simulate_ensemble(feller(), [1.0], SimConfig(n_paths=100_000, seed=2, record_times=(0.5, 1.0, 2.0)))
    assert martingale_check(ens, triplet_for(feller())).passed


def test_martingale_detects_drift_injection():
    tr = triplet_for(feller())
    drifted = feller(0.9, 1.0)
    ens = simulate_ensemble(drifted, [1.0], SimConfig(n_paths=400_000, seed=2, record_times=(1.0, 3.0)))
    assert not martingale_check(ens, tr).passed


def test_martingale_needs_two_times():
    ens = simulate_ensemble(feller(), [1.0], SimConfig(n_paths=10, record_times=(0.0,)))
    with pytest.raises(ValueError):
        martingale_check(ens, triplet_for(feller()))


def test_feller_extinction_matches_cumulant():
    # the Feller transition is sampled exactly, so there is no step bias
    ens = simulate_ensemble(feller(), [1.0], SimConfig(n_paths=100_000, seed=8, record_times=(0.5, 2.0)))
    for t in (0.5, 2.0):
        assert ens.survival(t).within(survival_probability(feller(), [1.0], t), 3.0)


def test_total_mass_non_increasing_for_constant_eigenfunction():
    spec = builtin("feller_2type")
    times = (0.5, 1.0, 1.5, 2.0)
    ens = simulate_ensemble(spec, [1.0, 1.0], SimConfig(dt=0.02, n_paths=20_000, seed=4, record_times=times))
    means = [ens.at(t).sum(axis=1).mean() for t in (0.0, *times)]
    assert all(b <= a for a, b in zip(means, means[1:]))


def test_step_bias_decays_at_first_order():
    # lifting the intensity cap makes dt the actual step, so the splitting bias is visible
    exact = survival_probability(ATOMS_2TYPE, [1.0, 1.0], 1.0)
    bias = []
    for dt in (0.5, 0.25, 0.125):
        cfg = SimConfig(dt=dt, n_paths=1_000_000, seed=1, intensity_cap=1e9)
        bias.append(simulate_ensemble(ATOMS_2TYPE, [1.0, 1.0], cfg).survival(1.0).value - exact)
    assert bias[0] > 0.005
    for coarse, fine in zip(bias, bias[1:]):
        assert 1.6 <= coarse / fine <= 2.4


def test_jump_model_extinction_within_bias_budget():
    # bias budget from the first-order sweep: 0.024 * dt at dt = 0.05, with the default cap
    cfg = SimConfig(dt=0.05, n_paths=200_000, seed=6)
    est = simulate_ensemble(ATOMS_2TYPE, [1.0, 1.0], cfg).survival(1.0)
    assert est.within(survival_probability(ATOMS_2TYPE, [1.0, 1.0], 1.0), 3.0, bias=0.024 * 0.05)
