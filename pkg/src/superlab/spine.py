"""Spine decomposition of the Q-process.

An immortal particle (the spine) moves with the generator
``diag(phi)^-1 (L - lam) diag(phi)``. Along it, fresh superprocesses immigrate
in two ways:

* discrete: at rate ``y pi(x, dy)`` with initial mass ``y``, truncated to ``y > delta_i``;
* continuous: approximated by immigrants of mass ``eps`` at rate ``2 sigma(x)^2 / eps``.

Two samplers share one time grid. ``build_realization`` keeps one descendant
process per immigration event. The aggregated sampler used by ``kappa_spine``
and ``spine_vs_htransform`` keeps one accumulating superprocess per
realization, which has the same law by the branching property. In both, an
event is inserted at the midpoint of its grid cell.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg
from scipy.integrate import trapezoid

from .model.jumps import INF, ZeroMeasure
from .model.spec import ModelSpec
from .rng import BLOCK_SIZE, Purpose, blocks, stream
from .simulate import SimConfig, SmallJumpMode, _Stepper, simulate_ensemble
from .spectral import EigenTriplet, SpectralError, SpineGenerator, mean_generator, spine_generator
from .stats import Estimate, mean_se
from . import qprocess


class SpineError(RuntimeError):
    pass


class ImmigrationOrigin(str, enum.Enum):
    DISCRETE = "discrete"
    CONTINUOUS_EPS = "continuous_eps"


class ContinuousMode(str, enum.Enum):
    """How the aggregated sampler realizes continuous immigration.

    ``EPS`` uses mass-``eps`` immigrants. ``EXACT`` adds, after each branching
    step of length ``h``, the exact immigrated mass ``Gamma(d / c, a_h)`` of a
    Feller step with immigration rate ``d = 2 sigma^2``; it has no ``eps`` bias
    and, unlike ``EPS``, never leaves ``Z = 0``.
    """

    EPS = "eps"
    EXACT = "exact"


@dataclass(frozen=True)
class SpineConfig:
    T: float = 12.0
    eps: float = 1e-2
    delta_i: float = 1e-2
    dt: float = 1e-2
    n_realizations: int = 20_000
    seed: int = 0
    nested_T: tuple = (3.0, 6.0, 9.0, 12.0)
    block_size: int = BLOCK_SIZE
    threads: int = 1
    continuous_mode: ContinuousMode = ContinuousMode.EPS
    sim: SimConfig = field(default_factory=SimConfig)
    # descendant masses above this follow the mean flow instead of being
    # simulated; keeps sub-stepping bounded under very heavy immigration tails
    mass_cap: float = 1e3

    def __post_init__(self):
        if not (self.eps > 0 and self.delta_i > 0 and self.dt > 0 and self.T > 0 and self.mass_cap > 0):
            raise ValueError("T, eps, delta_i, dt and mass_cap must be positive")
        if self.n_realizations < 2:
            raise ValueError("need at least two realizations")
        object.__setattr__(self, "continuous_mode", ContinuousMode(self.continuous_mode))
        if isinstance(self.sim, dict):
            object.__setattr__(self, "sim", SimConfig.from_dict(self.sim))

    def with_changes(self, **kw) -> "SpineConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return SpineConfig(**d)

    @property
    def T_values(self) -> tuple:
        return tuple(sorted({float(x) for x in self.nested_T if 0 < x < self.T} | {float(self.T)}))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sim"] = self.sim.to_dict()
        d["nested_T"] = list(self.nested_T)
        d["continuous_mode"] = self.continuous_mode.value
        return d


# spine path ------------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpinePath:
    """Holding interval ``i`` is ``[jump_times[i], jump_times[i+1])`` with type
    ``types[i]``; the last interval ends at ``stop``."""

    jump_times: np.ndarray
    types: np.ndarray
    stop: float

    @property
    def start(self) -> float:
        return float(self.jump_times[0])

    def intervals(self):
        ends = np.append(self.jump_times[1:], self.stop)
        return zip(self.jump_times, ends, self.types)

    def type_at(self, s: float) -> int:
        if not self.start <= s <= self.stop:
            raise ValueError(f"time {s} outside the window [{self.start}, {self.stop}]")
        return int(self.types[np.searchsorted(self.jump_times, s, side="right") - 1])

    def occupation(self, edges, n: int) -> np.ndarray:
        """Time spent in each type within each cell ``[edges[i], edges[i+1]]``, shape ``(cells, n)``."""
        edges = np.asarray(edges, dtype=float)
        knots = np.append(self.jump_times, self.stop)
        dur = np.diff(knots)
        out = np.empty((edges.size - 1, n))
        for x in range(n):
            cum = np.concatenate([[0.0], np.cumsum(np.where(self.types == x, dur, 0.0))])
            out[:, x] = np.diff(np.interp(edges, knots, cum))
        return np.maximum(out, 0.0)


def sample_spine(G: SpineGenerator | np.ndarray, stationary, window: tuple[float, float],
                 rng: np.random.Generator, start_law=None) -> SpinePath:
    """Jump-chain sample of the spine on ``window``, started from ``stationary``
    (or from ``start_law`` when given, for a non-stationary initial type)."""
    G = np.asarray(G.G if isinstance(G, SpineGenerator) else G, dtype=float)
    stationary = np.asarray(stationary, dtype=float)
    resid = float(np.max(np.abs(stationary @ G)))
    if resid > 1e-10 * max(1.0, float(np.max(np.abs(G)))):
        raise SpectralError(f"initial law is not stationary for the spine generator (residual {resid:.3g})")
    lo, hi = map(float, window)
    if not hi > lo:
        raise ValueError("window must have positive length")
    law = stationary if start_law is None else np.asarray(start_law, dtype=float)
    n = G.shape[0]
    x = int(rng.choice(n, p=law / law.sum())) if n > 1 else 0
    times, types = [lo], [x]
    s = lo
    while n > 1:
        rate = -G[x, x]
        if rate <= 0:
            break
        s += rng.exponential(1.0 / rate)
        if s >= hi:
            break
        p = np.maximum(G[x], 0.0)
        p[x] = 0.0
        x = int(rng.choice(n, p=p / p.sum()))
        times.append(s)
        types.append(x)
    return SpinePath(np.array(times), np.array(types, dtype=np.int64), hi)


# immigration -----------------------------------------------------------------------------

@dataclass(frozen=True)
class ImmigrationEvent:
    s: float
    x: int
    y: float
    origin: ImmigrationOrigin


@dataclass(frozen=True)
class ImmigrationRates:
    discrete: np.ndarray  # int_{delta_i}^inf y pi(x, dy)
    continuous: np.ndarray  # 2 sigma_eff(x)^2 / eps
    sigma2_eff: np.ndarray

    @property
    def any(self) -> bool:
        return bool(np.any(self.discrete > 0) or np.any(self.continuous > 0))


def immigration_rates(spec: ModelSpec, delta_i: float, eps: float,
                      small_jump_mode: SmallJumpMode = SmallJumpMode.DROP) -> ImmigrationRates:
    """Event rates per type. Under ``DIFFUSION_APPROX`` the discrete immigration
    cut below ``delta_i`` is returned as extra continuous immigration, the same
    way the simulator folds small jumps into the diffusion."""
    disc, s2 = np.zeros(spec.n), np.empty(spec.n)
    for x in range(spec.n):
        p = spec.pi[x]
        s2[x] = spec.sigma[x] ** 2
        if isinstance(p, ZeroMeasure):
            continue
        disc[x] = p.integral(1.0, delta_i, INF)
        if not math.isfinite(disc[x]):
            raise SpineError(f"type {x}: size-biased immigration rate is infinite")
        if SmallJumpMode(small_jump_mode) is SmallJumpMode.DIFFUSION_APPROX:
            s2[x] += 0.5 * p.integral(2.0, 0.0, delta_i)
    return ImmigrationRates(disc, 2.0 * s2 / eps, s2)


_MAX_POISSON_MEAN = 1e7


def _poisson_times(rng, rate: float, a: float, b: float) -> np.ndarray:
    """Sorted event times of a homogeneous Poisson process on ``(a, b]``, split
    into sub-intervals so no single draw has a huge mean."""
    if rate <= 0 or b <= a:
        return np.empty(0)
    pieces = max(1, math.ceil(rate * (b - a) / _MAX_POISSON_MEAN))
    edges = np.linspace(a, b, pieces + 1)
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        k = rng.poisson(rate * (hi - lo))
        out.append(hi - (hi - lo) * rng.random(k))
    return np.sort(np.concatenate(out))


def sample_immigration(spec: ModelSpec, path: SpinePath, delta_i: float, eps: float,
                       rng: np.random.Generator,
                       small_jump_mode: SmallJumpMode = SmallJumpMode.DROP) -> list[ImmigrationEvent]:
    if delta_i <= 0 or eps <= 0:
        raise ValueError("delta_i and eps must be positive")
    rates = immigration_rates(spec, delta_i, eps, small_jump_mode)
    events: list[ImmigrationEvent] = []
    for a, b, x in path.intervals():
        x = int(x)
        ts = _poisson_times(rng, rates.discrete[x], a, b)
        if ts.size:
            ys = spec.pi[x].sample_size_biased(rng, delta_i, ts.size)
            events.extend(ImmigrationEvent(float(s), x, float(y), ImmigrationOrigin.DISCRETE)
                          for s, y in zip(ts, ys))
        ts = _poisson_times(rng, rates.continuous[x], a, b)
        events.extend(ImmigrationEvent(float(s), x, eps, ImmigrationOrigin.CONTINUOUS_EPS) for s in ts)
    events.sort(key=lambda e: e.s)
    return events


# time grid -------------------------------------------------------------------------------

def _grid(lo: float, hi: float, breaks, dt: float) -> np.ndarray:
    knots = sorted({lo, hi, *(float(b) for b in breaks if lo < b < hi)})
    parts = [np.array([lo])]
    for a, b in zip(knots[:-1], knots[1:]):
        k = max(1, math.ceil((b - a) / dt - 1e-9))
        parts.append(np.linspace(a, b, k + 1)[1:])
    return np.concatenate(parts)


def _half_step(stepper: _Stepper, m: np.ndarray, h: float, rng) -> np.ndarray:
    if m.size == 0 or not np.any(m > 0):
        return m
    return stepper.step(m, h, rng)


class _MeanFlow:
    """Rows whose total mass exceeds ``cap`` leave the stochastic state and evolve by their mean."""

    def __init__(self, spec: ModelSpec, cap: float, shape):
        self.L = mean_generator(spec)
        self.cap = cap
        self.heavy = np.zeros(shape)
        self._P: dict[float, np.ndarray] = {}

    def step(self, h: float) -> None:
        if not np.any(self.heavy):
            return
        P = self._P.get(h)
        if P is None:
            P = self._P[h] = linalg.expm(h * self.L)
        with np.errstate(invalid="ignore"):
            moved = self.heavy.reshape(-1, self.L.shape[0]) @ P
        # an infinite mass stays infinite rather than becoming nan through 0 * inf
        moved[np.isnan(moved)] = INF
        self.heavy = moved.reshape(self.heavy.shape)

    def absorb(self, state: np.ndarray) -> None:
        big = state.sum(axis=-1) > self.cap
        if np.any(big):
            self.heavy[big] += state[big]
            state[big] = 0.0


# per-event realization -------------------------------------------------------------------

@dataclass(eq=False)
class SpineRealization:
    path: SpinePath
    events: list
    eval_times: tuple
    descendants: np.ndarray  # (events, eval times, n)

    def _time_index(self, t: float) -> int:
        for j, s in enumerate(self.eval_times):
            if abs(s - t) <= 1e-12 * max(1.0, abs(t)):
                return j
        raise SpineError(f"descendants were not simulated through t={t:g} (available: {self.eval_times})")


def build_realization(spec: ModelSpec, path: SpinePath, events, eval_times, config: SpineConfig,
                      rng: np.random.Generator) -> SpineRealization:
    """Simulate each immigrant's descendants ``W^(k)`` up to each evaluation time."""
    eval_times = tuple(sorted(float(t) for t in eval_times))
    if not eval_times or eval_times[-1] > path.stop + 1e-12 or eval_times[0] < path.start:
        raise ValueError("evaluation times must lie in the spine window")
    edges = _grid(path.start, eval_times[-1], eval_times, config.dt)
    stepper = _Stepper(spec, config.sim)
    n = spec.n
    E = len(events)
    s = np.array([e.s for e in events], dtype=float)
    cell = np.clip(np.searchsorted(edges, s, side="left") - 1, 0, edges.size - 2)
    state = np.zeros((E, n))
    flow = _MeanFlow(spec, config.mass_cap, state.shape)
    out = np.zeros((E, len(eval_times), n))
    eval_idx = {int(np.argmin(np.abs(edges - t))): j for j, t in enumerate(eval_times)}
    for c in range(edges.size - 1):
        h = edges[c + 1] - edges[c]
        state = _half_step(stepper, state, h / 2, rng)
        flow.step(h / 2)
        for k in np.flatnonzero(cell == c):
            state[k, events[k].x] += events[k].y
        flow.absorb(state)
        state = _half_step(stepper, state, h / 2, rng)
        flow.step(h / 2)
        flow.absorb(state)
        j = eval_idx.get(c + 1)
        if j is not None:
            out[:, j] = state + flow.heavy
    return SpineRealization(path, list(events), eval_times, out)


def evaluate_Z(spec: ModelSpec, realization: SpineRealization, a: float, b: float, t: float, f) -> float:
    """Total ``f``-mass at ``t`` descended from immigrants arriving in ``(a, b]``."""
    if not (a < b <= t):
        raise ValueError("need a < b <= t")
    f = np.asarray(f, dtype=float)
    if f.shape != (spec.n,):
        raise ValueError(f"f must have length {spec.n}")
    events = realization.events
    if not events:
        return 0.0
    j = realization._time_index(t)
    s = np.array([e.s for e in events])
    sel = (s > a) & (s <= b)
    return float(np.sum(realization.descendants[sel, j] @ f))


# aggregated sampler ----------------------------------------------------------------------

def _aggregate_block(spec: ModelSpec, gen: SpineGenerator, rates: ImmigrationRates, config: SpineConfig,
                     lo: float, hi: float, seg_starts, R: int, block: int, start_law=None) -> np.ndarray:
    """Immigrated mass at ``hi`` split by arrival segment, shape ``(R, segments, n)``.

    Segment ``k`` collects immigrants arriving in ``(seg_starts[k], seg_starts[k+1]]``.
    """
    n = spec.n
    seg_starts = np.asarray(seg_starts, dtype=float)
    S = seg_starts.size
    edges = _grid(lo, hi, seg_starts, config.dt)
    cells = edges.size - 1
    seg_of_cell = np.searchsorted(seg_starts, edges[:-1], side="right") - 1
    rng_path = stream(config.seed, Purpose.SPINE_PATH, block)
    rng_imm = stream(config.seed, Purpose.SPINE_IMMIGRATION, block)
    rng_desc = stream(config.seed, Purpose.SPINE_DESCENDANTS, 0, block)
    if n == 1:
        occ = np.broadcast_to(np.diff(edges)[None, :, None], (R, cells, 1))
    else:
        occ = np.empty((R, cells, n))
        for r in range(R):
            occ[r] = sample_spine(gen, gen.stationary, (lo, hi), rng_path, start_law).occupation(edges, n)
    stepper = _Stepper(spec, config.sim)
    state = np.zeros((R, S, n))
    flow = _MeanFlow(spec, config.mass_cap, state.shape)
    disc_types = np.flatnonzero(rates.discrete > 0)
    exact = config.continuous_mode is ContinuousMode.EXACT
    cont_types = np.flatnonzero((rates.sigma2_eff > 0) & (stepper.c > 0)) if exact else ()

    def exact_immigration(seg, o, h):
        # Gamma(d' / c, a) per half step, d' = 2 sigma_eff^2 * (occupied fraction)
        _, a = stepper._branch_coeffs(h / 2)
        for x in cont_types:
            shape = 2.0 * rates.sigma2_eff[x] * (o[:, x] / h) / stepper.c[x]
            state[:, seg, x] += rng_imm.gamma(shape, a[x]) * (shape > 0)

    for c in range(cells):
        h = edges[c + 1] - edges[c]
        top = seg_of_cell[c] + 1  # segments that have started
        o = occ[:, c, :]
        flat = state[:, :top].reshape(-1, n)
        state[:, :top] = _half_step(stepper, flat, h / 2, rng_desc).reshape(R, top, n)
        flow.step(h / 2)
        if exact:
            exact_immigration(seg_of_cell[c], o, h)
            add = np.zeros((R, n))
        else:
            add = config.eps * rng_imm.poisson(rates.continuous[None, :] * o)
        for x in disc_types:
            k = rng_imm.poisson(rates.discrete[x] * o[:, x])
            tot = int(k.sum())
            if tot:
                ys = spec.pi[x].sample_size_biased(rng_imm, config.delta_i, tot)
                add[:, x] += np.bincount(np.repeat(np.arange(R), k), weights=ys, minlength=R)
        state[:, seg_of_cell[c]] += add
        flow.absorb(state)
        flat = state[:, :top].reshape(-1, n)
        state[:, :top] = _half_step(stepper, flat, h / 2, rng_desc).reshape(R, top, n)
        flow.step(h / 2)
        if exact:
            exact_immigration(seg_of_cell[c], o, h)
        flow.absorb(state)
    return state + flow.heavy


def sample_immigrated_mass(spec: ModelSpec, triplet: EigenTriplet, lo: float, hi: float, config: SpineConfig,
                           seg_starts=None, start_law=None) -> np.ndarray:
    """``Z_hi^{(a, b]}`` for consecutive segments of ``(lo, hi]``; shape ``(n_realizations, segments, n)``.

    The spine starts at ``lo`` from the stationary law ``nu * phi`` unless
    ``start_law`` is given.
    """
    gen = spine_generator(spec, triplet)
    rates = immigration_rates(spec, config.delta_i, config.eps, config.sim.small_jump_mode)
    seg_starts = [lo] if seg_starts is None else sorted(seg_starts)
    if seg_starts[0] != lo:
        raise ValueError("the first segment must start at the window start")
    out = np.empty((config.n_realizations, len(seg_starts), spec.n))

    def run(blk):
        b, s, e = blk
        out[s:e] = _aggregate_block(spec, gen, rates, config, lo, hi, seg_starts, e - s, b, start_law)

    work = blocks(config.n_realizations, config.block_size)
    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as ex:
            list(ex.map(run, work))
    else:
        for blk in work:
            run(blk)
    return out


# bias budgets ----------------------------------------------------------------------------

@dataclass(frozen=True)
class BiasBudget:
    eps: float
    delta_i: float

    @property
    def total(self) -> float:
        return self.eps + self.delta_i

    def to_dict(self) -> dict:
        return {"eps": self.eps, "delta_i": self.delta_i, "total": self.total}


def laplace_bias_budget(spec: ModelSpec, t: float, f, eps: float, delta_i: float) -> BiasBudget:
    """Bounds on how much the ``eps`` and ``delta_i`` approximations move
    ``E[exp(-Z_t^{(0,t]}(f))]``.

    With ``n(s)`` the sup-norm of the mean semigroup at ``s``:
    the mass-``eps`` scheme changes the Laplace exponent per unit time by at most
    ``sigma^2 eps (V f)^2``, giving ``eps max sigma^2 |f|^2 int_0^t n(s)^2 ds``;
    truncation at ``delta_i`` drops immigrated mass at rate
    ``int_0^delta_i y^2 pi(dy)``, giving ``|f| max_x int_0^delta_i y^2 pi_x int_0^t n(s) ds``.
    """
    f = np.asarray(f, dtype=float)
    fn = float(np.max(np.abs(f))) if f.size else 0.0
    if t <= 0 or fn == 0:
        return BiasBudget(0.0, 0.0)
    L = mean_generator(spec)
    s = np.linspace(0.0, t, 401)
    norms = np.array([np.max(linalg.expm(u * L).sum(axis=1)) for u in s])
    i1 = float(trapezoid(norms, s))
    i2 = float(trapezoid(norms**2, s))
    sig2 = float(np.max(np.asarray(spec.sigma) ** 2))
    small = max(0.0 if isinstance(p, ZeroMeasure) else p.integral(2.0, 0.0, delta_i) for p in spec.pi)
    return BiasBudget(eps * sig2 * fn**2 * i2, fn * small * i1)


# kappa -----------------------------------------------------------------------------------

@dataclass(frozen=True)
class KappaSpineReport:
    T_values: tuple
    estimates: tuple  # Estimate per T
    monotone: bool
    config: dict

    @property
    def kappa(self) -> Estimate:
        return self.estimates[-1]

    def to_dict(self) -> dict:
        return {
            "T": list(self.T_values),
            "estimates": [e.to_dict() for e in self.estimates],
            "monotone_in_T": self.monotone,
            "config": self.config,
        }


def kappa_spine(spec: ModelSpec, triplet: EigenTriplet, config: SpineConfig = SpineConfig(),
                continuous_mode: ContinuousMode | None = ContinuousMode.EXACT) -> KappaSpineReport:
    """Mean of ``1 / Z_0^{(-T, 0]}(phi)`` for each ``T`` in ``config.T_values``.

    Continuous immigration defaults to ``EXACT``: under the ``eps`` scheme
    ``Z = 0`` has positive probability, which makes the mean of ``1 / Z``
    infinite. Pass ``None`` to keep ``config.continuous_mode``.

    The estimates share realizations, so each path's ``Z`` only grows with
    ``T`` and the sequence of means is non-increasing. An estimate that keeps
    falling as ``T`` grows signals ``K = 0``. Realizations with ``Z = 0``
    contribute ``inf``.
    """
    triplet.require_subcritical()
    if continuous_mode is not None:
        config = config.with_changes(continuous_mode=continuous_mode)
    Ts = config.T_values
    starts = [-T for T in sorted(Ts, reverse=True)]
    seg = sample_immigrated_mass(spec, triplet, -max(Ts), 0.0, config, seg_starts=starts)
    mass = seg @ triplet.phi  # (R, segments), segment 0 is the oldest
    estimates = []
    for k, T in enumerate(sorted(Ts)):
        total = mass[:, len(Ts) - 1 - k:].sum(axis=1)
        with np.errstate(divide="ignore"):
            inv = np.where(total > 0, 1.0 / np.where(total > 0, total, 1.0), np.inf)
        estimates.append(mean_se(inv))
    vals = [e.value for e in estimates]
    mono = all(a >= b for a, b in zip(vals, vals[1:]))
    return KappaSpineReport(tuple(sorted(Ts)), tuple(estimates), mono, config.to_dict())


# comparison with the h-transform ---------------------------------------------------------

@dataclass(frozen=True)
class SpinePanelRow:
    label: str
    spine: Estimate
    htransform: Estimate
    factorized: Estimate
    budget: BiasBudget
    passed: bool

    def to_dict(self) -> dict:
        return {"label": self.label, "spine": self.spine.to_dict(), "htransform": self.htransform.to_dict(),
                "factorized": self.factorized.to_dict(), "budget": self.budget.to_dict(), "passed": self.passed}


@dataclass(frozen=True)
class SpineComparison:
    t: float
    rows: tuple

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_dict(self) -> dict:
        return {"t": self.t, "rows": [r.to_dict() for r in self.rows], "passed": self.passed}


def spine_vs_htransform(spec: ModelSpec, triplet: EigenTriplet, t: float, f_panel, config: SpineConfig,
                        htransform_config: SimConfig, mu=None, k: float = 3.0) -> SpineComparison:
    """Laplace functionals of ``W^(0)_t + Z_t^{(0,t]}`` against the h-transformed law at ``t``.

    ``f_panel`` is a list of ``(label, f)``. ``mu`` defaults to ``nu``; for
    other initial measures the spine starts from ``mu * phi / mu(phi)``.
    Each row also reports the product of the separate means of
    ``exp(-W^(0)_t(f))`` and ``exp(-Z_t(f))``, which the independence of the
    two parts makes equal to the joint mean.
    """
    triplet.require_subcritical()
    mu = np.asarray(triplet.nu if mu is None else mu, dtype=float)
    start = mu * triplet.phi
    start_law = None if np.allclose(start / start.sum(), triplet.nu * triplet.phi / (triplet.nu @ triplet.phi)) \
        else start / start.sum()
    Z = sample_immigrated_mass(spec, triplet, 0.0, t, config, start_law=start_law)[:, 0, :]
    sim = config.sim.with_changes(n_paths=config.n_realizations, seed=config.seed, record_times=(t,),
                                  block_size=config.block_size, threads=config.threads)
    W0 = simulate_ensemble(spec, mu, sim, stream_key=(Purpose.SPINE_DESCENDANTS, 1)).at(t)
    h = qprocess.law_htransform(spec, triplet, mu, t, htransform_config)
    rows = []
    for label, f in f_panel:
        f = np.asarray(f, dtype=float)
        a = np.exp(-(W0 @ f))
        b = np.exp(-(Z @ f))
        joint = mean_se(a * b)
        ea, eb = mean_se(a), mean_se(b)
        fac = Estimate(ea.value * eb.value, math.hypot(ea.value * eb.se, eb.value * ea.se))
        hv = h.laplace(f)
        budget = laplace_bias_budget(spec, t, f, config.eps, config.delta_i)
        ok = abs(joint.value - hv.value) <= k * math.hypot(joint.se, hv.se) + budget.total
        ok &= abs(fac.value - hv.value) <= k * math.hypot(fac.se, hv.se) + budget.total
        rows.append(SpinePanelRow(label, joint, hv, fac, budget, bool(ok)))
    return SpineComparison(float(t), tuple(rows))
