"""Cumulant flow ``V_t f``, extinction functional ``v_t`` and the deterministic
functionals built from them.

The cumulant equation is solved in differential form
``dV/dt = L V - psi0(V)``, ``V_0 = f``, with ``L = A + diag(beta)`` and
``psi0`` the nonlinear part of the branching mechanism. Every function here
is deterministic and serves as the oracle for Monte-Carlo estimates.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model.jumps import ZeroMeasure
from .model.spec import Mechanism, ModelSpec, grey_condition
from .ode import IntegrationError, OdeResult, SolverStats, integrate
from .spectral import EigenTriplet, l_log_l_functional, mean_generator, triplet_for

DEFAULT_TOL = 1e-10

# Gauss-Legendre rule on [0, 1] for mean slopes of psi0
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
_GL_NODES, _GL_WEIGHTS = (_GL_NODES + 1) / 2, _GL_WEIGHTS / 2


class CumulantError(RuntimeError):
    pass


class HorizonWarning(UserWarning):
    pass


class BranchingField:
    """Vectorized ``psi0`` and the cumulant vector field for one model."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.L = mean_generator(spec)
        self.sig2 = np.asarray(spec.sigma) ** 2
        self.jumps = [(x, p) for x, p in enumerate(spec.pi) if not isinstance(p, ZeroMeasure)]

    def psi0(self, v: np.ndarray) -> np.ndarray:
        out = self.sig2 * v * v
        for x, p in self.jumps:
            out[x] += p.jump_laplace(float(v[x]))
        return out

    def psi0_slope(self, v: np.ndarray) -> np.ndarray:
        out = 2.0 * self.sig2 * v
        for x, p in self.jumps:
            out[x] += p.jump_laplace_slope(float(v[x]))
        return out

    def psi(self, v: np.ndarray) -> np.ndarray:
        return -np.asarray(self.spec.beta) * v + self.psi0(v)

    def rhs(self, t: float, v: np.ndarray) -> np.ndarray:
        return self.L @ v - self.psi0(v)

    def secant_slope(self, v: np.ndarray, d: np.ndarray) -> np.ndarray:
        """``(psi0(v + d) - psi0(v)) / d`` as the mean slope over ``[v, v + d]``,
        without the cancellation of the plain difference."""
        out = np.zeros_like(v)
        for s, w in zip(_GL_NODES, _GL_WEIGHTS):
            out += w * self.psi0_slope(v + s * d)
        return out

    def increment_rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        """Joint field for ``(V_t f, V_t(f + g) - V_t f)``."""
        n = self.L.shape[0]
        v, d = y[:n], y[n:]
        return np.concatenate([self.L @ v - self.psi0(v), self.L @ d - self.secant_slope(v, d) * d])

    def tangent_rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        """Joint field for ``(V, W)`` with ``W`` the derivative of ``V`` in the
        direction of its initial perturbation."""
        n = self.L.shape[0]
        v, w = y[:n], y[n:]
        return np.concatenate([self.L @ v - self.psi0(v), self.L @ w - self.psi0_slope(v) * w])


@dataclass(frozen=True)
class CumulantSolution:
    t: np.ndarray
    values: np.ndarray  # (len(t), n)
    stats: SolverStats = field(compare=False)

    def at(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.t, t))
        if k >= self.t.size or not math.isclose(self.t[k], t, rel_tol=0, abs_tol=1e-12):
            raise KeyError(f"t={t} is not on the solution grid")
        return self.values[k]

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]


def _grid(horizon_or_grid) -> np.ndarray:
    g = np.atleast_1d(np.asarray(horizon_or_grid, dtype=float))
    if g.size == 1:
        if not g[0] > 0:
            raise ValueError("horizon must be positive")
        return np.array([0.0, g[0]])
    if g[0] != 0.0:
        g = np.concatenate([[0.0], g])
    if np.any(np.diff(g) <= 0):
        raise ValueError("time grid must be strictly increasing and non-negative")
    return g


def _check_f(f, n: int) -> np.ndarray:
    f = np.array(f, dtype=float).reshape(-1)
    if f.size == 1 and n > 1:
        f = np.full(n, f[0])
    if f.shape != (n,):
        raise ValueError(f"f must have length {n}")
    if np.any(f < 0) or not np.all(np.isfinite(f)):
        raise ValueError("f must be finite and non-negative")
    return f


def _run(rhs, y0, grid, tol) -> OdeResult:
    try:
        return integrate(rhs, y0, grid, rtol=tol)
    except IntegrationError as exc:
        raise CumulantError(f"cumulant integration failed: {exc}") from None


def solve_cumulant(spec: ModelSpec, f, horizon, tol: float = DEFAULT_TOL,
                   field_: BranchingField | None = None) -> CumulantSolution:
    """``V_t f`` on a grid. ``horizon`` is a positive float (grid ``[0, horizon]``)
    or an increasing grid; ``0`` is prepended when missing."""
    fld = field_ or BranchingField(spec)
    f = _check_f(f, spec.n)
    grid = _grid(horizon)
    if not np.any(f):
        return CumulantSolution(grid, np.zeros((grid.size, spec.n)), SolverStats())
    res = _run(fld.rhs, f, grid, tol)
    return CumulantSolution(res.t, res.y, res.stats)


def solve_tangent(spec: ModelSpec, f, g, horizon, tol: float = DEFAULT_TOL,
                  field_: BranchingField | None = None) -> tuple[CumulantSolution, CumulantSolution]:
    """``V_t f`` together with ``d/de V_t(f + e g)`` at ``e = 0``."""
    fld = field_ or BranchingField(spec)
    f, g = _check_f(f, spec.n), _check_f(g, spec.n)
    grid = _grid(horizon)
    res = _run(fld.tangent_rhs, np.concatenate([f, g]), grid, tol)
    n = spec.n
    return (CumulantSolution(res.t, res.y[:, :n], res.stats),
            CumulantSolution(res.t, res.y[:, n:], res.stats))


def solve_increment(spec: ModelSpec, f, g, horizon, tol: float = DEFAULT_TOL,
                    field_: BranchingField | None = None) -> tuple[CumulantSolution, CumulantSolution]:
    """``V_t f`` together with ``V_t(f + g) - V_t f``, the latter accurate to
    relative ``tol`` however small ``g`` is."""
    fld = field_ or BranchingField(spec)
    f, g = _check_f(f, spec.n), _check_f(g, spec.n)
    grid = _grid(horizon)
    res = _run(fld.increment_rhs, np.concatenate([f, g]), grid, tol)
    n = spec.n
    return (CumulantSolution(res.t, res.y[:, :n], res.stats),
            CumulantSolution(res.t, res.y[:, n:], res.stats))


def laplace_functional(spec: ModelSpec, mu, f, t: float, tol: float = DEFAULT_TOL) -> float:
    """``E_mu[exp(-X_t(f))] = exp(-mu(V_t f))``."""
    mu = np.asarray(mu, dtype=float)
    if t == 0:
        return math.exp(-float(mu @ _check_f(f, spec.n)))
    return math.exp(-float(mu @ solve_cumulant(spec, f, t, tol).final))


def flow_defect(spec: ModelSpec, f, t: float, s: float, tol: float = DEFAULT_TOL) -> float:
    """``max_x |V_{t+s} f - V_t(V_s f)|``."""
    fld = BranchingField(spec)
    direct = solve_cumulant(spec, f, t + s, tol, fld).final
    inner = solve_cumulant(spec, f, s, tol, fld).final
    composed = solve_cumulant(spec, inner, t, tol, fld).final
    return float(np.max(np.abs(direct - composed)))


# extinction functional ---------------------------------------------------------

def _dominating_mechanism(spec: ModelSpec) -> Mechanism | None:
    """Homogeneous mechanism below every ``psi(x, .)``; available when all sigma > 0."""
    if np.min(spec.sigma) <= 0:
        return None
    return Mechanism(float(np.max(spec.beta)), float(np.min(spec.sigma)), ZeroMeasure())


def check_grey(spec: ModelSpec, dominating: Mechanism | None = None):
    if spec.is_homogeneous:
        res = grey_condition(spec)
    else:
        dom = dominating or _dominating_mechanism(spec)
        res = grey_condition(spec, dom) if dom is not None else grey_condition(spec)
    if not res.applicable:
        raise CumulantError(f"cannot certify extinction: {res.diagnostic}")
    if not res.holds:
        raise CumulantError(f"v_t = inf: Grey's condition fails ({res.diagnostic})")
    return res


@dataclass(frozen=True)
class ExtinctionCurve:
    t: np.ndarray
    v: np.ndarray  # (len(t), n)
    nu_v: np.ndarray
    lam: float
    delta: float
    theta_used: float
    stats: SolverStats = field(compare=False)

    @property
    def survival_from_nu(self) -> np.ndarray:
        return -np.expm1(-self.nu_v)

    @property
    def normalized_survival(self) -> np.ndarray:
        """``e^{-lam t} P_nu(X_t != 0)``."""
        return np.exp(-self.lam * self.t) * self.survival_from_nu

    def survival(self, mu) -> np.ndarray:
        return -np.expm1(-(self.v @ np.asarray(mu, dtype=float)))

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.t - t)))
        if abs(self.t[k] - t) > 1e-12 * max(1.0, t):
            raise KeyError(f"t={t} is not on the extinction grid")
        return self.v[k]


def v_at_delta(spec: ModelSpec, delta: float, tol: float = DEFAULT_TOL,
               field_: BranchingField | None = None, max_rounds: int = 60) -> tuple[np.ndarray, float]:
    """``lim_{theta -> inf} V_delta(theta 1)`` by geometric growth of ``theta``.

    ``V_delta(theta 1)`` is non-decreasing in ``theta``; iteration starts at
    ``theta = 1 / (delta tol)`` and stops once successive values agree to
    relative ``tol``. The growth ratio starts at 2 and is squared after every
    round that has not converged.
    """
    fld = field_ or BranchingField(spec)
    ones = np.ones(spec.n)
    inner = tol / 10.0
    # for a quadratic mechanism the relative gap at theta is ~ 1/(theta delta sigma^2)
    theta = 1.0 / (delta * tol)
    ratio = 2.0
    prev = solve_cumulant(spec, theta * ones, delta, inner, fld).final
    for _ in range(max_rounds):
        theta_next = theta * ratio
        if not math.isfinite(theta_next) or theta_next > 1e250:
            break
        cur = solve_cumulant(spec, theta_next * ones, delta, inner, fld).final
        if np.any(cur < prev * (1 - 1e3 * tol)):
            raise CumulantError("V_delta(theta) decreased in theta; solver tolerance too loose")
        theta = theta_next
        if np.max(np.abs(cur - prev) / cur) < tol:
            return cur, theta
        prev = cur
        ratio = min(ratio * ratio, 1e16)
    raise CumulantError(
        f"theta-limit of V_delta did not converge at delta={delta:g} (theta reached {theta:.3g}); "
        "try a smaller delta or a looser tolerance"
    )


def extinction_curve(spec: ModelSpec, horizon, tol: float = DEFAULT_TOL,
                     triplet: EigenTriplet | None = None, delta: float | None = None,
                     dominating: Mechanism | None = None) -> ExtinctionCurve:
    """``v_t`` on ``(0, horizon]`` via ``v_{t} = V_{t - delta}(v_delta)``.

    ``horizon`` is a scalar (a uniform grid of 200 points is used) or an
    increasing sequence of positive times.
    """
    check_grey(spec, dominating)
    tr = triplet or triplet_for(spec)
    if np.ndim(horizon) == 0:
        g = np.linspace(float(horizon) / 200, float(horizon), 200)
    else:
        g = np.asarray(horizon, dtype=float).reshape(-1)
    if np.any(g <= 0) or np.any(np.diff(g) <= 0):
        raise ValueError("extinction grid must be positive and increasing")
    if delta is None:
        delta = min(1e-2, float(g[0]))
    if delta > g[0]:
        raise ValueError("delta must not exceed the first grid time")
    fld = BranchingField(spec)
    v_delta, theta = v_at_delta(spec, delta, tol, fld)
    shifted = g - delta
    if shifted[0] == 0.0:
        if g.size == 1:
            v = v_delta[None, :]
            sol = CumulantSolution(np.zeros(1), v, SolverStats())
        else:
            sol = solve_cumulant(spec, v_delta, shifted[1:], tol, fld)
            v = sol.values
    else:
        sol = solve_cumulant(spec, v_delta, shifted, tol, fld)
        v = sol.values[1:]
    return ExtinctionCurve(g, v, v @ tr.nu, tr.lam, delta, theta, sol.stats)


def survival_probability(spec: ModelSpec, mu, t: float, tol: float = DEFAULT_TOL) -> float:
    curve = extinction_curve(spec, [t], tol)
    return float(curve.survival(mu)[0])


def extinction_remainder(curve: ExtinctionCurve, triplet: EigenTriplet) -> np.ndarray:
    """``max_x |v_t(x) / (phi(x) nu(v_t)) - 1|`` along the curve."""
    return np.max(np.abs(curve.v / (triplet.phi[None, :] * curve.nu_v[:, None]) - 1.0), axis=1)


# limit constants ----------------------------------------------------------------

@dataclass(frozen=True)
class KappaEstimate:
    kappa: float
    uncertainty: float
    regime: str  # "converged", "decaying" or "unsettled"
    loglog_slope: float
    table: tuple  # ((t, e^{-lam t} survival), ...)


def _aitken(a: float, b: float, c: float) -> float | None:
    d2 = (c - b) - (b - a)
    if d2 == 0 or not math.isfinite(d2):
        return None
    est = c - (c - b) ** 2 / d2
    return est if math.isfinite(est) else None


def kappa_deterministic(spec: ModelSpec, triplet: EigenTriplet | None = None, horizon: float = 20.0,
                        step: float = 0.5, tol: float = DEFAULT_TOL, target_tol: float = 1e-6,
                        slope_floor: float = -0.05) -> KappaEstimate:
    """``lim e^{-lam t} P_nu(X_t != 0)`` from the table on ``(0, horizon]``.

    The limit is extrapolated with Aitken's process on the last equally
    spaced points. When the log-log slope of the table over its second half
    is below ``slope_floor`` and the L log L functional is infinite, the
    sequence is treated as decaying to 0. With a finite functional the limit
    is positive but may be approached only logarithmically; the last table
    value is then returned as an upper bound, flagged ``unsettled``.
    """
    tr = triplet or triplet_for(spec)
    tr.require_subcritical()
    grid = np.arange(step, horizon + step / 2, step)
    curve = extinction_curve(spec, grid, tol, tr)
    k = curve.normalized_survival
    table = tuple(zip(grid.tolist(), k.tolist()))
    half = grid.size // 2
    slope = math.log(k[-1] / k[half]) / math.log(grid[-1] / grid[half])
    if slope < slope_floor:
        if math.isinf(l_log_l_functional(spec, tr)):
            return KappaEstimate(0.0, float(k[-1]), "decaying", slope, table)
        warnings.warn(
            f"normalized survival still falling at horizon {horizon:g} (log-log slope {slope:.3g}) "
            "although the limit is positive; returning the last value as an upper bound",
            HorizonWarning, stacklevel=2,
        )
        return KappaEstimate(float(k[-1]), float(k[half] - k[-1]), "unsettled", slope, table)
    est = _aitken(*k[-3:])
    prev = _aitken(*k[-4:-1])
    if est is None or prev is None:
        est, unc = float(k[-1]), float(abs(k[-1] - k[-2]))
    else:
        unc = abs(est - prev) + abs(est - k[-1]) * 1e-3
    regime = "converged"
    if unc > target_tol * max(abs(est), 1e-300):
        regime = "unsettled"
        warnings.warn(
            f"kappa not settled at horizon {horizon:g} (uncertainty {unc:.2g}); widen the grid",
            HorizonWarning, stacklevel=2,
        )
    return KappaEstimate(float(est), float(unc), regime, slope, table)


@dataclass(frozen=True)
class RateTable:
    t: np.ndarray
    r: np.ndarray
    ratio: np.ndarray  # (len(t), len(r))

    @property
    def sup_over_r(self) -> np.ndarray:
        return self.ratio.max(axis=1)


def rate_ratio(spec: ModelSpec, triplet: EigenTriplet | None, t_grid, r_grid,
               tol: float = DEFAULT_TOL) -> RateTable:
    """``e^{lam r} nu(v_t) / nu(v_{t+r})`` over ``t_grid x r_grid``."""
    tr = triplet or triplet_for(spec)
    t_grid = np.asarray(t_grid, dtype=float)
    r_grid = np.asarray(r_grid, dtype=float)
    times = np.unique(np.round(np.concatenate([t_grid, (t_grid[:, None] + r_grid[None, :]).ravel()]), 12))
    curve = extinction_curve(spec, times, tol, tr)
    lookup = dict(zip(times.tolist(), curve.nu_v.tolist()))
    out = np.empty((t_grid.size, r_grid.size))
    for i, t in enumerate(t_grid):
        for j, r in enumerate(r_grid):
            if r == 0:
                out[i, j] = 1.0
                continue
            num = lookup[round(t, 12)]
            den = lookup[round(t + r, 12)]
            out[i, j] = math.exp(tr.lam * r) * num / den
    return RateTable(t_grid, r_grid, out)


def rate_identity_rhs(spec: ModelSpec, triplet: EigenTriplet, t: float, r: float,
                      tol: float = DEFAULT_TOL, n_nodes: int = 400) -> float:
    """``exp(int_t^{t+r} nu(psi0(v_s)) / nu(v_s) ds)``: an independent route to
    the rate ratio, using only ``psi0`` along the curve."""
    from scipy.integrate import simpson

    s = np.linspace(t, t + r, n_nodes + 1)
    curve = extinction_curve(spec, s, tol, triplet)
    fld = BranchingField(spec)
    integrand = np.array([triplet.nu @ fld.psi0(v) for v in curve.v]) / curve.nu_v
    return math.exp(simpson(integrand, x=s))


# conditioned Laplace functionals --------------------------------------------------

def conditioned_laplace(spec: ModelSpec, mu, f, t: float, r: float,
                        tol: float = DEFAULT_TOL) -> float:
    """``E_mu[exp(-X_t(f)) | X_{t+r} != 0]`` by the Markov property:
    ``(e^{-mu V_t f} - e^{-mu V_t(f + v_r)}) / (1 - e^{-mu v_{t+r}})``."""
    mu = np.asarray(mu, dtype=float)
    f = _check_f(f, spec.n)
    if t == 0 and r == 0:
        return math.exp(-float(mu @ f))
    fld = BranchingField(spec)
    # numerator e^{-a} - e^{-b} is written as e^{-a} (1 - e^{-(b - a)}) with b - a
    # computed directly, since a and b are both tiny once t + r is large
    if r == 0:
        a = float(mu @ solve_cumulant(spec, f, t, tol, fld).final)
        b = float(mu @ extinction_curve(spec, [t], tol).v[0])
        return math.exp(-a) * -math.expm1(-(b - a)) / -math.expm1(-b)
    v_r = extinction_curve(spec, [r], tol).v[0]
    if t == 0:
        return math.exp(-float(mu @ f))
    V, D = solve_increment(spec, f, v_r, t, tol, fld)
    a, gap = float(mu @ V.final), float(mu @ D.final)
    c = float(mu @ solve_cumulant(spec, v_r, t, tol, fld).final)
    return math.exp(-a) * -math.expm1(-gap) / -math.expm1(-c)


def htransform_laplace(spec: ModelSpec, triplet: EigenTriplet, mu, f, t: float,
                       tol: float = DEFAULT_TOL) -> float:
    """``E_mu[X_t(phi) e^{-X_t(f)}] / (e^{lam t} mu(phi))``; the derivative of
    ``V_t`` along ``phi`` comes from the variational equation."""
    mu = np.asarray(mu, dtype=float)
    f = _check_f(f, spec.n)
    if t == 0:
        return math.exp(-float(mu @ f))
    V, W = solve_tangent(spec, f, triplet.phi, t, tol)
    return float(mu @ W.final) * math.exp(-float(mu @ V.final)) / (
        math.exp(triplet.lam * t) * float(mu @ triplet.phi))


def yaglom_laplace(spec: ModelSpec, triplet: EigenTriplet, f, t: float,
                   tol: float = DEFAULT_TOL) -> float:
    """Small-mass limit ``1 - nu(V_t f) / nu(v_t)`` of ``E_mu[e^{-X_t f} | X_t != 0]``
    along ``mu = m nu``; tends to the Yaglom Laplace functional as ``t`` grows."""
    V = solve_cumulant(spec, f, t, tol).final
    v = extinction_curve(spec, [t], tol, triplet).v[0]
    return 1.0 - float(triplet.nu @ V) / float(triplet.nu @ v)
