"""Parametric jump measures pi(du) on (0, inf) with exact moments and samplers.

Every family exposes the same small surface:

* ``integral(k, lo, hi)`` -- the moment ``int_lo^hi u^k pi(du)`` (may be ``inf``),
* ``jump_laplace(z)`` -- the compensated Laplace integral
  ``int (exp(-z u) - 1 + z u) pi(du)``,
* ``jump_laplace_slope(z)`` -- its z-derivative ``int u (1 - exp(-z u)) pi(du)``,
* ``ulogu(scale)`` -- ``int u s log+(u s) pi(du)`` with ``s = scale``,
* ``sample_tail`` / ``sample_size_biased`` -- draws from ``pi`` and from
  ``u pi(du)`` restricted to ``(a, inf)`` and normalised.

Infinite integrals are returned as ``math.inf``; they are not errors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy import integrate

INF = math.inf

# switch point for the Taylor floor of exp(-s) - 1 + s
_SERIES_SWITCH = 1e-3
# beyond this s, exp(-s) is dropped from exp(-s) - 1 + s
_LINEAR_SWITCH = 60.0
_QUAD_KW = dict(epsabs=0.0, epsrel=1e-12, limit=200)


def compensated_exp(s):
    """Stable ``exp(-s) - 1 + s`` for ``s >= 0`` (scalar or array)."""
    s = np.asarray(s, dtype=float)
    small = s < _SERIES_SWITCH
    out = np.where(small, s * s * (0.5 - s / 6.0 + s * s / 24.0), np.expm1(-s) + s)
    return out if out.ndim else float(out)


def _one_minus_exp(s):
    return -np.expm1(-s)


def _quad(fun: Callable[[float], float], lo: float, hi: float) -> float:
    if hi <= lo:
        return 0.0
    val, _ = integrate.quad(fun, lo, hi, **_QUAD_KW)
    return val


_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


def _panel_quad(fun, lo: float, hi: float, origin: float | None = None, width: float = 1.0) -> float:
    """Composite Gauss-Legendre for integrands analytic on ``[lo, hi]``.

    Panels are at most ``width`` long and, when ``origin`` marks the nearest
    singularity, no longer than their distance to it, which keeps the
    convergence rate per panel fixed. ``fun`` must accept arrays.
    """
    if hi <= lo:
        return 0.0
    edges = [lo]
    a = lo
    while a < hi:
        w = width if origin is None else min(width, a - origin)
        a = min(a + w, hi)
        edges.append(a)
    e = np.asarray(edges)
    mid, half = 0.5 * (e[1:] + e[:-1]), 0.5 * (e[1:] - e[:-1])
    nodes = mid[:, None] + half[:, None] * _GL_X[None, :]
    return float(np.sum(half[:, None] * _GL_W[None, :] * fun(nodes)))


def _power_integral(p: float, lo: float, hi: float) -> float:
    """``int_lo^hi u^p du`` over ``0 <= lo <= hi <= inf``, extended-real."""
    if hi <= lo:
        return 0.0
    if p == -1.0:
        if lo == 0.0 or hi == INF:
            return INF
        return math.log(hi / lo)
    q = p + 1.0
    if lo == 0.0 and q <= 0.0:
        return INF
    if hi == INF:
        if q >= 0.0:
            return INF
        return -(lo**q) / q
    return (hi**q - lo**q) / q


@dataclass(frozen=True)
class ZeroMeasure:
    """The null jump measure."""

    def integral(self, k: float, lo: float = 0.0, hi: float = INF) -> float:
        return 0.0

    def jump_laplace(self, z: float) -> float:
        return 0.0

    def jump_laplace_slope(self, z: float) -> float:
        return 0.0

    def ulogu(self, scale: float) -> float:
        return 0.0

    def sample_tail(self, rng, a, size):
        raise ValueError("the zero measure has no mass to sample")

    sample_size_biased = sample_tail

    @property
    def support(self) -> tuple[float, float]:
        return (INF, INF)


@dataclass(frozen=True)
class AtomList:
    """Finite sum of atoms ``sum_i w_i delta_{u_i}``."""

    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "atoms", tuple((float(u), float(w)) for u, w in self.atoms)
        )

    @property
    def sizes(self) -> np.ndarray:
        return np.array([u for u, _ in self.atoms], dtype=float)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms], dtype=float)

    @property
    def support(self) -> tuple[float, float]:
        if not self.atoms:
            return (INF, INF)
        return (float(self.sizes.min()), float(self.sizes.max()))

    def integral(self, k: float, lo: float = 0.0, hi: float = INF) -> float:
        u, w = self.sizes, self.weights
        sel = (u > lo) & (u <= hi)
        return float(np.sum(w[sel] * u[sel] ** k))

    def jump_laplace(self, z: float) -> float:
        return float(np.sum(self.weights * compensated_exp(z * self.sizes)))

    def jump_laplace_slope(self, z: float) -> float:
        u = self.sizes
        return float(np.sum(self.weights * u * _one_minus_exp(z * u)))

    def ulogu(self, scale: float) -> float:
        x = self.sizes * scale
        return float(np.sum(self.weights * x * np.log(np.maximum(x, 1.0))))

    def _draw(self, rng, a, size, bias: int):
        u, w = self.sizes, self.weights * self.sizes**bias
        sel = u > a
        if not np.any(w[sel] > 0):
            raise ValueError(f"no atom mass above {a}")
        p = w[sel] / w[sel].sum()
        return u[sel][rng.choice(p.size, size=size, p=p)]

    def sample_tail(self, rng, a, size):
        return self._draw(rng, a, size, 0)

    def sample_size_biased(self, rng, a, size):
        return self._draw(rng, a, size, 1)


@dataclass(frozen=True)
class TruncatedPowerLaw:
    """Density ``c u^(-1-alpha)`` on ``(u_min, u_max)``; ``u_min`` may be 0
    and ``u_max`` may be ``inf``."""

    alpha: float
    u_min: float
    u_max: float
    c: float

    @property
    def support(self) -> tuple[float, float]:
        return (self.u_min, self.u_max)

    def integral(self, k: float, lo: float = 0.0, hi: float = INF) -> float:
        lo, hi = max(lo, self.u_min), min(hi, self.u_max)
        if self.c == 0.0 or hi <= lo:
            return 0.0
        return self.c * _power_integral(k - 1.0 - self.alpha, lo, hi)

    def jump_laplace(self, z: float) -> float:
        if z <= 0.0 or self.c == 0.0:
            return 0.0
        a = al = self.alpha
        s_lo, s_hi = z * self.u_min, z * self.u_max
        total = 0.0
        # Taylor floor: (s^2/2 - s^3/6 + s^4/24) s^(-1-alpha)
        b = min(s_hi, _SERIES_SWITCH)
        if b > s_lo:
            total += (
                _power_integral(1.0 - al, s_lo, b) / 2.0
                - _power_integral(2.0 - al, s_lo, b) / 6.0
                + _power_integral(3.0 - al, s_lo, b) / 24.0
            )
        lo, hi = max(s_lo, _SERIES_SWITCH), min(s_hi, _LINEAR_SWITCH)
        if hi > lo:
            total += _panel_quad(lambda v: compensated_exp(np.exp(v)) * np.exp(-a * v),
                                 math.log(lo), math.log(hi))
        lo = max(s_lo, _LINEAR_SWITCH)
        if s_hi > lo:
            total += _power_integral(-al, lo, s_hi) - _power_integral(-1.0 - al, lo, s_hi)
        return self.c * z**a * total

    def jump_laplace_slope(self, z: float) -> float:
        if z <= 0.0 or self.c == 0.0:
            return 0.0
        # int u (1 - e^{-zu}) c u^{-1-a} du = c z^{a-1} int (1 - e^{-s}) s^{-a} ds
        a = self.alpha
        s_lo, s_hi = z * self.u_min, z * self.u_max
        total = 0.0
        b = min(s_hi, _SERIES_SWITCH)
        if b > s_lo:
            total += (
                _power_integral(1.0 - a, s_lo, b)
                - _power_integral(2.0 - a, s_lo, b) / 2.0
                + _power_integral(3.0 - a, s_lo, b) / 6.0
            )
        lo, hi = max(s_lo, _SERIES_SWITCH), min(s_hi, _LINEAR_SWITCH)
        if hi > lo:
            total += _panel_quad(lambda v: _one_minus_exp(np.exp(v)) * np.exp((1.0 - a) * v),
                                 math.log(lo), math.log(hi))
        lo = max(s_lo, _LINEAR_SWITCH)
        if s_hi > lo:
            total += _power_integral(-a, lo, s_hi)
        return self.c * z ** (a - 1.0) * total

    def ulogu(self, scale: float) -> float:
        lo = max(self.u_min, 1.0 / scale)
        hi = self.u_max
        if hi <= lo or self.c == 0.0:
            return 0.0
        if hi == INF and self.alpha <= 1.0:
            return INF
        ls = math.log(scale)
        # v = log u; integrand c s u^{1-a} (log u + log s) du/u
        fun = lambda v: math.exp((1.0 - self.alpha) * v) * (v + ls)
        return self.c * scale * _quad(fun, math.log(lo), math.log(hi))

    def sample_tail(self, rng, a, size):
        lo, hi = max(a, self.u_min), self.u_max
        if lo <= 0.0:
            raise ValueError("tail sampling needs a positive cutoff")
        al = self.alpha
        x = rng.random(size)
        top = 0.0 if hi == INF else hi ** (-al)
        return (lo ** (-al) - x * (lo ** (-al) - top)) ** (-1.0 / al)

    def sample_size_biased(self, rng, a, size):
        lo, hi = max(a, self.u_min), self.u_max
        if lo <= 0.0:
            raise ValueError("size-biased sampling needs a positive cutoff")
        x = rng.random(size)
        q = 1.0 - self.alpha
        if q == 0.0:
            if hi == INF:
                raise ValueError("size-biased tail has infinite mass")
            return lo * (hi / lo) ** x
        if hi == INF and q >= 0.0:
            raise ValueError("size-biased tail has infinite mass")
        top = 0.0 if hi == INF else hi**q
        return (lo**q + x * (top - lo**q)) ** (1.0 / q)


@dataclass(frozen=True)
class LogPerturbedTail:
    """Density ``c u^-2 (log u)^-theta`` on ``(u_min, inf)`` with ``u_min > 1``.

    ``theta > 1`` keeps the first moment finite; the ``u log u`` moment is
    finite only for ``theta > 2``.
    """

    theta: float
    u_min: float
    c: float

    @property
    def support(self) -> tuple[float, float]:
        return (self.u_min, INF)

    def _v_integral(self, p: float, vlo: float, vhi: float) -> float:
        """``int_vlo^vhi exp(p v) v^-theta dv``, without the factor c."""
        th = self.theta
        if p == 0.0:
            if vhi == INF:
                return INF if th <= 1.0 else vlo ** (1.0 - th) / (th - 1.0)
            if th == 1.0:
                return math.log(vhi / vlo)
            return (vhi ** (1.0 - th) - vlo ** (1.0 - th)) / (1.0 - th)
        if vhi == INF:
            if p > 0.0:
                return INF
            # decays like exp(p v); cut where the tail is negligible
            vhi = vlo + 800.0 / abs(p)
        return _quad(lambda v: math.exp(p * v) * v ** (-th), vlo, vhi)

    def _log_integral(self, k: float, lo: float, hi: float) -> float:
        # int_lo^hi u^k c u^-2 (log u)^-theta du, in v = log u
        return self.c * self._v_integral(k - 1.0, math.log(lo), math.log(hi))

    def integral(self, k: float, lo: float = 0.0, hi: float = INF) -> float:
        lo, hi = max(lo, self.u_min), hi
        if self.c == 0.0 or hi <= lo:
            return 0.0
        return self._log_integral(k, lo, hi)

    def jump_laplace(self, z: float) -> float:
        if z <= 0.0 or self.c == 0.0:
            return 0.0
        th, L = self.theta, math.log(self.u_min)
        lz = math.log(z)
        # v = log u, s = z e^v; integrand g(s) e^{-v} v^{-theta}
        v_lin = max(L, math.log(_LINEAR_SWITCH) - lz)
        total = 0.0
        if v_lin > L:
            total += _panel_quad(lambda v: compensated_exp(np.exp(v + lz)) * np.exp(-v) * v ** (-th),
                                 L, v_lin, origin=0.0)
        # g(s) = s - 1 + e^{-s}; e^{-s} < e^{-60} is dropped
        total += z * v_lin ** (1.0 - th) / (th - 1.0)
        # int_{v_lin}^inf e^{-v} v^-theta dv; the integrand has dropped by e^-45 at the cut
        total -= _panel_quad(lambda v: np.exp(-v) * v ** (-th), v_lin, v_lin + 45.0, origin=0.0)
        return self.c * total

    def jump_laplace_slope(self, z: float) -> float:
        if z <= 0.0 or self.c == 0.0:
            return 0.0
        th, L = self.theta, math.log(self.u_min)
        lz = math.log(z)
        v_lin = max(L, math.log(_LINEAR_SWITCH) - lz)
        total = 0.0
        if v_lin > L:
            total += _panel_quad(lambda v: _one_minus_exp(np.exp(v + lz)) * v ** (-th), L, v_lin,
                                 origin=0.0)
        total += v_lin ** (1.0 - th) / (th - 1.0)
        return self.c * total

    def ulogu(self, scale: float) -> float:
        if self.c == 0.0:
            return 0.0
        if self.theta <= 2.0:
            return INF
        th, ls = self.theta, math.log(scale)
        lo = max(math.log(self.u_min), -ls)
        # quadrature to a cutoff, analytic tail beyond it
        cut = max(lo, 1.0) * 1e3
        body = _quad(lambda v: v ** (-th) * (v + ls), lo, cut)
        tail = cut ** (2.0 - th) / (th - 2.0) + ls * cut ** (1.0 - th) / (th - 1.0)
        return self.c * scale * (body + tail)

    def sample_tail(self, rng, a, size):
        lo = max(a, self.u_min)
        log_lo = math.log(lo)
        out = np.empty(size)
        todo = np.arange(size)
        # Pareto(1) proposal lo / U, accepted with prob (log lo / log u)^theta
        while todo.size:
            u = lo / (1.0 - rng.random(todo.size))
            keep = rng.random(todo.size) < (log_lo / np.log(u)) ** self.theta
            out[todo[keep]] = u[keep]
            todo = todo[~keep]
        return out

    def sample_size_biased(self, rng, a, size):
        if self.theta <= 1.0:
            raise ValueError("size-biased tail has infinite mass")
        vlo = math.log(max(a, self.u_min))
        x = 1.0 - rng.random(size)
        with np.errstate(over="ignore"):  # sizes beyond the float range come back as inf
            return np.exp(vlo * x ** (-1.0 / (self.theta - 1.0)))


JumpMeasure = Union[ZeroMeasure, AtomList, TruncatedPowerLaw, LogPerturbedTail]


def mass_above(pi: JumpMeasure, a: float) -> float:
    return pi.integral(0.0, a, INF)
