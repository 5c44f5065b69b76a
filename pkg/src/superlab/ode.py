"""Adaptive Dormand-Prince 5(4) integrator with positivity-preserving step rejection.

Written in-house rather than wrapping ``scipy.integrate.solve_ivp`` because
steps that produce negative components must be rejected (not clamped) and the
error norm must stay purely relative when solutions decay over many decades.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = _B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


class IntegrationError(RuntimeError):
    pass


@dataclass
class SolverStats:
    steps: int = 0
    rejected: int = 0
    rejected_negative: int = 0
    rhs_calls: int = 0
    max_error_ratio: float = 0.0


@dataclass
class OdeResult:
    t: np.ndarray
    y: np.ndarray  # shape (len(t), n)
    stats: SolverStats = field(default_factory=SolverStats)


def integrate(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0,
    t_eval,
    rtol: float = 1e-10,
    atol: float = 1e-300,
    nonneg: bool = True,
    h0: float | None = None,
    max_steps: int = 1_000_000,
) -> OdeResult:
    """Integrate ``y' = rhs(t, y)`` from ``t_eval[0]`` landing exactly on every
    entry of ``t_eval`` (strictly increasing).

    Local error per step is kept below ``atol + rtol * max(|y|, |y_new|)``
    componentwise. With ``nonneg`` a step producing a negative component is
    rejected and retried with half the step.
    """
    t_eval = np.asarray(t_eval, dtype=float)
    if t_eval.ndim != 1 or t_eval.size == 0 or np.any(np.diff(t_eval) <= 0):
        raise ValueError("t_eval must be a strictly increasing 1-d grid")
    y = np.array(y0, dtype=float)
    n = y.size
    out = np.empty((t_eval.size, n))
    out[0] = y
    stats = SolverStats()
    t = float(t_eval[0])
    k1 = rhs(t, y)
    stats.rhs_calls += 1
    span = t_eval[-1] - t
    if h0 is None:
        scale = atol + rtol * np.abs(y)
        d0 = np.max(np.abs(y) / scale) if n else 0.0
        d1 = np.max(np.abs(k1) / scale) if n else 0.0
        h = 0.01 * d0 / d1 if d0 > 1e-5 and d1 > 1e-5 else 1e-6 * max(span, 1.0)
        h = min(h, span)
    else:
        h = h0
    K = np.empty((7, n))
    for j in range(1, t_eval.size):
        target = float(t_eval[j])
        while t < target:
            if stats.steps + stats.rejected > max_steps:
                raise IntegrationError(f"step budget exhausted at t={t:.6g}")
            last = h >= target - t
            if last:
                h = target - t
            if t + h == t or h < 1e-300:
                raise IntegrationError(
                    f"step size underflow at t={t:.6g} (h={h:.3g}); max |y| = {np.max(np.abs(y)):.3g}"
                )
            K[0] = k1
            for s in range(1, 7):
                ys = y + h * (np.dot(_A[s], K[:s]) if s > 1 else _A[s][0] * K[0])
                K[s] = rhs(t + _C[s] * h, ys)
            stats.rhs_calls += 6
            y_new = ys  # stage 7 argument equals the 5th-order solution (FSAL)
            err = h * (_E @ K)
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            ratio = float(np.max(np.abs(err) / scale)) if n else 0.0
            if not np.isfinite(ratio):
                ratio = np.inf
            if nonneg and np.any(y_new < 0):
                stats.rejected += 1
                stats.rejected_negative += 1
                h *= 0.5
                continue
            if ratio <= 1.0:
                t = target if last else t + h
                y = y_new
                k1 = K[6].copy()
                stats.steps += 1
                stats.max_error_ratio = max(stats.max_error_ratio, ratio)
                fac = 5.0 if ratio == 0 else min(5.0, 0.9 * ratio ** -0.2)
                h = h * fac
            else:
                stats.rejected += 1
                h *= max(0.1, 0.9 * ratio ** -0.2)
        out[j] = y
    return OdeResult(t_eval.copy(), out, stats)
