"""Perron data of the mean semigroup, its remainder profile, the spine generator,
and the L log L functional."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.sparse.csgraph import connected_components

from .model.spec import ModelSpec

SUBCRITICAL_MARGIN = 1e-8


class SpectralError(ValueError):
    pass


class NotSubcriticalWarning(UserWarning):
    pass


class NotSubcriticalError(SpectralError):
    pass


@dataclass(frozen=True, eq=False)
class EigenTriplet:
    """Leading eigenvalue with right eigenfunction ``phi`` (> 0) and left
    eigenmeasure ``nu`` (a probability vector), normalized so ``nu @ phi == 1``."""

    lam: float
    phi: np.ndarray
    nu: np.ndarray
    gap: float
    residual_right: float
    residual_left: float

    @property
    def subcritical(self) -> bool:
        return self.lam < -SUBCRITICAL_MARGIN

    def require_subcritical(self) -> None:
        if not self.subcritical:
            raise NotSubcriticalError(
                f"not subcritical: lambda = {self.lam:.6g} must be below -{SUBCRITICAL_MARGIN:g}"
            )

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "phi": self.phi.tolist(),
            "nu": self.nu.tolist(),
            "gap": self.gap,
            "residual_right": self.residual_right,
            "residual_left": self.residual_left,
        }


def mean_generator(spec: ModelSpec) -> np.ndarray:
    """``L = A + diag(beta)``; ``T_t f = expm(t L) @ f``."""
    return np.asarray(spec.motion) + np.diag(spec.beta)


def is_irreducible(L: np.ndarray) -> bool:
    off = np.array(L, dtype=float)
    np.fill_diagonal(off, 0.0)
    if off.shape[0] == 1:
        return True
    n_comp, _ = connected_components(off > 0, directed=True, connection="strong")
    return n_comp == 1


def _perron_vector(M: np.ndarray, vals: np.ndarray, vecs: np.ndarray) -> tuple[float, np.ndarray]:
    k = int(np.argmax(vals.real))
    v = vecs[:, k].real
    v = v * np.sign(v[np.argmax(np.abs(v))])
    return float(vals[k].real), v


def _polish(M: np.ndarray, lam: float, v: np.ndarray, steps: int = 3) -> np.ndarray:
    """Inverse iteration with a tiny shift to tighten an eigenvector."""
    n = M.shape[0]
    shift = lam + 1e-10 * max(1.0, abs(lam))
    A = M - shift * np.eye(n)
    try:
        lu = linalg.lu_factor(A, check_finite=False)
    except (linalg.LinAlgError, ValueError):
        return v
    for _ in range(steps):
        w = linalg.lu_solve(lu, v)
        if not np.all(np.isfinite(w)):
            break
        w = w / np.max(np.abs(w))
        w = w * np.sign(w[np.argmax(np.abs(w))])
        v = w
    return v


def eigen_triplet(L: np.ndarray, check_irreducible: bool = True) -> EigenTriplet:
    """Perron triplet of ``L``.

    Raises ``SpectralError`` if ``check_irreducible`` and the off-diagonal
    support is not strongly connected. Emits ``NotSubcriticalWarning`` when
    ``lambda >= -1e-8``.
    """
    L = np.asarray(L, dtype=float)
    n = L.shape[0]
    if check_irreducible and not is_irreducible(L):
        raise SpectralError("Perron-Frobenius inapplicable: motion is reducible")
    vals, right = linalg.eig(L)
    lam, phi = _perron_vector(L, vals, right)
    lvals, left = linalg.eig(L.T)
    _, nu = _perron_vector(L.T, lvals, left)
    if n > 1:
        phi = _polish(L, lam, phi)
        nu = _polish(L.T, lam, nu)
        # Rayleigh quotient is second-order accurate in the eigenvector error
        lam = float(nu @ L @ phi / (nu @ phi))
    if np.any(phi <= 0) or np.any(nu <= 0):
        raise SpectralError("leading eigenvectors are not strictly positive")
    nu = nu / nu.sum()
    phi = phi / (nu @ phi)
    res_r = float(np.max(np.abs(L @ phi - lam * phi)) / np.max(phi))
    res_l = float(np.max(np.abs(nu @ L - lam * nu)) / np.max(nu))
    others = np.sort(vals.real)[::-1][1:]
    gap = float(lam - others[0]) if others.size else math.inf
    if lam >= -SUBCRITICAL_MARGIN:
        warnings.warn(f"not subcritical: lambda = {lam:.6g}", NotSubcriticalWarning, stacklevel=2)
    for a in (phi, nu):
        a.setflags(write=False)
    return EigenTriplet(lam, phi, nu, gap, res_r, res_l)


def triplet_for(spec: ModelSpec) -> EigenTriplet:
    return eigen_triplet(mean_generator(spec))


def mean_semigroup(L: np.ndarray, t: float) -> np.ndarray:
    return linalg.expm(t * np.asarray(L, dtype=float))


@dataclass(frozen=True)
class RemainderProfile:
    t: np.ndarray
    sup_abs_h: np.ndarray

    def rows(self):
        return list(zip(self.t.tolist(), self.sup_abs_h.tolist()))


def h2_remainder(spec_or_L, triplet: EigenTriplet, t_grid) -> RemainderProfile:
    """``max_{x, y} |T_t 1_y(x) / (e^{lam t} phi(x) nu_y) - 1|`` over ``t_grid``.

    The sup over the positive cone is replaced by the sup over indicators.
    """
    L = mean_generator(spec_or_L) if isinstance(spec_or_L, ModelSpec) else np.asarray(spec_or_L)
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid <= 0):
        raise ValueError("remainder grid needs t > 0")
    out = np.empty(t_grid.size)
    base = np.outer(triplet.phi, triplet.nu)
    for i, t in enumerate(t_grid):
        # subtract the leading part first so the ratio does not lose digits
        T = linalg.expm(t * (L - triplet.lam * np.eye(L.shape[0])))
        out[i] = np.max(np.abs(T - base) / base)
    return RemainderProfile(t_grid, out)


@dataclass(frozen=True)
class SpineGenerator:
    G: np.ndarray
    stationary: np.ndarray
    residual: float


def spine_generator(spec_or_L, triplet: EigenTriplet) -> SpineGenerator:
    """Generator ``diag(phi)^-1 (L - lam) diag(phi)`` of the spine motion and
    its stationary law ``nu * phi``."""
    L = mean_generator(spec_or_L) if isinstance(spec_or_L, ModelSpec) else np.asarray(spec_or_L)
    phi = triplet.phi
    G = (L - triplet.lam * np.eye(L.shape[0])) * phi[None, :] / phi[:, None]
    # rows of G sum to 0 up to eigen-residual; fold the rounding into the diagonal
    G[np.diag_indices_from(G)] -= G.sum(axis=1)
    stat = triplet.nu * phi
    stat = stat / stat.sum()
    resid = float(np.max(np.abs(stat @ G)))
    if resid > 1e-12 * max(1.0, float(np.max(np.abs(G)))):
        raise SpectralError(f"nu*phi not stationary for the spine generator (residual {resid:.3g})")
    G.setflags(write=False)
    stat.setflags(write=False)
    return SpineGenerator(G, stat, resid)


def l_log_l_functional(spec: ModelSpec, triplet: EigenTriplet) -> float:
    """``sum_x nu_x int u phi_x log+(u phi_x) pi(x, du)``; ``inf`` is in-band."""
    total = 0.0
    for x in range(spec.n):
        part = spec.pi[x].ulogu(float(triplet.phi[x]))
        if part == math.inf:
            return math.inf
        total += float(triplet.nu[x]) * part
    return total
