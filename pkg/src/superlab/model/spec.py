"""Finite-type model definition: motion generator, branching mechanism, checks."""
from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
import numpy as np

from .jumps import (
    INF,
    AtomList,
    JumpMeasure,
    LogPerturbedTail,
    TruncatedPowerLaw,
    ZeroMeasure,
)

ROW_SUM_TOL = 1e-12


class ModelError(ValueError):
    """Structurally malformed model (wrong shapes, unknown jump family)."""


class MomentKind(enum.Enum):
    U_AND_U2 = "u_and_u2"
    FIRST_MOMENT_ABOVE = "first_moment_above"
    SECOND_MOMENT_BELOW = "second_moment_below"
    SECOND_MOMENT_ABOVE = "second_moment_above"
    MASS_ABOVE = "mass_above"


def pi_moment(pi: JumpMeasure, kind: MomentKind | str, a: float | None = None) -> float:
    """Exact moment of a jump measure; ``inf`` is a legitimate answer."""
    kind = MomentKind(kind)
    if kind is MomentKind.U_AND_U2:
        return pi.integral(2.0, 0.0, 1.0) + pi.integral(1.0, 1.0, INF)
    if a is None or a < 0:
        raise ValueError(f"{kind.value} needs a threshold a >= 0")
    if kind is MomentKind.FIRST_MOMENT_ABOVE:
        return pi.integral(1.0, a, INF)
    if kind is MomentKind.SECOND_MOMENT_BELOW:
        return pi.integral(2.0, 0.0, a)
    if kind is MomentKind.SECOND_MOMENT_ABOVE:
        return pi.integral(2.0, a, INF)
    return pi.integral(0.0, a, INF)


def _check_jump_params(pi: JumpMeasure) -> list[str]:
    problems = []
    if isinstance(pi, TruncatedPowerLaw):
        if not 0.0 < pi.alpha < 2.0:
            problems.append(f"power-law alpha={pi.alpha} outside (0, 2)")
        if not 0.0 <= pi.u_min < pi.u_max:
            problems.append("power-law needs 0 <= u_min < u_max")
        if pi.c < 0:
            problems.append("power-law weight c < 0")
    elif isinstance(pi, LogPerturbedTail):
        if pi.u_min <= 1.0:
            problems.append("log-perturbed tail needs u_min > 1")
        if pi.theta <= 1.0:
            problems.append(f"log-perturbed tail theta={pi.theta} must exceed 1")
        if pi.c < 0:
            problems.append("log-perturbed tail weight c < 0")
    elif isinstance(pi, AtomList):
        for u, w in pi.atoms:
            if not u > 0:
                problems.append(f"atom location {u} not positive")
            if w < 0:
                problems.append(f"atom weight {w} negative")
    return problems


@dataclass(frozen=True)
class Mechanism:
    """Branching mechanism at a single type:
    psi(z) = -beta z + sigma^2 z^2 + int (e^{-zu} - 1 + zu) pi(du)."""

    beta: float
    sigma: float
    pi: JumpMeasure = field(default_factory=ZeroMeasure)

    def psi(self, z: float) -> float:
        return -self.beta * z + self.psi0(z)

    def psi0(self, z: float) -> float:
        """Nonlinear part sigma^2 z^2 + jump integral."""
        return self.sigma**2 * z * z + self.pi.jump_laplace(z)

    def psi_slope(self, z: float) -> float:
        return -self.beta + 2.0 * self.sigma**2 * z + self.pi.jump_laplace_slope(z)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Finite type space {0..n-1} with conservative motion generator ``motion``.

    Arrays are copied and frozen on construction.
    """

    motion: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray
    pi: tuple[JumpMeasure, ...]

    def __post_init__(self):
        try:
            A = np.array(self.motion, dtype=float, ndmin=2)
            beta = np.array(self.beta, dtype=float).reshape(-1)
            sigma = np.array(self.sigma, dtype=float).reshape(-1)
        except (TypeError, ValueError) as exc:
            raise ModelError(f"non-numeric model field: {exc}") from None
        n = A.shape[0]
        if A.ndim != 2 or A.shape != (n, n) or n == 0:
            raise ModelError(f"motion must be a non-empty square matrix, got shape {A.shape}")
        if beta.shape != (n,) or sigma.shape != (n,):
            raise ModelError(f"beta and sigma must have length {n}")
        pi = tuple(self.pi)
        if len(pi) != n:
            raise ModelError(f"pi must list one jump measure per type ({n}), got {len(pi)}")
        for p in pi:
            if not isinstance(p, (ZeroMeasure, AtomList, TruncatedPowerLaw, LogPerturbedTail)):
                raise ModelError(f"unknown jump measure {p!r}")
        for arr in (A, beta, sigma):
            arr.setflags(write=False)
        object.__setattr__(self, "motion", A)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "pi", pi)

    @property
    def n(self) -> int:
        return self.motion.shape[0]

    def mechanism(self, x: int) -> Mechanism:
        return Mechanism(float(self.beta[x]), float(self.sigma[x]), self.pi[x])

    @property
    def is_homogeneous(self) -> bool:
        return (
            np.all(self.beta == self.beta[0])
            and np.all(self.sigma == self.sigma[0])
            and all(p == self.pi[0] for p in self.pi)
        )

    def with_changes(self, **kw) -> "ModelSpec":
        fields = dict(motion=self.motion, beta=self.beta, sigma=self.sigma, pi=self.pi)
        fields.update(kw)
        return ModelSpec(**fields)

    def to_dict(self) -> dict:
        from .serialize import model_to_dict

        return model_to_dict(self)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, ModelSpec):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(self.fingerprint())


def feller(b: float = 1.0, c: float = 1.0) -> ModelSpec:
    """One-type Feller branching diffusion with psi(z) = b z + c z^2."""
    return ModelSpec([[0.0]], [-b], [math.sqrt(c)], (ZeroMeasure(),))


@dataclass
class ValidationReport:
    checks: list[tuple[str, bool, str]]

    @property
    def ok(self) -> bool:
        return all(passed for _, passed, _ in self.checks)

    @property
    def failures(self) -> list[str]:
        return [f"{name}: {msg}" for name, passed, msg in self.checks if not passed]

    def __str__(self) -> str:
        return "\n".join(
            f"[{'pass' if passed else 'FAIL'}] {name}" + (f" -- {msg}" if msg else "")
            for name, passed, msg in self.checks
        )


def validate_model(spec: ModelSpec) -> ValidationReport:
    """Check the standing conditions on a structurally valid model."""
    A = spec.motion
    checks = []
    finite = bool(np.all(np.isfinite(A)) and np.all(np.isfinite(spec.beta))
                  and np.all(np.isfinite(spec.sigma)))
    checks.append(("finite", finite, "" if finite else "non-finite entries"))
    rows = np.abs(A.sum(axis=1))
    off = A - np.diag(np.diag(A))
    conservative = bool(np.all(rows <= ROW_SUM_TOL) and np.all(off >= 0))
    msg = "" if conservative else (
        f"motion not conservative (max |row sum| {rows.max():.3g}, min off-diagonal {off.min():.3g})"
    )
    checks.append(("motion_conservative", conservative, msg))
    sig_ok = bool(np.all(spec.sigma >= 0))
    checks.append(("sigma_nonnegative", sig_ok, "" if sig_ok else "some sigma < 0"))
    problems = [f"type {x}: {p}" for x, pi in enumerate(spec.pi) for p in _check_jump_params(pi)]
    checks.append(("jump_parameters", not problems, "; ".join(problems)))
    moments = [pi_moment(pi, MomentKind.U_AND_U2) for pi in spec.pi]
    bad = [x for x, m in enumerate(moments) if not math.isfinite(m)]
    checks.append((
        "pi_moment_u_and_u2",
        not bad,
        "" if not bad else f"int (u ^ u^2) pi(x, du) infinite for types {bad}",
    ))
    return ValidationReport(checks)


@dataclass(frozen=True)
class GreyResult:
    applicable: bool
    holds: bool | None
    integral: float
    z_start: float
    diagnostic: str


def _growth_exponent(mech: Mechanism) -> float:
    """Exponent p with psi(z) ~ z^p as z -> inf (1 means at most linear)."""
    if mech.sigma > 0:
        return 2.0
    pi = mech.pi
    if isinstance(pi, TruncatedPowerLaw) and pi.u_min == 0.0 and pi.alpha > 1.0 and pi.c > 0:
        return pi.alpha
    return 1.0


def grey_condition(spec_or_mech, dominating: Mechanism | None = None) -> GreyResult:
    """Grey's criterion for a spatially homogeneous mechanism.

    For an inhomogeneous spec a homogeneous ``dominating`` mechanism with
    ``psi_dom <= psi(x, .)`` may be supplied; otherwise the result is
    inapplicable.
    """
    if isinstance(spec_or_mech, ModelSpec):
        spec = spec_or_mech
        if spec.is_homogeneous:
            mech = spec.mechanism(0)
        elif dominating is None:
            return GreyResult(False, None, math.nan, math.nan,
                              "inapplicable: mechanism varies with type and no dominating mechanism given")
        else:
            zs = np.logspace(-3, 6, 60)
            for x in range(spec.n):
                mx = spec.mechanism(x)
                if any(dominating.psi(z) > mx.psi(z) * (1 + 1e-12) + 1e-300 for z in zs):
                    return GreyResult(False, None, math.nan, math.nan,
                                      f"inapplicable: supplied mechanism does not dominate type {x} from below")
            mech = dominating
    else:
        mech = spec_or_mech

    # psi is convex with psi(0) = 0, so psi(z)/z is non-decreasing
    z0 = 1.0
    while mech.psi(z0) <= 0 and z0 < 1e12:
        z0 *= 2.0
    if mech.psi(z0) <= 0:
        return GreyResult(True, False, INF, math.nan, "psi never becomes positive")
    p = _growth_exponent(mech)
    if p <= 1.0:
        return GreyResult(True, False, INF, z0,
                          "psi grows at most linearly; int dz/psi diverges (persistent)")
    from scipy import integrate

    z_hi = max(1e6, 1e3 * z0)
    body, _ = integrate.quad(lambda v: math.exp(v) / mech.psi(math.exp(v)),
                             math.log(z0), math.log(z_hi), epsrel=1e-10, limit=200)
    if mech.sigma > 0:
        # psi(z) >= (sigma^2 - beta+/z_hi) z^2 on [z_hi, inf)
        tail = 1.0 / ((mech.sigma**2 - max(mech.beta, 0.0) / z_hi) * z_hi)
    else:
        # psi(z) ~ k z^p; asymptotic tail int_{z_hi}^inf dz / (k z^p)
        tail = z_hi / (mech.psi(z_hi) * (p - 1.0))
    return GreyResult(True, True, body + tail, z0,
                      f"psi ~ z^{p:g}; int_{z0:g}^inf dz/psi <= {body + tail:.6g}")
