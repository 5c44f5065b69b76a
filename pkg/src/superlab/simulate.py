"""Monte-Carlo simulation of the multitype superprocess on mass vectors.

One step of length ``h`` is a Lie splitting of three exact pieces:

1. motion: masses move along the chain, ``m <- m @ expm(h A)``;
2. continuous branching per type: the mechanism ``b z + c z^2`` with
   ``b = -beta + int_{u > dJ} u pi(du)`` and ``c = sigma^2`` (plus
   ``int_{u <= dJ} u^2 pi(du) / 2`` when small jumps are folded into the
   diffusion) is advanced by its exact transition: ``m' ~ Gamma(N, a)`` with
   ``N ~ Poisson(m e^{-bh} / a)`` and ``a = c (1 - e^{-bh}) / b``;
3. large jumps: ``Poisson(m pi((dJ, inf)) h)`` jumps with sizes from the
   normalised tail.

Zero is absorbing and masses never go negative, so no clamping is needed.
Paths whose jump intensity per step exceeds ``intensity_cap`` are sub-stepped
in power-of-two fractions. A model with no motion coupling and no large jumps
has an exact transition over any interval, and then one step is taken per
recording interval whatever ``dt`` is.
"""
from __future__ import annotations

import enum
import hashlib
import io
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .model.jumps import INF, ZeroMeasure
from .model.spec import ModelSpec
from .rng import BLOCK_SIZE, Purpose, blocks, stream
from .spectral import EigenTriplet, mean_generator
from .stats import Estimate, ols_hc0, proportion, ratio_mean


class SimulationError(RuntimeError):
    pass


class SmallJumpMode(str, enum.Enum):
    DIFFUSION_APPROX = "diffusion_approx"
    DROP = "drop"


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    n_paths: int = 10_000
    seed: int = 0
    record_times: tuple = (1.0,)
    small_jump_cutoff: float = 1e-2
    small_jump_mode: SmallJumpMode = SmallJumpMode.DIFFUSION_APPROX
    intensity_cap: float = 0.1
    max_substeps: int = 2**14
    block_size: int = BLOCK_SIZE
    threads: int = 1

    def __post_init__(self):
        rt = tuple(sorted(float(t) for t in self.record_times))
        object.__setattr__(self, "record_times", rt)
        object.__setattr__(self, "small_jump_mode", SmallJumpMode(self.small_jump_mode))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.small_jump_cutoff > 0:
            raise ValueError("small_jump_cutoff must be positive")
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if not rt or rt[0] < 0:
            raise ValueError("record_times must be non-empty and non-negative")
        if self.max_substeps < 1 or self.block_size < 1 or self.threads < 1:
            raise ValueError("max_substeps, block_size and threads must be positive")

    @property
    def horizon(self) -> float:
        return self.record_times[-1]

    def with_changes(self, **kw) -> "SimConfig":
        d = asdict(self)
        d.update(kw)
        return SimConfig(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["record_times"] = list(self.record_times)
        d["small_jump_mode"] = self.small_jump_mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        if "record_times" in d:
            d["record_times"] = tuple(d["record_times"])
        return cls(**d)


class _Stepper:
    def __init__(self, spec: ModelSpec, cfg: SimConfig):
        self.n = spec.n
        self.A = np.asarray(spec.motion)
        self.moving = bool(np.any(self.A != 0))
        dj = cfg.small_jump_cutoff
        self.b = np.empty(self.n)
        self.c = np.empty(self.n)
        self.rate = np.zeros(self.n)
        self.pi = spec.pi
        for x in range(self.n):
            p = spec.pi[x]
            big_mean = 0.0 if isinstance(p, ZeroMeasure) else p.integral(1.0, dj, INF)
            small_var = 0.0 if isinstance(p, ZeroMeasure) else p.integral(2.0, 0.0, dj)
            if not (math.isfinite(big_mean) and math.isfinite(small_var)):
                raise SimulationError(f"type {x}: jump moments infinite at cutoff {dj}")
            self.b[x] = -spec.beta[x] + big_mean
            self.c[x] = spec.sigma[x] ** 2
            if cfg.small_jump_mode is SmallJumpMode.DIFFUSION_APPROX:
                self.c[x] += 0.5 * small_var
            if not isinstance(p, ZeroMeasure):
                self.rate[x] = p.integral(0.0, dj, INF)
        self.dj = dj
        # without motion coupling or large jumps each transition is exact for any h
        self.exact = not self.moving and not np.any(self.rate > 0)
        self.cap = cfg.intensity_cap
        self.max_sub = cfg.max_substeps
        self._expm: dict[float, np.ndarray] = {}
        self._branch: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    def _motion(self, h: float) -> np.ndarray:
        P = self._expm.get(h)
        if P is None:
            P = linalg.expm(h * self.A)
            P = np.maximum(P, 0.0)
            P /= P.sum(axis=1, keepdims=True)
            self._expm[h] = P
        return P

    def _branch_coeffs(self, h: float):
        got = self._branch.get(h)
        if got is None:
            bh = self.b * h
            decay = np.exp(-bh)
            with np.errstate(divide="ignore", invalid="ignore"):
                a = np.where(np.abs(bh) > 1e-8, self.c * -np.expm1(-bh) / np.where(bh == 0, 1, self.b),
                             self.c * h * (1.0 - bh / 2.0))
            got = (decay, a)
            self._branch[h] = got
        return got

    def _substep(self, m: np.ndarray, h: float, rng: np.random.Generator) -> np.ndarray:
        if self.moving:
            m = m @ self._motion(h)
        start = m
        decay, a = self._branch_coeffs(h)
        out = np.empty_like(m)
        for x in range(self.n):
            mx = m[:, x]
            if self.c[x] > 0:
                N = rng.poisson(mx * decay[x] / a[x])
                out[:, x] = rng.gamma(N, a[x]) if N.size else N
            else:
                out[:, x] = mx * decay[x]
        for x in range(self.n):
            if self.rate[x] == 0:
                continue
            k = rng.poisson(start[:, x] * self.rate[x] * h)
            total = int(k.sum())
            if total:
                sizes = self.pi[x].sample_tail(rng, self.dj, total)
                out[:, x] += np.bincount(np.repeat(np.arange(k.size), k), weights=sizes,
                                         minlength=k.size)
        return out

    def step(self, m: np.ndarray, h: float, rng: np.random.Generator) -> np.ndarray:
        if not np.any(self.rate > 0):
            return self._substep(m, h, rng)
        alive = np.flatnonzero(m.sum(axis=1) > 0)
        if alive.size == 0:
            return m
        ma = m[alive]
        intensity = (ma @ self.rate) * h
        k = np.ones(alive.size, dtype=np.int64)
        over = intensity > self.cap
        if np.any(over):
            k[over] = 2 ** np.ceil(np.log2(intensity[over] / self.cap)).astype(np.int64)
        if k.max() > self.max_sub:
            raise SimulationError(
                f"sub-step budget exhausted: {int(k.max())} > {self.max_sub} "
                f"(jump intensity per step {intensity.max():.3g})"
            )
        out = m.copy()
        for kv in np.unique(k):
            sel = np.flatnonzero(k == kv)
            part = ma[sel]
            hs = h / kv
            for _ in range(int(kv)):
                part = self._substep(part, hs, rng)
            out[alive[sel]] = part
        return out


def _schedule(times: np.ndarray, dt: float) -> list[tuple[int, float]]:
    """``(n_steps, h)`` per recording interval so every record time is hit exactly."""
    plan = []
    for a, b in zip(times[:-1], times[1:]):
        k = 1 if dt == math.inf else max(1, math.ceil((b - a) / dt - 1e-9))
        plan.append((k, (b - a) / k))
    return plan


@dataclass(eq=False)
class PathEnsemble:
    """States at ``times`` for every path: ``states[path, time, type]``."""

    times: np.ndarray
    states: np.ndarray
    weights: np.ndarray
    seed: int
    fingerprint: str
    config: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def n_types(self) -> int:
        return self.states.shape[2]

    def index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"t={t} is not a record time")
        return k

    def at(self, t: float) -> np.ndarray:
        return self.states[:, self.index(t), :]

    def alive(self, t: float) -> np.ndarray:
        return self.at(t).sum(axis=1) > 0

    def survival(self, t: float) -> Estimate:
        alive = self.alive(t)
        if np.all(self.weights == 1):
            return proportion(int(alive.sum()), alive.size)
        return ratio_mean(alive.astype(float), self.weights)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self._header_bytes())
        h.update(np.ascontiguousarray(self.states, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.weights, dtype="<f8").tobytes())
        return h.hexdigest()

    # binary format: magic, u32 header length, JSON header, states, weights
    _MAGIC = b"SLENSEM1"

    def _header_bytes(self) -> bytes:
        header = {
            "fingerprint": self.fingerprint,
            "seed": self.seed,
            "times": self.times.tolist(),
            "n_paths": self.n_paths,
            "n_types": self.n_types,
            "config": self.config,
        }
        return json.dumps(header, sort_keys=True).encode()

    def to_bytes(self) -> bytes:
        hb = self._header_bytes()
        buf = io.BytesIO()
        buf.write(self._MAGIC)
        buf.write(struct.pack("<I", len(hb)))
        buf.write(hb)
        buf.write(np.ascontiguousarray(self.states, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(self.weights, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "PathEnsemble":
        if data[:8] != cls._MAGIC:
            raise ValueError("not an ensemble file")
        (hl,) = struct.unpack("<I", data[8:12])
        header = json.loads(data[12:12 + hl])
        P, n, K = header["n_paths"], header["n_types"], len(header["times"])
        off = 12 + hl
        states = np.frombuffer(data, dtype="<f8", count=P * K * n, offset=off).reshape(P, K, n)
        weights = np.frombuffer(data, dtype="<f8", count=P, offset=off + 8 * P * K * n)
        return cls(np.array(header["times"], dtype=float), states.astype(float), weights.astype(float),
                   header["seed"], header["fingerprint"], header["config"])

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "PathEnsemble":
        return cls.from_bytes(Path(path).read_bytes())

    def to_csv(self, path: str | Path) -> None:
        cols = ["path", "t", "weight"] + [f"m{x}" for x in range(self.n_types)]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for p in range(self.n_paths):
                for k, t in enumerate(self.times):
                    vals = ",".join(repr(float(v)) for v in self.states[p, k])
                    fh.write(f"{p},{t!r},{float(self.weights[p])!r},{vals}\n")


def simulate_ensemble(spec: ModelSpec, mu0, config: SimConfig, allow_null: bool = False,
                      stream_key: tuple = (Purpose.SIMULATE,)) -> PathEnsemble:
    """Simulate ``config.n_paths`` paths from ``mu0`` (one mass vector, or one
    per path with shape ``(n_paths, n)``).

    The random stream of path block ``b`` is ``stream(seed, *stream_key, b)``,
    so results do not depend on ``config.threads``.
    """
    n = spec.n
    mu0 = np.asarray(mu0, dtype=float)
    if mu0.ndim == 1:
        if mu0.shape != (n,):
            raise ValueError(f"mu0 must have length {n}")
        init = np.broadcast_to(mu0, (config.n_paths, n))
    else:
        if mu0.shape != (config.n_paths, n):
            raise ValueError(f"per-path mu0 must have shape ({config.n_paths}, {n})")
        init = mu0
    if np.any(init < 0) or not np.all(np.isfinite(init)):
        raise ValueError("initial masses must be finite and non-negative")
    if not allow_null and np.all(init == 0):
        raise ValueError("initial measure is null; pass allow_null=True to simulate the trap")
    stepper = _Stepper(spec, config)
    times = np.array(sorted(set([0.0, *config.record_times])))
    plan = _schedule(times, math.inf if stepper.exact else config.dt)
    states = np.empty((config.n_paths, times.size, n))

    def run(block):
        b, s, e = block
        rng = stream(config.seed, *stream_key, b)
        m = np.array(init[s:e], dtype=float)
        states[s:e, 0] = m
        for j, (k, h) in enumerate(plan, start=1):
            for _ in range(k):
                m = stepper.step(m, h, rng)
            states[s:e, j] = m

    work = blocks(config.n_paths, config.block_size)
    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as ex:
            list(ex.map(run, work))
    else:
        for blk in work:
            run(blk)
    meta = config.to_dict()
    del meta["threads"]  # results do not depend on it
    return PathEnsemble(times, states, np.ones(config.n_paths), config.seed, spec.fingerprint(), meta)


@dataclass(frozen=True)
class CheckReport:
    name: str
    estimate: float
    se: float
    target: float
    passed: bool
    detail: str = ""

    @property
    def z(self) -> float:
        return (self.estimate - self.target) / self.se if self.se > 0 else 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def moment_check(ensemble: PathEnsemble, spec: ModelSpec, f, t: float, k: float = 3.0) -> CheckReport:
    """Weighted mean of ``X_t(f)`` against ``mu0(expm(t L) f)``."""
    f = np.asarray(f, dtype=float)
    T = linalg.expm(t * mean_generator(spec))
    target = float(np.mean(ensemble.states[:, 0, :] @ (T @ f)))
    y = ensemble.at(t) @ f
    est = ratio_mean(y, ensemble.weights)
    if est.se == 0:
        passed = abs(est.value - target) <= 1e-12 * max(1.0, abs(target))
    else:
        passed = est.within(target, k)
    return CheckReport(f"moment t={t:g}", est.value, est.se, target, passed)


@dataclass(frozen=True)
class MartingaleReport:
    means: tuple[CheckReport, ...]
    increments: tuple[CheckReport, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.means + self.increments)


def martingale_check(ensemble: PathEnsemble, triplet: EigenTriplet, k: float = 3.0) -> MartingaleReport:
    """``e^{-lam t} X_t(phi)`` has constant mean ``mu0(phi)``, and its increments
    have no linear dependence on the value at the earlier time."""
    if ensemble.times.size < 2:
        raise ValueError("martingale check needs at least two record times")
    M = (ensemble.states @ triplet.phi) * np.exp(-triplet.lam * ensemble.times)[None, :]
    target = float(M[:, 0].mean())
    means = []
    for j, t in enumerate(ensemble.times):
        est = ratio_mean(M[:, j], ensemble.weights)
        ok = (abs(est.value - target) <= 1e-12 * max(1, abs(target))) if est.se == 0 else est.within(target, k)
        means.append(CheckReport(f"mean t={t:g}", est.value, est.se, target, ok))
    incs = []
    for j in range(1, ensemble.times.size):
        if j == 1 and np.ptp(M[:, 0]) == 0:
            est = ratio_mean(M[:, 1] - M[:, 0], ensemble.weights)
            ok = est.se == 0 and est.value == 0 or est.within(0.0, k)
            incs.append(CheckReport(f"increment {ensemble.times[0]:g}->{ensemble.times[1]:g}",
                                    est.value, est.se, 0.0, bool(ok)))
            continue
        D = M[:, j] - M[:, j - 1]
        X = np.column_stack([np.ones(D.size), M[:, j - 1] - M[:, j - 1].mean()])
        beta, se = ols_hc0(D, X)
        ok = all(abs(b) <= k * s + 1e-14 for b, s in zip(beta, se))
        incs.append(CheckReport(
            f"increment {ensemble.times[j - 1]:g}->{ensemble.times[j]:g}", float(beta[0]), float(se[0]),
            0.0, bool(ok), detail=f"slope {beta[1]:.3g} +- {se[1]:.3g}",
        ))
    return MartingaleReport(tuple(means), tuple(incs))
