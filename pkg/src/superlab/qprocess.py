"""Conditioned laws of the superprocess as weighted samples of mass vectors.

All laws are ``EmpiricalLaw`` objects: a sample of states with non-negative
weights. Long conditioning horizons use the Markov identity
``P(X_{t+r} != 0 | X_t) = 1 - exp(-X_t(v_r))`` to replace nested simulation by
deterministic weights.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import cumulant
from .model.spec import ModelSpec
from .rng import Purpose, stream
from .simulate import PathEnsemble, SimConfig, simulate_ensemble
from .spectral import EigenTriplet
from .stats import Estimate, cluster_mean, ess, proportion, ratio_mean

ESS_FLOOR = 200.0
LAPLACE_THETAS = (0.5, 1.0, 2.0)


class ConditioningError(RuntimeError):
    pass


class StalenessWarning(UserWarning):
    pass


def laplace_panel(triplet: EigenTriplet, thetas=LAPLACE_THETAS) -> list[tuple[str, np.ndarray]]:
    """Test functions ``theta * g`` for ``g`` in {phi, 1, indicator of type 0},
    duplicates removed."""
    n = triplet.phi.size
    bases = [("phi", np.asarray(triplet.phi, dtype=float)), ("one", np.ones(n))]
    if n > 1:
        bases.append(("e0", np.eye(n)[0]))
    out, seen = [], []
    for name, g in bases:
        if any(np.allclose(g, s) for s in seen):
            continue
        seen.append(g)
        out.extend((f"{th:g}*{name}", th * g) for th in thetas)
    return out


@dataclass(eq=False)
class EmpiricalLaw:
    samples: np.ndarray  # (N, n)
    weights: np.ndarray  # (N,), not necessarily normalized
    provenance: str
    meta: dict = field(default_factory=dict)
    clusters: np.ndarray | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.samples.ndim != 2 or self.weights.shape != (self.samples.shape[0],):
            raise ValueError("samples must be (N, n) with one weight per sample")
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    @property
    def ess(self) -> float:
        return ess(self.weights)

    @property
    def normalized_weights(self) -> np.ndarray:
        return self.weights / self.weights.sum()

    def require_ess(self, floor: float = ESS_FLOOR) -> None:
        if self.ess < floor:
            raise ConditioningError(
                f"{self.provenance}: effective sample size {self.ess:.1f} below floor {floor:g}; "
                "use more paths or a shorter horizon"
            )

    def expectation(self, values) -> Estimate:
        values = np.asarray(values, dtype=float)
        if self.clusters is not None and np.all(self.weights == self.weights[0]):
            return cluster_mean(values, self.clusters)
        return ratio_mean(values, self.weights)

    def laplace(self, f) -> Estimate:
        return self.expectation(np.exp(-(self.samples @ np.asarray(f, dtype=float))))

    def mean(self, f) -> Estimate:
        return self.expectation(self.samples @ np.asarray(f, dtype=float))

    def reweighted(self, factor, provenance: str, **meta) -> "EmpiricalLaw":
        return EmpiricalLaw(self.samples, self.weights * np.asarray(factor, dtype=float),
                            provenance, {**self.meta, **meta}, self.clusters)

    def resample(self, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``size`` states proportionally to weight; returns states and source indices."""
        idx = rng.choice(self.size, size=size, p=self.normalized_weights)
        return self.samples[idx], idx

    def to_csv(self, path) -> None:
        n = self.samples.shape[1]
        with open(path, "w") as fh:
            fh.write(",".join(["weight"] + [f"m{x}" for x in range(n)]) + "\n")
            for w, s in zip(self.weights, self.samples):
                fh.write(",".join(repr(float(v)) for v in (w, *s)) + "\n")


# conditioning ------------------------------------------------------------------------

def law_conditioned(ensemble: PathEnsemble, t: float, r: float) -> EmpiricalLaw:
    """States at ``t`` of the paths alive at ``t + r``, equally weighted."""
    at_t = ensemble.at(t)
    alive = ensemble.alive(t + r)
    k = int(alive.sum())
    surv = proportion(k, alive.size)
    if k == 0:
        raise ConditioningError(
            f"no path survives to t+r={t + r:g} (survival estimate 0 of {alive.size}); "
            "use law_conditioned_markov or h-transform sampling"
        )
    return EmpiricalLaw(at_t[alive], np.ones(k), f"Q_(t={t:g}, r={r:g}) by survival",
                        {"t": t, "r": r, "survival": surv.to_dict(), "n_survivors": k})


def law_conditioned_markov(ensemble: PathEnsemble, spec: ModelSpec, t: float, r: float,
                           tol: float = 1e-9, curve: cumulant.ExtinctionCurve | None = None) -> EmpiricalLaw:
    """Same law as ``law_conditioned`` but weighting each state ``X_t`` by its exact
    survival probability ``1 - exp(-X_t(v_r))`` instead of observing survival."""
    at_t = ensemble.at(t)
    alive = at_t.sum(axis=1) > 0
    if not np.any(alive):
        raise ConditioningError(f"no path alive at t={t:g}")
    x = at_t[alive]
    if r == 0:
        w = np.ones(x.shape[0])
    else:
        v_r = curve.at(r) if curve is not None else cumulant.extinction_curve(spec, [r], tol).v[0]
        w = -np.expm1(-(x @ v_r))
    est = ratio_mean(np.concatenate([w, np.zeros(alive.size - x.shape[0])]), np.ones(alive.size))
    return EmpiricalLaw(x, w, f"Q_(t={t:g}, r={r:g}) by survival weights",
                        {"t": t, "r": r, "survival": est.to_dict()})


def _htransform_weights(states: np.ndarray, triplet: EigenTriplet, mu, t: float) -> np.ndarray:
    return (states @ triplet.phi) / (math.exp(triplet.lam * t) * float(np.asarray(mu) @ triplet.phi))


def law_htransform(spec: ModelSpec, triplet: EigenTriplet, mu, t: float, config: SimConfig,
                   ensemble: PathEnsemble | None = None, ess_floor: float = ESS_FLOOR) -> EmpiricalLaw:
    """``Q^mu_{t,inf}``: unconditioned paths weighted by ``X_t(phi) / (e^{lam t} mu(phi))``.

    The pre-normalization weight mean is reported (it has expectation 1).
    """
    mu = np.asarray(mu, dtype=float)
    if not np.any(mu > 0):
        raise ValueError("h-transform needs a non-null initial measure")
    if t == 0:
        return EmpiricalLaw(mu[None, :], np.ones(1), "Q_(t=0, r=inf)",
                            {"t": 0.0, "weight_mean": Estimate(1.0, 0.0).to_dict(), "martingale_ok": True})
    if ensemble is None:
        ensemble = simulate_ensemble(spec, mu, config.with_changes(record_times=(t,)))
    states = ensemble.at(t)
    w = _htransform_weights(states, triplet, mu, t)
    wm = ratio_mean(w, np.ones(w.size))
    keep = w > 0
    law = EmpiricalLaw(states[keep], w[keep], f"Q_(t={t:g}, r=inf) by h-transform",
                       {"t": t, "weight_mean": wm.to_dict(), "martingale_ok": bool(wm.within(1.0))})
    law.require_ess(ess_floor)
    return law


def yaglom_estimate(spec: ModelSpec, triplet: EigenTriplet, mu, t_large: float, config: SimConfig,
                    ensemble: PathEnsemble | None = None, stale_tol: float = 1e-3) -> EmpiricalLaw:
    """``Q_{inf,0}`` estimated by ``Q^mu_{t_large, 0}``.

    Staleness is judged on the deterministic conditional Laplace functionals at
    ``t_large`` and ``2 t_large`` for three test functions; a gap above
    ``stale_tol`` triggers a warning.
    """
    triplet.require_subcritical()
    mu = np.asarray(mu, dtype=float)
    if ensemble is None:
        ensemble = simulate_ensemble(spec, mu, config.with_changes(record_times=(t_large,)))
    law = law_conditioned(ensemble, t_large, 0.0)
    gaps = {}
    for th in LAPLACE_THETAS:
        f = th * triplet.phi
        a = cumulant.conditioned_laplace(spec, mu, f, t_large, 0.0)
        b = cumulant.conditioned_laplace(spec, mu, f, 2 * t_large, 0.0)
        gaps[f"{th:g}*phi"] = abs(a - b)
    stale = max(gaps.values()) > stale_tol
    if stale:
        warnings.warn(f"Yaglom estimate at t={t_large:g} may not have converged: {gaps}",
                      StalenessWarning, stacklevel=2)
    law.provenance = f"Q_(inf,0) via t={t_large:g}"
    law.meta.update({"staleness_gaps": gaps, "stale": stale})
    return law


@dataclass(frozen=True)
class QsdReport:
    r: tuple
    survival: tuple  # Estimate per r
    target: tuple
    bias: tuple
    laplace_gaps: dict  # (r, label) -> (difference, joint se)
    passed: bool

    def to_dict(self) -> dict:
        return {
            "r": list(self.r),
            "survival": [e.to_dict() for e in self.survival],
            "target": list(self.target),
            "bias": list(self.bias),
            "laplace_gaps": {f"{k[0]:g}|{k[1]}": v for k, v in self.laplace_gaps.items()},
            "passed": self.passed,
        }


def qsd_check(spec: ModelSpec, triplet: EigenTriplet, yaglom: EmpiricalLaw, r_grid, config: SimConfig,
              restarts_per_atom: int = 4, n_atoms: int | None = None, bias=None, k: float = 3.0) -> QsdReport:
    """Restart fresh paths from resampled Yaglom atoms: survival at ``r`` should be
    ``e^{lam r}`` and the survivors should again follow the Yaglom law.

    ``bias`` (one value per ``r``) widens the survival tolerance to account for
    the finite-time Yaglom approximation. Standard errors are clustered by
    parent atom.
    """
    yaglom.require_ess()
    r_grid = tuple(float(r) for r in r_grid)
    bias = tuple(bias) if bias is not None else (0.0,) * len(r_grid)
    n_atoms = n_atoms or min(yaglom.size, max(1, config.n_paths // restarts_per_atom))
    rng = stream(config.seed, Purpose.RESAMPLE)
    atoms, _ = yaglom.resample(rng, n_atoms)
    init = np.repeat(atoms, restarts_per_atom, axis=0)
    clusters = np.repeat(np.arange(n_atoms), restarts_per_atom)
    positive = tuple(r for r in r_grid if r > 0)
    cfg = config.with_changes(n_paths=init.shape[0], record_times=positive or (1.0,))
    ens = simulate_ensemble(spec, init, cfg, stream_key=(Purpose.RESTART,))
    survival, target, gaps, ok = [], [], {}, True
    for r, b in zip(r_grid, bias):
        tgt = math.exp(triplet.lam * r)
        if r == 0:
            est = Estimate(1.0, 0.0)
        else:
            alive = ens.alive(r).astype(float)
            est = cluster_mean(alive, clusters)
            surv = EmpiricalLaw(ens.at(r)[alive > 0], np.ones(int(alive.sum())), "restart survivors",
                                clusters=clusters[alive > 0])
            for label, f in laplace_panel(triplet):
                a, c = surv.laplace(f), yaglom.laplace(f)
                se = math.hypot(a.se, c.se)
                gaps[(r, label)] = (a.value - c.value, se)
                ok &= abs(a.value - c.value) <= k * se + b
        survival.append(est)
        target.append(tgt)
        ok &= est.within(tgt, k, b) if est.se > 0 else abs(est.value - tgt) <= 1e-12
    return QsdReport(r_grid, tuple(survival), tuple(target), bias, gaps, bool(ok))


def law_qinfty_r(yaglom: EmpiricalLaw, spec: ModelSpec, r: float, tol: float = 1e-9) -> EmpiricalLaw:
    """``Q_{inf,r}``: Yaglom atoms reweighted by their survival probability over ``r``."""
    if r == 0:
        return EmpiricalLaw(yaglom.samples, yaglom.weights, f"Q_(inf,r=0)", dict(yaglom.meta), yaglom.clusters)
    v_r = cumulant.extinction_curve(spec, [r], tol).v[0]
    return yaglom.reweighted(-np.expm1(-(yaglom.samples @ v_r)), f"Q_(inf,r={r:g})", r=r)


def law_qinfty_infty(yaglom: EmpiricalLaw, triplet: EigenTriplet) -> EmpiricalLaw:
    """``Q_{inf,inf}``: the Yaglom law size-biased by ``eta(phi)``."""
    return yaglom.reweighted(yaglom.samples @ triplet.phi, "Q_(inf,inf) by phi-size-biasing")


# double limit panel ----------------------------------------------------------------------

@dataclass(frozen=True)
class PanelReport:
    t_grid: tuple
    r_grid: tuple
    estimates: tuple  # rows over t, columns over r, each an Estimate (or None)
    oracle: tuple | None  # same shape, deterministic values
    target: float | None
    normalized_survival: tuple  # deterministic e^{-lam t} P_mu(X_t != 0) / mu(phi)
    phi_mass_yaglom: tuple  # deterministic int eta(phi) dQ^mu_{t,0}
    mc_survival: tuple  # MC estimates of e^{-lam t} P_mu(X_t != 0) / mu(phi)
    mc_phi_mass: tuple
    checks: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        def est(e):
            return None if e is None else e.to_dict()
        return {
            "t_grid": list(self.t_grid),
            "r_grid": list(self.r_grid),
            "estimates": [[est(e) for e in row] for row in self.estimates],
            "oracle": None if self.oracle is None else [list(r) for r in self.oracle],
            "target": self.target,
            "normalized_survival": list(self.normalized_survival),
            "phi_mass_yaglom": list(self.phi_mass_yaglom),
            "mc_survival": [est(e) for e in self.mc_survival],
            "mc_phi_mass": [est(e) for e in self.mc_phi_mass],
            "checks": dict(self.checks),
        }


def double_limit_panel(spec: ModelSpec, triplet: EigenTriplet, mu, t_grid, r_grid, config: SimConfig,
                       f=None, target: float | None = None, regime: str | None = None,
                       mc_t_max: float | None = None, k: float = 3.0, tol: float = 1e-9) -> PanelReport:
    """Conditional Laplace functionals ``E_mu[e^{-X_t(f)} | X_{t+r} != 0]`` over the grid.

    ``regime`` is ``"finite"`` (the panel should settle at ``target``, the
    ``Q_{inf,inf}`` value) or ``"infinite"`` (normalized survival should decay
    and the Yaglom phi-mass should keep growing); by default it is read off the
    L log L functional. Monte-Carlo estimates use survival weights at ``t`` and
    are produced for ``t <= mc_t_max``.
    """
    from .spectral import l_log_l_functional

    triplet.require_subcritical()
    mu = np.asarray(mu, dtype=float)
    f = triplet.phi if f is None else np.asarray(f, dtype=float)
    t_grid = tuple(float(t) for t in t_grid)
    r_grid = tuple(float(r) for r in r_grid)
    if regime is None:
        regime = "finite" if math.isfinite(l_log_l_functional(spec, triplet)) else "infinite"
    mc_t_max = max(t_grid) if mc_t_max is None else mc_t_max
    mu_phi = float(mu @ triplet.phi)

    curve = cumulant.extinction_curve(spec, sorted(set(t_grid) | {r for r in r_grid if r > 0}), tol, triplet)
    surv_mu = {t: float(curve.survival(mu)[curve.t.tolist().index(t)]) for t in t_grid}
    norm_surv = tuple(math.exp(-triplet.lam * t) * surv_mu[t] / mu_phi for t in t_grid)
    phi_mass = tuple(math.exp(triplet.lam * t) * mu_phi / surv_mu[t] for t in t_grid)

    mc_times = tuple(t for t in t_grid if t <= mc_t_max)
    ens = simulate_ensemble(spec, mu, config.with_changes(record_times=mc_times)) if mc_times else None
    rows, oracle_rows, mc_surv, mc_mass = [], [], [], []
    for t in t_grid:
        row, orow = [], []
        for r in r_grid:
            orow.append(cumulant.conditioned_laplace(spec, mu, f, t, r, tol) if regime == "finite" else None)
            if ens is None or t not in mc_times:
                row.append(None)
                continue
            try:
                law = law_conditioned_markov(ens, spec, t, r, tol, curve)
                row.append(law.laplace(f) if law.ess >= 10 else None)
            except ConditioningError:
                row.append(None)
        rows.append(tuple(row))
        oracle_rows.append(tuple(orow))
        if ens is not None and t in mc_times:
            alive = ens.alive(t)
            s = proportion(int(alive.sum()), alive.size)
            scale = math.exp(-triplet.lam * t) / mu_phi
            mc_surv.append(Estimate(s.value * scale, s.se * scale))
            mc_mass.append(EmpiricalLaw(ens.at(t)[alive], np.ones(int(alive.sum())), "Q_t0").mean(triplet.phi)
                           if alive.any() else None)
        else:
            mc_surv.append(None)
            mc_mass.append(None)

    checks: dict[str, bool] = {}
    if regime == "finite":
        ti = [i for i, t in enumerate(t_grid) if t in mc_times][-2:]
        corner = [rows[i][j] for i in ti for j in (len(r_grid) - 2, len(r_grid) - 1)]
        corner = [e for e in corner if e is not None]
        checks["corner_available"] = len(corner) >= 2
        if corner:
            spread_ok = all(abs(a.value - b.value) <= k * math.hypot(a.se, b.se)
                            for a in corner for b in corner)
            checks["corner_spread_within_error"] = spread_ok
            if target is not None:
                for (i, j) in [(i, j) for i in ti for j in (len(r_grid) - 2, len(r_grid) - 1)]:
                    e, o = rows[i][j], oracle_rows[i][j]
                    if e is None:
                        continue
                    bias = abs(o - target)
                    checks[f"t={t_grid[i]:g},r={r_grid[j]:g} near target"] = e.within(target, k, bias)
        for i, t in enumerate(t_grid):
            for j, r in enumerate(r_grid):
                e = rows[i][j]
                if e is not None and e.se > 0:
                    checks.setdefault("mc_matches_oracle", True)
                    checks["mc_matches_oracle"] &= e.within(oracle_rows[i][j], k + 1)
    else:
        checks["survival_decays_10x"] = norm_surv[0] >= 10 * norm_surv[-1]
        checks["survival_monotone"] = all(a > b for a, b in zip(norm_surv, norm_surv[1:]))
        checks["phi_mass_increasing"] = all(a < b for a, b in zip(phi_mass, phi_mass[1:]))
        checks["phi_mass_not_settling"] = phi_mass[-1] / phi_mass[-2] - 1 > 0.1
        for t, e, d in zip(t_grid, mc_surv, norm_surv):
            if e is not None and e.se > 0:
                checks.setdefault("mc_survival_matches_oracle", True)
                checks["mc_survival_matches_oracle"] &= e.within(d, k)
    return PanelReport(t_grid, r_grid, tuple(rows), tuple(oracle_rows) if regime == "finite" else None,
                       target, norm_surv, phi_mass, tuple(mc_surv), tuple(mc_mass), checks)
