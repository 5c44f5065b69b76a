"""Operations reachable from manifests and the command line.

Each operation takes ``(spec, params, seed, threads)`` and returns the parts
of a ``ResultRecord``. Parameters are plain JSON values; anything not given
falls back to the defaults below.
"""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from .. import cumulant, qprocess, spine
from ..model import ModelSpec, grey_condition, validate_model
from ..simulate import SimConfig, martingale_check, moment_check, simulate_ensemble
from ..spectral import h2_remainder, l_log_l_functional, spine_generator, triplet_for
from .records import ExperimentManifest, ResultRecord


class OperationError(RuntimeError):
    pass


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _est(e) -> dict:
    return {"value": float(e.value), "se": float(e.se)}


def _vec(params, key, default) -> np.ndarray:
    v = params.get(key)
    return np.asarray(default if v is None else v, dtype=float)


# Monte-Carlo operations default to the sizes the acceptance runner uses
MC_DEFAULTS = {"n_paths": 200_000, "dt": 1e-2}


def sim_config(params: dict, seed: int, threads: int, defaults=None, **overrides) -> SimConfig:
    d = dict(defaults or {})
    d.update(params.get("sim", {}))
    d.update(overrides)
    d["seed"] = seed
    d["threads"] = threads
    if "record_times" in d:
        d["record_times"] = tuple(d["record_times"])
    return SimConfig.from_dict(d)


def op_validate(spec: ModelSpec, params, seed, threads):
    rep = validate_model(spec)
    grey = grey_condition(spec)
    checks = {name: bool(ok) for name, ok, _ in rep.checks}
    data = {"messages": {name: msg for name, _, msg in rep.checks if msg},
            "grey": {"applicable": grey.applicable, "holds": grey.holds, "diagnostic": grey.diagnostic}}
    return {}, {}, checks, data


def op_spectral(spec, params, seed, threads):
    tr = triplet_for(spec)
    gap = tr.gap if math.isfinite(tr.gap) else 1.0
    t_grid = _vec(params, "t_grid", np.geomspace(0.1 / gap, 20.0 / gap, 40))
    prof = h2_remainder(spec, tr, t_grid)
    gen = spine_generator(spec, tr)
    ell = l_log_l_functional(spec, tr)
    data = {"triplet": tr.to_dict(), "l_log_l": ell, "spine_generator": gen.G.tolist(),
            "spine_stationary": gen.stationary.tolist()}
    checks = {"subcritical": tr.subcritical, "residuals_small": max(tr.residual_right, tr.residual_left) <= 1e-10,
              "spine_stationary": gen.residual <= 1e-12}
    return {}, {"remainder": to_csv(["t", "sup_abs_H"], prof.rows())}, checks, data


def op_cumulant(spec, params, seed, threads):
    f = _vec(params, "f", np.ones(spec.n))
    horizon = float(params.get("t", 1.0))
    tol = float(params.get("tol", cumulant.DEFAULT_TOL))
    grid = np.linspace(0.0, horizon, int(params.get("points", 101)))
    sol = cumulant.solve_cumulant(spec, f, grid, tol)
    rows = [(t, *v) for t, v in zip(sol.t, sol.values)]
    header = ["t"] + [f"V_{x}" for x in range(spec.n)]
    data = {"final": sol.final.tolist(), "steps": sol.stats.steps, "rejected": sol.stats.rejected}
    return {}, {"cumulant": to_csv(header, rows)}, {}, data


def op_extinction(spec, params, seed, threads):
    horizon = float(params.get("t", 10.0))
    tol = float(params.get("tol", cumulant.DEFAULT_TOL))
    tr = triplet_for(spec)
    curve = cumulant.extinction_curve(spec, horizon, tol, tr)
    rows = [(t, *v, nv, s, k) for t, v, nv, s, k in
            zip(curve.t, curve.v, curve.nu_v, curve.survival_from_nu, curve.normalized_survival)]
    header = ["t"] + [f"v_{x}" for x in range(spec.n)] + ["nu_vt", "survival_from_nu", "normalized_survival"]
    data = {"lambda": tr.lam, "delta": curve.delta, "theta_used": curve.theta_used}
    return {}, {"extinction": to_csv(header, rows)}, {}, data


def op_simulate(spec, params, seed, threads):
    tr = triplet_for(spec)
    cfg = sim_config(params, seed, threads)
    mu0 = _vec(params, "mu0", tr.nu)
    ens = simulate_ensemble(spec, mu0, cfg)
    out = params.get("_out")
    if out:
        target = Path(out)
        if target.suffix != ".bin":  # a directory
            target = target / "ensemble.bin"
        target.parent.mkdir(parents=True, exist_ok=True)
        ens.save(target)
        if params.get("csv"):
            ens.to_csv(target.with_suffix(".csv"))
    estimates, checks = {}, {}
    for t in ens.times[1:]:
        estimates[f"survival_t={t:g}"] = _est(ens.survival(t))
        m = moment_check(ens, spec, np.ones(spec.n), t)
        estimates[f"mass_t={t:g}"] = {"value": m.estimate, "se": m.se}
        checks[f"moment_t={t:g}"] = m.passed
    if ens.times.size >= 2:
        checks["martingale"] = martingale_check(ens, tr).passed
    data = {"ensemble_hash": ens.content_hash(), "config": cfg.to_dict(), "times": ens.times.tolist()}
    return estimates, {}, checks, data


def _law_rows(law: qprocess.EmpiricalLaw):
    header = ["weight"] + [f"m{x}" for x in range(law.samples.shape[1])]
    return to_csv(header, ((w, *s) for w, s in zip(law.weights, law.samples)))


def op_yaglom(spec, params, seed, threads):
    tr = triplet_for(spec)
    mu0 = _vec(params, "mu0", tr.nu)
    t_large = float(params.get("t_large", 8.0))
    cfg = sim_config(params, seed, threads, MC_DEFAULTS)
    law = qprocess.yaglom_estimate(spec, tr, mu0, t_large, cfg)
    estimates = {f"laplace[{label}]": _est(law.laplace(f)) for label, f in qprocess.laplace_panel(tr)}
    mass = law.mean(tr.phi)
    estimates["phi_mass"] = _est(mass)
    checks = {"ess_above_floor": law.ess >= qprocess.ESS_FLOOR, "not_stale": not law.meta["stale"]}
    data = {"ess": law.ess, "n_survivors": law.size, "staleness_gaps": law.meta["staleness_gaps"]}
    if params.get("qsd_r"):
        rep = qprocess.qsd_check(spec, tr, law, params["qsd_r"], cfg.with_changes(seed=seed + 1))
        data["qsd"] = rep.to_dict()
        checks["qsd"] = rep.passed
    return estimates, {"yaglom_samples": _law_rows(law)}, checks, data


def op_qprocess(spec, params, seed, threads):
    tr = triplet_for(spec)
    mu0 = _vec(params, "mu0", tr.nu)
    t = float(params.get("t", 4.0))
    r_grid = [float(r) for r in params.get("r_grid", [0, 1, 2, 4, 8])]
    cfg = sim_config(params, seed, threads, MC_DEFAULTS)
    h = qprocess.law_htransform(spec, tr, mu0, t, cfg)
    ens = simulate_ensemble(spec, mu0, cfg.with_changes(seed=seed + 1, record_times=(t,)))
    curve = cumulant.extinction_curve(spec, sorted({r for r in r_grid if r > 0}) or [1.0], 1e-9, tr)
    estimates = {"htransform_weight_mean": h.meta["weight_mean"]}
    rows = []
    for label, f in qprocess.laplace_panel(tr):
        hv = h.laplace(f)
        estimates[f"htransform[{label}]"] = _est(hv)
        for r in r_grid:
            c = qprocess.law_conditioned_markov(ens, spec, t, r, curve=curve if r > 0 else None).laplace(f)
            estimates[f"conditioned[{label}, r={r:g}]"] = _est(c)
            rows.append((label, r, c.value, c.se, hv.value, hv.se))
    checks = {"weight_mean_is_one": bool(h.meta["martingale_ok"])}
    table = to_csv(["test", "r", "conditioned", "conditioned_se", "htransform", "htransform_se"], rows)
    return estimates, {"qprocess_panel": table, "htransform_samples": _law_rows(h)}, checks, {"ess": h.ess}


def op_panel(spec, params, seed, threads):
    tr = triplet_for(spec)
    mu0 = _vec(params, "mu0", tr.nu)
    cfg = sim_config(params, seed, threads, MC_DEFAULTS)
    rep = qprocess.double_limit_panel(
        spec, tr, mu0, params.get("t_grid", [2, 4, 6, 8]), params.get("r_grid", [2, 4, 6, 8]), cfg,
        f=params.get("f"), target=params.get("target"), regime=params.get("regime"),
        mc_t_max=params.get("mc_t_max"),
    )
    rows = []
    for i, t in enumerate(rep.t_grid):
        for j, r in enumerate(rep.r_grid):
            e = rep.estimates[i][j]
            o = None if rep.oracle is None else rep.oracle[i][j]
            rows.append((t, r, "" if e is None else e.value, "" if e is None else e.se, "" if o is None else o))
    surv = [(t, s, m) for t, s, m in zip(rep.t_grid, rep.normalized_survival, rep.phi_mass_yaglom)]
    tables = {"panel": to_csv(["t", "r", "estimate", "se", "oracle"], rows),
              "survival": to_csv(["t", "normalized_survival", "phi_mass_yaglom"], surv)}
    return {}, tables, dict(rep.checks), rep.to_dict()


def op_spine(spec, params, seed, threads):
    tr = triplet_for(spec)
    cfg = spine.SpineConfig(
        T=float(params.get("T", 12.0)), eps=float(params.get("eps", 1e-2)),
        delta_i=float(params.get("deltaI", 1e-2)), dt=float(params.get("dt", params.get("sim", {}).get("dt", 1e-2))),
        n_realizations=int(params.get("n_realizations", 20_000)), seed=seed, threads=threads,
        nested_T=tuple(params.get("nested_T", (3.0, 6.0, 9.0, 12.0))),
        sim=sim_config(params, seed, threads, MC_DEFAULTS),
    )
    data, checks, estimates = {"config": cfg.to_dict()}, {}, {}
    if math.isfinite(l_log_l_functional(spec, tr)) or params.get("force_kappa"):
        ks = spine.kappa_spine(spec, tr, cfg)
        data["kappa_spine"] = ks.to_dict()
        estimates["kappa_spine"] = _est(ks.kappa)
        checks["kappa_monotone_in_T"] = ks.monotone
        try:
            kd = cumulant.kappa_deterministic(spec, tr)
            data["kappa_deterministic"] = kd.kappa
            checks["kappa_within_5pct"] = abs(ks.kappa.value - kd.kappa) <= 0.05 * kd.kappa
        except cumulant.CumulantError as exc:
            data["kappa_deterministic"] = str(exc)
    t = float(params.get("t", 3.0))
    hcfg = sim_config(params, seed + 1, threads, {"dt": cfg.dt},
                      n_paths=int(params.get("htransform_paths", 400_000)))
    cmp = spine.spine_vs_htransform(spec, tr, t, qprocess.laplace_panel(tr), cfg, hcfg)
    data["comparison"] = cmp.to_dict()
    checks["spine_matches_htransform"] = cmp.passed
    return estimates, {}, checks, data


OPERATIONS = {
    "validate": op_validate,
    "spectral": op_spectral,
    "cumulant": op_cumulant,
    "extinction": op_extinction,
    "simulate": op_simulate,
    "yaglom": op_yaglom,
    "qprocess": op_qprocess,
    "panel": op_panel,
    "spine": op_spine,
}


def run(manifest: ExperimentManifest, threads: int = 1, out=None) -> ResultRecord:
    """Execute a manifest. ``threads`` and ``out`` never change the numbers."""
    fn = OPERATIONS.get(manifest.op)
    if fn is None:
        raise OperationError(f"unknown operation {manifest.op!r}; choose from {sorted(OPERATIONS)}")
    spec = manifest.spec()
    if manifest.op != "validate":
        rep = validate_model(spec)
        if not rep.ok:
            raise OperationError(f"model fails validation: {'; '.join(rep.failures)}")
    params = dict(manifest.params)
    if out is not None:
        params["_out"] = str(out)
    try:
        estimates, tables, checks, data = fn(spec, params, manifest.seed, threads)
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        raise OperationError(f"{manifest.op}: {type(exc).__name__}: {exc}") from exc
    return ResultRecord(manifest.hash, manifest.op, estimates, tables,
                        {k: bool(v) for k, v in checks.items()}, _without_threads(_jsonable(data)))


def _without_threads(obj):
    # the worker count is an execution detail; records must not depend on it
    if isinstance(obj, dict):
        return {k: _without_threads(v) for k, v in obj.items() if k != "threads"}
    if isinstance(obj, list):
        return [_without_threads(v) for v in obj]
    return obj


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj
