"""``lab`` command-line interface."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from ..simulate import SimConfig
from . import acceptance
from .ops import OPERATIONS, OperationError, run
from .records import ExperimentManifest, ResultStore, StaleModelError, write_outputs

_SIM_KEYS = {f.name for f in fields(SimConfig)}
# operations whose main output is a table: print it as CSV
_CSV_OUTPUT = {"spectral": "remainder", "cumulant": "cumulant", "extinction": "extinction"}


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _load_config(path) -> dict:
    if path is None:
        return {}
    cfg = json.loads(Path(path).read_text())
    if not isinstance(cfg, dict):
        raise SystemExit(f"config {path} must hold a JSON object")
    return cfg


def _params_from(args, cfg: dict) -> dict:
    params = dict(cfg.get("params", {k: v for k, v in cfg.items() if k not in ("model", "seed", "params")}))
    sim = dict(params.pop("sim", {}))
    for key in list(params):
        if key in _SIM_KEYS:
            sim[key] = params.pop(key)
    for key, attr in (("f", "f"), ("t", "t"), ("T", "T"), ("eps", "eps"), ("deltaI", "deltaI"),
                      ("t_large", "t_large"), ("mu0", "mu0"), ("n_realizations", "n_realizations")):
        val = getattr(args, attr, None)
        if val is not None:
            params[key] = val
    for key in ("n_paths", "dt"):
        val = getattr(args, key, None)
        if val is not None:
            sim[key] = val
    if getattr(args, "csv", False):
        params["csv"] = True
    if sim:
        params["sim"] = sim
    return params


def _add_common(p: argparse.ArgumentParser, model: bool = True) -> None:
    if model:
        p.add_argument("model", nargs="?", help="model JSON path or builtin:<name>")
    p.add_argument("--config", help="JSON file with parameters (and optionally a 'model' entry)")
    p.add_argument("--seed", type=int, help="unsigned 64-bit seed")
    p.add_argument("--out", help="directory for the JSON summary and CSV tables")
    p.add_argument("--threads", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lab", description="Conditioned superprocess laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in OPERATIONS:
        p = sub.add_parser(name)
        _add_common(p)
        if name == "cumulant":
            p.add_argument("--f", type=_floats, help="test function, one value per type")
            p.add_argument("--t", type=float, help="horizon")
        if name == "extinction":
            p.add_argument("--t", type=float, help="horizon")
        if name in ("simulate", "yaglom", "qprocess", "panel", "spine"):
            p.add_argument("--n-paths", dest="n_paths", type=int)
            p.add_argument("--dt", type=float)
            p.add_argument("--mu0", type=_floats, help="initial masses, one value per type")
        if name == "simulate":
            p.add_argument("--csv", action="store_true", help="also write ensemble.csv")
        if name == "yaglom":
            p.add_argument("--t-large", dest="t_large", type=float)
        if name == "qprocess":
            p.add_argument("--t", type=float)
        if name == "spine":
            p.add_argument("--T", type=float)
            p.add_argument("--t", type=float, help="comparison time for the h-transform panel")
            p.add_argument("--eps", type=float)
            p.add_argument("--deltaI", type=float)
            p.add_argument("--n-realizations", dest="n_realizations", type=int)
    p = sub.add_parser("run", help="replay a saved manifest")
    p.add_argument("manifest")
    _add_common(p, model=False)
    p = sub.add_parser("accept", help="run the acceptance suite")
    _add_common(p, model=False)
    p.add_argument("--suite", choices=[s.value for s in acceptance.Suite], default="full")
    p.add_argument("--scale", type=float, default=1.0, help="multiplier for Monte-Carlo sample sizes")
    p.add_argument("--golden", help="earlier summary JSON; refused if its model hashes are stale")
    p.add_argument("--criteria", type=lambda s: [int(x) for x in s.split(",")], help="e.g. 1,2,6")
    return parser


def _emit(manifest: ExperimentManifest, record, args) -> None:
    store = ResultStore()
    path = store.put(manifest, record)
    if args.out and not args.out.endswith(".bin"):
        write_outputs(args.out, manifest, record)
    table = _CSV_OUTPUT.get(manifest.op)
    if table and table in record.tables:
        if manifest.op == "spectral":
            tr = record.data["triplet"]
            print(f"# lambda: {tr['lambda']!r}")
            print(f"# gap: {tr['gap']!r}")
            print(f"# phi: {tr['phi']}")
            print(f"# nu: {tr['nu']}")
            print(f"# l_log_l: {record.data['l_log_l']!r}")
        sys.stdout.write(record.tables[table])
        print(f"# stored at {path}", file=sys.stderr)
    else:
        summary = record.summary()
        summary["stored_at"] = str(path)
        print(json.dumps(summary, indent=2, default=str))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "accept":
            summary = acceptance.accept(args.suite, args.scale, args.golden, ids=args.criteria)
            if args.out:
                Path(args.out).mkdir(parents=True, exist_ok=True)
                (Path(args.out) / "acceptance.json").write_text(
                    json.dumps(summary.to_dict(), indent=2, default=str) + "\n")
            return 0 if summary.passed else 1
        if args.command == "run":
            manifest = ExperimentManifest.load(args.manifest)
            if args.seed is not None:
                d = manifest.to_dict()
                d["seed"] = args.seed
                manifest = ExperimentManifest.from_dict(d)
        else:
            cfg = _load_config(args.config)
            ref = args.model or cfg.get("model")
            if ref is None:
                raise SystemExit("a model is required (path or builtin:<name>)")
            seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
            manifest = ExperimentManifest.create(args.command, ref, _params_from(args, cfg), seed)
        record = run(manifest, threads=args.threads, out=args.out if manifest.op == "simulate" else None)
        _emit(manifest, record, args)
        if manifest.op == "validate" and not record.passed:
            return 1
        return 0
    except acceptance.StaleGoldenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OperationError, StaleModelError, KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
