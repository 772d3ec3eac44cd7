"""Command-line harness: ``tensorvi {solve,verify,sweep,gen}``.

Configs are JSON documents::

    {
      "instance": {"family": "quadratic", "seed": 7, "n": 20, "m": 20, "mu": 1.0},
      "algorithm": "HYBRID",
      "params": {"p": 2, "eps_gap": 1e-8},
      "output_dir": "runs/q7",
      "record_every": 1,
      "csv": true
    }

``instance_path`` (a file written by ``gen``) may replace ``instance``.
Sweeps add ``"grid": {"mu": [1, 0.1, 0.01]}``; grid keys name either an
instance field or a solver parameter.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from tensorvi.core import Phase, SolverParams, Status
from tensorvi.drivers import Algorithm, run
from tensorvi.oracle import merit
from tensorvi.problems import (
    QuadraticSaddle,
    generate_instance,
    instance_from_json,
    instance_to_json,
    verify_instance,
)

ENV_OUTPUT_DIR = "TENSORVI_OUTPUT_DIR"

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_INNER, EXIT_VERIFY = 0, 1, 2, 3, 4
STATUS_EXIT = {Status.CONVERGED: EXIT_OK, Status.BUDGET_EXCEEDED: EXIT_BUDGET,
               Status.INNER_SOLVE_FAILED: EXIT_INNER}

CONFIG_KEYS = {"instance", "instance_path", "algorithm", "params", "output_dir", "max_iterations",
               "record_every", "csv", "homp_iterations", "max_crn_iter", "grid", "verify_seed"}
INSTANCE_KEYS = {"family", "seed", "n", "m", "mu", "coupling_scale", "tau", "spread",
                 "start_scale", "lp_operational"}
PARAM_KEYS = set(SolverParams.__dataclass_fields__)
CSV_COLUMNS = ["phase", "restart", "iter", "gamma", "f_norm", "dist_to_ref", "calls_F", "calls_JF"]


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return cfg


def validate_config(cfg: dict, need_algorithm: bool = True) -> None:
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    if ("instance" in cfg) == ("instance_path" in cfg):
        raise ConfigError("exactly one of 'instance' or 'instance_path' is required")
    if "instance" in cfg:
        inst = cfg["instance"]
        if not isinstance(inst, dict):
            raise ConfigError("'instance' must be an object")
        bad = set(inst) - INSTANCE_KEYS
        if bad:
            raise ConfigError(f"unknown instance fields: {sorted(bad)}")
        missing = {"family", "seed", "n", "m", "mu"} - set(inst)
        if missing:
            raise ConfigError(f"missing instance fields: {sorted(missing)}")
    params = cfg.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("'params' must be an object")
    bad = set(params) - PARAM_KEYS
    if bad:
        raise ConfigError(f"unknown params: {sorted(bad)}")
    if need_algorithm:
        try:
            Algorithm(cfg.get("algorithm"))
        except ValueError as exc:
            raise ConfigError(f"algorithm must be one of {[a.value for a in Algorithm]}") from exc
    for key in ("record_every", "max_iterations", "homp_iterations", "max_crn_iter"):
        if key in cfg and (not isinstance(cfg[key], int) or isinstance(cfg[key], bool) or cfg[key] < 1):
            raise ConfigError(f"'{key}' must be an integer >= 1")


def build_instance(cfg: dict, validate: bool = True):
    p = int(cfg.get("params", {}).get("p", 2))
    try:
        if "instance_path" in cfg:
            with open(cfg["instance_path"]) as fh:
                return instance_from_json(json.load(fh), p=p, validate=validate)
        fields = dict(cfg["instance"])
        return generate_instance(fields.pop("family"), fields.pop("seed"), fields.pop("n"),
                                 fields.pop("m"), fields.pop("mu"), p=p, **fields)
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot build instance: {exc}") from exc


def build_params(cfg: dict, inst) -> SolverParams:
    overrides = dict(cfg.get("params", {}))
    p = int(overrides.pop("p", 2))
    try:
        return inst.params_for(p, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid params: {exc}") from exc


def output_dir(cfg: dict, cli_value: Optional[str] = None) -> Path:
    return Path(cli_value or cfg.get("output_dir") or os.environ.get(ENV_OUTPUT_DIR) or "tensorvi_out")


def _thin(records, every: int):
    keep = [r for i, r in enumerate(records) if i % every == 0]
    if records and (len(records) - 1) % every != 0:
        keep.append(records[-1])
    return keep


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=True)


def summarize(inst, params: SolverParams, algorithm: Algorithm, trace) -> dict:
    z = trace.final_point
    zs = z.stacked()
    base = getattr(inst.oracle, "base", inst.oracle)
    gap = base.duality_gap(zs) if isinstance(base, QuadraticSaddle) else None
    ref = inst.reference_solution
    return {
        "label": inst.label,
        "algorithm": algorithm.value,
        "status": trace.status.value,
        "final_point": z.to_dict(),
        "merit": merit(inst.oracle, zs),
        "merit_target": params.mu**2 * params.eps_gap / params.l1 if params.l1 > 0 else None,
        "gap": gap,
        "grad_norm": float(np.linalg.norm(inst.oracle.grad(zs))),
        "dist_to_ref": None if ref is None else float(np.linalg.norm(zs - ref.stacked())),
        "iterations": {ph.value: trace.iterations(ph) for ph in Phase},
        "restarts": len(trace.restarts),
        "calls": dict(trace.counts),
        "params": params.to_dict(),
    }


def solve_to_dir(cfg: dict, out: Path) -> tuple[int, dict]:
    inst = build_instance(cfg)
    params = build_params(cfg, inst)
    algorithm = Algorithm(cfg["algorithm"])
    trace = run(inst.oracle, algorithm, params, inst.z1, reference=inst.reference_solution,
                max_records=cfg.get("max_iterations"),
                homp_iterations=cfg.get("homp_iterations", 50),
                max_crn_iter=cfg.get("max_crn_iter", 100))
    summary = summarize(inst, params, algorithm, trace)
    out.mkdir(parents=True, exist_ok=True)
    records = _thin(trace.records, cfg.get("record_every", 1))
    with open(out / "trace.jsonl", "w") as fh:
        for rec in records:
            fh.write(_dump(rec.to_dict()) + "\n")
    with open(out / "summary.json", "w") as fh:
        fh.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    if cfg.get("csv"):
        with open(out / "trace.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for rec in records:
                d = rec.to_dict()
                w.writerow([d["phase"], d["restart"], d["iter"], repr(d["gamma"]), repr(d["f_norm"]),
                            "" if d["dist_to_ref"] is None else repr(d["dist_to_ref"]),
                            d["calls"]["F"], d["calls"]["JF"]])
    return STATUS_EXIT[trace.status], summary


def cmd_solve(cfg: dict, out: Optional[str] = None) -> int:
    code, summary = solve_to_dir(cfg, output_dir(cfg, out))
    print(f"{summary['label']} {summary['algorithm']}: {summary['status']} "
          f"merit={summary['merit']:.3e}")
    return code


def cmd_verify(cfg: dict) -> int:
    inst = build_instance(cfg, validate=False)
    results = verify_instance(inst, seed=cfg.get("verify_seed", 0))
    failed = [k for k, (ok, _) in results.items() if not ok]
    for name, (ok, value) in results.items():
        print(f"{name}: {'ok' if ok else 'FAILED'} ({value:.3e})")
    if failed:
        print(f"verification failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def sweep_cells(cfg: dict) -> list[dict]:
    grid = cfg.get("grid")
    if not isinstance(grid, dict) or not grid or any(not isinstance(v, list) or not v for v in grid.values()):
        raise ConfigError("'grid' must be a non-empty object of non-empty lists")
    for key in grid:
        if key not in INSTANCE_KEYS and key not in PARAM_KEYS:
            raise ConfigError(f"grid key {key!r} is neither an instance field nor a param")
        if key in INSTANCE_KEYS and "instance" not in cfg:
            raise ConfigError(f"grid key {key!r} needs an inline instance")
    keys = list(grid)
    cells = []
    for values in itertools.product(*(grid[k] for k in keys)):
        cell = json.loads(json.dumps({k: v for k, v in cfg.items() if k != "grid"}))
        for k, v in zip(keys, values):
            if k in INSTANCE_KEYS:
                cell["instance"][k] = v
            else:
                cell.setdefault("params", {})[k] = v
        cells.append({"cell": dict(zip(keys, values)), "config": cell})
    return cells


def _run_cell(args):
    cfg, out = args
    code, summary = solve_to_dir(cfg, Path(out))
    return code, summary


def cmd_sweep(cfg: dict, out: Optional[str] = None, jobs: int = 1) -> int:
    cells = sweep_cells(cfg)
    root = output_dir(cfg, out)
    tasks = [(c["config"], str(root / f"cell_{i:03d}")) for i, c in enumerate(cells)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]
    rows = []
    for i, (c, (code, s)) in enumerate(zip(cells, results)):
        rows.append({"index": i, "cell": c["cell"], "status": s["status"], "exit_code": code,
                     "homp_iterations": s["iterations"]["HOMP"], "crn_iterations": s["iterations"]["CRN"],
                     "calls_F": s["calls"]["F"], "calls_JF": s["calls"]["JF"],
                     "merit": s["merit"], "gap": s["gap"], "label": s["label"]})
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "sweep.jsonl", "w") as fh:
        for row in rows:
            fh.write(_dump(row) + "\n")
    for row in rows:
        print(f"{row['index']:3d} {_dump(row['cell'])} {row['status']} HOMP={row['homp_iterations']} "
              f"CRN={row['crn_iterations']} F={row['calls_F']}")
    return max((r["exit_code"] for r in rows), default=EXIT_OK)


def cmd_gen(cfg: dict, path: str) -> int:
    inst = build_instance(cfg)
    doc = instance_to_json(inst)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
    print(f"wrote {inst.label} to {path}")
    return EXIT_OK


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tensorvi", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="run one algorithm on one instance")
    s.add_argument("config")
    s.add_argument("-o", "--output-dir")
    v = sub.add_parser("verify", help="check oracle derivatives and declared constants")
    v.add_argument("config")
    w = sub.add_parser("sweep", help="run a Cartesian parameter grid")
    w.add_argument("config")
    w.add_argument("-o", "--output-dir")
    w.add_argument("-j", "--jobs", type=int, default=1)
    g = sub.add_parser("gen", help="write a generated instance to a JSON file")
    g.add_argument("config")
    g.add_argument("path")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        need_alg = args.command in ("solve", "sweep")
        cfg = load_config(args.config)
        validate_config(cfg, need_algorithm=need_alg)
        if args.command == "solve":
            return cmd_solve(cfg, args.output_dir)
        if args.command == "verify":
            return cmd_verify(cfg)
        if args.command == "sweep":
            if args.jobs < 1:
                raise ConfigError("--jobs must be >= 1")
            return cmd_sweep(cfg, args.output_dir, args.jobs)
        return cmd_gen(cfg, args.path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
