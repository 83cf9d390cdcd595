"""Command-line front door: run, sweep, report, serve.

Exit codes: 0 success, 1 internal numerical error, 2 validation error,
3 oracle failure. The EABO_LOG environment variable sets log verbosity
(DEBUG/INFO/WARNING/ERROR).
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import RunConfig
from .driver import run, summarize_allocation, trajectory_summary, write_trajectory
from .errors import ConfigError, EaboError, EmptyResults, OracleFailure

logger = logging.getLogger("eabo")

SWEEP_CAP_DEFAULT = 2000

REPORT_COLUMNS = ["budget", "mean", "lo", "hi"]

AGGREGATE_COLUMNS = [
    "benchmark",
    "policy",
    "cost_ratio",
    "sigma_comp",
    "count",
    "mean_norm_utility",
    "std_norm_utility",
    "mean_comp_fraction",
    "mean_comp_fraction_early",
    "mean_comp_fraction_late",
    "failures",
]


def _setup_logging():
    level = os.environ.get("EABO_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def _load_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{what} file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} is not valid JSON: {exc}")


def _apply_cli_overrides(doc, args):
    if getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    if getattr(args, "policy", None) is not None:
        doc["policy"] = args.policy
    return doc


def _num_tag(value):
    text = f"{float(value):g}"
    return text.replace(".", "p").replace("-", "m")


def _run_name(cfg):
    problem = cfg.benchmark if cfg.benchmark is not None else f"live{cfg.d}d"
    ratio = cfg.c_eval / cfg.c_comp
    return (
        f"{problem}_{cfg.policy}_r{_num_tag(ratio)}"
        f"_n{_num_tag(cfg.sigma_comp)}_s{cfg.seed}"
    )


def _refuse_overwrite(path, force):
    if os.path.exists(path) and not force:
        raise ConfigError(f"refusing to overwrite {path}; pass --force")


def cmd_run(args):
    doc = _apply_cli_overrides(_load_json(args.config, "run config"), args)
    cfg = RunConfig.from_dict(doc)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, _run_name(cfg) + ".csv")
    _refuse_overwrite(csv_path, args.force)
    logger.info("running %s", csv_path)
    trajectory = run(cfg)
    write_trajectory(trajectory, csv_path)
    print(csv_path)
    if not trajectory.complete:
        print("warning: partial trajectory (oracle failure)", file=sys.stderr)
        return 3
    return 0


def _sweep_grid(doc):
    base = doc.get("base")
    if not isinstance(base, dict):
        raise ConfigError("sweep needs a 'base' run config object", field="base")
    RunConfig.from_dict(base)

    def listed(key):
        values = doc.get(key)
        if values is None:
            return [None]
        if not isinstance(values, list) or not values:
            raise ConfigError(f"{key} must be a nonempty list", field=key)
        return values

    seeds = listed("seeds")
    policies = listed("policies")
    ratios = listed("cost_ratios")
    noises = listed("noise_levels")
    cap = doc.get("cap", SWEEP_CAP_DEFAULT)
    total = len(seeds) * len(policies) * len(ratios) * len(noises)
    if total > cap:
        raise ConfigError(f"sweep size {total} exceeds cap {cap}", field="cap")

    configs = []
    for seed, policy, ratio, noise in itertools.product(seeds, policies, ratios, noises):
        cell = json.loads(json.dumps(base))
        if seed is not None:
            cell["seed"] = seed
        if policy is not None:
            cell["policy"] = policy
        if ratio is not None:
            # ratio = c_eval : c_comp with c_comp held at the base value
            cell.setdefault("costs", {})
            cell["costs"]["c_eval"] = float(ratio) * float(cell["costs"]["c_comp"])
        if noise is not None:
            cell.setdefault("noise", {})
            cell["noise"]["sigma_comp"] = float(noise)
        configs.append(RunConfig.from_dict(cell))
    return configs


def _sweep_worker(doc, csv_path):
    cfg = RunConfig.from_dict(doc)
    trajectory = run(cfg)
    write_trajectory(trajectory, csv_path)
    alloc = summarize_allocation(trajectory) if trajectory.steps else None
    result = {
        "norm_utility": trajectory.final_norm_utility,
        "comp_fraction": alloc.comp_fraction if alloc else 0.0,
        "comp_fraction_early": alloc.comp_fraction_early if alloc else 0.0,
        "comp_fraction_late": alloc.comp_fraction_late if alloc else 0.0,
    }
    if not trajectory.complete:
        result["error"] = "OracleFailure: partial trajectory"
    return result


def _aggregate_rows(cells):
    rows = []
    for key in sorted(cells):
        entries = cells[key]
        utilities = [e["norm_utility"] for e in entries if "error" not in e]
        failures = sum(1 for e in entries if "error" in e)
        mean = float(np.mean(utilities)) if utilities else math.nan
        std = float(np.std(utilities, ddof=1)) if len(utilities) > 1 else 0.0
        rows.append(
            {
                "benchmark": key[0],
                "policy": key[1],
                "cost_ratio": key[2],
                "sigma_comp": key[3],
                "count": len(utilities),
                "mean_norm_utility": mean,
                "std_norm_utility": std if utilities else math.nan,
                "mean_comp_fraction": (
                    float(np.mean([e["comp_fraction"] for e in entries if "error" not in e]))
                    if utilities
                    else math.nan
                ),
                "mean_comp_fraction_early": (
                    float(
                        np.mean(
                            [e["comp_fraction_early"] for e in entries if "error" not in e]
                        )
                    )
                    if utilities
                    else math.nan
                ),
                "mean_comp_fraction_late": (
                    float(
                        np.mean(
                            [e["comp_fraction_late"] for e in entries if "error" not in e]
                        )
                    )
                    if utilities
                    else math.nan
                ),
                "failures": failures,
            }
        )
    return rows


def cmd_sweep(args):
    doc = _load_json(args.config, "sweep spec")
    configs = _sweep_grid(doc)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    aggregate_path = os.path.join(out_dir, "aggregate.csv")
    _refuse_overwrite(aggregate_path, args.force)

    jobs = []
    for cfg in configs:
        csv_path = os.path.join(out_dir, _run_name(cfg) + ".csv")
        _refuse_overwrite(csv_path, args.force)
        jobs.append((cfg, csv_path))

    cells = {}
    failures = []

    def record(cfg, result):
        key = (
            cfg.benchmark or f"live{cfg.d}d",
            cfg.policy,
            cfg.c_eval / cfg.c_comp,
            cfg.sigma_comp,
        )
        cells.setdefault(key, []).append(result)
        if "error" in result:
            failures.append({"run": _run_name(cfg), "error": result["error"]})

    if args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            futures = [
                (cfg, pool.submit(_sweep_worker, cfg.to_dict(), path))
                for cfg, path in jobs
            ]
            for cfg, future in futures:
                try:
                    record(cfg, future.result())
                except Exception as exc:
                    record(cfg, {"error": f"{type(exc).__name__}: {exc}"})
    else:
        for cfg, path in jobs:
            try:
                record(cfg, _sweep_worker(cfg.to_dict(), path))
            except Exception as exc:
                record(cfg, {"error": f"{type(exc).__name__}: {exc}"})
            logger.info("finished %s", path)

    with open(aggregate_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=AGGREGATE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(_aggregate_rows(cells))
    if failures:
        with open(os.path.join(out_dir, "failures.json"), "w") as fh:
            json.dump(failures, fh, indent=2)
        print(f"{len(failures)} run(s) failed; see failures.json", file=sys.stderr)
    print(aggregate_path)
    return 0


def _load_runs(results_dir):
    """(policy, spend-grid curve points) per trajectory CSV with a sidecar."""
    runs = []
    try:
        names = sorted(os.listdir(results_dir))
    except FileNotFoundError:
        raise EmptyResults(f"no such results directory: {results_dir}")
    for name in names:
        if not name.endswith(".csv") or name in ("aggregate.csv",):
            continue
        csv_path = os.path.join(results_dir, name)
        sidecar_path = csv_path[:-4] + ".json"
        if not os.path.exists(sidecar_path):
            continue
        with open(sidecar_path) as fh:
            sidecar = json.load(fh)
        with open(csv_path) as fh:
            rows = list(csv.DictReader(fh))
        points = []
        spend_before = 0.0
        for row in rows:
            points.append((spend_before, float(row["norm_utility"])))
            spend_before = float(row["cum_spend"])
        final = sidecar.get("final_norm_utility")
        if final is not None:
            points.append((spend_before, float(final)))
        if not points:
            continue
        budget = sidecar["config"]["costs"]["budget"]
        runs.append({"policy": sidecar["config"]["policy"], "points": points, "budget": budget})
    return runs


def _best_so_far_on_grid(points, grid):
    """Step-hold the (spend, value) points onto the grid, then run a cummax."""
    values = np.full(len(grid), -np.inf)
    idx = -1
    current = -np.inf
    for i, b in enumerate(grid):
        while idx + 1 < len(points) and points[idx + 1][0] <= b:
            idx += 1
            current = points[idx][1]
        values[i] = current
    return np.maximum.accumulate(values)


def cmd_report(args):
    runs = _load_runs(args.results)
    if not runs:
        raise EmptyResults(f"no trajectory CSVs with sidecars in {args.results}")
    out_dir = args.out if args.out is not None else args.results
    os.makedirs(out_dir, exist_ok=True)
    by_policy = {}
    for entry in runs:
        by_policy.setdefault(entry["policy"], []).append(entry)
    written = []
    for policy in sorted(by_policy):
        entries = by_policy[policy]
        horizon = int(math.ceil(max(e["budget"] for e in entries)))
        grid = np.arange(0, horizon + 1, dtype=float)
        curves = np.stack(
            [_best_so_far_on_grid(e["points"], grid) for e in entries]
        )
        mean = curves.mean(axis=0)
        if curves.shape[0] > 1:
            se = curves.std(axis=0, ddof=1) / math.sqrt(curves.shape[0])
        else:
            se = np.zeros_like(mean)
        lo, hi = mean - 1.96 * se, mean + 1.96 * se
        path = os.path.join(out_dir, f"report_{policy}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(REPORT_COLUMNS)
            for row in zip(grid, mean, lo, hi):
                writer.writerow([repr(float(v)) for v in row])
        written.append(path)
        print(path)
    return 0


def cmd_serve(args):
    import uvicorn

    from .service import create_app

    app = create_app(args.out)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="eabo",
        description="Budgeted optimization mixing direct evaluations and expert comparisons.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one configured run")
    p_run.add_argument("--config", required=True, help="path to a run config JSON")
    p_run.add_argument("--seed", type=int, default=None, help="override the master seed")
    p_run.add_argument("--policy", default=None, help="override the policy")
    p_run.add_argument("--out", default="results", help="output directory")
    p_run.add_argument("--force", action="store_true", help="overwrite existing files")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a seed/policy/ratio/noise grid")
    p_sweep.add_argument("--config", required=True, help="path to a sweep spec JSON")
    p_sweep.add_argument("--out", default="results", help="output directory")
    p_sweep.add_argument("--force", action="store_true", help="overwrite existing files")
    p_sweep.add_argument("--parallel", type=int, default=1, help="worker pool size")
    p_sweep.set_defaults(func=cmd_sweep)

    p_report = sub.add_parser("report", help="emit plot-ready mean trajectories")
    p_report.add_argument("--results", required=True, help="directory of trajectory CSVs")
    p_report.add_argument("--out", default=None, help="output directory (default: results dir)")
    p_report.set_defaults(func=cmd_report)

    p_serve = sub.add_parser("serve", help="start the live elicitation service")
    p_serve.add_argument("--port", type=int, default=8321)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--out", default="sessions", help="session data directory")
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        field = f"{exc.field}: " if exc.field else ""
        print(f"error: {field}{exc}", file=sys.stderr)
        return 2
    except EmptyResults as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OracleFailure as exc:
        print(f"oracle failure: {exc}", file=sys.stderr)
        return 3
    except EaboError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
