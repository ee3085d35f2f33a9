"""Command-line orchestration: seeded Monte Carlo runs and plot-ready tables.

Subcommands
-----------
simulate        solve each sample seed, persist artifacts, aggregate a summary
penalize-sweep  distance of penalized solves to the projected oracle per n
compare         ordered-data comparison experiment across shared-noise seeds
capacity        capacity of configured space-time boxes vs. Lebesgue measure
verify          replay stored artifacts through the identity/estimate checks

Failures exit nonzero and leave a machine-readable error.json naming the
failing stage (config-error, assumption-failure, solve-failure,
artifact-mismatch, verify-failure).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .capacity import box_set, capacity as compute_capacity
from .config import RunConfig, load_config
from .errors import AssumptionError, ConfigurationError, SolverError
from .norms import FieldPath, NormToolbox, dual_sharp_upper, mixed_norm, sharp_norm
from .persist import load_run, save_run, write_norm_table, write_rows
from .solver import (SolveResult, skorokhod_defect, solve_penalized,
                     solve_projected, solve_unconstrained)
from .stochastics import validate_assumptions
from .verify import (apriori_check, comparison_experiment, ito_square_residual,
                     positive_part_bound_check, positive_part_residual,
                     weak_form_residual)

_EXIT_CODES = {
    "config-error": 2,
    "assumption-failure": 3,
    "solve-failure": 4,
    "verify-failure": 5,
    "artifact-mismatch": 6,
    "artifact-missing": 7,
}


class StageError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


def _fail(out_dir: Path | None, stage: str, message: str) -> int:
    payload = {"stage": stage, "error": message}
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "error.json", "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
    print(json.dumps(payload), file=sys.stderr)
    return _EXIT_CODES.get(stage, 1)


def _load(args) -> tuple[RunConfig, Path]:
    cfg = load_config(args.config)
    out = Path(args.out) if args.out else Path(cfg.block("output").get("directory", "out"))
    return cfg, out


def _gate_assumptions(cfg: RunConfig, data) -> None:
    report = validate_assumptions(data.coeffs, data.op.lam, grid=data.op.grid,
                                  horizon=float(data.times[-1]))
    if not report.ok:
        raise StageError("assumption-failure", report.summary())


def _solve(cfg: RunConfig, data):
    mode = cfg.solver_mode
    if mode == "projected":
        return solve_projected(data, **cfg.solver_kwargs())
    if mode == "penalized":
        return solve_penalized(data, cfg.penalty_n, **cfg.solver_kwargs())
    if mode == "unconstrained":
        return solve_unconstrained(data)
    raise StageError("config-error", f"unknown solver.mode '{mode}'")


def _run_one_sample(raw_cfg: dict, seed: int, out_dir: str, formats) -> dict:
    """Worker entry: solve one seed and persist its artifacts."""
    cfg = RunConfig(raw=raw_cfg)
    grid = cfg.make_grid()
    op = cfg.make_operator(grid)
    data = cfg.build_problem(seed, grid=grid, op=op)
    result = _solve(cfg, data)
    defect = skorokhod_defect(result.u, data.obstacle, result.measure)
    T = float(data.times[-1])
    meta = save_run(out_dir, result, config_hash=cfg.hash, seed=seed, grid=grid,
                    solver_mode=cfg.solver_mode,
                    penalty_n=cfg.penalty_n if cfg.solver_mode == "penalized" else None,
                    formats=formats, noise=data.noise)
    if "csv" in formats:
        toolbox = NormToolbox.for_dim(grid.dim)
        entries = [("mixed", 2, "inf", T, mixed_norm(result.u, 2, math.inf, T)),
                   ("mixed", 2, 2, T, mixed_norm(result.u, 2, 2, T)),
                   ("mixed", 2, 1, T, mixed_norm(result.u, 2, 1, T)),
                   ("sharp", "", "", T, sharp_norm(result.u, T, toolbox)),
                   ("dual_sharp_upper", "", "", T,
                    dual_sharp_upper(result.u, T, toolbox))]
        write_norm_table(Path(out_dir) / "norms.csv", f"seed_{seed}", entries,
                         config_hash=cfg.hash)
    return {
        "seed": seed,
        "directory": str(out_dir),
        "measure_mass": meta["measure_mass"],
        "skorokhod_defect": defect,
        "sup_norm_2": mixed_norm(result.u, 2, math.inf, T),
        "terminal_sq_norm": float(grid.quad_weights @ result.u.frames[-1] ** 2),
        "iterations_max": meta["iterations_max"],
    }


def _aggregate(rows: list[dict]) -> dict:
    keys = ["measure_mass", "skorokhod_defect", "sup_norm_2", "terminal_sq_norm"]
    out = {}
    for key in keys:
        vals = np.array([r[key] for r in rows], dtype=float)
        out[f"mean_{key}"] = float(vals.mean())
        out[f"stderr_{key}"] = float(vals.std() / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return out


def cmd_simulate(args) -> int:
    cfg, out = _load(args)
    seeds = cfg.sample_seeds(args.seed, args.samples)
    formats = tuple(cfg.block("output").get("formats", ["csv", "json"]))
    out.mkdir(parents=True, exist_ok=True)

    # run the assumption gate once up front: no solve artifacts on refusal
    probe = cfg.build_problem(seeds[0])
    _gate_assumptions(cfg, probe)

    rows = []
    jobs = [(cfg.raw, seed, str(out / f"sample_{i:03d}_seed_{seed}"), formats)
            for i, seed in enumerate(seeds)]
    workers = int(args.workers or cfg.block("output").get("workers", 1))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_one_sample, *zip(*jobs)))
    else:
        rows = [_run_one_sample(*job) for job in jobs]

    summary = {"command": "simulate", "config_hash": cfg.hash,
               "solver_mode": cfg.solver_mode, "samples": len(rows),
               "seeds": seeds, "per_sample": rows, "aggregates": _aggregate(rows)}
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    print(f"simulate: {len(rows)} sample(s) -> {out}")
    return 0


def cmd_penalize_sweep(args) -> int:
    cfg, out = _load(args)
    out.mkdir(parents=True, exist_ok=True)
    levels = ([int(v) for v in args.n_values.split(",")] if args.n_values
              else [int(v) for v in cfg.block("solver").get("sweep_n", [10, 100, 1000, 10000])])
    seeds = cfg.sample_seeds(args.seed, args.samples)
    grid = cfg.make_grid()
    op = cfg.make_operator(grid)
    T = float(cfg.make_times()[-1])

    rows = []
    for seed in seeds:
        data = cfg.build_problem(seed, grid=grid, op=op)
        _gate_assumptions(cfg, data)
        star = solve_projected(data)
        for n in levels:
            pen = solve_penalized(data, n)
            dist = mixed_norm(FieldPath(grid, data.times, pen.u.frames - star.u.frames),
                              2, math.inf, T)
            rows.append((seed, n, f"{dist:.17g}",
                         f"{skorokhod_defect(pen.u, data.obstacle, pen.measure):.17g}",
                         f"{pen.measure.total_mass():.17g}"))
    write_rows(out / "penalize_sweep.csv",
               ["seed", "n", "distance_to_projected", "skorokhod_defect", "measure_mass"],
               rows, config_hash=cfg.hash)
    print(f"penalize-sweep: {len(levels)} level(s) x {len(seeds)} seed(s) -> "
          f"{out / 'penalize_sweep.csv'}")
    return 0


def cmd_compare(args) -> int:
    cfg, out = _load(args)
    cfg2 = load_config(args.config2)
    out.mkdir(parents=True, exist_ok=True)
    seeds = cfg.sample_seeds(args.seed, args.samples)
    data1 = cfg.build_problem(seeds[0])
    data2 = cfg2.build_problem(seeds[0])
    _gate_assumptions(cfg, data1)
    _gate_assumptions(cfg2, data2)
    report = comparison_experiment(data1, data2, seeds, solver=cfg.solver_mode,
                                   penalty_n=cfg.penalty_n)
    write_rows(out / "compare.csv", ["sample", "seed", "min_gap"],
               [(i, s, f"{gap:.17g}") for i, (s, gap) in
                enumerate(zip(report.seeds, report.per_sample))],
               config_hash=cfg.hash)
    with open(out / "compare_summary.json", "w", encoding="utf-8") as fh:
        json.dump({"command": "compare", "config_hash": cfg.hash,
                   "config2_hash": cfg2.hash, **report.as_dict()}, fh, indent=2)
    print(f"compare: min_gap = {report.min_gap:.3e} over {len(seeds)} seed(s) -> {out}")
    return 0


def cmd_capacity(args) -> int:
    cfg, out = _load(args)
    out.mkdir(parents=True, exist_ok=True)
    block = cfg.block("capacity")
    if "frame" not in block:
        raise StageError("config-error", "capacity runs need capacity.frame")
    grid = cfg.make_grid()
    op = cfg.make_operator(grid)
    times = cfg.make_times()
    frame = int(block["frame"])

    rows = []
    if "widths" in block:
        center = float(block.get("center", 0.5))
        for width in block["widths"]:
            iv = (center - width / 2.0, center + width / 2.0)
            K = box_set(grid, times, frame, iv)
            rows.append((frame, f"{times[frame]:.12g}", f"{iv[0]:.12g}", f"{iv[1]:.12g}",
                         f"{compute_capacity(op, K):.17g}", f"{K.lebesgue_measure():.17g}"))
    else:
        iv = block.get("interval", [0.25, 0.75])
        K = box_set(grid, times, frame, iv)
        rows.append((frame, f"{times[frame]:.12g}", f"{iv[0]:.12g}", f"{iv[1]:.12g}",
                     f"{compute_capacity(op, K):.17g}", f"{K.lebesgue_measure():.17g}"))
    write_rows(out / "capacity.csv",
               ["frame", "time", "lo", "hi", "capacity", "lebesgue_measure"], rows,
               config_hash=cfg.hash)
    print(f"capacity: {len(rows)} row(s) -> {out / 'capacity.csv'}")
    return 0


_CHECKS = ("weak_form", "ito_square", "positive_part", "skorokhod",
           "apriori", "positive_part_bound")


def _default_test_function(grid):
    lo = [e[0] for e in grid.extent]
    hi = [e[1] for e in grid.extent]
    pad = [3.0 * s for s in grid.spacing]

    def phi(t, coords):
        v = np.ones(coords.shape[0])
        for a in range(grid.dim):
            s = np.clip((coords[:, a] - (lo[a] + pad[a])) / (hi[a] - lo[a] - 2 * pad[a]),
                        0.0, 1.0)
            v = v * np.sin(np.pi * s) ** 2
        return v * (1.0 + 0.5 * np.cos(3.0 * t))

    return phi


def cmd_verify(args) -> int:
    cfg, out = _load(args)
    art = Path(args.artifacts)
    grid = cfg.make_grid()
    try:
        u, measure, meta = load_run(art, grid, expected_hash=cfg.hash)
    except FileNotFoundError as exc:
        raise StageError("artifact-missing",
                         f"no stored artifacts at {art}: {exc}")
    except ConfigurationError as exc:
        raise StageError("artifact-mismatch", str(exc))
    data = cfg.build_problem(int(meta["seed"]), grid=grid)
    result = SolveResult(u=u, measure=measure, diagnostics={})

    checks = cfg.block("verify").get("checks", ["ito_square", "skorokhod"])
    unknown = [c for c in checks if c not in _CHECKS]
    if unknown:
        raise StageError("config-error", f"unknown verify checks {unknown}; "
                                         f"available: {list(_CHECKS)}")
    reports = {}
    for check in checks:
        if check == "weak_form":
            rep = weak_form_residual(result, data, _default_test_function(grid))
            reports[check] = rep.as_dict()
        elif check == "ito_square":
            reports[check] = ito_square_residual(result, data).as_dict()
        elif check == "positive_part":
            reports[check] = positive_part_residual(result, data).as_dict()
        elif check == "skorokhod":
            reports[check] = {"name": "skorokhod",
                              "defect": skorokhod_defect(u, data.obstacle, measure)}
        elif check == "apriori":
            reports[check] = apriori_check(result, data).as_dict()
        elif check == "positive_part_bound":
            reports[check] = positive_part_bound_check(result, data).as_dict()

    with open(art / "verify_report.json", "w", encoding="utf-8") as fh:
        json.dump({"config_hash": cfg.hash, "seed": meta["seed"],
                   "checks": reports}, fh, indent=2)

    name_w = max(len(k) for k in reports)
    print(f"{'check':<{name_w}}  result")
    for key, rep in reports.items():
        detail = ", ".join(f"{k}={v:.3e}" for k, v in rep.items()
                           if isinstance(v, float))
        print(f"{key:<{name_w}}  {detail}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ospde",
        description="Obstacle problems for stochastic PDEs: solvers, reflection "
                    "measures, identity checks and parabolic capacity.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, samples=True):
        p.add_argument("--config", required=True, help="flat dotted-key config file")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="base seed override")
        if samples:
            p.add_argument("--samples", type=int, default=None, help="sample count override")
        p.add_argument("--workers", type=int, default=None, help="parallel sample workers")

    p = sub.add_parser("simulate", help="solve and persist per-seed artifacts")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("penalize-sweep", help="penalization convergence table")
    common(p)
    p.add_argument("--n-values", default=None, help="comma list of penalty levels")
    p.set_defaults(func=cmd_penalize_sweep)

    p = sub.add_parser("compare", help="ordered-data comparison experiment")
    common(p)
    p.add_argument("--config2", required=True, help="config of the dominating problem")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("capacity", help="capacity of configured space-time boxes")
    common(p, samples=False)
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("verify", help="replay stored artifacts through the checks")
    common(p, samples=False)
    p.add_argument("--artifacts", required=True, help="per-sample artifact directory")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out_dir = None
    try:
        try:
            cfg = load_config(args.config)
            out_dir = Path(args.out) if args.out else Path(
                cfg.block("output").get("directory", "out"))
        except (ConfigurationError, OSError) as exc:
            return _fail(None, "config-error", str(exc))
        return args.func(args)
    except StageError as exc:
        return _fail(out_dir, exc.stage, str(exc))
    except AssumptionError as exc:
        return _fail(out_dir, "assumption-failure", str(exc))
    except ConfigurationError as exc:
        return _fail(out_dir, "config-error", str(exc))
    except SolverError as exc:
        return _fail(out_dir, "solve-failure", str(exc))
    except Exception as exc:  # pragma: no cover - last-resort reporting
        traceback.print_exc()
        return _fail(out_dir, "verify-failure", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
