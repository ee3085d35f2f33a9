"""Artifact persistence: per-sample CSV/JSON files with stable schemas.

Every artifact file embeds the config hash -- JSON files as a field, CSV
files as a leading ``# config_hash=...`` comment line -- and replaying
verification against a mismatched hash is refused.

u.csv columns: step, time, node, x[, y], value -- one row per node per
frame.  measure.csv columns: step, time, node, weight -- weights are
densities per space-time cell; the row's time is t_{k+1}, the frame whose
constraint produced the weight at step k.  Interior nodes only (weights
vanish identically on the boundary).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .grid import Grid
from .norms import FieldPath
from .solver import DiscreteMeasure, SolveResult
from .stochastics import save_noise

__all__ = ["save_run", "load_run", "write_norm_table", "write_rows"]


def write_rows(path, header, rows, config_hash: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if config_hash is not None:
            fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path, expected_hash: str | None = None):
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline()
        if first.startswith("#"):
            if expected_hash is not None and f"config_hash={expected_hash}" not in first:
                raise ConfigurationError(
                    f"{Path(path).name} embeds a different config hash; refusing to load")
        else:
            fh.seek(0)
        yield from csv.DictReader(fh)


def save_run(directory, result: SolveResult, *, config_hash: str, seed: int,
             grid: Grid, solver_mode: str, penalty_n: int | None = None,
             formats=("csv", "json"), noise=None) -> dict:
    """Write metadata.json, u.csv and measure.csv; returns the metadata."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    times = result.u.times
    meta = {
        "config_hash": config_hash,
        "seed": int(seed),
        "solver_mode": solver_mode,
        "penalty_n": penalty_n,
        "grid": {"dim": grid.dim, "extent": [list(e) for e in grid.extent],
                 "counts": list(grid.counts)},
        "dt": result.u.dt,
        "steps": result.u.steps,
        "measure_mass": result.measure.total_mass(),
        "iterations_max": int(max(result.diagnostics.get("iterations", [0]) or [0])),
    }
    with open(directory / "metadata.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)

    if "csv" in formats:
        header = ["step", "time", "node", "x"] + (["y"] if grid.dim == 2 else []) + ["value"]
        rows = []
        for k in range(times.size):
            frame = result.u.frames[k]
            for node in range(grid.n_nodes):
                coords = [f"{c:.12g}" for c in grid.coords[node]]
                rows.append([k, f"{times[k]:.12g}", node, *coords, f"{frame[node]:.17g}"])
        write_rows(directory / "u.csv", header, rows, config_hash=config_hash)

        rows = []
        for k in range(result.measure.weights.shape[0]):
            row_w = result.measure.weights[k]
            for pos, node in enumerate(grid.interior):
                rows.append([k, f"{times[k + 1]:.12g}", int(node), f"{row_w[pos]:.17g}"])
        write_rows(directory / "measure.csv", ["step", "time", "node", "weight"],
                   rows, config_hash=config_hash)
    if noise is not None and "noise" in formats:
        save_noise(noise, directory / "noise.bin")
    return meta


def load_run(directory, grid: Grid, expected_hash: str | None = None):
    """Load a stored run back into (FieldPath, DiscreteMeasure, metadata)."""
    directory = Path(directory)
    with open(directory / "metadata.json", "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    if expected_hash is not None and meta.get("config_hash") != expected_hash:
        raise ConfigurationError(
            f"artifact config hash {meta.get('config_hash')!r} does not match "
            f"the supplied config ({expected_hash!r}); refusing to verify")
    steps = int(meta["steps"])
    dt = float(meta["dt"])
    times = np.arange(steps + 1) * dt

    frames = np.zeros((steps + 1, grid.n_nodes))
    for row in _read_csv(directory / "u.csv", expected_hash):
        frames[int(row["step"]), int(row["node"])] = float(row["value"])
    u = FieldPath(grid, times, frames)

    weights = np.zeros((steps, grid.n_interior))
    pos_of = {int(node): i for i, node in enumerate(grid.interior)}
    for row in _read_csv(directory / "measure.csv", expected_hash):
        weights[int(row["step"]), pos_of[int(row["node"])]] = float(row["weight"])
    measure = DiscreteMeasure(grid, times, weights)
    return u, measure, meta


def write_norm_table(path, run_id: str, entries, config_hash: str | None = None) -> None:
    """Norm table rows: (run_id, norm_name, p, q, t, value).

    Dual-norm entries are named ``dual_sharp_upper``: reported values bound
    the true infimum norm from above.
    """
    rows = [(run_id, name, p, q, f"{t:.12g}", f"{v:.17g}")
            for name, p, q, t, v in entries]
    write_rows(path, ["run_id", "norm_name", "p", "q", "t", "value"], rows,
               config_hash=config_hash)
