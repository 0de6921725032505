"""CSV and run-directory I/O.

Floats are written with ``repr``, the shortest decimal string that reads back
to the same double, so a written head field reloads bit for bit.

A run directory holds::

    config.ini            fully resolved scenario
    summary.json          totals: residual calls, iterations, wall time, ...
    heads_final.csv       node_id, x, y, layer, head
    heads_step_NNNNN.csv  snapshots (step 0, year ends, last step)
    convergence.csv       one row per Newton iteration
    steps.csv             one row per time step
"""
from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import parse_config_text
from .driver import RunArtifacts

HEAD_COLUMNS = ("node_id", "x", "y", "layer", "head")
LOG_COLUMNS = ("step", "k", "norm_F", "norm_step", "eta", "lambda", "inner_iterations",
               "cumulative_residual_calls")
STEP_COLUMNS = ("step", "time", "newton_iterations", "krylov_iterations", "residual_calls",
                "converged", "wall_time")
_SNAPSHOT = re.compile(r"heads_step_(\d+)\.csv$")


class RunIOError(OSError):
    pass


def _f(v) -> str:
    return repr(float(v))


def _open_for_write(path):
    path = Path(path)
    try:
        return path.open("w", newline="", encoding="utf-8")
    except OSError as exc:
        raise RunIOError(f"cannot write {path}: {exc.strerror or exc}") from None


def write_heads(path, node_ids, x, y, layer, heads) -> None:
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEAD_COLUMNS)
        for row in zip(node_ids, x, y, layer, heads):
            w.writerow((int(row[0]), _f(row[1]), _f(row[2]), int(row[3]), _f(row[4])))


def write_head_csv(art: RunArtifacts, path, step: int | None = None) -> None:
    """Head field at ``step`` (default: final state), layer-major, node ascending."""
    heads = art.final_heads if step is None else art.snapshots[step]
    write_heads(path, art.node_ids, art.x, art.y, art.layer, heads)


def read_head_csv(path):
    """Returns ``(node_ids, x, y, layer, heads)`` arrays."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise RunIOError(f"cannot read {path}: {exc.strerror or exc}") from None
    if not rows or tuple(rows[0]) != HEAD_COLUMNS:
        raise RunIOError(f"{path}: expected header {','.join(HEAD_COLUMNS)}")
    body = rows[1:]
    ids = np.array([int(r[0]) for r in body], dtype=np.int64)
    x = np.array([float(r[1]) for r in body])
    y = np.array([float(r[2]) for r in body])
    layer = np.array([int(r[3]) for r in body], dtype=np.int64)
    heads = np.array([float(r[4]) for r in body])
    return ids, x, y, layer, heads


def write_convergence_log(art: RunArtifacts, path) -> None:
    """One row per (step, Newton iteration); the last column is the running call total."""
    total = 0
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for m, rep in enumerate(art.reports, start=1):
            for k, rec in enumerate(rep.per_iteration):
                total += rec.residual_calls
                w.writerow((m, k, _f(rec.norm_F), _f(rec.norm_step), _f(rec.eta), _f(rec.lam),
                            rec.inner_iterations, total))


def write_step_table(art: RunArtifacts, path) -> None:
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STEP_COLUMNS)
        for m, (rep, wt) in enumerate(zip(art.reports, art.step_wall_times), start=1):
            w.writerow((m, _f(m * art.config.dt), rep.newton_iterations, rep.krylov_iterations,
                        rep.residual_calls, int(rep.converged), _f(wt)))


def run_summary(art: RunArtifacts) -> dict:
    its = art.newton_iterations
    return {
        "kind": art.config.kind,
        "model": art.config.model,
        "method": art.config.solver.method,
        "n_steps": art.config.n_steps,
        "steps_completed": art.steps_completed,
        "residual_calls": art.residual_calls,
        "newton_iterations": int(its.sum()),
        "median_newton_iterations": float(np.median(its)) if len(its) else 0.0,
        "max_newton_iterations": int(its.max()) if len(its) else 0,
        "krylov_iterations": int(sum(r.krylov_iterations for r in art.reports)),
        "nonconverged_steps": art.nonconverged_steps,
        "snapshot_steps": sorted(art.snapshots),
        "wall_time": art.wall_time,
    }


def prepare_output_dir(path) -> Path:
    """Create ``path`` if needed and check it is writable, before any stepping."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise RunIOError(f"output directory {out} is not writable: {exc.strerror or exc}") from None
    return out


def write_run(art: RunArtifacts, path) -> Path:
    out = prepare_output_dir(path)
    try:
        (out / "config.ini").write_text(art.config.to_ini(), encoding="utf-8")
        (out / "summary.json").write_text(json.dumps(run_summary(art), indent=2) + "\n",
                                          encoding="utf-8")
    except OSError as exc:
        raise RunIOError(f"cannot write to {out}: {exc.strerror or exc}") from None
    write_head_csv(art, out / "heads_final.csv")
    for step in sorted(art.snapshots):
        write_head_csv(art, out / f"heads_step_{step:05d}.csv", step)
    write_convergence_log(art, out / "convergence.csv")
    write_step_table(art, out / "steps.csv")
    return out


@dataclass
class StoredRun:
    """A run read back from disk; offers the fields :func:`compare_runs` needs."""

    path: Path
    config: object
    node_ids: np.ndarray
    x: np.ndarray
    y: np.ndarray
    layer: np.ndarray
    final_heads: np.ndarray
    residual_calls: int
    summary: dict
    snapshots: dict = field(default_factory=dict)


def load_run(path) -> StoredRun:
    root = Path(path)
    if not root.is_dir():
        raise RunIOError(f"{root} is not a run directory")
    try:
        cfg = parse_config_text((root / "config.ini").read_text(encoding="utf-8"),
                                str(root / "config.ini"))
        summary = json.loads((root / "summary.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise RunIOError(f"{root}: incomplete run directory ({exc})") from None
    ids, x, y, layer, final = read_head_csv(root / "heads_final.csv")
    snaps = {}
    for f in sorted(root.glob("heads_step_*.csv")):
        snaps[int(_SNAPSHOT.search(f.name).group(1))] = read_head_csv(f)[4]
    return StoredRun(root, cfg, ids, x, y, layer, final, int(summary["residual_calls"]),
                     summary, snaps)
