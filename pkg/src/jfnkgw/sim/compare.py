"""Node-by-node comparison of two runs of the same scenario.

Run ``a`` is the baseline (normally NK).  The relative error at a node is
``|h_a - h_b| / |h_a|``; nodes where ``|h_a| < 1e-8`` get no relative error
(NaN) and are flagged.  The call ratio is ``b.residual_calls / a.residual_calls``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

NEAR_ZERO = 1e-8


class CompareError(ValueError):
    pass


@dataclass(frozen=True)
class FieldErrors:
    abs_error: np.ndarray
    rel_error: np.ndarray     # NaN where the baseline head is near zero
    near_zero: np.ndarray

    @property
    def max_abs(self) -> float:
        return float(self.abs_error.max()) if self.abs_error.size else 0.0

    @property
    def mean_abs(self) -> float:
        return float(self.abs_error.mean()) if self.abs_error.size else 0.0

    @property
    def max_rel(self) -> float:
        ok = ~self.near_zero
        return float(self.rel_error[ok].max()) if ok.any() else 0.0

    @property
    def mean_rel(self) -> float:
        ok = ~self.near_zero
        return float(self.rel_error[ok].mean()) if ok.any() else 0.0


@dataclass
class CompareReport:
    node_ids: np.ndarray
    x: np.ndarray
    y: np.ndarray
    layer: np.ndarray
    head_a: np.ndarray
    head_b: np.ndarray
    final: FieldErrors
    call_ratio: float
    residual_calls_a: int
    residual_calls_b: int
    snapshots: dict = field(default_factory=dict)   # step -> FieldErrors

    def summary(self) -> dict:
        return {
            "max_abs_error": self.final.max_abs,
            "mean_abs_error": self.final.mean_abs,
            "max_rel_error": self.final.max_rel,
            "mean_rel_error": self.final.mean_rel,
            "near_zero_nodes": int(self.final.near_zero.sum()),
            "residual_calls_a": self.residual_calls_a,
            "residual_calls_b": self.residual_calls_b,
            "call_ratio": self.call_ratio,
            "snapshots": {str(k): {"max_abs_error": e.max_abs, "max_rel_error": e.max_rel}
                          for k, e in sorted(self.snapshots.items())},
        }


def field_errors(h_a, h_b) -> FieldErrors:
    h_a = np.asarray(h_a, dtype=np.float64)
    h_b = np.asarray(h_b, dtype=np.float64)
    diff = np.abs(h_a - h_b)
    near = np.abs(h_a) < NEAR_ZERO
    rel = np.full_like(diff, np.nan)
    rel[~near] = diff[~near] / np.abs(h_a[~near])
    return FieldErrors(diff, rel, near)


def _check_same_geometry(a, b):
    for name in ("node_ids", "layer"):
        if not np.array_equal(getattr(a, name), getattr(b, name)):
            raise CompareError(f"runs differ in {name}: not the same mesh")
    if not (np.allclose(a.x, b.x, rtol=0, atol=1e-9) and np.allclose(a.y, b.y, rtol=0, atol=1e-9)):
        raise CompareError("runs differ in node coordinates: not the same mesh")
    ca, cb = a.config, b.config
    if (ca.n_steps, ca.dt) != (cb.n_steps, cb.dt):
        raise CompareError(f"runs differ in time stepping: {ca.n_steps} x {ca.dt} "
                           f"vs {cb.n_steps} x {cb.dt}")


def compare_runs(a, b) -> CompareReport:
    """Final-time and per-snapshot errors of run ``b`` against baseline ``a``.

    ``a`` and ``b`` may be :class:`~jfnkgw.sim.driver.RunArtifacts` or runs
    loaded with :func:`~jfnkgw.sim.io.load_run`.
    """
    _check_same_geometry(a, b)
    if a.final_heads is None or b.final_heads is None:
        raise CompareError("both runs need a final head field")
    if a.residual_calls > 0:
        ratio = b.residual_calls / a.residual_calls
    else:
        ratio = 1.0 if b.residual_calls == 0 else float("inf")
    snaps = {s: field_errors(a.snapshots[s], b.snapshots[s])
             for s in sorted(set(a.snapshots) & set(b.snapshots))}
    return CompareReport(a.node_ids, a.x, a.y, a.layer, np.asarray(a.final_heads),
                         np.asarray(b.final_heads), field_errors(a.final_heads, b.final_heads),
                         ratio, int(a.residual_calls), int(b.residual_calls), snaps)


def write_compare_csv(rep: CompareReport, path) -> None:
    """Per-node final-time errors; ``rel_error`` is empty for flagged nodes."""
    e = rep.final
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("node_id", "x", "y", "layer", "head_a", "head_b", "abs_error", "rel_error",
                    "near_zero"))
        for i in range(len(rep.node_ids)):
            rel = "" if e.near_zero[i] else repr(float(e.rel_error[i]))
            w.writerow((int(rep.node_ids[i]), repr(float(rep.x[i])), repr(float(rep.y[i])),
                        int(rep.layer[i]), repr(float(rep.head_a[i])), repr(float(rep.head_b[i])),
                        repr(float(e.abs_error[i])), rel, int(e.near_zero[i])))


def write_snapshot_csv(rep: CompareReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("step", "max_abs_error", "mean_abs_error", "max_rel_error", "mean_rel_error"))
        for step, e in sorted(rep.snapshots.items()):
            w.writerow((step, repr(e.max_abs), repr(e.mean_abs), repr(e.max_rel), repr(e.mean_rel)))


def write_compare_summary(rep: CompareReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rep.summary(), fh, indent=2)
        fh.write("\n")
