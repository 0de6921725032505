"""Time-stepping driver: builds the model from a config and marches it."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..aquifer import AquitardParams, LayerParams, SmoothingParams
from ..fdmodel import FdModel, StructuredGrid
from ..femodel import FeMesh, FeModel, PumpSpec
from ..krylov import GmresSettings
from ..nonlinear import (ExactJacobian, FiniteDifferenceJacobian,
                         NewtonSettings, ResidualFunction, newton_solve)
from .config import ScenarioConfig

log = logging.getLogger(__name__)

DAYS_PER_YEAR = 365.25


class SimulationError(RuntimeError):
    """Raised when a run cannot continue; ``step`` is the failing step."""

    def __init__(self, step: int, message: str, artifacts=None):
        super().__init__(f"step {step}: {message}")
        self.step = step
        self.artifacts = artifacts


class NonConvergenceError(SimulationError):
    pass


@dataclass
class RunArtifacts:
    config: ScenarioConfig
    node_ids: np.ndarray
    x: np.ndarray
    y: np.ndarray
    layer: np.ndarray
    snapshots: dict = field(default_factory=dict)      # step -> heads
    final_heads: np.ndarray | None = None
    reports: list = field(default_factory=list)        # ConvergenceReport per step, step 1 first
    wall_time: float = 0.0
    step_wall_times: list = field(default_factory=list)

    @property
    def steps_completed(self) -> int:
        return len(self.reports)

    @property
    def residual_calls(self) -> int:
        return sum(r.residual_calls for r in self.reports)

    @property
    def newton_iterations(self) -> np.ndarray:
        return np.array([r.newton_iterations for r in self.reports], dtype=np.int64)

    @property
    def nonconverged_steps(self) -> list[int]:
        return [m for m, r in enumerate(self.reports, start=1) if not r.converged]


def smoothing_of(cfg: ScenarioConfig) -> SmoothingParams:
    return SmoothingParams(cfg.eps_s, cfg.beta, cfg.storage_form)


def _layer_params(lc) -> LayerParams:
    return LayerParams(lc.K, lc.S_y, lc.S_o, lc.z, lc.Z)


def structured_grid(cfg: ScenarioConfig) -> StructuredGrid:
    """Grid with Dirichlet nodes for every ``head`` edge (left/right win at corners)."""
    nx, ny = cfg.nx, cfg.ny
    idx = np.arange(nx * ny).reshape(ny, nx)
    edge_nodes = {"bottom": idx[0], "top": idx[-1], "left": idx[:, 0], "right": idx[:, -1]}
    heads, flux = {}, {}
    for edge in ("bottom", "top", "left", "right"):
        kind, value = getattr(cfg.boundary, edge)
        if kind == "head":
            heads.update({int(i): value for i in edge_nodes[edge]})
        elif value != 0.0:
            flux[edge] = value
    nodes = np.array(sorted(heads), dtype=np.int64)
    return StructuredGrid(nx, ny, cfg.dx, cfg.dy, nodes, np.array([heads[i] for i in nodes]), flux)


def build_model(cfg: ScenarioConfig):
    """Model instance and initial heads for a scenario."""
    sm = smoothing_of(cfg)
    if cfg.model == "fd":
        grid = structured_grid(cfg)
        model = FdModel(grid, _layer_params(cfg.layers[0]), cfg.dt, sm)
        h0 = np.full(grid.n_nodes, cfg.layers[0].h0)
        return model, h0
    mesh = FeMesh.rectangular(cfg.nx, cfg.ny, cfg.dx, cfg.dy)
    pumps = tuple(PumpSpec(p.cell, p.rate, p.layer) for p in cfg.pumps)
    model = FeModel(mesh, tuple(_layer_params(lc) for lc in cfg.layers),
                    AquitardParams(*cfg.aquitard), cfg.dt, pumps, sm, per_area=cfg.per_area_rows)
    h0 = np.concatenate([np.full(mesh.n_nodes, lc.h0) for lc in cfg.layers])
    return model, h0


def newton_settings(cfg: ScenarioConfig) -> tuple[NewtonSettings, GmresSettings]:
    s = cfg.solver
    ns = NewtonSettings(tau_h=s.tau_h, max_newton=s.max_newton, gamma_ini=s.gamma_ini,
                        r_threshold=s.r_threshold, ls_alpha=s.ls_alpha, ls_rho=s.ls_rho,
                        max_ls=s.max_ls, use_line_search=s.uses_line_search, fd_b=s.fd_b,
                        step_norm=s.step_norm)
    return ns, GmresSettings(s.gmres_restart, s.gmres_tol, s.gmres_max_restarts)


def snapshot_steps(cfg: ScenarioConfig) -> list[int]:
    """Step 0, every ``snapshot_every`` steps (default: each year end) and the last step."""
    n = cfg.n_steps
    if cfg.snapshot_every > 0:
        steps = set(range(0, n + 1, cfg.snapshot_every))
    else:
        steps = {0, *yearly_steps(cfg)}
    steps.add(n)
    return sorted(steps)


def yearly_steps(cfg: ScenarioConfig) -> list[int]:
    """Year-end steps within the run, ``round(k * 365.25 / dt)``."""
    out, k = [], 1
    while round(k * DAYS_PER_YEAR / cfg.dt) <= cfg.n_steps:
        out.append(round(k * DAYS_PER_YEAR / cfg.dt))
        k += 1
    return out


def run_simulation(cfg: ScenarioConfig, h0=None, progress=None) -> RunArtifacts:
    """March ``cfg.n_steps`` implicit steps, warm-starting Newton from the previous heads.

    ``h0`` overrides the configured initial heads.  ``progress(step, report)``
    is called after every step.  A step that does not converge keeps the best
    iterate and the run continues, unless ``on_nonconvergence = abort`` in
    which case :class:`NonConvergenceError` is raised with the partial
    artifacts attached.
    """
    model, h_init = build_model(cfg)
    if h0 is not None:
        h_init = np.array(h0, dtype=np.float64)
        if h_init.shape != (model.n_unknowns,):
            raise ValueError(f"h0 has shape {h_init.shape}, expected ({model.n_unknowns},)")
    if not np.all(np.isfinite(h_init)):
        raise SimulationError(0, "non-finite initial heads")
    ns, gs = newton_settings(cfg)
    nk = cfg.solver.method == "nk"
    precond = cfg.solver.uses_preconditioner

    ids, x, y, layer = model.node_table()
    art = RunArtifacts(cfg, ids, x, y, layer)
    keep = set(snapshot_steps(cfg))
    h = h_init.copy()
    art.snapshots[0] = h.copy()
    t_start = time.perf_counter()
    for m in range(1, cfg.n_steps + 1):
        t0 = time.perf_counter()
        h_old = h
        F = ResidualFunction(model.step_residual(h_old), model.n_unknowns)
        if nk:
            mode = ExactJacobian(lambda v, h_old=h_old: model.jacobian(v, h_old))
        else:
            mode = FiniteDifferenceJacobian(cfg.solver.fd_b)
        try:
            h, report = newton_solve(F, mode, ns, gs, precond, h_old)
        except FloatingPointError as exc:
            art.wall_time = time.perf_counter() - t_start
            raise SimulationError(m, str(exc), art) from exc
        art.reports.append(report)
        art.step_wall_times.append(time.perf_counter() - t0)
        if m in keep:
            art.snapshots[m] = h.copy()
        if progress is not None:
            progress(m, report)
        if not report.converged:
            log.warning("step %d: Newton did not converge; keeping best iterate", m)
            if cfg.solver.on_nonconvergence == "abort":
                art.final_heads = h.copy()
                art.snapshots[m] = h.copy()
                art.wall_time = time.perf_counter() - t_start
                raise NonConvergenceError(m, "Newton did not converge", art)
    art.final_heads = h.copy()
    art.wall_time = time.perf_counter() - t_start
    return art

