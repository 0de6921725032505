"""Single-layer finite-difference model on a structured grid.

Cell-centred finite volumes around every node: interior nodes own a
``dx * dy`` control area, edge nodes half of it and corners a quarter.  Face
transmissivity is the arithmetic mean of the two nodal values.  Time
stepping is backward Euler, so a step solves

    S_s(h) (h - h_old) / dt - div(T grad h) - q_boundary = 0

on free nodes and ``h - h_b = 0`` on Dirichlet nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aquifer import (LayerParams, SmoothingParams, available_storage, storativity, storativity_dh,
                      transmissivity, transmissivity_dh)
from .krylov import CsrMatrix

EDGES = ("bottom", "top", "left", "right")


@dataclass(frozen=True)
class StructuredGrid:
    """``nx`` by ``ny`` nodes with spacings ``dx``, ``dy``.

    Node ids are 1-based and row-major, ``id = (j - 1) nx + i``; arrays in
    this package use the 0-based ``id - 1``.  ``dirichlet_nodes`` holds
    0-based indices with prescribed heads ``dirichlet_heads``; every other
    boundary node gets the Neumann inflow ``neumann_flux[edge]`` (L^2/T per
    unit boundary length, positive into the domain).
    """

    nx: int
    ny: int
    dx: float
    dy: float
    dirichlet_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    dirichlet_heads: np.ndarray = field(default_factory=lambda: np.zeros(0))
    neumann_flux: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("a structured grid needs at least 2 nodes per direction")
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError("grid spacings must be positive")
        nodes = np.asarray(self.dirichlet_nodes, dtype=np.int64)
        heads = np.broadcast_to(np.asarray(self.dirichlet_heads, dtype=np.float64), nodes.shape).copy()
        object.__setattr__(self, "dirichlet_nodes", nodes)
        object.__setattr__(self, "dirichlet_heads", heads)
        unknown = set(self.neumann_flux) - set(EDGES)
        if unknown:
            raise ValueError(f"unknown boundary edge(s) {sorted(unknown)}; expected {EDGES}")

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.tile(np.arange(self.nx) * self.dx, self.ny)
        y = np.repeat(np.arange(self.ny) * self.dy, self.nx)
        return x, y

    def face_lengths(self) -> tuple[np.ndarray, np.ndarray]:
        """Control-volume widths: per column (``lx``) and per row (``ly``)."""
        lx = np.full(self.nx, self.dx)
        lx[[0, -1]] *= 0.5
        ly = np.full(self.ny, self.dy)
        ly[[0, -1]] *= 0.5
        return lx, ly

    def control_areas(self) -> np.ndarray:
        lx, ly = self.face_lengths()
        return np.outer(ly, lx).ravel()

    def boundary_inflow(self) -> np.ndarray:
        """Neumann inflow per node (L^3/T)."""
        lx, ly = self.face_lengths()
        q = np.zeros((self.ny, self.nx))
        f = self.neumann_flux
        q[0, :] += f.get("bottom", 0.0) * lx
        q[-1, :] += f.get("top", 0.0) * lx
        q[:, 0] += f.get("left", 0.0) * ly
        q[:, -1] += f.get("right", 0.0) * ly
        q = q.ravel()
        q[self.dirichlet_nodes] = 0.0
        return q

    @classmethod
    def left_right_dirichlet(cls, nx, ny, dx, dy, h_left, h_right) -> "StructuredGrid":
        j = np.arange(ny)
        nodes = np.concatenate([j * nx, j * nx + nx - 1])
        heads = np.concatenate([np.full(ny, float(h_left)), np.full(ny, float(h_right))])
        return cls(nx, ny, dx, dy, nodes, heads)


def _faces(g: StructuredGrid):
    """Node pairs (a, b) of every face with their conductance geometry ``L/d``."""
    idx = np.arange(g.n_nodes).reshape(g.ny, g.nx)
    lx, ly = g.face_lengths()
    ax, bx = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    gx = np.repeat(ly / g.dx, g.nx - 1)
    ay, by = idx[:-1, :].ravel(), idx[1:, :].ravel()
    gy = np.tile(lx / g.dy, g.ny - 1)
    return np.concatenate([ax, ay]), np.concatenate([bx, by]), np.concatenate([gx, gy])


def _check_finite(h, name):
    bad = np.flatnonzero(~np.isfinite(h))
    if len(bad):
        raise FloatingPointError(f"non-finite {name} at node {bad[0] + 1}")


def fd_residual_tc1(h_new, h_old, g: StructuredGrid, p: LayerParams, dt: float,
                    sm: SmoothingParams) -> np.ndarray:
    """Backward-Euler residual of the single-layer model (L/T per node)."""
    h = np.asarray(h_new, dtype=np.float64)
    h0 = np.asarray(h_old, dtype=np.float64)
    _check_finite(h, "head")
    a, b, geo = _faces(g)
    T = transmissivity(h, p, sm)
    q = 0.5 * (T[a] + T[b]) * (h[b] - h[a]) * geo   # flow from b into a
    net = np.bincount(a, q, g.n_nodes) - np.bincount(b, q, g.n_nodes) + g.boundary_inflow()
    F = storativity(h, p, sm) * (h - h0) / dt - net / g.control_areas()
    F[g.dirichlet_nodes] = h[g.dirichlet_nodes] - g.dirichlet_heads
    return F


def fd_assemble_jacobian_tc1(h_new, h_old, g: StructuredGrid, p: LayerParams, dt: float,
                             sm: SmoothingParams) -> CsrMatrix:
    """Analytic Jacobian of :func:`fd_residual_tc1` with respect to ``h_new``."""
    h = np.asarray(h_new, dtype=np.float64)
    h0 = np.asarray(h_old, dtype=np.float64)
    n = g.n_nodes
    area = g.control_areas()
    a, b, geo = _faces(g)
    T = transmissivity(h, p, sm)
    dT = transmissivity_dh(h, p, sm)
    Tf = 0.5 * (T[a] + T[b])
    dh = h[b] - h[a]
    dq_da = geo * (0.5 * dT[a] * dh - Tf)
    dq_db = geo * (0.5 * dT[b] * dh + Tf)
    # F_a -= q / A_a ; F_b += q / A_b
    rows = np.concatenate([a, a, b, b, np.arange(n)])
    cols = np.concatenate([a, b, a, b, np.arange(n)])
    diag = (storativity_dh(h, p, sm) * (h - h0) + storativity(h, p, sm)) / dt
    vals = np.concatenate([-dq_da / area[a], -dq_db / area[a], dq_da / area[b], dq_db / area[b], diag])

    fixed = np.zeros(n, dtype=bool)
    fixed[g.dirichlet_nodes] = True
    keep = ~fixed[rows]
    rows = np.concatenate([rows[keep], g.dirichlet_nodes])
    cols = np.concatenate([cols[keep], g.dirichlet_nodes])
    vals = np.concatenate([vals[keep], np.ones(len(g.dirichlet_nodes))])
    return CsrMatrix.from_coo(rows, cols, vals, (n, n))


@dataclass(frozen=True)
class FdModel:
    """Binds grid and parameters so a time step only needs ``h_old``."""

    grid: StructuredGrid
    layer: LayerParams
    dt: float
    smoothing: SmoothingParams = SmoothingParams()

    n_layers = 1

    @property
    def n_unknowns(self) -> int:
        return self.grid.n_nodes

    def residual(self, h_new, h_old):
        return fd_residual_tc1(h_new, h_old, self.grid, self.layer, self.dt, self.smoothing)

    def jacobian(self, h_new, h_old):
        return fd_assemble_jacobian_tc1(h_new, h_old, self.grid, self.layer, self.dt, self.smoothing)

    def step_residual(self, h_old):
        return lambda h_new: self.residual(h_new, h_old)

    def node_table(self):
        """(node_id, x, y, layer) for every unknown, layer-major."""
        x, y = self.grid.coordinates()
        ids = np.arange(1, self.grid.n_nodes + 1)
        return ids, x, y, np.ones_like(ids)

    def storage_volume(self, h):
        """Stored volume ``sum_i A_i M(h_i)`` over all control areas (L^3)."""
        return float(np.sum(self.grid.control_areas() * available_storage(h, self.layer)))
