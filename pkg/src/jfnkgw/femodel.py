"""Two-layer Galerkin finite-element model with aquitard leakage and pumping.

Bilinear quadrilaterals, lumped storage, element-averaged transmissivity and
Crank-Nicolson in time.  The discrete equation for node ``i`` of layer ``l``
is written per unit time and carries units of L^3/T:

    w_i [G(h_i^{m+1}) - G(h_i^m)] / dt
      + 1/2 sum_e [T_e^{m+1} (K_e h^{m+1})_i + T_e^m (K_e h^m)_i]
      + 1/2 w_i [L_i^{m+1} + L_i^m] - 1/2 w_i [Q_i^{m+1} + Q_i^m] = 0

with ``G`` the stored-water function of :func:`~jfnkgw.aquifer.storage_content`, leakage ``L = +V`` for the
top layer and ``-V`` for the bottom layer, and ``Q`` the storage-limited
nodal sink.  Lateral boundaries are no-flow.  Unknowns are ordered
layer-major: all top-layer nodes, then all bottom-layer nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aquifer import (AquitardParams, LayerParams, SmoothingParams, available_storage,
                      available_storage_dh, limited_sink, limited_sink_dm, storage_content,
                      storage_content_dh, transmissivity, transmissivity_dh, vertical_leakage,
                      vertical_leakage_dh)
from .krylov import CsrMatrix

_GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])


def element_stiffness(coords) -> np.ndarray:
    """Geometric stiffness ``int grad(phi_i) . grad(phi_j)`` of a bilinear quad.

    ``coords`` are the four corners in counterclockwise order.  Integrated
    with 2x2 Gauss points; raises ``ValueError`` if the mapping Jacobian is
    not positive at a quadrature point.
    """
    xy = np.asarray(coords, dtype=np.float64).reshape(4, 2)
    k = np.zeros((4, 4))
    for xi in _GAUSS:
        for eta in _GAUSS:
            dN = 0.25 * np.array([_XI * (1 + _ETA * eta), _ETA * (1 + _XI * xi)])   # d/dxi, d/deta
            jac = dN @ xy
            det = np.linalg.det(jac)
            if det <= 0.0:
                raise ValueError(f"degenerate or clockwise element (det J = {det:g})")
            grad = np.linalg.solve(jac, dN)
            k += det * grad.T @ grad
    return k


def _quad_area(xy):
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


@dataclass(frozen=True)
class FeMesh:
    """Quadrilateral mesh; ``elements`` holds 0-based node indices, CCW."""

    nodes: np.ndarray
    elements: np.ndarray
    cells_wide: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=np.float64))
        object.__setattr__(self, "elements", np.asarray(self.elements, dtype=np.int64))

    @classmethod
    def rectangular(cls, ncx: int, ncy: int, dx: float, dy: float) -> "FeMesh":
        """``ncx`` by ``ncy`` cells numbered row-major from the lower-left."""
        W = ncx
        x = np.tile(np.arange(W + 1) * dx, ncy + 1)
        y = np.repeat(np.arange(ncy + 1) * dy, W + 1)
        r, c = np.divmod(np.arange(ncx * ncy), W)
        n = r * (W + 1) + c
        elems = np.stack([n, n + 1, n + W + 2, n + W + 1], axis=1)
        return cls(np.column_stack([x, y]), elems, W)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def cell_nodes(self, cell: int) -> np.ndarray:
        """1-based node ids of the 1-based cell (sorted ascending)."""
        return np.sort(self.elements[cell - 1]) + 1

    def element_areas(self) -> np.ndarray:
        return np.array([_quad_area(self.nodes[e]) for e in self.elements])

    def stiffness_stack(self) -> np.ndarray:
        return np.stack([element_stiffness(self.nodes[e]) for e in self.elements])


def lumped_storage_weights(mesh: FeMesh) -> np.ndarray:
    """Nodal tributary areas: a quarter of every adjacent element's area."""
    share = np.repeat(mesh.element_areas() / 4.0, 4)
    return np.bincount(mesh.elements.ravel(), share, mesh.n_nodes)


@dataclass(frozen=True)
class PumpSpec:
    """Volumetric rate (L^3/T, negative for extraction) at a 1-based cell,
    shared equally by its four corner nodes of ``layer`` (1 = top)."""

    cell: int
    rate: float
    layer: int = 1


@dataclass(frozen=True)
class HeadState:
    heads: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        h = np.asarray(self.heads, dtype=np.float64)
        if not np.all(np.isfinite(h)):
            raise ValueError("head state contains non-finite values")
        object.__setattr__(self, "heads", h)


class _Geometry:
    """Per-mesh quantities that do not change between assemblies."""

    def __init__(self, mesh: FeMesh):
        self.mesh = mesh
        self.n = mesh.n_nodes
        self.w = lumped_storage_weights(mesh)
        self.ke = mesh.stiffness_stack()
        e = mesh.elements
        self.elems = e
        self.rows = np.repeat(e, 4, axis=1).ravel()   # (E*16,) row of entry (a, b)
        self.cols = np.tile(e, (1, 4)).ravel()


_GEOMETRY_CACHE: dict[int, _Geometry] = {}
_GEOMETRY_CACHE_SIZE = 8


def _geometry(mesh: FeMesh) -> _Geometry:
    # entries keep their mesh alive, so an id cannot be recycled while cached
    g = _GEOMETRY_CACHE.get(id(mesh))
    if g is None or g.mesh is not mesh:
        g = _Geometry(mesh)
        if len(_GEOMETRY_CACHE) >= _GEOMETRY_CACHE_SIZE:
            _GEOMETRY_CACHE.pop(next(iter(_GEOMETRY_CACHE)))
        _GEOMETRY_CACHE[id(mesh)] = g
    return g


def _nodal_rates(mesh: FeMesh, pumps, w: np.ndarray) -> np.ndarray:
    """Per-layer nodal Q_o in L/T, shape (2, N)."""
    q = np.zeros((2, mesh.n_nodes))
    for p in pumps:
        if p.layer not in (1, 2):
            raise ValueError(f"pump layer must be 1 or 2, got {p.layer}")
        if not 1 <= p.cell <= len(mesh.elements):
            raise ValueError(f"pump cell {p.cell} outside 1..{len(mesh.elements)}")
        np.add.at(q[p.layer - 1], mesh.elements[p.cell - 1], p.rate / 4.0)
    return q / w


def _conductance(geo: _Geometry, T, h):
    """sum_e T_e (K_e h_e) for one layer."""
    Te = T[geo.elems].mean(axis=1)
    kh = np.einsum("eab,eb->ea", geo.ke, h[geo.elems])
    return np.bincount(geo.elems.ravel(), (Te[:, None] * kh).ravel(), geo.n)


def _time_level_terms(h, geo, layers, aq, qnode, dt, sm):
    """Per-layer w*G/dt and the 1/2-weighted flux, leakage and sink terms."""
    N = geo.n
    hu, hb = h[:N], h[N:]
    top, bot = layers
    V = vertical_leakage(hu, hb, top.z, bot.Z, aq, sm)
    store, rest = [], []
    for l, (p, hl) in enumerate(zip(layers, (hu, hb))):
        G = storage_content(hl, p, sm)
        store.append(geo.w * G / dt)
        leak = V if l == 0 else -V
        Q = limited_sink(qnode[l], available_storage(hl, p), dt, sm)
        rest.append(0.5 * (_conductance(geo, transmissivity(hl, p, sm), hl) + geo.w * (leak - Q)))
    return np.concatenate(store), np.concatenate(rest)


def fe_assemble_residual(h_new, h_old, mesh: FeMesh, layers, aq: AquitardParams, pumps,
                         dt: float, sm: SmoothingParams) -> np.ndarray:
    """Crank-Nicolson residual of the two-layer model (L^3/T per node)."""
    geo = _geometry(mesh)
    h1 = np.asarray(h_new, dtype=np.float64)
    h0 = np.asarray(h_old, dtype=np.float64)
    _check_heads(h1, geo.n)
    qnode = _nodal_rates(mesh, pumps, geo.w)
    s1, r1 = _time_level_terms(h1, geo, layers, aq, qnode, dt, sm)
    s0, r0 = _time_level_terms(h0, geo, layers, aq, qnode, dt, sm)
    return (s1 - s0) + r1 + r0


def fe_assemble_jacobian(h_new, h_old, mesh: FeMesh, layers, aq: AquitardParams, pumps,
                         dt: float, sm: SmoothingParams) -> CsrMatrix:
    """Analytic Jacobian of :func:`fe_assemble_residual` w.r.t. ``h_new``."""
    geo = _geometry(mesh)
    N = geo.n
    h = np.asarray(h_new, dtype=np.float64)
    hu, hb = h[:N], h[N:]
    top, bot = layers
    qnode = _nodal_rates(mesh, pumps, geo.w)
    dVu, dVb = vertical_leakage_dh(hu, hb, top.z, bot.Z, aq, sm)

    rows, cols, vals = [], [], []
    for l, (p, hl) in enumerate(zip(layers, (hu, hb))):
        off = l * N
        T = transmissivity(hl, p, sm)
        dT = transmissivity_dh(hl, p, sm)
        Te = T[geo.elems].mean(axis=1)
        kh = np.einsum("eab,eb->ea", geo.ke, hl[geo.elems])
        # d/dh_b of T_e (K_e h)_a = T_e K_ab + (K_e h)_a dT_b / 4
        local = Te[:, None, None] * geo.ke + kh[:, :, None] * (0.25 * dT[geo.elems])[:, None, :]
        rows.append(geo.rows + off)
        cols.append(geo.cols + off)
        vals.append(0.5 * local.ravel())

        M = available_storage(hl, p)
        dQ = limited_sink_dm(qnode[l], M, dt, sm) * available_storage_dh(hl, p)
        dG = storage_content_dh(hl, p, sm)
        diag = geo.w * dG / dt - 0.5 * geo.w * dQ
        sign = 1.0 if l == 0 else -1.0
        own, other = (dVu, dVb) if l == 0 else (dVb, dVu)
        idx = np.arange(N)
        rows += [idx + off, idx + off]
        cols += [idx + off, idx + (N - off)]
        vals += [diag + 0.5 * geo.w * sign * own, 0.5 * geo.w * sign * other]
    return CsrMatrix.from_coo(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
                              (2 * N, 2 * N))


def _check_heads(h, N):
    if h.shape != (2 * N,):
        raise ValueError(f"expected {2 * N} heads (two layers of {N} nodes), got {h.shape}")
    bad = np.flatnonzero(~np.isfinite(h))
    if len(bad):
        k = int(bad[0])
        raise FloatingPointError(f"non-finite head at node {k % N + 1}, layer {k // N + 1}")


@dataclass(frozen=True)
class FeModel:
    """Binds mesh, layers and pumping so a time step only needs ``h_old``.

    With ``per_area`` (the default) each row is divided by its lumped area,
    so residuals are in L/T like the finite-difference model and absolute
    thresholds on ``||F||`` mean the same thing for both.  The raw weak form
    (L^3/T) is available from :func:`fe_assemble_residual`.
    """
    mesh: FeMesh
    layers: tuple[LayerParams, LayerParams]
    aquitard: AquitardParams
    dt: float
    pumps: tuple[PumpSpec, ...] = ()
    smoothing: SmoothingParams = field(default_factory=SmoothingParams)
    per_area: bool = True

    n_layers = 2

    @property
    def n_unknowns(self) -> int:
        return 2 * self.mesh.n_nodes

    def row_scale(self) -> np.ndarray:
        """Factor applied to every residual row: ``1 / w_i`` (L/T rows) or ones (L^3/T)."""
        w = np.tile(_geometry(self.mesh).w, 2)
        return 1.0 / w if self.per_area else np.ones_like(w)

    def residual(self, h_new, h_old):
        return self.row_scale() * fe_assemble_residual(
            h_new, h_old, self.mesh, self.layers, self.aquitard, self.pumps, self.dt, self.smoothing)

    def jacobian(self, h_new, h_old):
        J = fe_assemble_jacobian(h_new, h_old, self.mesh, self.layers, self.aquitard,
                                 self.pumps, self.dt, self.smoothing)
        if not self.per_area:
            return J
        return CsrMatrix(J.n_rows, J.n_cols, J.row_offsets, J.col_indices,
                         J.values * self.row_scale()[J.row_index])

    def step_residual(self, h_old):
        """``h_new -> residual`` with the old time level evaluated once."""
        geo = _geometry(self.mesh)
        qnode = _nodal_rates(self.mesh, self.pumps, geo.w)
        args = (geo, self.layers, self.aquitard, qnode, self.dt, self.smoothing)
        s0, r0 = _time_level_terms(np.asarray(h_old, dtype=np.float64), *args)
        const = r0 - s0
        scale = self.row_scale()

        def fn(h_new):
            h_new = np.asarray(h_new, dtype=np.float64)
            _check_heads(h_new, geo.n)
            s1, r1 = _time_level_terms(h_new, *args)
            return scale * (s1 + r1 + const)
        return fn

    def node_table(self):
        N = self.mesh.n_nodes
        ids = np.tile(np.arange(1, N + 1), 2)
        x = np.tile(self.mesh.nodes[:, 0], 2)
        y = np.tile(self.mesh.nodes[:, 1], 2)
        return ids, x, y, np.repeat([1, 2], N)

    def storage_volume(self, h):
        N = self.mesh.n_nodes
        w = lumped_storage_weights(self.mesh)
        return float(sum(np.sum(w * available_storage(h[l * N:(l + 1) * N], p))
                         for l, p in enumerate(self.layers)))
