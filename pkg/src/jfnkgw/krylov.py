"""Sparse matrices, restarted GMRES and ILU(0) preconditioning.

GMRES works against any :class:`LinearOperator`, so the same solver serves
both the assembled-Jacobian (Newton-Krylov) path and the finite-difference
Jacobian-free path.  Preconditioning is applied on the right, which keeps the
monitored residual equal to the true residual of the unpreconditioned system.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numba
import numpy as np
from scipy.linalg import solve_triangular

BREAKDOWN_TOL = 1e-14
# Kahan-Parlett "twice is enough" trigger for a second Gram-Schmidt pass.
REORTH_RATIO = 1.0 / np.sqrt(2.0)


class DimensionError(ValueError):
    """Raised when vector or matrix shapes do not fit together."""


class ZeroPivotError(ArithmeticError):
    """Raised by :func:`ilu0_factorize` when a pivot vanishes."""

    def __init__(self, row: int):
        super().__init__(f"zero pivot encountered in ILU(0) at row {row}")
        self.row = row


@dataclass(frozen=True)
class CsrMatrix:
    """Compressed sparse row matrix with sorted, duplicate-free rows."""

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ro = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        ci = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        va = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "row_offsets", ro)
        object.__setattr__(self, "col_indices", ci)
        object.__setattr__(self, "values", va)
        if ro.shape != (self.n_rows + 1,) or ro[0] != 0:
            raise ValueError("row_offsets must have length n_rows + 1 and start at 0")
        if np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets must be nondecreasing")
        if ro[-1] != len(va) or len(ci) != len(va):
            raise ValueError("row_offsets[-1], len(col_indices) and len(values) disagree")
        if len(ci) and (ci.min() < 0 or ci.max() >= self.n_cols):
            raise ValueError("column index out of range")
        # strictly increasing columns inside every row
        steps = np.diff(ci)
        row_starts = np.zeros(len(ci), dtype=bool)
        row_starts[ro[:-1][ro[:-1] < len(ci)]] = True
        if np.any((steps <= 0) & ~row_starts[1:]):
            raise ValueError("column indices must be strictly increasing within each row")

    @classmethod
    def from_coo(cls, rows, cols, vals, shape) -> "CsrMatrix":
        """Build from triplets; duplicate (row, col) entries are summed."""
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=np.float64).ravel()
        n_rows, n_cols = shape
        if len(rows):
            key = rows * n_cols + cols
            order = np.argsort(key, kind="stable")
            key = key[order]
            first = np.ones(len(key), dtype=bool)
            first[1:] = key[1:] != key[:-1]
            starts = np.flatnonzero(first)
            summed = np.add.reduceat(vals[order], starts)
            ukey = key[starts]
            r, c = ukey // n_cols, ukey % n_cols
        else:
            r = c = np.zeros(0, dtype=np.int64)
            summed = np.zeros(0)
        offsets = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(r, minlength=n_rows), out=offsets[1:])
        return cls(n_rows, n_cols, offsets, c, summed)

    @classmethod
    def from_dense(cls, a) -> "CsrMatrix":
        a = np.asarray(a, dtype=np.float64)
        r, c = np.nonzero(a)
        return cls.from_coo(r, c, a[r, c], a.shape)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols))
        out[self.row_index, self.col_indices] = self.values
        return out

    @cached_property
    def row_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_rows), np.diff(self.row_offsets))

    @property
    def nnz(self) -> int:
        return len(self.values)

    def diagonal_positions(self) -> np.ndarray:
        """Index into ``values`` of each diagonal entry, -1 where absent."""
        pos = np.full(self.n_rows, -1, dtype=np.int64)
        hit = np.flatnonzero(self.row_index == self.col_indices)
        pos[self.row_index[hit]] = hit
        return pos

    def __matmul__(self, x):
        return spmv(self, x)


def spmv(A: CsrMatrix, x) -> np.ndarray:
    """y = A x."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.n_cols,):
        raise DimensionError(f"spmv: matrix has {A.n_cols} columns, vector has shape {x.shape}")
    return np.bincount(A.row_index, weights=A.values * x[A.col_indices], minlength=A.n_rows)


class LinearOperator:
    """Abstract action ``v -> J v`` with an application counter."""

    def __init__(self, dimension: int, apply: Callable[[np.ndarray], np.ndarray]):
        self.dimension = int(dimension)
        self._apply = apply
        self.application_count = 0

    @classmethod
    def from_csr(cls, A: CsrMatrix) -> "LinearOperator":
        if A.n_rows != A.n_cols:
            raise DimensionError("operator matrix must be square")
        return cls(A.n_rows, lambda v: spmv(A, v))

    def __call__(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dimension,):
            raise DimensionError(f"operator of dimension {self.dimension} applied to shape {v.shape}")
        self.application_count += 1
        out = np.asarray(self._apply(v), dtype=np.float64)
        if out.shape != (self.dimension,):
            raise DimensionError(f"operator returned shape {out.shape}, expected ({self.dimension},)")
        return out


@dataclass(frozen=True)
class GmresSettings:
    restart_p: int = 20
    tolerance: float = 1e-6
    max_restarts: int = 500

    def __post_init__(self):
        if self.restart_p < 1:
            raise ValueError("restart_p must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_restarts < 1:
            raise ValueError("max_restarts must be >= 1")


@dataclass
class GmresOutcome:
    solution: np.ndarray
    achieved_relative_residual: float
    inner_iterations: int
    converged: bool
    restarts: int = 0
    breakdown: bool = False
    residual_history: list = field(default_factory=list)


def gmres_solve(op: LinearOperator, rhs, x0=None, settings: GmresSettings = GmresSettings(),
                precond: "IluFactors | None" = None) -> GmresOutcome:
    """Restarted GMRES(p) with modified Gram-Schmidt Arnoldi.

    Parameters
    ----------
    op : LinearOperator
        System operator.  Applied exactly once per Arnoldi vector, plus once
        for the initial residual when a nonzero ``x0`` is supplied.
    rhs : array_like
        Right-hand side.
    x0 : array_like, optional
        Initial guess, zero by default.
    settings : GmresSettings
        Restart length, relative residual target ``||rhs - op(x)|| / ||rhs||``
        and the maximum number of restart cycles.
    precond : IluFactors, optional
        Right preconditioner.

    Returns
    -------
    GmresOutcome
        ``residual_history`` holds the relative residual after every inner
        iteration (Givens estimate, which equals the true residual in exact
        arithmetic).
    """
    n = op.dimension
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape != (n,):
        raise DimensionError(f"rhs has shape {rhs.shape}, operator dimension is {n}")
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return GmresOutcome(np.zeros(n), 0.0, 0, True)

    if x0 is None:
        x = np.zeros(n)
    else:
        x = np.array(x0, dtype=np.float64)
        if x.shape != (n,):
            raise DimensionError(f"x0 has shape {x.shape}, operator dimension is {n}")
    r = rhs - op(x) if np.any(x) else rhs.copy()
    beta = np.linalg.norm(r)
    target = settings.tolerance * bnorm
    history: list[float] = []
    if beta <= target:
        return GmresOutcome(x, beta / bnorm, 0, True)

    p = settings.restart_p
    total = 0
    breakdown = False
    cycle = 0
    for cycle in range(settings.max_restarts):
        V = np.zeros((p + 1, n))
        H = np.zeros((p + 1, p))     # raw Hessenberg, kept for the restart residual
        R = np.zeros((p + 1, p))     # rotated copy
        cs = np.zeros(p)
        sn = np.zeros(p)
        g = np.zeros(p + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        resid = beta
        for j in range(p):
            z = V[j] if precond is None else ilu_apply(precond, V[j])
            w = op(z)
            total += 1
            wnorm = np.linalg.norm(w)
            for i in range(j + 1):
                H[i, j] = V[i] @ w
                w -= H[i, j] * V[i]
            hn = np.linalg.norm(w)
            if hn < REORTH_RATIO * wnorm:
                for i in range(j + 1):
                    c = V[i] @ w
                    H[i, j] += c
                    w -= c * V[i]
                hn = np.linalg.norm(w)
            H[j + 1, j] = hn

            R[: j + 2, j] = H[: j + 2, j]
            for i in range(j):
                a, b = R[i, j], R[i + 1, j]
                R[i, j] = cs[i] * a + sn[i] * b
                R[i + 1, j] = -sn[i] * a + cs[i] * b
            denom = np.hypot(R[j, j], R[j + 1, j])
            if denom == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = R[j, j] / denom, R[j + 1, j] / denom
            R[j, j] = denom
            R[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            k = j + 1
            resid = abs(g[j + 1])
            history.append(resid / bnorm)
            if resid <= target:
                break
            if hn <= BREAKDOWN_TOL * max(wnorm, np.finfo(float).tiny):
                breakdown = True
                break
            V[j + 1] = w / hn

        # drop trailing columns with a singular rotated diagonal
        kk = k
        while kk > 0 and R[kk - 1, kk - 1] == 0.0:
            kk -= 1
        if kk > 0:
            y = solve_triangular(R[:kk, :kk], g[:kk])
            dx = V[:kk].T @ y
            if precond is not None:
                dx = ilu_apply(precond, dx)
            x += dx
        else:
            y = np.zeros(0)
        if resid <= target or breakdown:
            break
        # residual from the Arnoldi relation: r = V_{k+1} (beta e1 - H y)
        coef = -H[: kk + 1, :kk] @ y
        coef[0] += beta
        r = V[: kk + 1].T @ coef
        beta = np.linalg.norm(r)

    rel = resid / bnorm
    return GmresOutcome(x, rel, total, rel <= settings.tolerance, cycle, breakdown, history)


# --------------------------------------------------------------------- ILU(0)

@dataclass(frozen=True)
class IluFactors:
    """ILU(0) factors in the sparsity pattern of the source matrix.

    The strictly lower part holds L (unit diagonal implied); the diagonal and
    upper part hold U.
    """

    n: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    diag_positions: np.ndarray

    def dense_factors(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (L, U) as dense arrays; meant for inspection and tests."""
        full = CsrMatrix(self.n, self.n, self.row_offsets, self.col_indices, self.values).to_dense()
        L = np.tril(full, -1) + np.eye(self.n)
        U = np.triu(full)
        return L, U


@numba.njit(cache=True)
def _ilu0_kernel(n, ro, ci, lu, diag):
    marker = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        for kk in range(ro[i], ro[i + 1]):
            marker[ci[kk]] = kk
        for kk in range(ro[i], diag[i]):
            k = ci[kk]
            lu[kk] /= lu[diag[k]]
            lik = lu[kk]
            for jj in range(diag[k] + 1, ro[k + 1]):
                pos = marker[ci[jj]]
                if pos >= 0:
                    lu[pos] -= lik * lu[jj]
        for kk in range(ro[i], ro[i + 1]):
            marker[ci[kk]] = -1
        if lu[diag[i]] == 0.0:
            return i
    return -1


@numba.njit(cache=True)
def _lu_solve_kernel(n, ro, ci, lu, diag, r):
    z = r.copy()
    for i in range(n):
        s = z[i]
        for kk in range(ro[i], diag[i]):
            s -= lu[kk] * z[ci[kk]]
        z[i] = s
    for i in range(n - 1, -1, -1):
        s = z[i]
        for kk in range(diag[i] + 1, ro[i + 1]):
            s -= lu[kk] * z[ci[kk]]
        z[i] = s / lu[diag[i]]
    return z


def ilu0_factorize(A: CsrMatrix) -> IluFactors:
    """Zero fill-in incomplete LU factorization.

    Raises
    ------
    DimensionError
        If ``A`` is not square.
    ValueError
        If a diagonal entry is structurally missing.
    ZeroPivotError
        If a pivot becomes exactly zero during elimination.
    """
    if A.n_rows != A.n_cols:
        raise DimensionError(f"ILU(0) needs a square matrix, got {A.n_rows}x{A.n_cols}")
    diag = A.diagonal_positions()
    missing = np.flatnonzero(diag < 0)
    if len(missing):
        raise ValueError(f"ILU(0): structurally zero diagonal at row {missing[0]}")
    lu = A.values.copy()
    bad = _ilu0_kernel(A.n_rows, A.row_offsets, A.col_indices, lu, diag)
    if bad >= 0:
        raise ZeroPivotError(int(bad))
    return IluFactors(A.n_rows, A.row_offsets, A.col_indices, lu, diag)


def ilu_apply(f: IluFactors, r) -> np.ndarray:
    """Solve ``L U z = r`` by forward then backward substitution."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (f.n,):
        raise DimensionError(f"ilu_apply: factors of size {f.n}, vector shape {r.shape}")
    return _lu_solve_kernel(f.n, f.row_offsets, f.col_indices, f.values, f.diag_positions, r)
