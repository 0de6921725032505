"""Newton-Krylov and Jacobian-free Newton-Krylov drivers.

Both drivers share the outer loop: dynamic forcing term, GMRES for the Newton
direction, optional Armijo backtracking on ``f = 0.5 ||F||^2`` and a stopping
rule on the size of the Newton update.  They differ only in how ``J v`` is
formed: an assembled :class:`~jfnkgw.krylov.CsrMatrix` or a one-sided
difference of residuals.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from .krylov import CsrMatrix, GmresSettings, LinearOperator, gmres_solve, ilu0_factorize, spmv

log = logging.getLogger(__name__)

_EPS = float(np.finfo(np.float64).eps)


class NonFiniteResidualError(FloatingPointError):
    def __init__(self, index: int, where: str = "residual"):
        super().__init__(f"non-finite {where} at index {index}")
        self.index = index


class ResidualFunction:
    """Wraps ``h -> F(h)`` and counts evaluations."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], dimension: int):
        self.fn = fn
        self.dimension = int(dimension)
        self.call_count = 0

    def __call__(self, h) -> np.ndarray:
        self.call_count += 1
        out = np.asarray(self.fn(np.asarray(h, dtype=np.float64)), dtype=np.float64)
        if out.shape != (self.dimension,):
            raise ValueError(f"residual returned shape {out.shape}, expected ({self.dimension},)")
        return out


@dataclass(frozen=True)
class ExactJacobian:
    """Newton-Krylov: ``assembler(h)`` returns the Jacobian at ``h``."""

    assembler: Callable[[np.ndarray], CsrMatrix]


@dataclass(frozen=True)
class FiniteDifferenceJacobian:
    """Jacobian-free mode; ``b`` scales the perturbation size."""

    b: float = 1e-6

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError("perturbation scale b must be positive")


JacobianMode = ExactJacobian | FiniteDifferenceJacobian


@dataclass(frozen=True)
class NewtonSettings:
    tau_h: float = 1e-4
    max_newton: int = 100
    gamma_ini: float = 0.99
    r_threshold: float = 0.625
    ls_alpha: float = 1e-4
    ls_rho: float = 0.5
    max_ls: int = 3
    use_line_search: bool = True
    fd_b: float = 1e-6
    step_norm: str = "l2"   # or "max"

    def __post_init__(self):
        if not 0 < self.gamma_ini < 1:
            raise ValueError("gamma_ini must lie in (0, 1)")
        if not 0 < self.ls_alpha < 1 or not 0 < self.ls_rho < 1:
            raise ValueError("ls_alpha and ls_rho must lie in (0, 1)")
        if self.max_ls < 0:
            raise ValueError("max_ls must be >= 0")
        if not self.tau_h > 0:
            raise ValueError("tau_h must be positive")
        if self.max_newton < 1:
            raise ValueError("max_newton must be >= 1")
        if self.step_norm not in ("l2", "max"):
            raise ValueError("step_norm must be 'l2' or 'max'")


@dataclass
class IterationRecord:
    norm_F: float
    norm_step: float
    eta: float
    lam: float
    inner_iterations: int
    ls_trials: int = 0
    ls_success: bool = True
    descent: bool = True
    gmres_converged: bool = True
    fresh_eval: int = 0         # residual calls spent evaluating F(h^k)
    slope_calls: int = 0        # residual calls spent on the Armijo slope
    residual_calls: int = 0     # all residual calls in this iteration
    merit: float = np.nan       # f(h^k)
    merit_new: float = np.nan   # f(h^k + lam dh), nan if not evaluated
    slope: float = np.nan       # grad f . dh


@dataclass
class ConvergenceReport:
    newton_iterations: int = 0
    per_iteration: list[IterationRecord] = field(default_factory=list)
    residual_calls: int = 0
    converged: bool = False
    warnings: list[str] = field(default_factory=list)

    @property
    def krylov_iterations(self) -> int:
        return sum(r.inner_iterations for r in self.per_iteration)


class LineSearchResult(NamedTuple):
    lam: float
    h_new: np.ndarray
    f_new: float
    F_new: np.ndarray | None
    trials: int
    success: bool
    descent: bool


# ----------------------------------------------------------------- primitives

def _norm(x, kind="l2") -> float:
    return float(np.max(np.abs(x))) if kind == "max" else float(np.linalg.norm(x))


def perturbation_epsilon(h, v, b: float = 1e-6) -> float:
    """Scalar difference step for ``J v``: the averaged per-component step
    ``b |h_i| + b`` divided by ``||v||^2``."""
    h = np.asarray(h, dtype=np.float64)
    vv = float(np.dot(v, v))
    if vv == 0.0:
        raise ValueError("perturbation_epsilon: direction has zero norm")
    if not b > 0:
        raise ValueError("b must be positive")
    return float(np.sum(b * np.abs(h) + b)) / (h.size * vv)


def jv_product_fd(F: ResidualFunction, h, Fh, v, eps: float) -> np.ndarray:
    """One-sided difference ``(F(h + eps v) - F(h)) / eps``; one residual call."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    out = (F(h + eps * np.asarray(v)) - Fh) / eps
    bad = np.flatnonzero(~np.isfinite(out))
    if len(bad):
        raise NonFiniteResidualError(int(bad[0]), "Jacobian-vector product")
    return out


def forcing_term(k: int, normF_k: float, normF_prev: float, gamma_ini: float = 0.99,
                 r_threshold: float = 0.625) -> float:
    """Linear-solve tolerance for Newton iteration ``k``.

    Loose (``gamma_ini``) while the residual is large, then tightened to the
    ratio of successive residual norms, floored at machine epsilon (a ratio
    that underflows to zero would ask GMRES for an exact solve).
    """
    if k == 0 or normF_k >= r_threshold:
        return gamma_ini
    if normF_prev == 0.0 or normF_k == 0.0:
        return gamma_ini
    return min(gamma_ini, max(normF_k / normF_prev, _EPS))


def backtracking_line_search(F: ResidualFunction, h, delta, f_h: float, grad_dot_delta: float,
                             s: NewtonSettings) -> LineSearchResult:
    """Armijo backtracking on ``f = 0.5 ||F||^2``.

    Tries ``lam = 1, rho, rho^2, ...`` for at most ``s.max_ls`` residual
    evaluations.  When none satisfies the sufficient-decrease test the trial
    with the smallest merit is returned with ``success=False``.  A
    non-descent direction skips the search and returns the full step.
    """
    h = np.asarray(h)
    if grad_dot_delta >= 0.0 or not np.isfinite(grad_dot_delta):
        return LineSearchResult(1.0, h + delta, np.nan, None, 0, False, False)
    if s.max_ls == 0:
        return LineSearchResult(1.0, h + delta, np.nan, None, 0, True, True)

    lam = 1.0
    best = None
    for trial in range(1, s.max_ls + 1):
        h_try = h + lam * delta
        F_try = F(h_try)
        f_try = 0.5 * float(F_try @ F_try)
        if not np.isfinite(f_try):
            f_try = np.inf
        if f_try <= f_h + s.ls_alpha * lam * grad_dot_delta:
            return LineSearchResult(lam, h_try, f_try, F_try, trial, True, True)
        if best is None or f_try < best[2]:
            best = (lam, h_try, f_try, F_try)
        lam *= s.ls_rho
    lam_b, h_b, f_b, F_b = best
    if not np.isfinite(f_b):
        F_b = None
    return LineSearchResult(lam_b, h_b, f_b, F_b, s.max_ls, False, True)


# --------------------------------------------------------------------- driver

def newton_solve(F: ResidualFunction, mode: JacobianMode, s: NewtonSettings, gs: GmresSettings,
                 precond: bool, h0) -> tuple[np.ndarray, ConvergenceReport]:
    """Inexact Newton iteration with GMRES inner solves.

    Each iteration solves ``J dh = -F`` to the relative tolerance given by
    :func:`forcing_term`, starting GMRES from zero.  Iteration stops once the
    Newton update satisfies ``||dh|| <= tau_h`` (the update is still applied)
    or after ``s.max_newton`` iterations, in which case the iterate with the
    smallest residual norm seen is returned with ``converged=False``.

    A residual evaluation accepted by the line search is reused as ``F`` at
    the next iterate, so ``report.residual_calls`` equals the sum over
    iterations of ``fresh_eval + ls_trials + slope_calls`` plus, in the
    Jacobian-free mode, the GMRES inner iterations.
    """
    free = isinstance(mode, FiniteDifferenceJacobian)
    if free and precond:
        raise ValueError("the Jacobian-free mode runs without a preconditioner")
    h = np.array(h0, dtype=np.float64)
    if not np.all(np.isfinite(h)):
        raise NonFiniteResidualError(int(np.flatnonzero(~np.isfinite(h))[0]), "initial iterate")

    report = ConvergenceReport()
    calls_start = F.call_count
    Fk = None
    normF_prev = 0.0
    best_h, best_norm = h.copy(), np.inf

    for k in range(s.max_newton):
        calls_iter = F.call_count
        fresh = 0
        if Fk is None:
            Fk = F(h)
            fresh = 1
        bad = np.flatnonzero(~np.isfinite(Fk))
        if len(bad):
            raise NonFiniteResidualError(int(bad[0]))
        normF = float(np.linalg.norm(Fk))
        if normF < best_norm:
            best_h, best_norm = h.copy(), normF
        eta = forcing_term(k, normF, normF_prev, s.gamma_ini, s.r_threshold)

        J = None
        pc = None
        if free:
            h_k, F_k = h, Fk

            def apply(v, h_k=h_k, F_k=F_k):
                if not np.any(v):
                    return np.zeros_like(v)
                return jv_product_fd(F, h_k, F_k, v, perturbation_epsilon(h_k, v, mode.b))

            op = LinearOperator(len(h), apply)
        else:
            J = mode.assembler(h)
            op = LinearOperator.from_csr(J)
            if precond:
                pc = ilu0_factorize(J)
        out = gmres_solve(op, -Fk, None, replace(gs, tolerance=eta), pc)
        delta = out.solution
        norm_step = _norm(delta, s.step_norm)
        rec = IterationRecord(normF, norm_step, eta, 1.0, out.inner_iterations,
                              gmres_converged=out.converged, fresh_eval=fresh,
                              merit=0.5 * normF ** 2)
        if not out.converged:
            report.warnings.append(f"iteration {k}: GMRES stopped at relative residual "
                                   f"{out.achieved_relative_residual:.3e} > {eta:.3e}")

        if norm_step <= s.tau_h:
            h = h + delta
            Fk = None
            rec.residual_calls = F.call_count - calls_iter
            report.per_iteration.append(rec)
            report.converged = True
            break

        if s.use_line_search and s.max_ls > 0:
            if free:
                c0 = F.call_count
                Jd = jv_product_fd(F, h, Fk, delta, perturbation_epsilon(h, delta, mode.b))
                rec.slope_calls = F.call_count - c0
            else:
                Jd = spmv(J, delta)
            slope = float(Fk @ Jd)
            ls = backtracking_line_search(F, h, delta, rec.merit, slope, s)
            rec.slope = slope
            rec.lam, rec.ls_trials, rec.ls_success, rec.descent = ls.lam, ls.trials, ls.success, ls.descent
            rec.merit_new = ls.f_new
            if not ls.descent:
                report.warnings.append(f"iteration {k}: non-descent direction, full step taken")
            elif not ls.success:
                report.warnings.append(f"iteration {k}: line search exhausted, lambda={ls.lam:g}")
            h = ls.h_new
            Fk = ls.F_new
        else:
            h = h + delta
            Fk = None
        normF_prev = normF
        rec.residual_calls = F.call_count - calls_iter
        report.per_iteration.append(rec)
    else:
        if Fk is not None and np.linalg.norm(Fk) < best_norm:
            best_h = h.copy()
        h = best_h
        report.warnings.append(f"no convergence in {s.max_newton} Newton iterations")
        log.warning("Newton: no convergence in %d iterations (best ||F|| = %.3e)",
                    s.max_newton, best_norm)

    report.newton_iterations = len(report.per_iteration)
    report.residual_calls = F.call_count - calls_start
    return h, report
