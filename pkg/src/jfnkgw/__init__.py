"""Newton-Krylov and Jacobian-free Newton-Krylov solvers with two groundwater models."""
from .krylov import CsrMatrix, GmresSettings, LinearOperator, gmres_solve, ilu0_factorize, ilu_apply
from .nonlinear import (ConvergenceReport, ExactJacobian, FiniteDifferenceJacobian, NewtonSettings,
                        ResidualFunction, newton_solve)

__version__ = "0.1.0"
