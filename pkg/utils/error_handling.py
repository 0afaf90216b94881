"""
Coarse Guidance Toolkit - Error Handling Utilities
Domain exceptions plus robust wrappers around conic solver calls.
"""

import logging
import time
from typing import Any, Dict, Iterable, Optional, Sequence

import cvxpy as cp
import numpy as np

from config.settings import settings
from utils.logging_config import cert_logger, get_logger, log_solver_call, log_with_context

logger = get_logger('errors')

# CLI exit codes
EXIT_OK = 0
EXIT_DOMAIN_ERROR = 1
EXIT_USAGE_ERROR = 2
EXIT_NUMERICAL_FAILURE = 3


class CoarseGuidanceError(Exception):
    """Base exception for toolkit operations"""
    exit_code = EXIT_DOMAIN_ERROR

    def __init__(self, module: str, operation: str, message: str):
        self.module = module
        self.operation = operation
        self.message = message
        super().__init__(f"{module}.{operation}: {message}")


class DimensionMismatchError(CoarseGuidanceError):
    """Matrix or vector shapes disagree"""


class InvalidHoldLengthError(CoarseGuidanceError):
    """Hold length shorter than the integration step or non-positive"""


class NotHurwitzError(CoarseGuidanceError):
    """Closed-loop matrix has an eigenvalue with non-negative real part"""

    def __init__(self, module: str, operation: str, eigenvalues: Iterable[complex], tol: float = 1e-9):
        self.eigenvalues = np.asarray(list(eigenvalues))
        offending = self.eigenvalues[self.eigenvalues.real >= -tol]
        self.offending = offending
        shown = ', '.join(f"{z.real:.3e}{z.imag:+.3e}j" for z in offending[:8])
        more = '' if offending.size <= 8 else f" (+{offending.size - 8} more)"
        super().__init__(module, operation, f"matrix is not Hurwitz; offending eigenvalues: {shown}{more}")


class SingularSystemError(CoarseGuidanceError):
    """Linear operator is numerically singular"""


class NumericalFailureError(CoarseGuidanceError):
    """Solver did not converge (distinct from a certified infeasibility)"""
    exit_code = EXIT_NUMERICAL_FAILURE


class InfeasibleError(CoarseGuidanceError):
    """Convex program has no solution"""


class IllConditionedError(CoarseGuidanceError):
    """Recovered matrix is too ill-conditioned to invert reliably"""


class EmptyInputError(CoarseGuidanceError):
    """Operation received no trajectories / rows"""


class ConfigurationError(CoarseGuidanceError):
    """Unknown or invalid configuration key"""
    exit_code = EXIT_USAGE_ERROR


INFEASIBLE_STATUSES = (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE)
SOLVED_STATUSES = (cp.OPTIMAL, cp.OPTIMAL_INACCURATE)


def available_solvers(preferred: Optional[Sequence[str]] = None) -> list:
    """Installed solvers in preference order"""
    preferred = list(preferred or settings.solver_order)
    installed = set(cp.installed_solvers())
    chosen = [name for name in preferred if name in installed]
    if not chosen:
        log_with_context(logger, logging.WARNING, "None of the preferred solvers are installed",
                         preferred=preferred, installed=sorted(installed))
    return chosen


def safe_solver_call(
    problem: cp.Problem,
    solvers: Optional[Sequence[str]] = None,
    max_attempts: Optional[int] = None,
    label: str = 'problem',
    **solve_kwargs: Any
) -> Dict[str, Any]:
    """
    Wrapper for cvxpy solves with solver fallback and retry logic

    Each solver in preference order gets up to ``max_attempts`` tries. A solve that
    ends in a definite status (optimal, infeasible, unbounded) is returned at once;
    solver errors are retried, and inaccurate or unknown statuses move on to the
    next solver. An inaccurate answer is returned only when nothing better turns up.

    Args:
        problem: cvxpy problem to solve
        solvers: Solver names in preference order (defaults to settings.solver_order)
        max_attempts: Attempts per solver (defaults to settings.solver_max_attempts)
        label: Short problem label used in logs
        **solve_kwargs: Extra keyword arguments passed to ``problem.solve``

    Returns:
        Dict containing the outcome (success, status, solver, error, attempts)
    """
    solvers = available_solvers(solvers)
    max_attempts = max_attempts or settings.solver_max_attempts
    attempts = 0
    last_status = None
    last_solver = None
    last_error = None
    inaccurate = None

    for solver in solvers:
        for attempt in range(max_attempts):
            attempts += 1
            start = time.perf_counter()
            try:
                problem.solve(solver=solver, **solve_kwargs)
            except cp.error.SolverError as e:
                last_error = str(e)
                last_solver = solver
                log_solver_call(cert_logger, solver, label, 'solver_error',
                                duration=time.perf_counter() - start, attempt=attempt + 1, error=last_error)
                continue
            except Exception as e:
                last_error = f"{type(e).__name__}: {e}"
                last_solver = solver
                log_solver_call(cert_logger, solver, label, 'unexpected_error',
                                duration=time.perf_counter() - start, attempt=attempt + 1, error=last_error)
                break

            status = problem.status
            last_status = status
            last_solver = solver
            log_solver_call(cert_logger, solver, label, status,
                            duration=time.perf_counter() - start, attempt=attempt + 1)

            if status in (cp.OPTIMAL, cp.INFEASIBLE, cp.UNBOUNDED):
                return {
                    'success': True,
                    'status': status,
                    'solver': solver,
                    'error': None,
                    'attempts': attempts
                }
            if status in (cp.OPTIMAL_INACCURATE, cp.INFEASIBLE_INACCURATE) and inaccurate is None:
                inaccurate = {
                    'success': True,
                    'status': status,
                    'solver': solver,
                    'error': None,
                    'attempts': attempts
                }
            # inaccurate or unknown: move on to the next solver
            break

    if inaccurate is not None:
        inaccurate['attempts'] = attempts
        return inaccurate

    return {
        'success': False,
        'status': last_status,
        'solver': last_solver,
        'error': last_error or 'no_solver_reached_a_definite_status',
        'attempts': attempts
    }


def handle_operation_error(module: str, operation: str, error: Exception) -> Dict[str, Any]:
    """
    Standardized error record for a failed module operation

    Args:
        module: Toolkit module (e.g., 'lmi_cert')
        operation: Operation being performed
        error: The exception that occurred

    Returns:
        Standardized error response
    """
    log_with_context(logger, logging.ERROR, "Operation error",
                     module=module,
                     operation=operation,
                     error=str(error),
                     error_type=type(error).__name__)

    return {
        'success': False,
        'module': module,
        'operation': operation,
        'error': type(error).__name__,
        'message': str(error),
        'timestamp': time.time()
    }


def exit_code_for(error: Exception) -> int:
    """Map an exception to a CLI exit code"""
    if isinstance(error, CoarseGuidanceError):
        return error.exit_code
    if isinstance(error, ValueError):
        return EXIT_USAGE_ERROR
    return EXIT_DOMAIN_ERROR
