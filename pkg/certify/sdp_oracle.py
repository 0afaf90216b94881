"""
Coarse Guidance Toolkit - Semidefinite Feasibility Oracle
Blocks are written once as builder callables and evaluated twice: symbolically with
cvxpy for the solve, and numerically with numpy for an independent eigenvalue check
of every returned assignment.
"""

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import cvxpy as cp
import numpy as np

from config.settings import settings
from utils.error_handling import (INFEASIBLE_STATUSES, SOLVED_STATUSES, NumericalFailureError,
                                  safe_solver_call)
from utils.logging_config import cert_logger, log_with_context

Builder = Callable[[Mapping[str, Any], Callable], Any]

NONSTRICT_TOL = 1e-7


class Definiteness(str, Enum):
    NEGATIVE = "negative"
    POSITIVE = "positive"


class VariableKind(str, Enum):
    SYMMETRIC_PD = "symmetric_pd"
    SYMMETRIC_PSD = "symmetric_psd"
    SYMMETRIC = "symmetric"
    FREE = "free"


class SolverStatus(str, Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    UNVERIFIED = "unverified"


@dataclass(frozen=True)
class VariableSpec:
    name: str
    shape: Tuple[int, int]
    kind: VariableKind = VariableKind.FREE

    @property
    def symmetric(self) -> bool:
        return self.kind != VariableKind.FREE


@dataclass(frozen=True)
class LmiBlock:
    """An affine matrix expression constrained to be definite; strict blocks use the margin"""
    name: str
    builder: Builder
    sense: Definiteness = Definiteness.NEGATIVE
    strict: bool = True


@dataclass
class LmiProblem:
    variables: List[VariableSpec]
    blocks: List[LmiBlock]
    objective: Optional[Callable[[Mapping[str, Any]], Any]] = None
    strictness_margin: float = field(default_factory=lambda: settings.strictness_margin)
    label: str = "lmi"


@dataclass
class SdpResult:
    feasible: bool
    status: SolverStatus
    assignment: Dict[str, np.ndarray]
    objective_value: Optional[float]
    solver: Optional[str]
    solver_status: Optional[str]
    block_extreme_eigs: Dict[str, float] = field(default_factory=dict)


def _symmetrize(M):
    return (M + M.T) / 2


def numeric_bmat(rows: Sequence[Sequence[np.ndarray]]) -> np.ndarray:
    return np.block([[np.asarray(item, dtype=float) for item in row] for row in rows])


def assemble_blocks(problem: LmiProblem, assignment: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Numeric, symmetrized blocks at a given assignment"""
    return {block.name: _symmetrize(np.asarray(block.builder(assignment, numeric_bmat), dtype=float))
            for block in problem.blocks}


def _variable_extreme_eig(spec: VariableSpec, value: np.ndarray) -> Optional[float]:
    if spec.kind in (VariableKind.SYMMETRIC_PD, VariableKind.SYMMETRIC_PSD):
        return float(np.linalg.eigvalsh(_symmetrize(value)).min())
    return None


def verify_assignment(problem: LmiProblem, assignment: Mapping[str, np.ndarray],
                      verify_tol: Optional[float] = None) -> Tuple[bool, Dict[str, float]]:
    """
    Re-check every block and variable constraint by eigen-solving the numeric reassembly

    Strict blocks must clear verify_tol; non-strict ones may sit within a small scaled
    tolerance of the boundary.
    """
    verify_tol = settings.verify_tol if verify_tol is None else verify_tol
    extremes: Dict[str, float] = {}
    ok = True

    for name, M in assemble_blocks(problem, assignment).items():
        block = next(b for b in problem.blocks if b.name == name)
        eigs = np.linalg.eigvalsh(M)
        slack = NONSTRICT_TOL * max(1.0, float(np.abs(M).max()))
        if block.sense == Definiteness.NEGATIVE:
            extremes[name] = float(eigs.max())
            ok &= extremes[name] <= (-verify_tol if block.strict else slack)
        else:
            extremes[name] = float(eigs.min())
            ok &= extremes[name] >= (verify_tol if block.strict else -slack)

    for spec in problem.variables:
        eig = _variable_extreme_eig(spec, assignment[spec.name])
        if eig is None:
            continue
        extremes[spec.name] = eig
        if spec.kind == VariableKind.SYMMETRIC_PD:
            ok &= eig >= verify_tol
        else:
            ok &= eig >= -NONSTRICT_TOL

    return bool(ok), extremes


def build_cvxpy_problem(problem: LmiProblem) -> Tuple[cp.Problem, Dict[str, cp.Variable]]:
    """Translate an LmiProblem into a cvxpy problem"""
    margin = problem.strictness_margin
    variables = {spec.name: cp.Variable(spec.shape, symmetric=spec.symmetric, name=spec.name)
                 for spec in problem.variables}
    constraints = []

    for spec in problem.variables:
        var = variables[spec.name]
        if spec.kind == VariableKind.SYMMETRIC_PD:
            constraints.append(var >> margin * np.eye(spec.shape[0]))
        elif spec.kind == VariableKind.SYMMETRIC_PSD:
            constraints.append(var >> 0)

    for block in problem.blocks:
        M = _symmetrize(block.builder(variables, cp.bmat))
        offset = (margin if block.strict else 0.0) * np.eye(M.shape[0])
        if block.sense == Definiteness.NEGATIVE:
            constraints.append(M << -offset)
        else:
            constraints.append(M >> offset)

    if problem.objective is not None:
        objective = cp.Minimize(problem.objective(variables))
    else:
        objective = cp.Minimize(0)
    return cp.Problem(objective, constraints), variables


def sdp_feasible(problem: LmiProblem, solvers: Optional[Sequence[str]] = None) -> SdpResult:
    """
    Decide feasibility (or minimize the objective) of an LMI system

    Raises NumericalFailureError when no solver reaches a definite status. A solver
    claim of feasibility that fails the independent eigenvalue check is reported as
    UNVERIFIED and not feasible.
    """
    start = time.perf_counter()
    cvx_problem, variables = build_cvxpy_problem(problem)
    outcome = safe_solver_call(cvx_problem, solvers=solvers, label=problem.label)

    if not outcome['success']:
        raise NumericalFailureError('lmi_cert', 'sdp_feasible',
                                    f"{problem.label}: solver failed ({outcome['error']}, status={outcome['status']})")

    status = outcome['status']
    if status in INFEASIBLE_STATUSES:
        log_with_context(cert_logger, logging.DEBUG, "LMI infeasible",
                         problem=problem.label, solver=outcome['solver'], solver_status=status,
                         duration_seconds=round(time.perf_counter() - start, 3))
        return SdpResult(feasible=False, status=SolverStatus.INFEASIBLE, assignment={},
                         objective_value=None, solver=outcome['solver'], solver_status=status)

    if status not in SOLVED_STATUSES:
        raise NumericalFailureError('lmi_cert', 'sdp_feasible', f"{problem.label}: unexpected solver status {status}")

    assignment = {name: np.array(var.value, dtype=float) for name, var in variables.items()}
    if any(value is None or not np.all(np.isfinite(value)) for value in assignment.values()):
        raise NumericalFailureError('lmi_cert', 'sdp_feasible', f"{problem.label}: solver returned no values")

    verified, extremes = verify_assignment(problem, assignment)
    objective_value = float(cvx_problem.value) if problem.objective is not None else None

    log_with_context(cert_logger, logging.DEBUG if verified else logging.WARNING,
                     "LMI solved" if verified else "LMI solution failed independent verification",
                     problem=problem.label, solver=outcome['solver'], solver_status=status,
                     block_extreme_eigs=extremes, objective=objective_value,
                     duration_seconds=round(time.perf_counter() - start, 3))

    return SdpResult(
        feasible=verified,
        status=SolverStatus.FEASIBLE if verified else SolverStatus.UNVERIFIED,
        assignment=assignment,
        objective_value=objective_value,
        solver=outcome['solver'],
        solver_status=status,
        block_extreme_eigs=extremes,
    )
