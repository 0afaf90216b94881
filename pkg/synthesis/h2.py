"""
Coarse Guidance Toolkit - H2 Optimal Guidance
Continuous-time H2 state feedback from the trace-objective SDP, solved on the reduced
ring and lifted back to the full state.
"""

import time
from dataclasses import dataclass
from typing import Optional

import cvxpy as cp
import numpy as np

from certify.lyapunov import check_hurwitz
from certify.sdp_oracle import (Definiteness, LmiBlock, LmiProblem, SolverStatus, VariableKind,
                                VariableSpec, sdp_feasible)
from schemas.params import GuidanceKind, H2Weights, OvmParams, Provenance
from traffic.ring_model import Controller, SystemMatrices, build_system, lift_gain, reduction_maps
from utils.cache import cached
from utils.error_handling import InfeasibleError, NumericalFailureError
from utils.logging_config import log_analysis_operation, synth_logger


@dataclass(frozen=True)
class H2Solution:
    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    K_red: np.ndarray
    controller: Controller
    objective_value: float
    solver: Optional[str] = None

    @property
    def K(self) -> Controller:
        return self.controller


def performance_weights(n: int, w: H2Weights) -> tuple[np.ndarray, np.ndarray]:
    """Reduced state weight T^T Q T with Q = diag(gamma_s, gamma_v, ...)^2, and R = gamma_u^2"""
    T, _ = reduction_maps(n)
    Q = np.diag(np.tile([w.gamma_s, w.gamma_v], n) ** 2)
    return T.T @ Q @ T, np.array([[w.gamma_u ** 2]])


def h2_problem(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray) -> LmiProblem:
    m = A.shape[0]
    H = np.eye(m)

    def lyapunov(v, bmat):
        AXBZ = A @ v['X'] - B @ v['Z']
        return AXBZ + AXBZ.T + H @ H.T

    def schur(v, bmat):
        return bmat([[v['Y'], v['Z']], [v['Z'].T, v['X']]])

    def objective(v):
        return cp.trace(Q @ v['X']) + cp.trace(R @ v['Y'])

    return LmiProblem(
        variables=[
            VariableSpec('X', (m, m), VariableKind.SYMMETRIC_PD),
            VariableSpec('Y', (1, 1), VariableKind.SYMMETRIC),
            VariableSpec('Z', (1, m)),
        ],
        blocks=[
            LmiBlock('lyapunov', lyapunov, Definiteness.NEGATIVE, strict=False),
            LmiBlock('schur', schur, Definiteness.POSITIVE, strict=False),
        ],
        objective=objective,
        label='h2',
    )


def solve_h2(sys: SystemMatrices, w: Optional[H2Weights] = None) -> H2Solution:
    """Minimize Trace(QX) + Trace(RY) over the H2 LMIs; K = Z X^-1"""
    w = w or H2Weights()
    start = time.perf_counter()
    T, R_proj = reduction_maps(sys.n)
    A_red = R_proj @ sys.A @ T
    B_red = R_proj @ sys.B
    Q, R = performance_weights(sys.n, w)

    result = sdp_feasible(h2_problem(A_red, B_red, Q, R))
    if result.status == SolverStatus.INFEASIBLE:
        raise InfeasibleError('h2_synth', 'h2_controller', 'H2 program is infeasible')
    if not result.feasible:
        raise NumericalFailureError('h2_synth', 'h2_controller', 'H2 solution failed verification')

    X, Y, Z = result.assignment['X'], result.assignment['Y'], result.assignment['Z']
    X = (X + X.T) / 2
    K_red = np.linalg.solve(X.T, Z.T).T
    check_hurwitz(A_red - B_red @ K_red, module='h2_synth', operation='h2_controller')

    controller = Controller(K=lift_gain(K_red, sys.n), provenance=Provenance.H2,
                            metadata={'gamma_s': w.gamma_s, 'gamma_v': w.gamma_v, 'gamma_u': w.gamma_u,
                                      'guidance': sys.guidance.value})

    log_analysis_operation(synth_logger, 'h2_synth', 'h2_controller', 'completed',
                           duration=time.perf_counter() - start, objective=result.objective_value,
                           gain_norm=float(np.linalg.norm(K_red)), solver=result.solver,
                           condition_number=float(np.linalg.cond(X)))

    return H2Solution(X=X, Y=Y, Z=Z, K_red=K_red, controller=controller,
                      objective_value=float(result.objective_value), solver=result.solver)


@cached(key_prefix='h2_')
def _h2_for(params: OvmParams, guidance: GuidanceKind, w: H2Weights) -> H2Solution:
    return solve_h2(build_system(params, guidance), w)


def h2_controller(sys: SystemMatrices, w: Optional[H2Weights] = None) -> H2Solution:
    """H2 solution for the system's parameters, memoized across sweeps and subcommands"""
    return _h2_for(sys.params, sys.guidance, w or H2Weights())


def scale_controller(c: Controller, k_mult: float) -> Controller:
    """Controller whose applied gain is k_mult times the given one"""
    if k_mult < 0:
        raise ValueError(f"k_mult must be >= 0, got {k_mult}")
    return c.with_scale(c.k_mult * k_mult)
