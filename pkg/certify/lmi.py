"""
Coarse Guidance Toolkit - Lyapunov-Krasovskii Certification
Sampled-data stability LMIs for a given gain, their H-infinity variant, and gain
synthesis through the congruence-transformed LMIs. Every operation takes reduced
matrices; the ring's structural zero mode makes the strict LMIs infeasible otherwise.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from certify.sdp_oracle import (Definiteness, LmiBlock, LmiProblem, SolverStatus, VariableKind,
                                VariableSpec, assemble_blocks, sdp_feasible)
from config.settings import settings
from schemas.params import Provenance
from traffic.ring_model import Controller, lift_gain
from utils.error_handling import (DimensionMismatchError, IllConditionedError, InfeasibleError,
                                  InvalidHoldLengthError, NumericalFailureError)
from utils.grid_search import GridSearchResult, bisect_grid, monotonicity_violations
from utils.logging_config import cert_logger, log_analysis_operation, log_with_context, synth_logger
from utils.validators import validate_same_shape, validate_square

CONDITION_LIMIT = 1e12
NUMERICAL_FAILURE_SHARE = 0.10
EPSILON_GRID = (0.1, 0.5, 1.0, 2.0, 5.0)


@dataclass
class LkCertificate:
    delta: float
    feasible: bool
    solver_status: SolverStatus
    P: Optional[np.ndarray] = None
    U: Optional[np.ndarray] = None
    P2: Optional[np.ndarray] = None
    P3: Optional[np.ndarray] = None
    block_extreme_eigs: Dict[str, float] = field(default_factory=dict)
    problem: Optional[LmiProblem] = field(default=None, repr=False, compare=False)

    @property
    def assignment(self) -> Dict[str, np.ndarray]:
        names = ('P', 'U', 'P2', 'P3')
        return {name: getattr(self, name) for name in names if getattr(self, name) is not None}


@dataclass
class HinfCertificate(LkCertificate):
    gamma: float = 0.0


@dataclass
class LkSynthesisResult:
    P_bar: np.ndarray
    U_bar: np.ndarray
    Q_syn: np.ndarray
    L_syn: np.ndarray
    epsilon: float
    delta_in: float
    K_red: np.ndarray
    controller: Controller
    condition_number: float
    cross_check: bool
    problem: Optional[LmiProblem] = field(default=None, repr=False, compare=False)


@dataclass
class LkHoldLimitResult:
    limit: float
    search: GridSearchResult
    numerical_failures: int
    trials: int


def _check_pair(A: np.ndarray, A1: np.ndarray, operation: str) -> None:
    for matrix, name in ((A, 'A_red'), (A1, 'A1_red')):
        ok, error = validate_square(np.asarray(matrix, dtype=float), name)
        if not ok:
            raise DimensionMismatchError('lmi_cert', operation, error)
    ok, error = validate_same_shape(np.asarray(A), np.asarray(A1), ('A_red', 'A1_red'))
    if not ok:
        raise DimensionMismatchError('lmi_cert', operation, error)


def _check_delta(delta: float, operation: str) -> None:
    if not delta > 0:
        raise InvalidHoldLengthError('lmi_cert', operation, f"hold length must be positive, got {delta}")


def _check_reaction_delay(Sigma: float, operation: str) -> None:
    if not Sigma >= 0:
        raise ValueError(f"{operation}: reaction delay must be nonnegative, got {Sigma}")


def _analysis_variables(m: int) -> List[VariableSpec]:
    return [
        VariableSpec('P', (m, m), VariableKind.SYMMETRIC_PD),
        VariableSpec('U', (m, m), VariableKind.SYMMETRIC_PD),
        VariableSpec('P2', (m, m)),
        VariableSpec('P3', (m, m)),
    ]


def lk_problem(A: np.ndarray, A1: np.ndarray, delta: float, B_d: Optional[np.ndarray] = None,
               gamma: Optional[float] = None, margin: Optional[float] = None) -> LmiProblem:
    """
    Sampled-data LMIs for x' = A x + A1 x(t_k); with B_d and gamma, the H-infinity form

    The H-infinity form shifts the (1,1) block by I and appends a disturbance column
    closed by -gamma^2 I.
    """
    A = np.asarray(A, dtype=float)
    A1 = np.asarray(A1, dtype=float)
    m = A.shape[0]
    A_cl = A + A1
    hinf = B_d is not None
    shift = np.eye(m) if hinf else np.zeros((m, m))

    def phi11(v):
        return v['P2'].T @ A_cl + A_cl.T @ v['P2'] + shift

    def cross(v):
        return v['P'] - v['P2'].T + A_cl.T @ v['P3']

    def first(v, bmat):
        rows = [[phi11(v), cross(v)],
                [cross(v).T, -v['P3'] - v['P3'].T + delta * v['U']]]
        if hinf:
            d1, d2 = v['P2'].T @ B_d, v['P3'].T @ B_d
            w = B_d.shape[1]
            rows = [rows[0] + [d1], rows[1] + [d2], [d1.T, d2.T, -gamma ** 2 * np.eye(w)]]
        return bmat(rows)

    def second(v, bmat):
        c13 = -delta * v['P2'].T @ A1
        c23 = -delta * v['P3'].T @ A1
        rows = [[phi11(v), cross(v), c13],
                [cross(v).T, -v['P3'] - v['P3'].T, c23],
                [c13.T, c23.T, -delta * v['U']]]
        if hinf:
            d1, d2 = v['P2'].T @ B_d, v['P3'].T @ B_d
            w = B_d.shape[1]
            rows = [rows[0] + [d1], rows[1] + [d2], rows[2] + [np.zeros((m, w))],
                    [d1.T, d2.T, np.zeros((w, m)), -gamma ** 2 * np.eye(w)]]
        return bmat(rows)

    label = f"{'hinf' if hinf else 'lk'}[delta={delta:g}{f', gamma={gamma:g}' if hinf else ''}]"
    return LmiProblem(
        variables=_analysis_variables(m),
        blocks=[LmiBlock('first', first), LmiBlock('second', second)],
        strictness_margin=settings.strictness_margin if margin is None else margin,
        label=label,
    )


def _certificate(cls, problem: LmiProblem, delta: float, **extra: Any):
    result = sdp_feasible(problem)
    values = result.assignment if result.feasible else {}
    return cls(delta=delta, feasible=result.feasible, solver_status=result.status,
               P=values.get('P'), U=values.get('U'), P2=values.get('P2'), P3=values.get('P3'),
               block_extreme_eigs=result.block_extreme_eigs, problem=problem, **extra)


def lk_feasible(A_red: np.ndarray, A1_red: np.ndarray, delta: float,
                margin: Optional[float] = None) -> LkCertificate:
    """Certify stability for every sampling interval up to delta"""
    _check_pair(A_red, A1_red, 'lk_feasible')
    _check_delta(delta, 'lk_feasible')
    return _certificate(LkCertificate, lk_problem(A_red, A1_red, delta, margin=margin), delta)


def lk_delay_feasible(A_red: np.ndarray, A1_red: np.ndarray, delta: float, Sigma: float,
                      margin: Optional[float] = None) -> LkCertificate:
    """
    Certify hold length delta when each instruction takes effect up to Sigma late

    A delayed instruction stretches the interval since the last sampled state to at most
    delta + Sigma, so the sampled-data functional is evaluated at that interval.
    The returned certificate's delta is the hold length, not the stretched interval.
    """
    _check_pair(A_red, A1_red, 'lk_delay_feasible')
    _check_delta(delta, 'lk_delay_feasible')
    _check_reaction_delay(Sigma, 'lk_delay_feasible')
    return _certificate(LkCertificate, lk_problem(A_red, A1_red, delta + Sigma, margin=margin), delta)


def lk_hinf_feasible(A_red: np.ndarray, A1_red: np.ndarray, B_d_red: np.ndarray, delta: float,
                     gamma: float, margin: Optional[float] = None) -> HinfCertificate:
    """Certify stability with disturbance attenuation level gamma"""
    _check_pair(A_red, A1_red, 'lk_hinf_feasible')
    _check_delta(delta, 'lk_hinf_feasible')
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    B_d_red = np.asarray(B_d_red, dtype=float)
    if B_d_red.shape[0] != np.asarray(A_red).shape[0]:
        raise DimensionMismatchError('lmi_cert', 'lk_hinf_feasible',
                                     f"B_d_red has {B_d_red.shape[0]} rows, expected {np.asarray(A_red).shape[0]}")
    problem = lk_problem(A_red, A1_red, delta, B_d=B_d_red, gamma=gamma, margin=margin)
    return _certificate(HinfCertificate, problem, delta, gamma=gamma)


def lk_hold_limit_search(A_red: np.ndarray, A1_red: np.ndarray, low: float = 0.0, high: float = 10.0,
                         granularity: float = 0.01, margin: Optional[float] = None,
                         Sigma: float = 0.0) -> LkHoldLimitResult:
    """
    Binary search for the largest certified hold length on the granularity grid

    With Sigma > 0 each hold length is certified under reaction delays up to Sigma.
    Solver failures count as infeasible trials; more than a tenth of them fails the run.
    """
    _check_pair(A_red, A1_red, 'lk_hold_limit')
    _check_reaction_delay(Sigma, 'lk_hold_limit')
    start = time.perf_counter()
    failures: List[float] = []

    def trial(delta: float) -> bool:
        try:
            return lk_feasible(A_red, A1_red, delta + Sigma, margin=margin).feasible
        except NumericalFailureError as e:
            failures.append(delta)
            log_with_context(cert_logger, logging.WARNING, "Trial treated as infeasible after solver failure",
                             delta=delta, error=str(e))
            return False

    search = bisect_grid(trial, low, high, granularity, cert_logger, label='lk_hold_limit')
    n_trials = len(search.trials)
    if failures and len(failures) > NUMERICAL_FAILURE_SHARE * n_trials:
        raise NumericalFailureError('lmi_cert', 'lk_hold_limit',
                                    f"{len(failures)} of {n_trials} trials failed numerically")

    log_analysis_operation(cert_logger, 'lmi_cert', 'lk_hold_limit', 'completed',
                           duration=time.perf_counter() - start, limit=search.limit,
                           Sigma=Sigma, trials=n_trials, numerical_failures=len(failures))
    return LkHoldLimitResult(limit=search.limit, search=search, numerical_failures=len(failures),
                             trials=n_trials)


def lk_hold_limit(A_red: np.ndarray, A1_red: np.ndarray, low: float = 0.0, high: float = 10.0,
                  granularity: float = 0.01, margin: Optional[float] = None,
                  Sigma: float = 0.0) -> float:
    return lk_hold_limit_search(A_red, A1_red, low, high, granularity, margin, Sigma).limit


def feasibility_profile(A_red: np.ndarray, A1_red: np.ndarray, deltas: Sequence[float],
                        margin: Optional[float] = None) -> List[Dict[str, Any]]:
    """lk_feasible over a list of hold lengths, with a downward-closure check"""
    rows = []
    for delta in deltas:
        try:
            cert = lk_feasible(A_red, A1_red, delta, margin=margin)
            rows.append({'delta': delta, 'feasible': cert.feasible, 'status': cert.solver_status.value})
        except NumericalFailureError:
            rows.append({'delta': delta, 'feasible': False, 'status': 'numerical_failure'})

    violations = monotonicity_violations({row['delta']: row['feasible'] for row in rows})
    if violations:
        log_with_context(cert_logger, logging.WARNING, "Feasibility is not downward closed",
                         violations=violations)
    return rows


def synthesis_problem(A: np.ndarray, B: np.ndarray, delta: float, epsilon: float = 1.0,
                      margin: Optional[float] = None) -> LmiProblem:
    """Congruence-transformed LMIs in (P_bar, U_bar, Q, L) with P2 = Q^-1, P3 = epsilon P2"""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    m = A.shape[0]

    def corner(v):
        AQ = A @ v['Q']
        BL = B @ v['L']
        return AQ + AQ.T - BL - BL.T

    def cross(v):
        return v['P_bar'] - v['Q'] + epsilon * (v['Q'].T @ A.T - v['L'].T @ B.T)

    def first(v, bmat):
        return bmat([[corner(v), cross(v)],
                     [cross(v).T, -epsilon * (v['Q'] + v['Q'].T) + delta * v['U_bar']]])

    def second(v, bmat):
        c13 = delta * B @ v['L']
        c23 = delta * epsilon * B @ v['L']
        return bmat([[corner(v), cross(v), c13],
                     [cross(v).T, -epsilon * (v['Q'] + v['Q'].T), c23],
                     [c13.T, c23.T, -delta * v['U_bar']]])

    return LmiProblem(
        variables=[
            VariableSpec('P_bar', (m, m), VariableKind.SYMMETRIC_PD),
            VariableSpec('U_bar', (m, m), VariableKind.SYMMETRIC_PD),
            VariableSpec('Q', (m, m)),
            VariableSpec('L', (1, m)),
        ],
        blocks=[LmiBlock('first', first), LmiBlock('second', second)],
        strictness_margin=settings.strictness_margin if margin is None else margin,
        label=f"lk_synthesis[delta={delta:g}, epsilon={epsilon:g}]",
    )


def lk_synthesize(A_red: np.ndarray, B_red: np.ndarray, delta_in: float, epsilon: float = 1.0,
                  margin: Optional[float] = None) -> LkSynthesisResult:
    """
    Gain that certifiably tolerates holds up to delta_in, K_red = L Q^-1

    The reduced gain is lifted to the full state with a zero s1 entry.
    """
    _check_delta(delta_in, 'lk_synthesize')
    A_red = np.asarray(A_red, dtype=float)
    B_red = np.asarray(B_red, dtype=float)
    m = A_red.shape[0]
    if B_red.shape != (m, 1):
        raise DimensionMismatchError('lmi_cert', 'lk_synthesize', f"B_red must have shape ({m}, 1), got {B_red.shape}")

    start = time.perf_counter()
    problem = synthesis_problem(A_red, B_red, delta_in, epsilon, margin)
    result = sdp_feasible(problem)
    if result.status == SolverStatus.INFEASIBLE:
        raise InfeasibleError('lmi_cert', 'lk_synthesize', f"no stabilizing gain for delta_in={delta_in}")
    if not result.feasible:
        raise NumericalFailureError('lmi_cert', 'lk_synthesize',
                                    f"synthesis solution failed verification at delta_in={delta_in}")

    Q_syn = result.assignment['Q']
    L_syn = result.assignment['L']
    condition_number = float(np.linalg.cond(Q_syn))
    log_with_context(synth_logger, logging.INFO, "Synthesized Q condition number",
                     delta_in=delta_in, epsilon=epsilon, condition_number=condition_number)
    if not np.isfinite(condition_number) or condition_number > CONDITION_LIMIT:
        raise IllConditionedError('lmi_cert', 'lk_synthesize', f"cond(Q) = {condition_number:.3e}")

    K_red = np.linalg.solve(Q_syn.T, L_syn.T).T
    n = (m + 1) // 2
    controller = Controller(K=lift_gain(K_red, n), provenance=Provenance.LK_SYNTHESIZED,
                            metadata={'delta_in': delta_in, 'epsilon': epsilon})

    cross_check = lk_feasible(A_red, -B_red @ K_red, delta_in, margin=margin).feasible
    if not cross_check:
        log_with_context(synth_logger, logging.WARNING, "Synthesized gain failed the analysis LMIs",
                         delta_in=delta_in, epsilon=epsilon)

    log_analysis_operation(synth_logger, 'lmi_cert', 'lk_synthesize', 'completed',
                           duration=time.perf_counter() - start, delta_in=delta_in, epsilon=epsilon,
                           gain_norm=float(np.linalg.norm(K_red)), cross_check=cross_check)

    return LkSynthesisResult(P_bar=result.assignment['P_bar'], U_bar=result.assignment['U_bar'],
                             Q_syn=Q_syn, L_syn=L_syn, epsilon=epsilon, delta_in=delta_in,
                             K_red=K_red, controller=controller, condition_number=condition_number,
                             cross_check=cross_check, problem=problem)


def synthesis_duality_residual(A_red: np.ndarray, B_red: np.ndarray, syn: LkSynthesisResult) -> float:
    """
    Relative mismatch between the analysis blocks rebuilt from a synthesis solution
    (after the diag(Q) congruence) and the synthesis blocks themselves
    """
    P2 = np.linalg.inv(syn.Q_syn)
    analysis = lk_problem(A_red, -np.asarray(B_red) @ syn.K_red, syn.delta_in)
    rebuilt = assemble_blocks(analysis, {
        'P': P2.T @ syn.P_bar @ P2,
        'U': P2.T @ syn.U_bar @ P2,
        'P2': P2,
        'P3': syn.epsilon * P2,
    })
    direct = assemble_blocks(synthesis_problem(A_red, B_red, syn.delta_in, syn.epsilon),
                             {'P_bar': syn.P_bar, 'U_bar': syn.U_bar, 'Q': syn.Q_syn, 'L': syn.L_syn})

    worst = 0.0
    for name, block in rebuilt.items():
        k = block.shape[0] // syn.Q_syn.shape[0]
        D = scipy.linalg.block_diag(*([syn.Q_syn] * k))
        transformed = D.T @ block @ D
        worst = max(worst, np.linalg.norm(transformed - direct[name]) / max(1.0, np.linalg.norm(direct[name])))
    return float(worst)


def epsilon_grid_synthesis(A_red: np.ndarray, B_red: np.ndarray, delta_in: float,
                           epsilons: Sequence[float] = EPSILON_GRID) -> List[Tuple[float, Optional[LkSynthesisResult], Optional[str]]]:
    """Synthesis at each epsilon; failures are returned in place of a result"""
    out = []
    for epsilon in epsilons:
        try:
            out.append((epsilon, lk_synthesize(A_red, B_red, delta_in, epsilon), None))
        except (InfeasibleError, IllConditionedError, NumericalFailureError) as e:
            log_with_context(synth_logger, logging.INFO, "Synthesis failed on epsilon grid",
                             epsilon=epsilon, delta_in=delta_in, error=type(e).__name__)
            out.append((epsilon, None, f"{type(e).__name__}: {e.message}"))
    return out
