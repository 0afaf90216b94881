"""
Coarse Guidance Toolkit - Lyapunov Hold-Length Bounds
Closed-form hold-length certificate from the continuous Lyapunov equation of the
reduced closed loop, plus its human-error extensions.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, NamedTuple, Optional

import numpy as np
import scipy.linalg

from traffic.ring_model import Controller, SystemMatrices, reduce
from utils.error_handling import (DimensionMismatchError, NotHurwitzError, NumericalFailureError,
                                  SingularSystemError)
from utils.logging_config import cert_logger, log_with_context
from utils.validators import validate_same_shape, validate_square

HURWITZ_TOL = 1e-9
RESIDUAL_TOL = 1e-8
KRONECKER_COND_LIMIT = 1e12


class BoundFlag(str, Enum):
    OK = "ok"
    DISTURBANCE_TOO_LARGE = "disturbance_too_large"
    FLOORED = "floored"


class FlooredBound(NamedTuple):
    value: float
    flag: BoundFlag


@dataclass(frozen=True)
class LyapunovCertificate:
    P: np.ndarray
    Q: np.ndarray
    sigma_min_Q: float
    sigma_max_P: float
    sigma_max_A: float
    sigma_max_A1: float
    sigma_max_Acl: float
    delta_bound: float
    residual: float
    c_prime: float = 1.0
    d_margin: float = 2.0

    @property
    def denominator(self) -> float:
        return self.sigma_max_P * (self.sigma_max_A + self.sigma_max_A1) ** 2

    def components(self) -> Dict[str, float]:
        """Scalar breakdown of the bound, one column per factor"""
        return {
            'delta_bound': self.delta_bound,
            'sigma_min_Q': self.sigma_min_Q,
            'sigma_max_P': self.sigma_max_P,
            'sigma_max_A': self.sigma_max_A,
            'sigma_max_A1': self.sigma_max_A1,
            'sigma_max_Acl': self.sigma_max_Acl,
            'c_prime': self.c_prime,
            'd_margin': self.d_margin,
            'residual': self.residual,
        }


@dataclass(frozen=True)
class HumanErrorBounds:
    d_nv: float
    d_v: float
    Sigma: float
    D_v_bar: float
    c_dprime: float
    ultimate_radius: float
    delta_vanishing: float
    delta_delay: float
    vanishing_flag: BoundFlag = BoundFlag.OK
    delay_flag: BoundFlag = BoundFlag.OK


def max_singular_value(M: np.ndarray) -> float:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    return float(scipy.linalg.svdvals(M)[0])


def min_singular_value(M: np.ndarray) -> float:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    return float(scipy.linalg.svdvals(M)[-1])


def check_hurwitz(A: np.ndarray, module: str = 'lyap_cert', operation: str = 'check_hurwitz',
                  tol: float = HURWITZ_TOL) -> np.ndarray:
    """Eigenvalues of A; raises NotHurwitzError unless every real part is below -tol"""
    eigenvalues = np.linalg.eigvals(A)
    if eigenvalues.size and eigenvalues.real.max() >= -tol:
        raise NotHurwitzError(module, operation, eigenvalues, tol=tol)
    return eigenvalues


def _kronecker_solve(A_cl: np.ndarray, Q: np.ndarray) -> np.ndarray:
    m = A_cl.shape[0]
    identity = np.eye(m)
    # row-major vec: vec(A P) = (A kron I) vec(P), vec(P A^T) = (I kron A) vec(P)
    operator = np.kron(A_cl, identity) + np.kron(identity, A_cl)
    cond = np.linalg.cond(operator)
    if not np.isfinite(cond) or cond > KRONECKER_COND_LIMIT:
        raise SingularSystemError('lyap_cert', 'solve_continuous_lyapunov',
                                  f"Kronecker operator is numerically singular (cond={cond:.3e})")
    return np.linalg.solve(operator, -Q.reshape(-1)).reshape(m, m)


def solve_continuous_lyapunov(A_cl: np.ndarray, Q: np.ndarray, method: str = 'schur') -> np.ndarray:
    """
    Solve A_cl P + P A_cl^T = -Q for symmetric P

    Args:
        A_cl: Hurwitz closed-loop matrix
        Q: Symmetric positive definite right-hand side
        method: 'schur' (Bartels-Stewart through scipy) or 'kronecker'

    Returns:
        Symmetric positive definite P
    """
    A_cl = np.asarray(A_cl, dtype=float)
    Q = np.asarray(Q, dtype=float)
    for matrix, name in ((A_cl, 'A_cl'), (Q, 'Q')):
        ok, error = validate_square(matrix, name)
        if not ok:
            raise DimensionMismatchError('lyap_cert', 'solve_continuous_lyapunov', error)
    ok, error = validate_same_shape(A_cl, Q, ('A_cl', 'Q'))
    if not ok:
        raise DimensionMismatchError('lyap_cert', 'solve_continuous_lyapunov', error)

    check_hurwitz(A_cl, operation='solve_continuous_lyapunov')

    if method == 'kronecker':
        P = _kronecker_solve(A_cl, Q)
    elif method == 'schur':
        P = scipy.linalg.solve_continuous_lyapunov(A_cl, -Q)
    else:
        raise ValueError(f"unknown Lyapunov method: {method}")

    P = (P + P.T) / 2
    residual = float(np.linalg.norm(A_cl @ P + P @ A_cl.T + Q, 'fro'))
    if residual > RESIDUAL_TOL * np.linalg.norm(Q, 'fro'):
        raise NumericalFailureError('lyap_cert', 'solve_continuous_lyapunov',
                                    f"residual {residual:.3e} exceeds tolerance")

    min_eig = float(np.linalg.eigvalsh(P).min())
    if min_eig <= 0:
        raise NumericalFailureError('lyap_cert', 'solve_continuous_lyapunov',
                                    f"solution is not positive definite (min eigenvalue {min_eig:.3e})")
    return P


def lyapunov_hold_bound(sys: SystemMatrices, c: Controller, Q: Optional[np.ndarray] = None,
                        c_prime: float = 1.0, q_scale: float = 1.0, d_margin: float = 2.0,
                        method: str = 'schur') -> LyapunovCertificate:
    """
    Hold length below which the sampled closed loop is certified stable

    delta = c' sigma_min(Q) / (sigma_max(P) (sigma_max(A) + sigma_max(A1))^2), evaluated on
    the reduced matrices.
    """
    red = reduce(sys, c)
    A_cl = red.closed_loop
    if Q is None:
        Q = q_scale * np.eye(red.dim)
    P = solve_continuous_lyapunov(A_cl, Q, method=method)

    sigma_min_Q = min_singular_value(Q)
    sigma_max_P = max_singular_value(P)
    sigma_max_A = max_singular_value(red.A_red)
    sigma_max_A1 = max_singular_value(red.A1_red)
    sigma_max_Acl = max_singular_value(A_cl)

    if sigma_max_Acl > sigma_max_A + sigma_max_A1 + 1e-9 * max(1.0, sigma_max_Acl):
        log_with_context(cert_logger, logging.WARNING, "Triangle inequality violated by singular values",
                         sigma_max_Acl=sigma_max_Acl, sigma_max_A=sigma_max_A, sigma_max_A1=sigma_max_A1)

    delta_bound = c_prime * sigma_min_Q / (sigma_max_P * (sigma_max_A + sigma_max_A1) ** 2)
    residual = float(np.linalg.norm(A_cl @ P + P @ A_cl.T + Q, 'fro'))

    log_with_context(cert_logger, logging.INFO, "Lyapunov hold bound",
                     delta_bound=delta_bound, sigma_max_P=sigma_max_P, sigma_max_A=sigma_max_A,
                     sigma_max_A1=sigma_max_A1, provenance=c.provenance.value, k_mult=c.k_mult)

    return LyapunovCertificate(P=P, Q=np.asarray(Q, dtype=float), sigma_min_Q=sigma_min_Q,
                               sigma_max_P=sigma_max_P, sigma_max_A=sigma_max_A,
                               sigma_max_A1=sigma_max_A1, sigma_max_Acl=sigma_max_Acl,
                               delta_bound=float(delta_bound), residual=residual,
                               c_prime=c_prime, d_margin=d_margin)


def _disturbance_coupling(cert: LyapunovCertificate, B_d: np.ndarray, operation: str) -> float:
    B_d = np.asarray(B_d, dtype=float)
    if B_d.shape != cert.P.shape:
        raise DimensionMismatchError('lyap_cert', operation,
                                     f"B_d {B_d.shape} must match P {cert.P.shape}; pass the reduced B_d")
    return max_singular_value(B_d @ cert.P + cert.P @ B_d.T)


def nonvanishing_ultimate_bound(cert: LyapunovCertificate, B_d: np.ndarray, d_nv: float,
                                d_margin: Optional[float] = None) -> float:
    """Radius of the region a bounded nonvanishing error keeps the state in"""
    d = cert.d_margin if d_margin is None else d_margin
    coupling = _disturbance_coupling(cert, B_d, 'nonvanishing_ultimate_bound')
    return float(10.0 * coupling * d_nv / (cert.sigma_min_Q / d))


def vanishing_hold_bound(cert: LyapunovCertificate, B_d: np.ndarray, d_v: float) -> FlooredBound:
    coupling = _disturbance_coupling(cert, B_d, 'vanishing_hold_bound')
    numerator = cert.sigma_min_Q - 5.0 * coupling * d_v
    if numerator < 0:
        log_with_context(cert_logger, logging.WARNING, "Vanishing error too large for a positive bound",
                         d_v=d_v, sigma_min_Q=cert.sigma_min_Q, coupling=coupling)
        return FlooredBound(0.0, BoundFlag.DISTURBANCE_TOO_LARGE)
    return FlooredBound(float(cert.c_prime * numerator / cert.denominator), BoundFlag.OK)


def reaction_delay_bound(cert: LyapunovCertificate, Sigma: float, D_v_bar: float,
                         c_dprime: float = 1.0) -> FlooredBound:
    value = cert.delta_bound - c_dprime * D_v_bar * Sigma
    if value < 0:
        return FlooredBound(0.0, BoundFlag.FLOORED)
    return FlooredBound(float(value), BoundFlag.OK)


def human_error_bounds(cert: LyapunovCertificate, B_d: np.ndarray, d_nv: float = 0.0, d_v: float = 0.0,
                       Sigma: float = 0.0, D_v_bar: float = 0.0, c_dprime: float = 1.0) -> HumanErrorBounds:
    """All three human-error predictions for one certificate"""
    vanishing = vanishing_hold_bound(cert, B_d, d_v)
    delay = reaction_delay_bound(cert, Sigma, D_v_bar, c_dprime)
    return HumanErrorBounds(
        d_nv=d_nv, d_v=d_v, Sigma=Sigma, D_v_bar=D_v_bar, c_dprime=c_dprime,
        ultimate_radius=nonvanishing_ultimate_bound(cert, B_d, d_nv),
        delta_vanishing=vanishing.value,
        delta_delay=delay.value,
        vanishing_flag=vanishing.flag,
        delay_flag=delay.flag,
    )
