"""
Coarse Guidance Toolkit - Ring Road Model
Optimal Velocity Model dynamics, their linearization around uniform flow, and the
sample-data system matrices of the ring with one guided vehicle.

State layout of the full error state is [s1, v1, s2, v2, ..., sn, vn]; vehicle 1 is the
guided vehicle and its predecessor is vehicle n.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Union

import numpy as np

from schemas.params import GuidanceKind, OvmParams, Provenance
from utils.error_handling import DimensionMismatchError
from utils.logging_config import log_with_context, model_logger
from utils.validators import validate_gain_row

ArrayLike = Union[float, np.ndarray]


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Equilibrium:
    """Uniform flow equilibrium and linearization coefficients"""
    s_star: float
    v_star: float
    a1: float
    a2: float
    a3: float


@dataclass(frozen=True)
class SystemMatrices:
    """Linearized error dynamics x' = A x + B u + B_d d"""
    A: np.ndarray
    B: np.ndarray
    B_d: np.ndarray
    guidance: GuidanceKind
    params: OvmParams
    equilibrium: Equilibrium

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def dim(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class Controller:
    """Full-state feedback gain; the applied guidance is u = -k_mult * K x(t_k)"""
    K: np.ndarray
    k_mult: float = 1.0
    provenance: Provenance = Provenance.MANUAL
    metadata: Dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        object.__setattr__(self, 'K', _frozen(K))
        if self.k_mult < 0:
            raise ValueError(f"k_mult must be >= 0, got {self.k_mult}")

    @classmethod
    def zero(cls, n: int) -> "Controller":
        return cls(K=np.zeros((1, 2 * n)), provenance=Provenance.MANUAL)

    @property
    def dim(self) -> int:
        return self.K.shape[1]

    @property
    def effective_gain(self) -> np.ndarray:
        return self.k_mult * self.K

    def with_scale(self, k_mult: float) -> "Controller":
        return replace(self, k_mult=k_mult)


@dataclass(frozen=True)
class ReducedSystem:
    """Dynamics with s1 eliminated through the ring constraint s1 = -(s2 + ... + sn)"""
    A_red: np.ndarray
    B_red: np.ndarray
    K_red: np.ndarray
    B_d_red: np.ndarray
    embedding: np.ndarray
    projection: np.ndarray

    @property
    def dim(self) -> int:
        return self.A_red.shape[0]

    @property
    def A1_red(self) -> np.ndarray:
        return -self.B_red @ self.K_red

    @property
    def closed_loop(self) -> np.ndarray:
        return self.A_red + self.A1_red


def optimal_velocity(s: ArrayLike, p: OvmParams) -> ArrayLike:
    """Desired speed for spacing s (cosine profile clamped to [0, v_max])"""
    s_arr = np.asarray(s, dtype=float)
    ratio = np.clip((s_arr - p.s_st) / (p.s_go - p.s_st), 0.0, 1.0)
    v = 0.5 * p.v_max * (1.0 - np.cos(np.pi * ratio))
    return float(v) if v.ndim == 0 else v


def optimal_velocity_slope(s: ArrayLike, p: OvmParams) -> ArrayLike:
    """Derivative of optimal_velocity; 0 on the flat parts and at the thresholds"""
    s_arr = np.asarray(s, dtype=float)
    width = p.s_go - p.s_st
    inside = (s_arr > p.s_st) & (s_arr < p.s_go)
    slope = 0.5 * p.v_max * (np.pi / width) * np.sin(np.pi * (s_arr - p.s_st) / width)
    slope = np.where(inside, slope, 0.0)
    return float(slope) if slope.ndim == 0 else slope


def equilibrium(p: OvmParams) -> Equilibrium:
    """Uniform flow point s* = L/n, v* = V(s*) and the linearization coefficients"""
    s_star = p.L / p.n
    return Equilibrium(
        s_star=s_star,
        v_star=optimal_velocity(s_star, p),
        a1=p.alpha * optimal_velocity_slope(s_star, p),
        a2=p.alpha + p.beta,
        a3=p.beta,
    )


def _guided_blocks(eq: Equilibrium, p: OvmParams, guidance: GuidanceKind):
    if guidance == GuidanceKind.ACCELERATION:
        C1 = np.array([[0.0, -1.0], [0.0, 0.0]])
        C2 = np.array([[0.0, 1.0], [0.0, 0.0]])
        B1 = np.array([0.0, 1.0])
    else:
        # velocity guidance keeps the driver terms but replaces the a1 spacing feedback
        C1 = np.array([[0.0, -1.0], [0.0, -eq.a2]])
        C2 = np.array([[0.0, 1.0], [0.0, eq.a3]])
        B1 = np.array([0.0, p.alpha])
    return C1, C2, B1


def build_system(p: OvmParams, guidance: GuidanceKind = GuidanceKind.ACCELERATION) -> SystemMatrices:
    """
    Assemble A, B and B_d of the linearized ring

    Block row 1 holds C1 (own block) and C2 (block n, the predecessor); block rows
    2..n hold D2 at the predecessor block and D1 on the diagonal.
    """
    eq = equilibrium(p)
    n = p.n
    dim = 2 * n

    D1 = np.array([[0.0, -1.0], [eq.a1, -eq.a2]])
    D2 = np.array([[0.0, 1.0], [0.0, eq.a3]])
    C1, C2, B1 = _guided_blocks(eq, p, guidance)

    A = np.zeros((dim, dim))
    A[0:2, 0:2] = C1
    A[0:2, dim - 2:dim] += C2
    for i in range(1, n):
        A[2 * i:2 * i + 2, 2 * (i - 1):2 * i] = D2
        A[2 * i:2 * i + 2, 2 * i:2 * i + 2] = D1

    B = np.zeros((dim, 1))
    B[0:2, 0] = B1

    B_d = np.diag(np.tile([0.0, 1.0], n))

    log_with_context(model_logger, logging.DEBUG, "Built ring system",
                     n=n, guidance=guidance.value, s_star=eq.s_star, v_star=eq.v_star, a1=eq.a1)

    return SystemMatrices(A=_frozen(A), B=_frozen(B), B_d=_frozen(B_d),
                          guidance=guidance, params=p, equilibrium=eq)


def _check_gain(sys: SystemMatrices, c: Controller, operation: str) -> None:
    ok, error = validate_gain_row(c.K, sys.dim)
    if not ok:
        raise DimensionMismatchError('ring_model', operation, error)


def closed_loop(sys: SystemMatrices, c: Controller) -> np.ndarray:
    """A + A1 with A1 = -B (k_mult K)"""
    _check_gain(sys, c, 'closed_loop')
    return sys.A - sys.B @ c.effective_gain


def injection_matrix(sys: SystemMatrices, c: Controller) -> np.ndarray:
    """A1 = -B (k_mult K)"""
    _check_gain(sys, c, 'injection_matrix')
    return -sys.B @ c.effective_gain


def reduction_maps(n: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Embedding T (2n x 2n-1) and projection R (2n-1 x 2n)

    R drops s1; T rebuilds the full state with s1 = -(s2 + ... + sn).
    """
    dim = 2 * n
    T = np.zeros((dim, dim - 1))
    for j in range(1, dim):
        T[j, j - 1] = 1.0
    # reduced indices of s2..sn are 1, 3, ..., 2n-3
    T[0, 1:dim - 1:2] = -1.0
    R = np.eye(dim)[1:, :]
    return T, R


def reduce(sys: SystemMatrices, c: Controller) -> ReducedSystem:
    """Eliminate s1 from the dynamics and the (scaled) gain"""
    _check_gain(sys, c, 'reduce')
    T, R = reduction_maps(sys.n)
    return ReducedSystem(
        A_red=_frozen(R @ sys.A @ T),
        B_red=_frozen(R @ sys.B),
        K_red=_frozen(c.effective_gain @ T),
        B_d_red=_frozen(R @ sys.B_d @ T),
        embedding=_frozen(T),
        projection=_frozen(R),
    )


def lift_gain(K_red: np.ndarray, n: int) -> np.ndarray:
    """
    Full-state gain that agrees with K_red on the ring manifold

    The s1 entry is set to 0 so that K x = K_red x_red whenever sum(s) = 0.
    """
    K_red = np.atleast_2d(np.asarray(K_red, dtype=float))
    if K_red.shape != (1, 2 * n - 1):
        raise DimensionMismatchError('ring_model', 'lift_gain',
                                     f"reduced gain must have shape (1, {2 * n - 1}), got {K_red.shape}")
    _, R = reduction_maps(n)
    return K_red @ R


def string_stability_margin(p: OvmParams) -> float:
    """alpha + 2 beta - 2 V'(L/n); non-negative means the uncontrolled ring is stable"""
    return p.alpha + 2.0 * p.beta - 2.0 * optimal_velocity_slope(p.L / p.n, p)
