"""
Coarse Guidance Toolkit - Parameter Schemas
Pydantic schemas for validating system, control, simulation and analysis parameters.
"""

from enum import Enum
from typing import Any, Dict, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class GuidanceKind(str, Enum):
    """How the held guidance enters the guided vehicle's dynamics"""
    ACCELERATION = "acceleration"
    VELOCITY = "velocity"


class PlantMode(str, Enum):
    """Plant integrated by the simulator"""
    LINEARIZED = "linearized"
    NONLINEAR = "nonlinear"


class DisturbanceKind(str, Enum):
    """Human-error model on the actuation side"""
    NONE = "none"
    NONVANISHING = "nonvanishing"
    VANISHING = "vanishing"
    REACTION_DELAY = "reaction_delay"


class DelayRealization(str, Enum):
    """How the per-period reaction delay is drawn"""
    WORST_CASE = "worst_case"
    UNIFORM = "uniform"


class Provenance(str, Enum):
    """Where a feedback gain came from"""
    H2 = "h2"
    LK_SYNTHESIZED = "lk_synthesized"
    MANUAL = "manual"


class SweepParameter(str, Enum):
    """Parameters that a sensitivity sweep may vary"""
    L = "L"
    N = "n"
    S_ST = "s_st"
    S_GO = "s_go"
    V_MAX = "v_max"
    ALPHA = "alpha"
    BETA = "beta"
    K_MULT = "k_mult"
    GAMMA_S = "gamma_s"
    GAMMA_V = "gamma_v"

    @property
    def is_system_parameter(self) -> bool:
        return self in SYSTEM_PARAMETERS

    @property
    def is_weight(self) -> bool:
        return self in (SweepParameter.GAMMA_S, SweepParameter.GAMMA_V)


SYSTEM_PARAMETERS = (
    SweepParameter.L, SweepParameter.N, SweepParameter.S_ST, SweepParameter.S_GO,
    SweepParameter.V_MAX, SweepParameter.ALPHA, SweepParameter.BETA,
)


class HumanErrorKind(str, Enum):
    """Human-error experiment families"""
    NONVANISHING_BOUND = "nonvanishing_bound"
    VANISHING_HOLD_LIMIT = "vanishing_hold_limit"
    DELAY_HOLD_LIMIT = "delay_hold_limit"


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid', use_enum_values=False)


class OvmParams(_Frozen):
    """Ring road and Optimal Velocity Model driver parameters"""
    L: float = Field(default=400.0, gt=0, description="Ring length (m)")
    n: int = Field(default=20, ge=2, description="Vehicle count")
    s_st: float = Field(default=5.0, gt=0, description="Stop spacing threshold (m)")
    s_go: float = Field(default=35.0, gt=0, description="Free-flow spacing threshold (m)")
    v_max: float = Field(default=30.0, gt=0, description="Maximum speed (m/s)")
    alpha: float = Field(default=0.6, gt=0, description="Headway sensitivity (1/s)")
    beta: float = Field(default=0.9, gt=0, description="Relative-speed sensitivity (1/s)")

    @model_validator(mode='after')
    def validate_thresholds(self):
        if not self.s_st < self.s_go:
            raise ValueError(f's_st ({self.s_st}) must be smaller than s_go ({self.s_go})')
        return self


class H2Weights(_Frozen):
    """Diagonal weights of the H2 performance output"""
    gamma_s: float = Field(default=0.03, gt=0)
    gamma_v: float = Field(default=0.15, gt=0)
    gamma_u: float = Field(default=1.0, gt=0)


class SimConfig(_Frozen):
    """Forward-Euler Monte-Carlo simulation settings"""
    t_step: float = Field(default=0.01, gt=0, description="Integration step (s)")
    total_time: float = Field(default=300.0, gt=0, description="Horizon (s)")
    n_seeds: int = Field(default=50, ge=1)
    perturb_s: float = Field(default=7.5, ge=0, description="Half-width of the spacing perturbation (m)")
    perturb_v: float = Field(default=4.5, ge=0, description="Half-width of the velocity perturbation (m/s)")
    a_min: float = Field(default=-5.0, lt=0, description="Maximum deceleration (m/s^2)")
    a_max: Optional[float] = Field(default=2.0, gt=0, description="Acceleration cap (m/s^2); None disables")
    s_d: float = Field(default=0.5, ge=0, description="AEB safe distance (m)")
    aeb_enabled: bool = True
    convergence_eps: float = Field(default=1.0, gt=0)
    rng_seed: int = Field(default=0, ge=0)
    record_stride: int = Field(default=1, ge=1, description="Keep every k-th step in recorded trajectories")
    redraw_bernoulli: bool = Field(default=False, description="Redraw the error mask every step")
    divergence_norm: float = Field(default=1e6, gt=0, description="Error norm treated as divergence")

    @model_validator(mode='after')
    def validate_horizon(self):
        if self.total_time < self.t_step:
            raise ValueError('total_time must be at least t_step')
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.total_time / self.t_step))


class DisturbanceModel(_Frozen):
    """Actuation-side human-error model"""
    kind: DisturbanceKind = DisturbanceKind.NONE
    d_nv: float = Field(default=0.0, ge=0, description="Nonvanishing error magnitude (m/s^2)")
    d_v: float = Field(default=0.0, ge=0, description="Vanishing error gain (1/s^2 per unit norm)")
    Sigma: float = Field(default=0.0, ge=0, description="Maximum reaction delay (s)")
    bernoulli_p: float = Field(default=0.5, ge=0, le=1)
    delay_realization: DelayRealization = DelayRealization.WORST_CASE

    @classmethod
    def nonvanishing(cls, d_nv: float, **kwargs: Any) -> "DisturbanceModel":
        return cls(kind=DisturbanceKind.NONVANISHING, d_nv=d_nv, **kwargs)

    @classmethod
    def vanishing(cls, d_v: float, **kwargs: Any) -> "DisturbanceModel":
        return cls(kind=DisturbanceKind.VANISHING, d_v=d_v, **kwargs)

    @classmethod
    def reaction_delay(cls, Sigma: float, **kwargs: Any) -> "DisturbanceModel":
        return cls(kind=DisturbanceKind.REACTION_DELAY, Sigma=Sigma, **kwargs)


class AnalysisConfig(_Frozen):
    """Constants and search grids for the certification analyses"""
    c_prime: float = Field(default=1.0, gt=0)
    q_scale: float = Field(default=1.0, gt=0, description="Q = q_scale * I in the Lyapunov equation")
    d_margin: float = Field(default=2.0, gt=1)
    c_dprime: float = Field(default=1.0, ge=0)
    D_v_bar: Optional[float] = Field(default=None, ge=0, description="None means estimate from a pilot run")
    lk_range: Tuple[float, float] = (0.0, 10.0)
    lk_granularity: float = Field(default=0.01, gt=0)
    sim_range: Tuple[float, float] = (0.0, 10.0)
    sim_granularity: float = Field(default=0.01, gt=0)
    epsilon: float = Field(default=1.0, gt=0)
    strictness_margin: float = Field(default=1e-7, gt=0)

    @field_validator('lk_range', 'sim_range')
    @classmethod
    def validate_range(cls, v):
        low, high = v
        if low < 0 or high <= low:
            raise ValueError(f'range must satisfy 0 <= low < high, got {v}')
        return v


class RunConfig(_Frozen):
    """Fully resolved configuration of one toolkit run"""
    ovm: OvmParams = Field(default_factory=OvmParams)
    weights: H2Weights = Field(default_factory=H2Weights)
    k_mult: float = Field(default=1.0, ge=0)
    sim: SimConfig = Field(default_factory=SimConfig)
    guidance: GuidanceKind = GuidanceKind.ACCELERATION
    plant: PlantMode = PlantMode.NONLINEAR
    disturbance: DisturbanceModel = Field(default_factory=DisturbanceModel)
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)
    overrides: Dict[str, str] = Field(default_factory=dict)

    def with_updates(self, **section_updates: Dict[str, Any]) -> "RunConfig":
        """Copy with validated per-section field updates, e.g. ovm={'beta': 2.0}"""
        data = self.model_dump()
        for section, values in section_updates.items():
            if isinstance(values, dict):
                data[section] = {**data[section], **values}
            else:
                data[section] = values
        return RunConfig.model_validate(data)
