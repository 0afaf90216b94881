"""
Coarse Guidance Toolkit - Hold-Limit Orchestration
Empirical hold-limit search and the experiment sweeps built on it: single-parameter
sensitivity, joint scenarios, and human-error families. Each sweep row carries the
simulated limit next to both certified estimates and the uncontrolled stability margin.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from certify.lmi import lk_hold_limit
from certify.lyapunov import (lyapunov_hold_bound, nonvanishing_ultimate_bound,
                              reaction_delay_bound, vanishing_hold_bound)
from config.settings import settings
from schemas.params import (DisturbanceModel, HumanErrorKind, PlantMode, RunConfig,
                            SimConfig, SweepParameter)
from synthesis.h2 import h2_controller, scale_controller
from traffic.ring_model import Controller, SystemMatrices, build_system, reduce, string_stability_margin
from traffic.simulator import (StabilityStatus, classify, estimate_derivative_ratio, simulate,
                               simulate_ensemble, ultimate_bounds)
from utils.error_handling import CoarseGuidanceError, handle_operation_error
from utils.grid_search import bisect_grid
from utils.logging_config import log_analysis_operation, log_with_context, search_logger

OVM_FIELDS = {'L', 'n', 's_st', 's_go', 'v_max', 'alpha', 'beta'}
WEIGHT_FIELDS = {'gamma_s', 'gamma_v'}
ESTIMATES = ('sim', 'lk', 'lyap')

# documented defaults; every grid is overridable from the command line
DEFAULT_SWEEP_GRIDS = {
    SweepParameter.L: (300.0, 340.0, 380.0, 420.0, 460.0, 500.0),
    SweepParameter.N: (16, 18, 20, 22, 24),
    SweepParameter.S_ST: (3.0, 4.0, 5.0, 6.0, 7.0, 8.0),
    SweepParameter.S_GO: (30.0, 32.0, 34.0, 36.0, 38.0, 40.0),
    SweepParameter.V_MAX: (20.0, 23.0, 26.0, 29.0, 32.0, 35.0),
    SweepParameter.ALPHA: (0.3, 0.4, 0.5, 0.6, 0.7, 0.8),
    SweepParameter.BETA: tuple(round(0.3 + 0.1 * i, 1) for i in range(18)),
    SweepParameter.K_MULT: (0.005, 0.05, 0.2, 0.5, 1.0),
    SweepParameter.GAMMA_S: (0.01, 0.02, 0.03, 0.05, 0.1),
    SweepParameter.GAMMA_V: (0.05, 0.1, 0.15, 0.2, 0.3),
}


class HoldLimitFlag(str, Enum):
    OK = "ok"
    UNSTABLE_AT_FLOOR = "unstable_at_floor"
    STABLE_AT_CEILING = "stable_at_ceiling"


@dataclass
class HoldLimitResult:
    limit: float
    flag: HoldLimitFlag
    lower_witness: Optional[float]
    upper_witness: Optional[float]
    trials: Dict[float, bool] = field(default_factory=dict)
    collisions: Dict[float, int] = field(default_factory=dict)
    widenings: int = 0

    @property
    def n_collided(self) -> int:
        """Collided seeds at the first unstable grid point"""
        return self.collisions.get(self.upper_witness, 0) if self.upper_witness is not None else 0


@dataclass(frozen=True)
class SweepSpec:
    parameter: SweepParameter
    values: tuple
    resynthesize: Optional[bool] = None

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if not values:
            raise ValueError("sweep values must be nonempty")
        if list(values) != sorted(values):
            raise ValueError("sweep values must be sorted ascending")
        object.__setattr__(self, 'values', values)
        needs_synthesis = self.parameter != SweepParameter.K_MULT
        if self.resynthesize is None:
            object.__setattr__(self, 'resynthesize', needs_synthesis)
        elif self.parameter.is_system_parameter and not self.resynthesize:
            raise ValueError(f"system parameter {self.parameter.value} requires resynthesis")


@dataclass(frozen=True)
class JointScenario:
    index: int
    alpha: float
    beta: float
    s_st: float
    s_go: float


@dataclass
class SweepRow:
    parameter: str
    param_value: float
    sim_hold_limit: float = math.nan
    lk_hold_limit: float = math.nan
    lyap_bound: float = math.nan
    ovm_margin: float = math.nan
    n_collided: int = 0
    runtime: float = 0.0
    lower_witness: Optional[float] = None
    upper_witness: Optional[float] = None
    sim_flag: Optional[HoldLimitFlag] = None
    reasons: Dict[str, str] = field(default_factory=dict)


@dataclass
class HumanErrorRow:
    kind: HumanErrorKind
    value: float
    sim_value: float = math.nan
    theory_value: float = math.nan
    tail_bounds: Dict[float, float] = field(default_factory=dict)
    status: Optional[str] = None
    flag: Optional[str] = None
    delta: Optional[float] = None
    runtime: float = 0.0
    reasons: Dict[str, str] = field(default_factory=dict)


def default_joint_scenarios(count: int = 7) -> List[JointScenario]:
    """Linear interpolation between monotone endpoints around the default point"""
    steps = np.linspace(0.0, 1.0, count)
    return [JointScenario(index=i + 1,
                          alpha=float(0.6 - 0.3 * t), beta=float(0.9 + 0.6 * t),
                          s_st=float(5.0 + 6.0 * t), s_go=float(35.0 - 6.0 * t))
            for i, t in enumerate(steps)]


def simulation_hold_limit(sys: SystemMatrices, c: Controller, cfg: Optional[SimConfig] = None,
                          low: float = 0.0, high: float = 10.0, granularity: float = 0.01,
                          dist: Optional[DisturbanceModel] = None, plant: Optional[PlantMode] = None,
                          seeds: Optional[Sequence[int]] = None,
                          threads: Optional[int] = None) -> HoldLimitResult:
    """
    Largest grid hold length whose ensemble classifies as converged

    The same seed set is used at every trial. The bracket is confirmed one step below
    and widened on disagreement; the stored witness pair brackets the limit.
    """
    cfg = cfg or SimConfig()
    plant = plant or PlantMode.NONLINEAR
    seeds = list(range(cfg.n_seeds)) if seeds is None else list(seeds)
    collisions: Dict[float, int] = {}
    start = time.perf_counter()

    def trial(delta: float) -> bool:
        summaries = simulate_ensemble(sys, c, delta, dist, plant, cfg, seeds=seeds, threads=threads)
        verdict = classify(summaries, cfg)
        collisions[delta] = verdict.n_collided
        log_with_context(search_logger, logging.DEBUG, "Hold-length trial",
                         delta=delta, status=verdict.status.value, collided=verdict.n_collided,
                         not_converged=verdict.n_not_converged)
        return verdict.status == StabilityStatus.CONVERGED

    search = bisect_grid(trial, low, high, granularity, search_logger,
                         label='simulation_hold_limit', confirm=True)

    if search.floor_failed:
        flag = HoldLimitFlag.UNSTABLE_AT_FLOOR
    elif search.upper_witness is None:
        flag = HoldLimitFlag.STABLE_AT_CEILING
    else:
        flag = HoldLimitFlag.OK

    log_analysis_operation(search_logger, 'holdlimit_search', 'simulation_hold_limit', 'completed',
                           duration=time.perf_counter() - start, limit=search.limit, flag=flag.value,
                           trials=len(search.trials), widenings=search.widenings)

    return HoldLimitResult(limit=search.limit, flag=flag, lower_witness=search.lower_witness,
                           upper_witness=search.upper_witness, trials=search.trials,
                           collisions=collisions, widenings=search.widenings)


def controller_for(run: RunConfig, sys: Optional[SystemMatrices] = None,
                   base: Optional[Controller] = None) -> Controller:
    """H2 controller of the run's system and weights, scaled by k_mult; a given base gain skips synthesis"""
    if base is not None:
        return scale_controller(base, run.k_mult)
    sys = sys or build_system(run.ovm, run.guidance)
    return scale_controller(h2_controller(sys, run.weights).controller, run.k_mult)


def apply_parameter(run: RunConfig, parameter: SweepParameter, value: float) -> RunConfig:
    name = parameter.value
    if name in OVM_FIELDS:
        return run.with_updates(ovm={name: int(round(value)) if name == 'n' else value})
    if name in WEIGHT_FIELDS:
        return run.with_updates(weights={name: value})
    return run.with_updates(k_mult=value)


def _record_failure(row: Any, column: str, operation: str, error: Exception) -> None:
    record = handle_operation_error('holdlimit_search', operation, error)
    row.reasons[column] = f"{record['error']}: {record['message']}"


def evaluate_point(run: RunConfig, parameter: str, value: float,
                   estimates: Sequence[str] = ESTIMATES, threads: Optional[int] = None,
                   base: Optional[Controller] = None) -> SweepRow:
    """All hold-limit estimates for one configuration; failures stay in the row"""
    start = time.perf_counter()
    row = SweepRow(parameter=parameter, param_value=value)
    analysis = run.analysis

    try:
        row.ovm_margin = string_stability_margin(run.ovm)
        sys = build_system(run.ovm, run.guidance)
        c = controller_for(run, sys, base)
    except CoarseGuidanceError as e:
        _record_failure(row, 'controller', 'evaluate_point', e)
        row.runtime = time.perf_counter() - start
        return row

    if 'sim' in estimates:
        try:
            result = simulation_hold_limit(sys, c, run.sim, *analysis.sim_range, analysis.sim_granularity,
                                           plant=run.plant, threads=threads)
            row.sim_hold_limit = result.limit
            row.sim_flag = result.flag
            row.n_collided = result.n_collided
            row.lower_witness, row.upper_witness = result.lower_witness, result.upper_witness
        except CoarseGuidanceError as e:
            _record_failure(row, 'sim_hold_limit', 'simulation_hold_limit', e)

    red = reduce(sys, c)
    if 'lk' in estimates:
        try:
            row.lk_hold_limit = lk_hold_limit(red.A_red, red.A1_red, *analysis.lk_range,
                                              analysis.lk_granularity, margin=analysis.strictness_margin)
        except CoarseGuidanceError as e:
            _record_failure(row, 'lk_hold_limit', 'lk_hold_limit', e)

    if 'lyap' in estimates:
        try:
            row.lyap_bound = lyapunov_hold_bound(sys, c, c_prime=analysis.c_prime, q_scale=analysis.q_scale,
                                                 d_margin=analysis.d_margin).delta_bound
        except CoarseGuidanceError as e:
            _record_failure(row, 'lyap_bound', 'lyapunov_hold_bound', e)

    for column in ('sim', 'lk', 'lyap'):
        if column not in estimates:
            row.reasons.setdefault(f"{column}_hold_limit" if column != 'lyap' else 'lyap_bound', 'not requested')

    row.runtime = time.perf_counter() - start
    return row


def _run_rows(jobs: List[Callable[[], Any]]) -> List[Any]:
    """Evaluate row jobs, in parallel when row_workers > 1; output order follows input order"""
    workers = max(1, min(settings.row_workers, len(jobs)))
    if workers == 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(lambda job: job(), jobs))


def sensitivity_sweep(spec: SweepSpec, run: Optional[RunConfig] = None,
                      estimates: Sequence[str] = ESTIMATES, threads: Optional[int] = None) -> List[SweepRow]:
    """Vary one parameter while the others stay at the run's values"""
    run = run or RunConfig()
    start = time.perf_counter()
    log_analysis_operation(search_logger, 'holdlimit_search', 'sensitivity_sweep', 'started',
                           parameter=spec.parameter.value, points=len(spec.values))

    # without resynthesis every point reuses the base run's unscaled H2 gain
    base = None
    if not spec.resynthesize:
        try:
            base = h2_controller(build_system(run.ovm, run.guidance), run.weights).controller
        except CoarseGuidanceError as e:
            rows = [SweepRow(parameter=spec.parameter.value, param_value=value) for value in spec.values]
            for row in rows:
                _record_failure(row, 'controller', 'sensitivity_sweep', e)
            return rows

    def job_for(value: float):
        def job():
            try:
                point = apply_parameter(run, spec.parameter, value)
            except ValidationError as e:
                row = SweepRow(parameter=spec.parameter.value, param_value=value)
                _record_failure(row, 'config', 'apply_parameter', e)
                return row
            return evaluate_point(point, spec.parameter.value, value, estimates, threads, base=base)
        return job

    rows = _run_rows([job_for(value) for value in spec.values])
    log_analysis_operation(search_logger, 'holdlimit_search', 'sensitivity_sweep', 'completed',
                           duration=time.perf_counter() - start, parameter=spec.parameter.value,
                           failed_rows=sum(1 for r in rows if any(v != 'not requested' for v in r.reasons.values())))
    return rows


def joint_scenario_sweep(scenarios: Optional[Sequence[JointScenario]] = None, run: Optional[RunConfig] = None,
                         estimates: Sequence[str] = ESTIMATES, threads: Optional[int] = None) -> List[SweepRow]:
    """One row per scenario; (alpha, beta, s_st, s_go) change together"""
    run = run or RunConfig()
    scenarios = list(scenarios) if scenarios is not None else default_joint_scenarios()

    def job_for(scenario: JointScenario):
        def job():
            try:
                point = run.with_updates(ovm={'alpha': scenario.alpha, 'beta': scenario.beta,
                                              's_st': scenario.s_st, 's_go': scenario.s_go})
            except ValidationError as e:
                row = SweepRow(parameter='scenario', param_value=scenario.index)
                _record_failure(row, 'config', 'joint_scenario_sweep', e)
                return row
            return evaluate_point(point, 'scenario', scenario.index, estimates, threads)
        return job

    return _run_rows([job_for(scenario) for scenario in scenarios])


def pilot_derivative_ratio(sys: SystemMatrices, c: Controller, run: RunConfig, Sigma: float) -> float:
    """Empirical D_v from one delayed pilot trajectory"""
    if Sigma <= 0:
        return 0.0
    delta = max(1.0, 2.0 * Sigma)
    dist = DisturbanceModel.reaction_delay(Sigma, delay_realization=run.disturbance.delay_realization)
    traj = simulate(sys, c, delta, dist, run.plant, run.sim, seed=0)
    return estimate_derivative_ratio(traj, delta, Sigma, run.sim.t_step)


def human_error_sweep(kind: HumanErrorKind, values: Sequence[float], run: Optional[RunConfig] = None,
                      threads: Optional[int] = None) -> List[HumanErrorRow]:
    """
    Simulated and predicted effect of human error on the run's H2 guidance

    Nonvanishing rows hold delta at the clean simulation hold limit and report the
    ultimate bound; vanishing and delay rows report the simulation hold limit.
    """
    run = run or RunConfig()
    analysis = run.analysis
    sys = build_system(run.ovm, run.guidance)
    c = controller_for(run, sys)
    red = reduce(sys, c)
    cert = lyapunov_hold_bound(sys, c, c_prime=analysis.c_prime, q_scale=analysis.q_scale,
                               d_margin=analysis.d_margin)
    base = run.disturbance
    common = {'bernoulli_p': base.bernoulli_p, 'delay_realization': base.delay_realization}

    clean_delta = None
    if kind == HumanErrorKind.NONVANISHING_BOUND:
        clean = simulation_hold_limit(sys, c, run.sim, *analysis.sim_range, analysis.sim_granularity,
                                      plant=run.plant, threads=threads)
        clean_delta = clean.limit if clean.limit > 0 else run.sim.t_step

    D_v_bar = analysis.D_v_bar
    if kind == HumanErrorKind.DELAY_HOLD_LIMIT and D_v_bar is None:
        D_v_bar = pilot_derivative_ratio(sys, c, run, max(values, default=0.0))

    def job_for(value: float):
        def job():
            start = time.perf_counter()
            row = HumanErrorRow(kind=kind, value=value)
            try:
                if kind == HumanErrorKind.NONVANISHING_BOUND:
                    dist = DisturbanceModel.nonvanishing(value, **common)
                    summaries = simulate_ensemble(sys, c, clean_delta, dist, run.plant, run.sim, threads=threads)
                    verdict = classify(summaries, run.sim)
                    row.tail_bounds = ultimate_bounds(summaries)
                    row.sim_value = row.tail_bounds[0.10]
                    row.status = verdict.status.value
                    row.delta = clean_delta
                    row.theory_value = nonvanishing_ultimate_bound(cert, red.B_d_red, value)
                else:
                    if kind == HumanErrorKind.VANISHING_HOLD_LIMIT:
                        dist = DisturbanceModel.vanishing(value, **common)
                        theory = vanishing_hold_bound(cert, red.B_d_red, value)
                    else:
                        dist = DisturbanceModel.reaction_delay(value, **common)
                        theory = reaction_delay_bound(cert, value, D_v_bar, analysis.c_dprime)
                    result = simulation_hold_limit(sys, c, run.sim, *analysis.sim_range,
                                                   analysis.sim_granularity, dist=dist, plant=run.plant,
                                                   threads=threads)
                    row.sim_value = result.limit
                    row.status = result.flag.value
                    row.theory_value = theory.value
                    row.flag = theory.flag.value
            except CoarseGuidanceError as e:
                _record_failure(row, 'sim_value', 'human_error_sweep', e)
            row.runtime = time.perf_counter() - start
            return row
        return job

    rows = _run_rows([job_for(value) for value in values])
    log_with_context(search_logger, logging.INFO, "Human-error sweep finished",
                     kind=kind.value, points=len(rows), D_v_bar=D_v_bar)
    return rows
