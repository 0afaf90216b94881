"""
Coarse Guidance Toolkit - Acceptance Runner
Runs every published acceptance check against the current build and writes a summary
table plus the CSVs behind each check. Individual failures are collected, never raised.
"""

import filecmp
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy import stats

from backend.orchestrator.holdlimit_search import (HoldLimitResult, controller_for, human_error_sweep,
                                                   sensitivity_sweep, simulation_hold_limit, SweepSpec)
from certify.lmi import lk_feasible, lk_hold_limit_search, lk_synthesize
from certify.lyapunov import lyapunov_hold_bound
from certify.sdp_oracle import verify_assignment
from schemas.params import (HumanErrorKind, OvmParams, PlantMode, RunConfig, SweepParameter)
from traffic.ring_model import Controller, build_system, reduce, string_stability_margin
from traffic.simulator import StabilityStatus, classify, simulate, simulate_ensemble
from utils.error_handling import CoarseGuidanceError, handle_operation_error
from utils.logging_config import cli_logger, log_analysis_operation, log_with_context

from api import report

HOLD_LIMIT_BAND = (1.4, 1.9)
CONVERGED_WITNESS = 1.59
UNSTABLE_WITNESS = 2.29
WITNESS_SHARE = 0.9
LK_TOLERANCE = 0.5
LYAPUNOV_BAND = (6.8e-4, 1.9e-3)
SYNTHESIS_HOLDS = (1.0, 2.0, 3.0)
SYNTHESIS_FLOOR = 3.5
RANK_THRESHOLD = 0.8
NONVANISHING_R2 = 0.95
TAIL_AGREEMENT = 0.10
DELAY_R2 = 0.9
RESIDUAL_TOL = 1e-8
SPECTRUM_TOL = 1e-6
REDUCTION_SAMPLES = 100

REPLICATION_GRIDS = {
    SweepParameter.V_MAX: (20.0, 23.0, 26.0, 29.0, 32.0, 35.0),
    SweepParameter.BETA: (0.6, 0.8, 1.0, 1.2, 1.4, 1.6),
    SweepParameter.ALPHA: (0.3, 0.4, 0.5, 0.6, 0.7, 0.8),
}
NONVANISHING_GRID = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3)
DELAY_GRID = (0.1, 0.2, 0.3, 0.4, 0.5)

SUMMARY_COLUMNS = ['criterion', 'expected', 'observed', 'pass']


@dataclass
class CriterionResult:
    criterion: str
    expected: str
    observed: str
    passed: bool


def _fmt(value: float) -> str:
    return report.format_value(value, digits=6)


def spectrum_distance(full: np.ndarray, reduced: np.ndarray) -> float:
    """Set distance between eig(full) minus its eigenvalue nearest zero and eig(reduced)"""
    full = np.sort_complex(np.linalg.eigvals(full))
    reduced = np.sort_complex(np.linalg.eigvals(reduced))
    full = np.delete(full, np.argmin(np.abs(full)))
    forward = max(np.min(np.abs(full - value)) for value in reduced)
    backward = max(np.min(np.abs(reduced - value)) for value in full)
    return float(max(forward, backward))


def quick_config(run: RunConfig) -> RunConfig:
    """Fewer seeds and a coarser search grid for smoke runs"""
    return run.with_updates(sim={'n_seeds': 10},
                            analysis={'sim_granularity': 0.05, 'lk_granularity': 0.05})


class ReplicationRunner:
    """Evaluates acceptance criteria in order and collects their outcomes"""

    def __init__(self, out: Path, run: RunConfig, threads: Optional[int] = None):
        self.out = Path(out)
        self.run = run
        self.threads = threads
        self.sys = build_system(run.ovm, run.guidance)
        self.results: List[CriterionResult] = []
        self._controller: Optional[Controller] = None
        self._default_limit: Optional[HoldLimitResult] = None

    @property
    def controller(self) -> Controller:
        if self._controller is None:
            self._controller = controller_for(self.run, self.sys)
        return self._controller

    def hold_limit(self, c: Controller, run: Optional[RunConfig] = None) -> HoldLimitResult:
        run = run or self.run
        sys = build_system(run.ovm, run.guidance)
        return simulation_hold_limit(sys, c, run.sim, *run.analysis.sim_range, run.analysis.sim_granularity,
                                     plant=run.plant, threads=self.threads)

    @property
    def default_limit(self) -> HoldLimitResult:
        if self._default_limit is None:
            self._default_limit = self.hold_limit(self.controller)
            report.write_witness_csv(self.out / 'holdlimit_default.csv', self._default_limit, self.run)
        return self._default_limit

    def record(self, criterion: str, expected: str, observed: str, passed: bool) -> None:
        self.results.append(CriterionResult(criterion, expected, observed, bool(passed)))
        log_with_context(cli_logger, logging.INFO if passed else logging.WARNING, "Acceptance criterion evaluated",
                         criterion=criterion, expected=expected, observed=observed, passed=bool(passed))

    def evaluate(self, criterion: str, expected: str, check: Callable[[], tuple]) -> None:
        start = time.perf_counter()
        try:
            observed, passed = check()
        except (CoarseGuidanceError, ValueError) as e:
            record = handle_operation_error('cli_report', f"replicate_{criterion}", e)
            observed, passed = f"error: {record['error']}", False
        self.record(criterion, expected, observed, passed)
        log_analysis_operation(cli_logger, 'cli_report', 'replicate_criterion', 'completed',
                               duration=time.perf_counter() - start, criterion=criterion)

    # default-ring reference checks

    def uncontrolled_instability(self):
        cfg = self.run.sim
        summaries = simulate_ensemble(self.sys, Controller.zero(self.sys.n), 1.0, None, self.run.plant, cfg,
                                      threads=self.threads)
        verdict = classify(summaries, cfg)
        report.write_ensemble_csv(self.out / 'uncontrolled_ensemble.csv', summaries, self.run, 1.0,
                                  verdict.status.value)
        margin = string_stability_margin(self.run.ovm)
        passed = verdict.status != StabilityStatus.CONVERGED and abs(margin - (2.4 - math.pi)) <= 1e-12
        return f"verdict={verdict.status.value} margin={_fmt(margin)}", passed

    def default_hold_limit(self):
        limit = self.default_limit.limit
        cfg = self.run.sim
        low = simulate_ensemble(self.sys, self.controller, CONVERGED_WITNESS, None, self.run.plant, cfg,
                                threads=self.threads)
        high = simulate_ensemble(self.sys, self.controller, UNSTABLE_WITNESS, None, self.run.plant, cfg,
                                 threads=self.threads)
        converged = sum(1 for s in low if not s.collided and not s.diverged
                        and s.final_error_norm < cfg.convergence_eps)
        high_verdict = classify(high, cfg)
        passed = (HOLD_LIMIT_BAND[0] <= limit <= HOLD_LIMIT_BAND[1]
                  and converged >= math.ceil(WITNESS_SHARE * cfg.n_seeds)
                  and high_verdict.status != StabilityStatus.CONVERGED)
        return (f"limit={_fmt(limit)} converged_at_{CONVERGED_WITNESS}={converged}/{cfg.n_seeds} "
                f"verdict_at_{UNSTABLE_WITNESS}={high_verdict.status.value}"), passed

    def lk_scale(self):
        analysis = self.run.analysis
        red = reduce(self.sys, self.controller)
        result = lk_hold_limit_search(red.A_red, red.A1_red, *analysis.lk_range, analysis.lk_granularity,
                                      margin=analysis.strictness_margin)
        gap = abs(result.limit - self.default_limit.limit)
        return f"lk={_fmt(result.limit)} sim={_fmt(self.default_limit.limit)}", gap <= LK_TOLERANCE

    def lyapunov_scale(self):
        analysis = self.run.analysis
        cert = lyapunov_hold_bound(self.sys, self.controller, c_prime=analysis.c_prime,
                                   q_scale=analysis.q_scale, d_margin=analysis.d_margin)
        report.write_scalar_csv(self.out / 'lyapunov_certificate.csv', cert.components(), self.run)
        return _fmt(cert.delta_bound), LYAPUNOV_BAND[0] <= cert.delta_bound <= LYAPUNOV_BAND[1]

    def controller_rescaling(self):
        limits = {1.0: self.default_limit.limit}
        for k_mult in (0.2, 0.005):
            run = self.run.with_updates(k_mult=k_mult)
            result = self.hold_limit(controller_for(run, self.sys), run)
            report.write_witness_csv(self.out / f"holdlimit_kmult{k_mult:g}.csv", result, run)
            limits[k_mult] = result.limit
        passed = limits[0.2] >= 2.0 * limits[1.0] and limits[0.005] < limits[0.2]
        return ' '.join(f"k{k:g}={_fmt(v)}" for k, v in sorted(limits.items())), passed

    def lk_synthesis(self):
        red = reduce(self.sys, Controller.zero(self.sys.n))
        limits = []
        for delta_in in SYNTHESIS_HOLDS:
            syn = lk_synthesize(red.A_red, red.B_red, delta_in, self.run.analysis.epsilon,
                                margin=self.run.analysis.strictness_margin)
            result = self.hold_limit(syn.controller)
            report.write_witness_csv(self.out / f"holdlimit_lk_in{delta_in:g}.csv", result, self.run)
            limits.append(result.limit)
        increasing = all(b > a for a, b in zip(limits, limits[1:]))
        passed = limits[-1] >= SYNTHESIS_FLOOR and increasing
        return ' '.join(f"in{d:g}={_fmt(v)}" for d, v in zip(SYNTHESIS_HOLDS, limits)), passed

    def _sweep(self, parameter: SweepParameter):
        spec = SweepSpec(parameter, REPLICATION_GRIDS[parameter])
        rows = sensitivity_sweep(spec, self.run, ('sim', 'lyap'), self.threads)
        report.write_sweep_csv(self.out / f"sweep_{parameter.value}.csv", rows, self.run, include_timing=False)
        return rows

    def trend_correlations(self):
        observed, passed = [], True
        for parameter, sign in ((SweepParameter.V_MAX, -1), (SweepParameter.BETA, 1)):
            rows = self._sweep(parameter)
            rho = stats.spearmanr([r.param_value for r in rows], [r.sim_hold_limit for r in rows])[0]
            observed.append(f"rho_{parameter.value}={_fmt(rho)}")
            passed &= bool(np.isfinite(rho) and sign * rho >= RANK_THRESHOLD)

        rows = self._sweep(SweepParameter.ALPHA)
        alphas = [r.param_value for r in rows]
        rho_sim = stats.spearmanr(alphas, [r.sim_hold_limit for r in rows])[0]
        rho_margin = stats.spearmanr(alphas, [r.ovm_margin for r in rows])[0]
        observed.append(f"rho_alpha_sim={_fmt(rho_sim)} rho_alpha_margin={_fmt(rho_margin)}")
        passed &= bool(np.isfinite(rho_sim) and np.isfinite(rho_margin) and rho_sim * rho_margin < 0)
        return ' '.join(observed), passed

    def nonvanishing_error(self):
        rows = human_error_sweep(HumanErrorKind.NONVANISHING_BOUND, NONVANISHING_GRID, self.run, self.threads)
        report.write_human_error_csv(self.out / 'human_error_nonvanishing.csv', rows, self.run,
                                     include_timing=False)
        fit = stats.linregress([r.value for r in rows], [r.sim_value for r in rows])
        r2 = fit.rvalue ** 2
        spreads = []
        for row in rows:
            tails = np.array(list(row.tail_bounds.values()), dtype=float)
            if tails.size and tails.max() > 0:
                spreads.append((tails.max() - tails.min()) / tails.max())
        spread = max(spreads) if spreads else math.nan
        passed = bool(np.isfinite(r2) and r2 >= NONVANISHING_R2 and spread <= TAIL_AGREEMENT)
        return f"r2={_fmt(r2)} tail_spread={_fmt(spread)}", passed

    def reaction_delay(self):
        rows = human_error_sweep(HumanErrorKind.DELAY_HOLD_LIMIT, DELAY_GRID, self.run, self.threads)
        report.write_human_error_csv(self.out / 'human_error_delay.csv', rows, self.run, include_timing=False)
        limits = np.array([r.sim_value for r in rows], dtype=float)
        decreasing = bool(np.all(np.diff(limits) <= 0) and limits[-1] < limits[0])
        r2 = stats.linregress(DELAY_GRID, limits).rvalue ** 2
        passed = decreasing and bool(np.isfinite(r2) and r2 >= DELAY_R2)
        return f"limits={'/'.join(_fmt(v) for v in limits)} r2={_fmt(r2)}", passed

    # property checks

    def lyapunov_residual(self):
        analysis = self.run.analysis
        cert = lyapunov_hold_bound(self.sys, self.controller, c_prime=analysis.c_prime,
                                   q_scale=analysis.q_scale, d_margin=analysis.d_margin)
        symmetric = np.allclose(cert.P, cert.P.T, atol=1e-12)
        min_eig = float(np.linalg.eigvalsh(cert.P).min())
        passed = cert.residual <= RESIDUAL_TOL * np.linalg.norm(cert.Q, 'fro') and symmetric and min_eig > 0
        return f"residual={_fmt(cert.residual)} min_eig_P={_fmt(min_eig)}", passed

    def lmi_reverification(self):
        red = reduce(self.sys, self.controller)
        cert = lk_feasible(red.A_red, red.A1_red, 0.5, margin=self.run.analysis.strictness_margin)
        if not cert.feasible:
            return f"status={cert.solver_status.value}", False
        ok, extremes = verify_assignment(cert.problem, cert.assignment)
        worst = max(extremes[name] for name in ('first', 'second'))
        return f"worst_block_eig={_fmt(worst)}", ok

    def ring_conservation(self):
        cfg = self.run.sim.model_copy(update={'total_time': 30.0})
        traj = simulate(self.sys, self.controller, 1.0, None, PlantMode.NONLINEAR, cfg, seed=0)
        spacing = traj.physical_states()[:, 0::2]
        nonlinear_gap = float(np.abs(spacing.sum(axis=1) - self.run.ovm.L).max())

        cfg_linear = cfg.model_copy(update={'aeb_enabled': False})
        traj = simulate(self.sys, Controller.zero(self.sys.n), 1.0, None, PlantMode.LINEARIZED, cfg_linear, seed=0)
        drift = float(np.abs(traj.states[:, 0::2].sum(axis=1)).max())
        passed = nonlinear_gap <= 1e-9 * self.run.ovm.L and drift <= 1e-9
        return f"nonlinear_gap={_fmt(nonlinear_gap)} linear_drift={_fmt(drift)}", passed

    def determinism(self):
        cfg = self.run.sim.model_copy(update={'total_time': 20.0})
        paths = []
        for tag in ('a', 'b'):
            summaries = simulate_ensemble(self.sys, self.controller, 1.0, None, self.run.plant, cfg,
                                          seeds=range(5), threads=self.threads)
            verdict = classify(summaries, cfg)
            paths.append(report.write_ensemble_csv(self.out / 'determinism' / f"ensemble_{tag}.csv", summaries,
                                                   self.run, 1.0, verdict.status.value))
        identical = filecmp.cmp(paths[0], paths[1], shallow=False)
        return f"identical={str(identical).lower()}", identical

    def reduction_correctness(self):
        rng = np.random.default_rng(self.run.sim.rng_seed)
        worst = 0.0
        for _ in range(REDUCTION_SAMPLES):
            s_st = float(rng.uniform(2.0, 8.0))
            p = OvmParams(L=float(rng.uniform(200.0, 600.0)), n=int(rng.integers(4, 25)), s_st=s_st,
                          s_go=float(rng.uniform(25.0, 45.0)), v_max=float(rng.uniform(20.0, 35.0)),
                          alpha=float(rng.uniform(0.2, 1.0)), beta=float(rng.uniform(0.3, 2.0)))
            sys = build_system(p, self.run.guidance)
            c = Controller(K=rng.normal(scale=0.1, size=(1, sys.dim)))
            red = reduce(sys, c)
            worst = max(worst, spectrum_distance(sys.A - sys.B @ c.effective_gain, red.closed_loop))
        return f"worst_spectrum_gap={_fmt(worst)}", worst <= SPECTRUM_TOL

    def criteria(self) -> Sequence[tuple]:
        band = HOLD_LIMIT_BAND
        return (
            ('01_uncontrolled_instability', 'not converged; margin = 2.4 - pi', self.uncontrolled_instability),
            ('02_default_hold_limit', f"limit in [{band[0]}, {band[1]}]; witness {CONVERGED_WITNESS}/"
                                      f"{UNSTABLE_WITNESS}", self.default_hold_limit),
            ('03_lk_absolute_scale', f"|lk - sim| <= {LK_TOLERANCE}", self.lk_scale),
            ('04_lyapunov_scale', f"delta_bound in [{LYAPUNOV_BAND[0]}, {LYAPUNOV_BAND[1]}]", self.lyapunov_scale),
            ('05_controller_rescaling', 'k0.2 >= 2 x k1; k0.005 < k0.2', self.controller_rescaling),
            ('06_lk_synthesis', f"limit(in3) >= {SYNTHESIS_FLOOR}; increasing over in1..in3", self.lk_synthesis),
            ('07_trend_correlations', f"rho_vmax <= -{RANK_THRESHOLD}; rho_beta >= {RANK_THRESHOLD}; "
                                      "alpha trends opposite", self.trend_correlations),
            ('08_nonvanishing_error', f"r2 >= {NONVANISHING_R2}; tails within {TAIL_AGREEMENT:.0%}",
             self.nonvanishing_error),
            ('09_reaction_delay', f"decreasing; r2 >= {DELAY_R2}", self.reaction_delay),
            ('10_lyapunov_residual', f"residual <= {RESIDUAL_TOL} ||Q||_F; P symmetric PD", self.lyapunov_residual),
            ('11_lmi_reverification', 'feasible blocks re-verified', self.lmi_reverification),
            ('12_ring_conservation', 'sum s = L; linear drift <= 1e-9', self.ring_conservation),
            ('13_determinism', 'byte-identical CSVs', self.determinism),
            ('14_reduction_correctness', f"spectrum gap <= {SPECTRUM_TOL} on {REDUCTION_SAMPLES} systems",
             self.reduction_correctness),
        )

    def run_all(self) -> List[CriterionResult]:
        for criterion, expected, check in self.criteria():
            self.evaluate(criterion, expected, check)
        return self.results


def write_summary(path: Path, results: Sequence[CriterionResult], run: RunConfig) -> Path:
    rows = [[r.criterion, r.expected, r.observed, r.passed] for r in results]
    return report.write_csv(path, SUMMARY_COLUMNS, rows, run,
                            passed=sum(r.passed for r in results), total=len(results))


def replicate_paper(out: Path, run: Optional[RunConfig] = None, quick: bool = False,
                    threads: Optional[int] = None) -> List[CriterionResult]:
    """
    Evaluate every acceptance criterion and write summary.csv under out

    Returns:
        One result per criterion; the caller decides the exit code
    """
    run = run or RunConfig()
    if quick:
        run = quick_config(run)
    start = time.perf_counter()
    log_analysis_operation(cli_logger, 'cli_report', 'replicate_paper', 'started', quick=quick, out=str(out))

    runner = ReplicationRunner(Path(out), run, threads)
    results = runner.run_all()
    write_summary(Path(out) / 'summary.csv', results, run)

    log_analysis_operation(cli_logger, 'cli_report', 'replicate_paper', 'completed',
                           duration=time.perf_counter() - start,
                           passed=sum(r.passed for r in results), total=len(results))
    return results
