"""
Coarse Guidance Toolkit - Command Line Interface
Subcommands map one-to-one onto toolkit operations. Results go to stdout and to files
under --out; logs go to stderr. Infeasible or unstable outcomes are findings, not
errors, and exit 0.
"""

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from backend.orchestrator.holdlimit_search import (DEFAULT_SWEEP_GRIDS, SweepSpec, controller_for,
                                                   human_error_sweep, joint_scenario_sweep,
                                                   pilot_derivative_ratio, sensitivity_sweep,
                                                   simulation_hold_limit)
from certify.lmi import (epsilon_grid_synthesis, feasibility_profile, lk_delay_feasible, lk_hinf_feasible,
                         lk_hold_limit_search, lk_synthesize, synthesis_duality_residual)
from certify.lyapunov import human_error_bounds, lyapunov_hold_bound
from certify.sdp_oracle import assemble_blocks
from config.loader import config_hash, load_run_config, write_resolved_config
from config.settings import settings
from schemas.params import DisturbanceKind, HumanErrorKind, RunConfig, SweepParameter
from synthesis.h2 import h2_controller, scale_controller
from traffic.ring_model import Controller, SystemMatrices, build_system, reduce
from traffic.simulator import classify, simulate, simulate_ensemble
from utils.error_handling import (EXIT_OK, EXIT_USAGE_ERROR, CoarseGuidanceError, exit_code_for,
                                  handle_operation_error)
from utils.logging_config import cli_logger, log_analysis_operation, log_with_context, run_context, setup_logging
from utils.matrix_io import read_controller, write_controller, write_matrices, write_matrix

from api import report

COMMANDS = ('simulate', 'holdlimit', 'certify-lyap', 'certify-lk', 'certify-hinf', 'synth-h2',
            'synth-lk', 'sweep', 'joint-sweep', 'human-error', 'replicate-paper')


def _floats(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', default='default', help="'default' or path to an INI file")
    common.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help='override one configuration key (repeatable)')
    common.add_argument('--out', default='results', help='output directory')
    common.add_argument('--threads', type=int, default=settings.threads, help='worker threads, 0 = auto')
    common.add_argument('--controller', help='controller file to use instead of the H2 controller')
    common.add_argument('--log-level', default=None, help='DEBUG, INFO, WARNING, ERROR')

    parser = argparse.ArgumentParser(prog='coarse-guidance',
                                     description='Hold-length certification and simulation for guided ring traffic')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('simulate', parents=[common], help='simulate one hold length')
    p.add_argument('--delta', type=float, required=True)
    p.add_argument('--seed', type=int, default=0, help='seed whose trajectory is written')

    p = sub.add_parser('holdlimit', parents=[common], help='empirical hold limit by binary search')

    p = sub.add_parser('certify-lyap', parents=[common], help='closed-form Lyapunov hold bound')
    p.add_argument('--dump-p', action='store_true', help='write the Lyapunov matrix P')

    p = sub.add_parser('certify-lk', parents=[common], help='Lyapunov-Krasovskii LMI certificate')
    p.add_argument('--delta', type=float, help='certify one hold length instead of searching')
    p.add_argument('--profile', type=_floats, help='comma-separated hold lengths to tabulate')
    p.add_argument('--dump-lmi', action='store_true', help='write the assembled numeric LMI blocks')

    p = sub.add_parser('certify-hinf', parents=[common], help='H-infinity LMI certificate')
    p.add_argument('--delta', type=float, required=True)
    p.add_argument('--gamma', type=float, required=True)
    p.add_argument('--dump-lmi', action='store_true')

    sub.add_parser('synth-h2', parents=[common], help='continuous H2 optimal controller')

    p = sub.add_parser('synth-lk', parents=[common], help='sampled-data controller synthesis')
    p.add_argument('--delta-in', type=float, required=True)
    p.add_argument('--epsilon', type=float, default=None)
    p.add_argument('--epsilon-grid', action='store_true', help='try the coarse epsilon grid')
    p.add_argument('--holdlimit', action='store_true', help='also search the simulation hold limit')

    p = sub.add_parser('sweep', parents=[common], help='single-parameter sensitivity sweep')
    p.add_argument('--param', required=True, choices=[item.value for item in SweepParameter])
    p.add_argument('--values', type=_floats, help='comma-separated values (default grid otherwise)')
    p.add_argument('--estimates', default='sim,lk,lyap')

    p = sub.add_parser('joint-sweep', parents=[common], help='joint parameter scenarios')
    p.add_argument('--estimates', default='sim,lk,lyap')

    p = sub.add_parser('human-error', parents=[common], help='human-error experiments')
    p.add_argument('--kind', required=True, choices=[item.value for item in HumanErrorKind])
    p.add_argument('--values', type=_floats, required=True)

    p = sub.add_parser('replicate-paper', parents=[common], help='run every acceptance check')
    p.add_argument('--quick', action='store_true', help='reduced grids and seeds')
    return parser


class CommandContext:
    """Resolved configuration, system and output location shared by a subcommand"""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.run: RunConfig = load_run_config(args.config, args.overrides)
        self.out = Path(args.out)
        self.threads = args.threads or None
        self.sys: SystemMatrices = build_system(self.run.ovm, self.run.guidance)
        self._controller: Optional[Controller] = None

    @property
    def controller(self) -> Controller:
        if self._controller is None:
            if self.args.controller:
                self._controller = scale_controller(read_controller(self.args.controller), self.run.k_mult)
            else:
                self._controller = controller_for(self.run, self.sys)
        return self._controller

    def path(self, name: str) -> Path:
        return self.out / name

    def echo_config(self) -> None:
        write_resolved_config(self.run, self.path('config_resolved.ini'))


def cmd_simulate(ctx: CommandContext) -> int:
    run, args = ctx.run, ctx.args
    summaries = simulate_ensemble(ctx.sys, ctx.controller, args.delta, run.disturbance, run.plant, run.sim,
                                  threads=ctx.threads)
    verdict = classify(summaries, run.sim)
    traj = simulate(ctx.sys, ctx.controller, args.delta, run.disturbance, run.plant, run.sim, seed=args.seed)
    report.write_trajectory_csv(ctx.path(f"trajectory_seed{args.seed}.csv"), traj, run, args.delta)
    report.write_ensemble_csv(ctx.path('ensemble.csv'), summaries, run, args.delta, verdict.status.value)
    print(f"verdict: {verdict.status.value} (collided {verdict.n_collided}/{verdict.n_trajectories}, "
          f"not converged {verdict.n_not_converged}, worst final norm {report.format_value(verdict.final_error_norm)})")
    return EXIT_OK


def cmd_holdlimit(ctx: CommandContext) -> int:
    analysis = ctx.run.analysis
    result = simulation_hold_limit(ctx.sys, ctx.controller, ctx.run.sim, *analysis.sim_range,
                                   analysis.sim_granularity, dist=ctx.run.disturbance, plant=ctx.run.plant,
                                   threads=ctx.threads)
    report.write_witness_csv(ctx.path('holdlimit_witness.csv'), result, ctx.run)
    print(f"simulation hold limit: {report.format_value(result.limit)} s "
          f"(witness {report.format_value(result.lower_witness)} / {report.format_value(result.upper_witness)}, "
          f"flag {result.flag.value})")
    return EXIT_OK


def cmd_certify_lyap(ctx: CommandContext) -> int:
    run, analysis = ctx.run, ctx.run.analysis
    cert = lyapunov_hold_bound(ctx.sys, ctx.controller, c_prime=analysis.c_prime, q_scale=analysis.q_scale,
                               d_margin=analysis.d_margin)
    dist = run.disturbance
    D_v_bar = analysis.D_v_bar
    if D_v_bar is None:
        D_v_bar = pilot_derivative_ratio(ctx.sys, ctx.controller, run, dist.Sigma)
    bounds = human_error_bounds(cert, reduce(ctx.sys, ctx.controller).B_d_red, dist.d_nv, dist.d_v,
                                dist.Sigma, D_v_bar, analysis.c_dprime)
    values = {**cert.components(), 'ultimate_radius': bounds.ultimate_radius,
              'delta_vanishing': bounds.delta_vanishing, 'delta_delay': bounds.delta_delay,
              'D_v_bar': D_v_bar, 'vanishing_flag': bounds.vanishing_flag, 'delay_flag': bounds.delay_flag}
    report.write_scalar_csv(ctx.path('lyapunov_certificate.csv'), values, run)
    if ctx.args.dump_p:
        write_matrix(ctx.path('lyapunov_P.txt'), cert.P, {'name': 'P'}, run=run)
    print(f"lyapunov hold bound: {report.format_value(cert.delta_bound)} s")
    return EXIT_OK


def _dump_blocks(ctx: CommandContext, cert, prefix: str) -> None:
    if cert.feasible and cert.problem is not None:
        write_matrices(ctx.path('lmi'), assemble_blocks(cert.problem, cert.assignment),
                       {'delta': cert.delta}, prefix=prefix, run=ctx.run)


def cmd_certify_lk(ctx: CommandContext) -> int:
    args, analysis = ctx.args, ctx.run.analysis
    red = reduce(ctx.sys, ctx.controller)
    # a configured reaction delay stretches every certified interval
    dist = ctx.run.disturbance
    Sigma = dist.Sigma if dist.kind == DisturbanceKind.REACTION_DELAY else 0.0
    if args.profile:
        rows = feasibility_profile(red.A_red, red.A1_red, args.profile, margin=analysis.strictness_margin)
        report.write_table_csv(ctx.path('lk_profile.csv'), rows, ctx.run)
        for row in rows:
            print(f"delta {report.format_value(row['delta'])}: {row['status']}")
        return EXIT_OK
    if args.delta is not None:
        cert = lk_delay_feasible(red.A_red, red.A1_red, args.delta, Sigma, margin=analysis.strictness_margin)
        report.write_scalar_csv(ctx.path('lk_certificate.csv'),
                                {'delta': cert.delta, 'Sigma': Sigma, 'feasible': cert.feasible,
                                 'status': cert.solver_status,
                                 **{f"max_eig_{k}": v for k, v in cert.block_extreme_eigs.items()}}, ctx.run)
        if args.dump_lmi:
            _dump_blocks(ctx, cert, 'lk_')
        print(f"lk certificate at delta {report.format_value(args.delta)}: {cert.solver_status.value}")
        return EXIT_OK
    result = lk_hold_limit_search(red.A_red, red.A1_red, *analysis.lk_range, analysis.lk_granularity,
                                  margin=analysis.strictness_margin, Sigma=Sigma)
    report.write_table_csv(ctx.path('lk_trials.csv'),
                           [{'delta': d, 'feasible': ok} for d, ok in sorted(result.search.trials.items())],
                           ctx.run, lk_hold_limit=result.limit, Sigma=Sigma,
                           numerical_failures=result.numerical_failures)
    print(f"lk hold limit: {report.format_value(result.limit)} s")
    return EXIT_OK


def cmd_certify_hinf(ctx: CommandContext) -> int:
    args = ctx.args
    red = reduce(ctx.sys, ctx.controller)
    cert = lk_hinf_feasible(red.A_red, red.A1_red, red.B_d_red, args.delta, args.gamma,
                            margin=ctx.run.analysis.strictness_margin)
    report.write_scalar_csv(ctx.path('hinf_certificate.csv'),
                            {'delta': cert.delta, 'gamma': cert.gamma, 'feasible': cert.feasible,
                             'status': cert.solver_status}, ctx.run)
    if args.dump_lmi:
        _dump_blocks(ctx, cert, 'hinf_')
    print(f"h-infinity certificate at delta {report.format_value(args.delta)}, "
          f"gamma {report.format_value(args.gamma)}: {cert.solver_status.value}")
    return EXIT_OK


def cmd_synth_h2(ctx: CommandContext) -> int:
    solution = h2_controller(ctx.sys, ctx.run.weights)
    controller = scale_controller(solution.controller, ctx.run.k_mult)
    write_controller(ctx.path('controller_h2.txt'), controller, {'objective': solution.objective_value},
                     run=ctx.run)
    print(f"h2 objective: {report.format_value(solution.objective_value)}")
    return EXIT_OK


def cmd_synth_lk(ctx: CommandContext) -> int:
    args, run = ctx.args, ctx.run
    red = reduce(ctx.sys, Controller.zero(ctx.sys.n))
    if args.epsilon_grid:
        records = []
        for epsilon, syn, error in epsilon_grid_synthesis(red.A_red, red.B_red, args.delta_in):
            records.append({'epsilon': epsilon, 'success': syn is not None,
                            'gain_norm': None if syn is None else float(np.linalg.norm(syn.K_red)),
                            'error': error})
            if syn is not None:
                write_controller(ctx.path(f"controller_lk_eps{epsilon:g}.txt"), syn.controller, run=run)
        report.write_table_csv(ctx.path('lk_epsilon_grid.csv'), records, run, delta_in=args.delta_in)
        print(f"epsilon grid: {sum(r['success'] for r in records)}/{len(records)} succeeded")
        return EXIT_OK

    epsilon = args.epsilon if args.epsilon is not None else run.analysis.epsilon
    syn = lk_synthesize(red.A_red, red.B_red, args.delta_in, epsilon, margin=run.analysis.strictness_margin)
    write_controller(ctx.path('controller_lk.txt'), syn.controller,
                     {'condition_number': syn.condition_number, 'cross_check': syn.cross_check}, run=run)
    values = {'delta_in': args.delta_in, 'epsilon': epsilon, 'condition_number': syn.condition_number,
              'cross_check': syn.cross_check,
              'duality_residual': synthesis_duality_residual(red.A_red, red.B_red, syn)}
    if args.holdlimit:
        result = simulation_hold_limit(ctx.sys, syn.controller, run.sim, *run.analysis.sim_range,
                                       run.analysis.sim_granularity, plant=run.plant, threads=ctx.threads)
        values['sim_hold_limit'] = result.limit
        report.write_witness_csv(ctx.path('holdlimit_witness_lk.csv'), result, run)
    report.write_scalar_csv(ctx.path('lk_synthesis.csv'), values, run)
    print(f"lk controller synthesized at delta_in {report.format_value(args.delta_in)}"
          + (f", simulation hold limit {report.format_value(values['sim_hold_limit'])} s" if args.holdlimit else ''))
    return EXIT_OK


def _estimates(text: str) -> List[str]:
    chosen = [item.strip() for item in text.split(',') if item.strip()]
    unknown = set(chosen) - {'sim', 'lk', 'lyap'}
    if unknown:
        raise ValueError(f"unknown estimates: {sorted(unknown)}")
    return chosen


def cmd_sweep(ctx: CommandContext) -> int:
    parameter = SweepParameter(ctx.args.param)
    values = ctx.args.values or list(DEFAULT_SWEEP_GRIDS[parameter])
    rows = sensitivity_sweep(SweepSpec(parameter, tuple(values)), ctx.run, _estimates(ctx.args.estimates),
                             ctx.threads)
    report.write_sweep_csv(ctx.path(f"sweep_{parameter.value}.csv"), rows, ctx.run)
    print(f"sweep {parameter.value}: {len(rows)} rows")
    return EXIT_OK


def cmd_joint_sweep(ctx: CommandContext) -> int:
    rows = joint_scenario_sweep(None, ctx.run, _estimates(ctx.args.estimates), ctx.threads)
    report.write_sweep_csv(ctx.path('joint_sweep.csv'), rows, ctx.run)
    print(f"joint sweep: {len(rows)} rows")
    return EXIT_OK


def cmd_human_error(ctx: CommandContext) -> int:
    kind = HumanErrorKind(ctx.args.kind)
    rows = human_error_sweep(kind, ctx.args.values, ctx.run, ctx.threads)
    report.write_human_error_csv(ctx.path(f"human_error_{kind.value}.csv"), rows, ctx.run)
    print(f"human error {kind.value}: {len(rows)} rows")
    return EXIT_OK


def cmd_replicate(ctx: CommandContext) -> int:
    from api.replicate import replicate_paper

    summary = replicate_paper(ctx.out, ctx.run, quick=ctx.args.quick, threads=ctx.threads)
    failed = [c for c in summary if not c.passed]
    print(f"acceptance: {len(summary) - len(failed)}/{len(summary)} passed")
    return EXIT_OK if not failed else 1


HANDLERS: Dict[str, Callable[[CommandContext], int]] = {
    'simulate': cmd_simulate,
    'holdlimit': cmd_holdlimit,
    'certify-lyap': cmd_certify_lyap,
    'certify-lk': cmd_certify_lk,
    'certify-hinf': cmd_certify_hinf,
    'synth-h2': cmd_synth_h2,
    'synth-lk': cmd_synth_lk,
    'sweep': cmd_sweep,
    'joint-sweep': cmd_joint_sweep,
    'human-error': cmd_human_error,
    'replicate-paper': cmd_replicate,
}


def cli_dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Parse argv, run the subcommand, and map failures onto exit codes"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE_ERROR

    if args.log_level:
        setup_logging(level=args.log_level)

    start = time.perf_counter()
    try:
        ctx = CommandContext(args)
        ctx.echo_config()
        with run_context(command=args.command, config_hash=config_hash(ctx.run)):
            code = HANDLERS[args.command](ctx)
    except CoarseGuidanceError as e:
        handle_operation_error(e.module, e.operation, e)
        print(f"error: {e}", file=sys.stderr)
        return exit_code_for(e)
    except ValueError as e:
        log_with_context(cli_logger, logging.ERROR, "Invalid arguments", command=args.command, error=str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE_ERROR

    log_analysis_operation(cli_logger, 'cli_report', args.command, 'completed',
                           duration=time.perf_counter() - start, exit_code=code, out=str(args.out))
    return code


def main() -> None:
    sys.exit(cli_dispatch())
