"""
Tests for the command line interface
"""

import numpy as np
import pytest

from api.cli import build_parser, cli_dispatch
from backend.orchestrator.holdlimit_search import HoldLimitFlag, HoldLimitResult
from config.loader import config_hash, load_run_config
from schemas.params import Provenance
from traffic.ring_model import Controller
from utils.error_handling import NumericalFailureError
from utils.matrix_io import read_header, write_controller

SMALL = ['--set', 'L=80', '--set', 'n=4']


def holdlimit_result():
    return HoldLimitResult(limit=1.5, flag=HoldLimitFlag.OK, lower_witness=1.5, upper_witness=1.51,
                           trials={1.5: True, 1.51: False}, collisions={1.51: 2})


@pytest.mark.unit
class TestParser:

    def test_common_options(self):
        args = build_parser().parse_args(['simulate', '--delta', '1.0', '--set', 'beta=1.2', '--out', 'x'])
        assert args.command == 'simulate'
        assert args.delta == 1.0
        assert args.overrides == ['beta=1.2']
        assert args.out == 'x'

    def test_value_lists(self):
        args = build_parser().parse_args(['sweep', '--param', 'beta', '--values', '0.6,0.9,1.2'])
        assert args.values == [0.6, 0.9, 1.2]


@pytest.mark.unit
class TestExitCodes:

    def test_missing_required_argument(self, tmp_path):
        assert cli_dispatch(['simulate', '--out', str(tmp_path)]) == 2

    def test_unknown_subcommand(self):
        assert cli_dispatch(['fly']) == 2

    def test_help(self, capsys):
        assert cli_dispatch(['--help']) == 0

    def test_unknown_configuration_key(self, tmp_path):
        assert cli_dispatch(['holdlimit', '--set', 'warp=9', '--out', str(tmp_path)]) == 2

    def test_invalid_hold_length_is_a_domain_error(self, tmp_path):
        assert cli_dispatch(['synth-lk', '--delta-in', '-1', *SMALL, '--out', str(tmp_path)]) == 1

    def test_numerical_failure(self, mocker, tmp_path):
        mocker.patch('api.cli.controller_for', return_value=Controller.zero(4))
        mocker.patch('api.cli.lk_hold_limit_search',
                     side_effect=NumericalFailureError('lmi_cert', 'lk_hold_limit', '5 of 12 trials failed'))
        assert cli_dispatch(['certify-lk', *SMALL, '--out', str(tmp_path)]) == 3

    def test_unknown_estimate(self, mocker, tmp_path):
        sweep = mocker.patch('api.cli.sensitivity_sweep')
        code = cli_dispatch(['sweep', '--param', 'beta', '--values', '0.9', '--estimates', 'sim,guess',
                             *SMALL, '--out', str(tmp_path)])
        assert code == 2
        sweep.assert_not_called()


@pytest.mark.unit
class TestCommands:

    def test_holdlimit_writes_results(self, mocker, tmp_path, capsys):
        mocker.patch('api.cli.controller_for', return_value=Controller.zero(4))
        mocker.patch('api.cli.simulation_hold_limit', return_value=holdlimit_result())

        assert cli_dispatch(['holdlimit', *SMALL, '--out', str(tmp_path)]) == 0
        assert (tmp_path / 'config_resolved.ini').is_file()
        witness = (tmp_path / 'holdlimit_witness.csv').read_text()
        assert witness.startswith('# tool: coarse-guidance')
        assert 'simulation hold limit: 1.5 s' in capsys.readouterr().out

    def test_controller_file_scaled_by_run(self, mocker, tmp_path):
        """A loaded controller is scaled by the run's k_mult"""
        path = write_controller(tmp_path / 'k.txt', Controller(K=np.ones((1, 8))))
        search = mocker.patch('api.cli.simulation_hold_limit', return_value=holdlimit_result())
        synthesize = mocker.patch('api.cli.controller_for')

        code = cli_dispatch(['holdlimit', *SMALL, '--set', 'k_mult=0.5', '--controller', str(path),
                             '--out', str(tmp_path / 'out')])
        assert code == 0
        synthesize.assert_not_called()
        used = search.call_args[0][1]
        assert used.k_mult == 0.5
        assert np.array_equal(used.K, np.ones((1, 8)))

    def test_controller_output_has_provenance(self, mocker, tmp_path):
        solution = mocker.Mock(controller=Controller(K=np.ones((1, 8)), provenance=Provenance.H2),
                               objective_value=1.25)
        mocker.patch('api.cli.h2_controller', return_value=solution)

        assert cli_dispatch(['synth-h2', *SMALL, '--out', str(tmp_path)]) == 0
        header = read_header(tmp_path / 'controller_h2.txt')
        assert header['config_hash'] == config_hash(load_run_config(overrides=SMALL[1::2]))
        assert header['provenance'] == 'h2'
        assert read_header(tmp_path / 'config_resolved.ini')['config_hash'] == header['config_hash']

    def test_certify_lk_uses_reaction_delay(self, mocker, tmp_path):
        mocker.patch('api.cli.controller_for', return_value=Controller.zero(4))
        search = mocker.patch('api.cli.lk_hold_limit_search', return_value=mocker.Mock(
            limit=0.7, search=mocker.Mock(trials={0.7: True, 0.71: False}), numerical_failures=0))

        code = cli_dispatch(['certify-lk', *SMALL, '--set', 'disturbance=reaction_delay', '--set', 'Sigma=0.3',
                             '--out', str(tmp_path)])
        assert code == 0
        assert search.call_args.kwargs['Sigma'] == 0.3
        assert read_header(tmp_path / 'lk_trials.csv')['Sigma'] == '0.3'

    def test_sweep_uses_given_values(self, mocker, tmp_path):
        sweep = mocker.patch('api.cli.sensitivity_sweep', return_value=[])
        assert cli_dispatch(['sweep', '--param', 'k_mult', '--values', '0.1,0.5', '--estimates', 'sim',
                             *SMALL, '--out', str(tmp_path)]) == 0
        spec, run, estimates, threads = sweep.call_args[0]
        assert spec.values == (0.1, 0.5)
        assert estimates == ['sim']
        assert (tmp_path / 'sweep_k_mult.csv').is_file()

    def test_replication_failure_exit_code(self, mocker, tmp_path):
        mocker.patch('api.replicate.replicate_paper', return_value=[mocker.Mock(passed=True),
                                                                    mocker.Mock(passed=False)])
        assert cli_dispatch(['replicate-paper', '--quick', *SMALL, '--out', str(tmp_path)]) == 1
