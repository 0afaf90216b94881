"""
Tests for hold-limit orchestration and the experiment sweeps
"""

import math
from unittest.mock import Mock

import numpy as np
import pytest

from backend.orchestrator.holdlimit_search import (DEFAULT_SWEEP_GRIDS, HoldLimitFlag, HoldLimitResult, SweepRow,
                                                   SweepSpec, apply_parameter, default_joint_scenarios,
                                                   evaluate_point, human_error_sweep, joint_scenario_sweep,
                                                   sensitivity_sweep, simulation_hold_limit)
from certify.lyapunov import LyapunovCertificate
from config.settings import settings
from schemas.params import (AnalysisConfig, HumanErrorKind, OvmParams, RunConfig, SimConfig,
                            SweepParameter)
from traffic.ring_model import Controller
from traffic.simulator import StabilityStatus
from utils.error_handling import InfeasibleError, NumericalFailureError

MODULE = 'backend.orchestrator.holdlimit_search'


@pytest.fixture
def small_run():
    return RunConfig(ovm=OvmParams(L=80.0, n=4))


def threshold_classifier(threshold, collided=3):
    """classify stand-in driven by the evaluated hold length"""
    def fake(delta, cfg=None):
        if delta <= threshold:
            return Mock(status=StabilityStatus.CONVERGED, n_collided=0, n_not_converged=0)
        return Mock(status=StabilityStatus.COLLIDED, n_collided=collided, n_not_converged=0)
    return fake


@pytest.fixture
def trial_by_delta(mocker):
    """simulate_ensemble hands the hold length straight to classify"""
    return mocker.patch(f'{MODULE}.simulate_ensemble', side_effect=lambda sys, c, delta, *a, **k: delta)


@pytest.mark.unit
class TestSimulationHoldLimit:

    def test_limit_and_witnesses(self, mocker, trial_by_delta, small_system):
        mocker.patch(f'{MODULE}.classify', side_effect=threshold_classifier(1.5))
        result = simulation_hold_limit(small_system, Controller.zero(4), SimConfig(n_seeds=3))
        assert result.limit == pytest.approx(1.5)
        assert result.flag == HoldLimitFlag.OK
        assert result.upper_witness == pytest.approx(1.51)
        assert result.n_collided == 3

    def test_same_seeds_at_every_trial(self, mocker, trial_by_delta, small_system):
        mocker.patch(f'{MODULE}.classify', side_effect=threshold_classifier(1.5))
        simulation_hold_limit(small_system, Controller.zero(4), SimConfig(n_seeds=3))
        assert trial_by_delta.call_count > 2
        assert all(call.kwargs['seeds'] == [0, 1, 2] for call in trial_by_delta.call_args_list)

    def test_unstable_at_floor(self, mocker, trial_by_delta, small_system):
        mocker.patch(f'{MODULE}.classify', side_effect=threshold_classifier(0.0))
        result = simulation_hold_limit(small_system, Controller.zero(4))
        assert result.limit == 0.0
        assert result.flag == HoldLimitFlag.UNSTABLE_AT_FLOOR

    def test_stable_at_ceiling(self, mocker, trial_by_delta, small_system):
        mocker.patch(f'{MODULE}.classify', side_effect=threshold_classifier(math.inf))
        result = simulation_hold_limit(small_system, Controller.zero(4), high=2.0, granularity=0.5)
        assert result.limit == pytest.approx(2.0)
        assert result.flag == HoldLimitFlag.STABLE_AT_CEILING
        assert result.n_collided == 0

    def test_not_converged_is_unstable(self, mocker, trial_by_delta, small_system):
        def fake(delta, cfg=None):
            status = StabilityStatus.CONVERGED if delta <= 0.7 else StabilityStatus.NOT_CONVERGED
            return Mock(status=status, n_collided=0, n_not_converged=1)

        mocker.patch(f'{MODULE}.classify', side_effect=fake)
        result = simulation_hold_limit(small_system, Controller.zero(4), granularity=0.1)
        assert result.limit == pytest.approx(0.7)


@pytest.mark.unit
class TestSweepSpec:

    def test_values_become_floats(self):
        spec = SweepSpec(SweepParameter.BETA, (1, 2))
        assert spec.values == (1.0, 2.0)
        assert spec.resynthesize is True

    def test_k_mult_keeps_controller(self):
        assert SweepSpec(SweepParameter.K_MULT, (0.1, 1.0)).resynthesize is False

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            SweepSpec(SweepParameter.BETA, ())

    def test_unsorted_rejected(self):
        with pytest.raises(ValueError):
            SweepSpec(SweepParameter.BETA, (1.0, 0.5))

    def test_system_parameter_needs_resynthesis(self):
        with pytest.raises(ValueError):
            SweepSpec(SweepParameter.L, (300.0,), resynthesize=False)

    def test_default_grids_are_valid(self):
        for parameter, values in DEFAULT_SWEEP_GRIDS.items():
            SweepSpec(parameter, values)
        assert DEFAULT_SWEEP_GRIDS[SweepParameter.BETA][0] == 0.3
        assert DEFAULT_SWEEP_GRIDS[SweepParameter.BETA][-1] == 2.0


@pytest.mark.unit
class TestApplyParameter:

    def test_vehicle_count_is_integral(self, run_config):
        assert apply_parameter(run_config, SweepParameter.N, 18.0).ovm.n == 18

    def test_driver_parameter(self, run_config):
        point = apply_parameter(run_config, SweepParameter.BETA, 1.2)
        assert point.ovm.beta == 1.2
        assert point.ovm.alpha == run_config.ovm.alpha

    def test_weight(self, run_config):
        assert apply_parameter(run_config, SweepParameter.GAMMA_V, 0.2).weights.gamma_v == 0.2

    def test_k_mult(self, run_config):
        point = apply_parameter(run_config, SweepParameter.K_MULT, 0.05)
        assert point.k_mult == 0.05
        assert point.ovm == run_config.ovm


@pytest.mark.unit
class TestJointScenarios:

    def test_endpoints(self):
        """First scenario is the default point; all four parameters move monotonically"""
        scenarios = default_joint_scenarios(7)
        assert [s.index for s in scenarios] == list(range(1, 8))
        first, last = scenarios[0], scenarios[-1]
        assert (first.alpha, first.beta, first.s_st, first.s_go) == pytest.approx((0.6, 0.9, 5.0, 35.0))
        assert (last.alpha, last.beta, last.s_st, last.s_go) == pytest.approx((0.3, 1.5, 11.0, 29.0))
        assert np.all(np.diff([s.beta for s in scenarios]) > 0)

    def test_rows_follow_scenarios(self, mocker, run_config):
        evaluate = mocker.patch(f'{MODULE}.evaluate_point',
                                side_effect=lambda run, p, v, e, t, base=None: SweepRow(parameter=p, param_value=v))
        rows = joint_scenario_sweep(default_joint_scenarios(3), run_config)
        assert [row.param_value for row in rows] == [1, 2, 3]
        last_run = evaluate.call_args_list[-1][0][0]
        assert last_run.ovm.s_go == pytest.approx(29.0)


@pytest.mark.unit
class TestEvaluatePoint:

    def test_all_estimates(self, mocker, small_run):
        """A failing estimate leaves NaN and a reason; the others are kept"""
        mocker.patch(f'{MODULE}.controller_for', return_value=Controller.zero(4))
        mocker.patch(f'{MODULE}.simulation_hold_limit', return_value=HoldLimitResult(
            limit=1.5, flag=HoldLimitFlag.OK, lower_witness=1.5, upper_witness=1.51, collisions={1.51: 2}))
        mocker.patch(f'{MODULE}.lk_hold_limit',
                     side_effect=NumericalFailureError('lmi_cert', 'lk_hold_limit', 'too many failures'))
        mocker.patch(f'{MODULE}.lyapunov_hold_bound', return_value=Mock(delta_bound=1e-3))

        row = evaluate_point(small_run, 'beta', 0.9)
        assert row.sim_hold_limit == 1.5
        assert row.n_collided == 2
        assert (row.lower_witness, row.upper_witness) == (1.5, 1.51)
        assert math.isnan(row.lk_hold_limit)
        assert row.reasons['lk_hold_limit'].startswith('NumericalFailureError')
        assert row.lyap_bound == 1e-3
        assert row.ovm_margin == pytest.approx(2.4 - math.pi)

    def test_controller_failure(self, mocker, small_run):
        mocker.patch(f'{MODULE}.controller_for', side_effect=InfeasibleError('h2_synth', 'h2_controller', 'no gain'))
        row = evaluate_point(small_run, 'beta', 0.9)
        assert 'controller' in row.reasons
        assert math.isnan(row.sim_hold_limit)
        assert math.isnan(row.lyap_bound)

    def test_skipped_estimates(self, mocker, small_run):
        mocker.patch(f'{MODULE}.controller_for', return_value=Controller.zero(4))
        mocker.patch(f'{MODULE}.lyapunov_hold_bound', return_value=Mock(delta_bound=2e-3))
        simulate = mocker.patch(f'{MODULE}.simulation_hold_limit')

        row = evaluate_point(small_run, 'beta', 0.9, estimates=('lyap',))
        simulate.assert_not_called()
        assert row.reasons == {'sim_hold_limit': 'not requested', 'lk_hold_limit': 'not requested'}
        assert row.lyap_bound == 2e-3


@pytest.mark.unit
class TestSensitivitySweep:

    def test_rows_in_value_order(self, mocker, run_config):
        evaluate = mocker.patch(f'{MODULE}.evaluate_point',
                                side_effect=lambda run, p, v, e, t, base=None: SweepRow(parameter=p, param_value=v))
        rows = sensitivity_sweep(SweepSpec(SweepParameter.BETA, (0.6, 0.9, 1.2)), run_config)
        assert [row.param_value for row in rows] == [0.6, 0.9, 1.2]
        assert [call[0][0].ovm.beta for call in evaluate.call_args_list] == [0.6, 0.9, 1.2]

    def test_parallel_rows_keep_order(self, mocker, run_config):
        mocker.patch.object(settings, 'row_workers', 3)
        mocker.patch(f'{MODULE}.evaluate_point',
                     side_effect=lambda run, p, v, e, t, base=None: SweepRow(parameter=p, param_value=v))
        rows = sensitivity_sweep(SweepSpec(SweepParameter.K_MULT, (0.1, 0.2, 0.5, 1.0)), run_config)
        assert [row.param_value for row in rows] == [0.1, 0.2, 0.5, 1.0]

    def test_invalid_point_recorded(self, mocker, run_config):
        """An out-of-range value becomes a failed row instead of aborting the sweep"""
        evaluate = mocker.patch(f'{MODULE}.evaluate_point',
                                side_effect=lambda run, p, v, e, t, base=None: SweepRow(parameter=p, param_value=v))
        rows = sensitivity_sweep(SweepSpec(SweepParameter.ALPHA, (-0.1, 0.5)), run_config)
        assert 'config' in rows[0].reasons
        assert rows[1].reasons == {}
        assert evaluate.call_count == 1


@pytest.mark.unit
class TestSweepResynthesis:

    @pytest.fixture
    def h2(self, mocker):
        mocker.patch(f'{MODULE}.lyapunov_hold_bound', return_value=Mock(delta_bound=1e-3))
        return mocker.patch(f'{MODULE}.h2_controller',
                            return_value=Mock(controller=Controller(K=np.ones((1, 8)))))

    def test_weight_sweep_keeps_base_gain(self, h2, small_run):
        """Without resynthesis every point uses the base weights' controller"""
        spec = SweepSpec(SweepParameter.GAMMA_V, (0.1, 0.3), resynthesize=False)
        rows = sensitivity_sweep(spec, small_run, estimates=('lyap',))
        assert h2.call_count == 1
        assert h2.call_args[0][1] == small_run.weights
        assert [row.lyap_bound for row in rows] == [1e-3, 1e-3]

    def test_weight_sweep_resynthesizes_by_default(self, h2, small_run):
        sensitivity_sweep(SweepSpec(SweepParameter.GAMMA_V, (0.1, 0.3)), small_run, estimates=('lyap',))
        assert sorted(call[0][1].gamma_v for call in h2.call_args_list) == [0.1, 0.3]

    def test_k_mult_sweep_scales_one_gain(self, mocker, h2, small_run):
        lyap = mocker.patch(f'{MODULE}.lyapunov_hold_bound', return_value=Mock(delta_bound=1e-3))
        sensitivity_sweep(SweepSpec(SweepParameter.K_MULT, (0.5, 2.0)), small_run, estimates=('lyap',))
        assert h2.call_count == 1
        assert sorted(call[0][1].k_mult for call in lyap.call_args_list) == [0.5, 2.0]

    def test_base_synthesis_failure_fills_every_row(self, h2, small_run):
        h2.side_effect = InfeasibleError('h2_synth', 'h2_controller', 'no gain')
        spec = SweepSpec(SweepParameter.GAMMA_S, (0.01, 0.02), resynthesize=False)
        rows = sensitivity_sweep(spec, small_run)
        assert [row.param_value for row in rows] == [0.01, 0.02]
        assert all(row.reasons['controller'].startswith('InfeasibleError') for row in rows)


@pytest.mark.unit
class TestHumanErrorSweep:

    @pytest.fixture
    def patched(self, mocker):
        mocker.patch(f'{MODULE}.controller_for', return_value=Controller.zero(4))
        mocker.patch(f'{MODULE}.lyapunov_hold_bound', return_value=LyapunovCertificate(
            P=np.eye(7), Q=np.eye(7), sigma_min_Q=1.0, sigma_max_P=1.0, sigma_max_A=1.0,
            sigma_max_A1=1.0, sigma_max_Acl=1.5, delta_bound=0.25, residual=0.0))
        return mocker.patch(f'{MODULE}.simulation_hold_limit', return_value=HoldLimitResult(
            limit=0.2, flag=HoldLimitFlag.OK, lower_witness=0.2, upper_witness=0.21))

    def test_delay_rows(self, patched):
        run = RunConfig(ovm=OvmParams(L=80.0, n=4), analysis=AnalysisConfig(D_v_bar=0.5))
        rows = human_error_sweep(HumanErrorKind.DELAY_HOLD_LIMIT, [0.0, 0.2, 1.0], run)
        assert [row.theory_value for row in rows] == pytest.approx([0.25, 0.15, 0.0])
        assert [row.flag for row in rows] == ['ok', 'ok', 'floored']
        assert all(row.sim_value == 0.2 for row in rows)
        assert patched.call_count == 3

    def test_delay_uses_pilot_estimate(self, mocker, patched):
        pilot = mocker.patch(f'{MODULE}.pilot_derivative_ratio', return_value=0.5)
        rows = human_error_sweep(HumanErrorKind.DELAY_HOLD_LIMIT, [0.2, 0.4], RunConfig(ovm=OvmParams(L=80.0, n=4)))
        assert pilot.call_args[0][3] == 0.4
        assert rows[0].theory_value == pytest.approx(0.15)

    def test_simulation_failure_recorded(self, mocker, patched):
        patched.side_effect = NumericalFailureError('holdlimit_search', 'simulate', 'diverged')
        run = RunConfig(ovm=OvmParams(L=80.0, n=4), analysis=AnalysisConfig(D_v_bar=0.5))
        rows = human_error_sweep(HumanErrorKind.DELAY_HOLD_LIMIT, [0.1], run)
        assert math.isnan(rows[0].sim_value)
        assert 'sim_value' in rows[0].reasons
