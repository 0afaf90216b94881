"""
Tests for H2 guidance synthesis
"""

from unittest.mock import Mock

import numpy as np
import pytest

from schemas.params import H2Weights, OvmParams, Provenance
from synthesis.h2 import _h2_for, h2_controller, h2_problem, performance_weights, scale_controller
from traffic.ring_model import Controller, build_system, reduce, reduction_maps


@pytest.fixture
def clean_cache():
    _h2_for.cache_clear()
    yield
    _h2_for.cache_clear()


@pytest.mark.unit
class TestPerformanceWeights:

    def test_reduced_weight_matches_full_cost(self, rng):
        """x_r^T Q_red x_r equals the full-state cost of the embedded state"""
        w = H2Weights()
        Q_red, R = performance_weights(5, w)
        T, _ = reduction_maps(5)
        x_r = rng.normal(size=9)
        x = T @ x_r
        full = np.sum(np.tile([w.gamma_s, w.gamma_v], 5) ** 2 * x ** 2)
        assert Q_red.shape == (9, 9)
        assert x_r @ Q_red @ x_r == pytest.approx(full)
        assert np.allclose(R, [[1.0]])

    def test_input_weight(self):
        _, R = performance_weights(3, H2Weights(gamma_u=0.5))
        assert R[0, 0] == pytest.approx(0.25)

    def test_weights_must_be_positive(self):
        with pytest.raises(ValueError):
            H2Weights(gamma_s=0.0)


@pytest.mark.unit
class TestH2Problem:

    def test_structure(self, small_system):
        red = reduce(small_system, Controller.zero(4))
        Q, R = performance_weights(4, H2Weights())
        problem = h2_problem(red.A_red, red.B_red, Q, R)
        assert [spec.name for spec in problem.variables] == ['X', 'Y', 'Z']
        assert [block.name for block in problem.blocks] == ['lyapunov', 'schur']
        assert not any(block.strict for block in problem.blocks)
        assert problem.objective is not None


@pytest.mark.unit
class TestControllerCache:

    def test_repeated_requests_solve_once(self, mocker, clean_cache):
        solve = mocker.patch('synthesis.h2.solve_h2', return_value=Mock(name='solution'))
        sys = build_system(OvmParams(L=80.0, n=4))
        first = h2_controller(sys)
        second = h2_controller(build_system(OvmParams(L=80.0, n=4)))
        assert first is second
        assert solve.call_count == 1

    def test_distinct_parameters_solve_separately(self, mocker, clean_cache):
        solve = mocker.patch('synthesis.h2.solve_h2', side_effect=lambda sys, w: Mock())
        h2_controller(build_system(OvmParams(L=80.0, n=4)))
        h2_controller(build_system(OvmParams(L=80.0, n=4, beta=1.2)))
        h2_controller(build_system(OvmParams(L=80.0, n=4)), H2Weights(gamma_s=0.05))
        assert solve.call_count == 3


@pytest.mark.unit
class TestScaleController:

    def test_scales_applied_gain(self):
        c = Controller(K=np.ones((1, 4)), k_mult=0.5)
        scaled = scale_controller(c, 0.2)
        assert scaled.k_mult == pytest.approx(0.1)
        assert np.array_equal(scaled.K, c.K)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            scale_controller(Controller.zero(2), -0.1)


@pytest.mark.integration
class TestSolveH2:

    def test_small_ring_controller(self, small_system, small_h2):
        """Stabilizing on the reduced ring with a zero s1 entry"""
        c = small_h2.controller
        assert c.provenance == Provenance.H2
        assert c.K.shape == (1, 8)
        assert c.K[0, 0] == 0.0
        assert np.linalg.eigvals(reduce(small_system, c).closed_loop).real.max() < 0
        assert small_h2.objective_value > 0
        assert np.linalg.eigvalsh(small_h2.X).min() > 0

    def test_default_ring_controller(self, default_system, default_h2):
        assert default_h2.controller.K.shape == (1, 40)
        assert np.linalg.eigvals(reduce(default_system, default_h2.controller).closed_loop).real.max() < 0
