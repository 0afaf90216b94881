"""
Tests for the ring road model and its reduction
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings, strategies as st

from schemas.params import GuidanceKind, OvmParams
from traffic.ring_model import (Controller, build_system, closed_loop, equilibrium, injection_matrix,
                                lift_gain, optimal_velocity, optimal_velocity_slope, reduce,
                                reduction_maps, string_stability_margin)
from utils.error_handling import DimensionMismatchError


def spectrum_gap(full, reduced):
    full = np.linalg.eigvals(full)
    reduced = np.linalg.eigvals(reduced)
    full = np.delete(full, np.argmin(np.abs(full)))
    forward = max(np.min(np.abs(full - z)) for z in reduced)
    backward = max(np.min(np.abs(reduced - z)) for z in full)
    return max(forward, backward)


@pytest.mark.unit
class TestOptimalVelocity:

    def test_thresholds(self, default_params):
        """Zero below s_st, v_max above s_go, half speed at the midpoint"""
        assert optimal_velocity(default_params.s_st, default_params) == pytest.approx(0.0)
        assert optimal_velocity(default_params.s_go, default_params) == pytest.approx(30.0)
        assert optimal_velocity(20.0, default_params) == pytest.approx(15.0)
        assert optimal_velocity(1.0, default_params) == 0.0
        assert optimal_velocity(100.0, default_params) == pytest.approx(30.0)

    def test_monotone_and_bounded(self, default_params):
        """Nondecreasing and inside [0, v_max] on a dense grid"""
        s = np.linspace(0.0, 60.0, 10_000)
        v = optimal_velocity(s, default_params)
        assert np.all(np.diff(v) >= -1e-12)
        assert v.min() >= 0.0
        assert v.max() <= default_params.v_max

    def test_slope_at_midpoint(self, default_params):
        """V'(20) = pi/2 for the defaults"""
        assert optimal_velocity_slope(20.0, default_params) == pytest.approx(math.pi / 2, abs=1e-12)
        assert optimal_velocity_slope(40.0, default_params) == 0.0


@pytest.mark.unit
class TestEquilibrium:

    def test_default_equilibrium(self, default_params):
        """s* = 20, v* = 15 and the linearization coefficients"""
        eq = equilibrium(default_params)
        assert eq.s_star == pytest.approx(20.0)
        assert eq.v_star == pytest.approx(15.0)
        assert eq.a1 == pytest.approx(0.6 * math.pi / 2)
        assert eq.a2 == pytest.approx(1.5)
        assert eq.a3 == pytest.approx(0.9)

    def test_string_stability_margin(self, default_params):
        """Default ring is string unstable with margin 2.4 - pi"""
        margin = string_stability_margin(default_params)
        assert abs(margin - (2.4 - math.pi)) <= 1e-12
        assert margin < 0


@pytest.mark.unit
class TestBuildSystem:

    def test_shapes(self, default_system):
        """2n x 2n dynamics with a single input column"""
        assert default_system.A.shape == (40, 40)
        assert default_system.B.shape == (40, 1)
        assert default_system.B_d.shape == (40, 40)

    def test_acceleration_guidance_blocks(self, default_system):
        """Guided vehicle reads its own and its predecessor's velocity"""
        A, B = default_system.A, default_system.B
        eq = default_system.equilibrium
        assert A[0, 1] == -1.0
        assert A[0, 39] == 1.0
        assert np.all(A[1] == 0.0)
        assert B[1, 0] == 1.0
        assert np.count_nonzero(B) == 1
        assert A[2, 1] == 1.0
        assert A[3, 1] == pytest.approx(eq.a3)
        assert A[3, 2] == pytest.approx(eq.a1)
        assert A[3, 3] == pytest.approx(-eq.a2)

    def test_velocity_guidance_input(self, default_params):
        """Velocity guidance enters through alpha"""
        sys = build_system(default_params, GuidanceKind.VELOCITY)
        assert sys.B[1, 0] == pytest.approx(default_params.alpha)
        assert sys.A[1, 1] == pytest.approx(-sys.equilibrium.a2)

    def test_spacing_rows_conserve_ring_length(self, default_system):
        """Spacing derivatives sum to zero for every state"""
        assert np.allclose(default_system.A[0::2].sum(axis=0), 0.0)

    def test_disturbance_enters_velocity_rows(self, default_system):
        assert np.array_equal(np.diag(default_system.B_d), np.tile([0.0, 1.0], 20))

    def test_matrices_are_read_only(self, default_system):
        with pytest.raises(ValueError):
            default_system.A[0, 0] = 1.0


@pytest.mark.unit
class TestController:

    def test_negative_scale_rejected(self):
        with pytest.raises(ValueError):
            Controller(K=np.zeros((1, 4)), k_mult=-1.0)

    def test_with_scale(self):
        """Rescaling keeps K and changes the effective gain"""
        c = Controller(K=np.ones((1, 4)))
        scaled = c.with_scale(0.2)
        assert np.array_equal(scaled.K, c.K)
        assert np.allclose(scaled.effective_gain, 0.2)

    def test_gain_shape_checked(self, default_system):
        with pytest.raises(DimensionMismatchError):
            closed_loop(default_system, Controller.zero(5))

    def test_closed_loop_sign(self, small_system):
        """A1 = -B k_mult K"""
        K = np.arange(8.0).reshape(1, 8)
        c = Controller(K=K, k_mult=0.5)
        assert np.allclose(injection_matrix(small_system, c), -small_system.B @ (0.5 * K))
        assert np.allclose(closed_loop(small_system, c), small_system.A - small_system.B @ (0.5 * K))


@pytest.mark.unit
class TestReduction:

    def test_maps_are_inverse_on_manifold(self, rng):
        """R T = I and T R x = x whenever the spacings sum to zero"""
        T, R = reduction_maps(5)
        assert np.allclose(R @ T, np.eye(9))
        x = rng.normal(size=10)
        x[0] = -x[2::2].sum()
        assert np.allclose(T @ (R @ x), x)

    def test_zero_gain_spectrum(self, default_system):
        """Reduced spectrum is the full one minus the structural zero"""
        red = reduce(default_system, Controller.zero(20))
        assert spectrum_gap(default_system.A, red.A_red) <= 1e-8

    def test_reduced_dimension(self, default_system):
        red = reduce(default_system, Controller.zero(20))
        assert red.A_red.shape == (39, 39)
        assert red.B_red.shape == (39, 1)
        assert red.K_red.shape == (1, 39)

    @hyp_settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_dynamics_agree_on_manifold(self, seed):
        """(A - BK) T x_r stays on the manifold and projects to the reduced closed loop"""
        rng = np.random.default_rng(seed)
        sys = build_system(OvmParams(L=float(rng.uniform(60, 160)), n=int(rng.integers(3, 8))))
        c = Controller(K=rng.normal(size=(1, sys.dim)))
        red = reduce(sys, c)
        x_r = rng.normal(size=red.dim)
        xdot = closed_loop(sys, c) @ (red.embedding @ x_r)
        assert abs(xdot[0::2].sum()) <= 1e-9 * max(1.0, np.abs(xdot).max())
        assert np.allclose(red.projection @ xdot, red.closed_loop @ x_r)

    def test_lift_gain_round_trip(self, rng):
        """Lifted gain reproduces K_red on the manifold"""
        n = 6
        K_red = rng.normal(size=(1, 2 * n - 1))
        T, _ = reduction_maps(n)
        K = lift_gain(K_red, n)
        assert K.shape == (1, 2 * n)
        assert K[0, 0] == 0.0
        assert np.allclose(K @ T, K_red)

    def test_lift_gain_shape_checked(self):
        with pytest.raises(DimensionMismatchError):
            lift_gain(np.zeros((1, 7)), 5)
