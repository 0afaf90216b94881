"""
Tests for the semidefinite feasibility oracle
"""

import numpy as np
import pytest

from certify.sdp_oracle import (Definiteness, LmiBlock, LmiProblem, SolverStatus, VariableKind, VariableSpec,
                                assemble_blocks, sdp_feasible, verify_assignment)
from utils.error_handling import NumericalFailureError


def lyapunov_problem(A):
    """Find P > 0 with A^T P + P A < 0"""
    m = A.shape[0]
    return LmiProblem(
        variables=[VariableSpec('P', (m, m), VariableKind.SYMMETRIC_PD)],
        blocks=[LmiBlock('decay', lambda v, bmat: A.T @ v['P'] + v['P'] @ A)],
        label='test_lyapunov',
    )


def floor_problem():
    """Minimize trace(P) subject to P >= I"""
    return LmiProblem(
        variables=[VariableSpec('P', (2, 2), VariableKind.SYMMETRIC)],
        blocks=[LmiBlock('floor', lambda v, bmat: v['P'] - np.eye(2), sense=Definiteness.POSITIVE, strict=False)],
        objective=lambda v: v['P'][0, 0] + v['P'][1, 1],
        label='test_floor',
    )


@pytest.mark.unit
class TestVerifyAssignment:

    def test_stable_assignment_passes(self):
        problem = lyapunov_problem(-np.eye(2))
        ok, extremes = verify_assignment(problem, {'P': np.eye(2)})
        assert ok
        assert extremes['decay'] == pytest.approx(-2.0)
        assert extremes['P'] == pytest.approx(1.0)

    def test_unstable_assignment_fails(self):
        problem = lyapunov_problem(np.eye(2))
        ok, extremes = verify_assignment(problem, {'P': np.eye(2)})
        assert not ok
        assert extremes['decay'] == pytest.approx(2.0)

    def test_indefinite_variable_fails(self):
        problem = lyapunov_problem(-np.eye(2))
        ok, _ = verify_assignment(problem, {'P': np.diag([1.0, -1.0])})
        assert not ok

    def test_nonstrict_block_tolerates_boundary(self):
        """A non-strict block may touch zero"""
        ok, extremes = verify_assignment(floor_problem(), {'P': np.eye(2)})
        assert ok
        assert extremes['floor'] == pytest.approx(0.0)

    def test_blocks_are_symmetrized(self):
        problem = LmiProblem(
            variables=[VariableSpec('X', (2, 2))],
            blocks=[LmiBlock('skewed', lambda v, bmat: v['X'])],
        )
        M = assemble_blocks(problem, {'X': np.array([[-1.0, 2.0], [0.0, -1.0]])})['skewed']
        assert np.allclose(M, M.T)
        assert np.allclose(M, [[-1.0, 1.0], [1.0, -1.0]])


@pytest.mark.integration
class TestSdpFeasible:

    def test_stable_matrix_is_feasible(self):
        result = sdp_feasible(lyapunov_problem(np.array([[-1.0, 0.5], [0.0, -2.0]])))
        assert result.feasible
        assert result.status == SolverStatus.FEASIBLE
        assert np.linalg.eigvalsh(result.assignment['P']).min() > 0

    def test_unstable_matrix_is_infeasible(self):
        result = sdp_feasible(lyapunov_problem(np.eye(2)))
        assert not result.feasible
        assert result.status == SolverStatus.INFEASIBLE
        assert result.assignment == {}

    def test_objective_minimized(self):
        result = sdp_feasible(floor_problem())
        assert result.feasible
        assert result.objective_value == pytest.approx(2.0, abs=1e-4)


@pytest.mark.unit
class TestSolverFailure:

    def test_no_definite_status_raises(self, mocker):
        """A solver stack that never settles is a numerical failure"""
        mocker.patch('certify.sdp_oracle.safe_solver_call', return_value={
            'success': False, 'status': None, 'solver': 'SCS',
            'error': 'no_solver_reached_a_definite_status', 'attempts': 4,
        })
        with pytest.raises(NumericalFailureError):
            sdp_feasible(lyapunov_problem(-np.eye(2)))

    def test_unexpected_status_raises(self, mocker):
        mocker.patch('certify.sdp_oracle.safe_solver_call', return_value={
            'success': True, 'status': 'unbounded', 'solver': 'CLARABEL', 'error': None, 'attempts': 1,
        })
        with pytest.raises(NumericalFailureError):
            sdp_feasible(lyapunov_problem(-np.eye(2)))
