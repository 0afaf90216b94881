"""
Tests for the acceptance runner plumbing
"""

import numpy as np
import pytest

from api.replicate import (CriterionResult, ReplicationRunner, quick_config, spectrum_distance, write_summary)
from schemas.params import RunConfig
from utils.error_handling import NumericalFailureError


@pytest.mark.unit
class TestSpectrumDistance:

    def test_structural_zero_removed(self):
        full = np.diag([0.0, -1.0, -2.0])
        reduced = np.diag([-1.0, -2.0])
        assert spectrum_distance(full, reduced) == pytest.approx(0.0)

    def test_mismatch_detected(self):
        assert spectrum_distance(np.diag([0.0, -1.0]), np.diag([-1.5])) == pytest.approx(0.5)


@pytest.mark.unit
class TestRunner:

    def test_quick_config(self):
        run = quick_config(RunConfig())
        assert run.sim.n_seeds == 10
        assert run.analysis.sim_granularity == 0.05

    def test_failed_check_recorded(self, tmp_path):
        """A raising check becomes a failed criterion instead of aborting the suite"""
        runner = ReplicationRunner(tmp_path, RunConfig())

        def broken():
            raise NumericalFailureError('lmi_cert', 'sdp_feasible', 'stalled')

        runner.evaluate('99_broken', 'anything', broken)
        runner.evaluate('98_fine', 'ok', lambda: ('ok', True))
        assert [r.passed for r in runner.results] == [False, True]
        assert runner.results[0].observed == 'error: NumericalFailureError'

    def test_summary_file(self, tmp_path):
        results = [CriterionResult('01_a', 'x', 'y', True), CriterionResult('02_b', 'x', 'z', False)]
        text = write_summary(tmp_path / 'summary.csv', results, RunConfig()).read_text()
        assert '# passed: 1' in text
        assert 'criterion,expected,observed,pass' in text
        assert '02_b,x,z,false' in text

    def test_criteria_are_ordered(self, tmp_path):
        names = [name for name, _, _ in ReplicationRunner(tmp_path, RunConfig()).criteria()]
        assert len(names) == 14
        assert names == sorted(names)
