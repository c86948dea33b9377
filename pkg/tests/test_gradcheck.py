"""Tests for gradcheck module."""

import json

import numpy as np
import pytest

from src.gntb import FULL_RANK, LOW_RANK
from src.gradcheck import (
    bieru_suite,
    compare,
    gntb_suite,
    gradcheck_stream,
    head_suite,
    small_model_config,
    tfe_suite,
)
from src.heads import CLASSIFY, REGRESS


class TestCompare:
    """Tests for compare."""

    def test_equal_arrays_pass(self):
        """Test identical gradients pass with zero error."""
        check = compare("s", "t", np.array([1.0, -2.0]), np.array([1.0, -2.0]))
        assert check.passed
        assert check.max_rel_error == 0.0

    def test_relative_error_reported(self):
        """Test a 10% error fails and is reported."""
        check = compare("s", "t", np.array([1.0]), np.array([1.1]))
        assert not check.passed
        assert check.max_rel_error == pytest.approx(0.1 / 1.1)

    def test_tiny_values_use_absolute_floor(self):
        """Test tiny values pass through the absolute floor."""
        assert compare("s", "t", np.array([1e-12]), np.array([-1e-12])).passed

    def test_floored_relative_error_reported_alongside(self):
        """Test the relative error with a 1e-8 denominator floor is reported too."""
        check = compare("s", "t", np.array([1e-6]), np.array([1.1e-6]))
        assert check.max_rel_error == pytest.approx(1e-7 / 1e-3)
        assert check.floored_rel_error == pytest.approx(1e-7 / 1.1e-6)
        tiny = compare("s", "t", np.array([1e-12]), np.array([-1e-12]))
        assert tiny.floored_rel_error == pytest.approx(2e-12 / 1e-8)
        assert "floored_rel_error" in tiny.to_dict()


class TestSuites:
    """Each suite passes on its small configuration."""

    @pytest.mark.parametrize("mode,k", [(LOW_RANK, 3), (FULL_RANK, 3), (LOW_RANK, 2)])
    def test_gntb(self, mode, k):
        """Test the GNTB suite."""
        assert all(c.passed for c in gntb_suite(mode, d=3, k=k, r=2, seed=0))

    def test_tfe(self):
        """Test the TFE suite."""
        assert all(c.passed for c in tfe_suite(d=3, hidden=2, filters=2, kernel=2, seed=0))

    @pytest.mark.parametrize("task", [CLASSIFY, REGRESS])
    @pytest.mark.parametrize("form", ["squared-norm", "norm"])
    def test_heads(self, task, form):
        """Test the head suite for each task and penalty form."""
        assert all(c.passed for c in head_suite(task, form, seed=0))

    @pytest.mark.parametrize("variant", ["gc", "lc"])
    @pytest.mark.parametrize("task", [CLASSIFY, REGRESS])
    def test_bieru(self, variant, task):
        """Test the full model suite for each variant and task."""
        checks = bieru_suite(small_model_config(variant, task=task), seed=0)
        assert {c.tensor for c in checks} >= {"fwd.gntb.U", "bwd.tfe.W_hh", "head.W", "utterances"}
        failed = [c.tensor for c in checks if not c.passed]
        assert failed == []

    @pytest.mark.parametrize("ablation", ["gntb-only", "tfe-only"])
    def test_bieru_ablations(self, ablation):
        """Test the full model suite under each ablation."""
        assert all(c.passed for c in bieru_suite(small_model_config("lc", ablation=ablation), 0))

    @pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
    @pytest.mark.parametrize("variant", ["gc", "lc"])
    def test_bieru_across_seeds(self, variant, seed):
        """Test BPTT gradients of every tensor on several initializations."""
        checks = bieru_suite(small_model_config(variant), seed=seed)
        assert [c.tensor for c in checks if not c.passed] == []

    def test_bieru_with_dropout(self):
        """Test the full model suite with replayed dropout."""
        assert all(c.passed for c in bieru_suite(small_model_config("gc", dropout=0.3), 0))


class TestGradcheckStream:
    """Tests for gradcheck_stream."""

    def _drain(self, stream):
        lines = []
        while True:
            try:
                lines.append(next(stream))
            except StopIteration as stop:
                return lines, stop.value

    def test_all_pass(self):
        """Test the stream summary when every tensor passes."""
        lines, code = self._drain(gradcheck_stream(seed=0))
        summary = json.loads(lines[-1])
        assert code == 0
        assert summary["passed"] is True
        assert summary["failed"] == []
        assert summary["tensors"] == len(lines) - 1
        assert summary["floored_rel_error"] >= 0.0

    def test_corrupted_gradient_is_caught(self):
        """Test a corrupted tensor is named in the summary."""
        lines, code = self._drain(gradcheck_stream(seed=0, corrupt="fwd.gntb.W"))
        summary = json.loads(lines[-1])
        assert code == 1
        assert summary["failed"]
        assert all(name.endswith(":fwd.gntb.W") for name in summary["failed"])
