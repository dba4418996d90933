"""
Finite-difference checks: the checker itself, every primitive, attention,
and the full pretraining loss.
"""

import numpy as np
import pytest

from src.core.gradcheck import GradCheckReport, finite_diff_check, relative_error
from src.core.numerics import Tensor, precision
from src.services.gradcheck_suite import (
    NEGATIVE_CONTROL_SCALE, OP_TOLERANCE, attention_check, op_checks, pipeline_check, run_suite
)
from src.utils.error_handling import ContractError

OP_NAMES = [name for name, _, _, _ in op_checks(0)]


class TestChecker:

    def test_half_squared_norm(self, f64):
        theta = Tensor([0.7, -1.3, 2.1, 0.4], requires_grad=True)
        report = finite_diff_check(lambda: (theta * theta).sum() * 0.5, [theta], step=1e-3, tol=1e-8)
        assert report.passed
        assert report.coordinates_checked == 4

    def test_scaled_gradient_fails(self, f64):
        theta = Tensor([0.7, -1.3, 2.1, 0.4], requires_grad=True)
        report = finite_diff_check(lambda: (theta * theta).sum() * 0.5, [theta], step=1e-3,
                                   tol=OP_TOLERANCE, analytic_scale=NEGATIVE_CONTROL_SCALE)
        assert not report.passed
        assert report.max_relative_error == pytest.approx(0.01 / 1.01, rel=1e-3)

    def test_parameters_restored(self, f64):
        theta = Tensor([0.5, 1.5], requires_grad=True)
        before = theta.data.copy()
        finite_diff_check(lambda: (theta * theta * theta).sum(), [theta], step=1e-4)
        np.testing.assert_array_equal(theta.data, before)

    def test_requires_grad(self, f64):
        theta = Tensor([1.0])
        with pytest.raises(ContractError):
            finite_diff_check(lambda: theta.sum(), [theta])

    def test_non_deterministic_function(self, f64):
        theta = Tensor([1.0], requires_grad=True)
        noise = np.random.default_rng(0)
        with pytest.raises(ContractError):
            finite_diff_check(lambda: (theta * float(noise.normal())).sum(), [theta])

    def test_relative_error_floor(self):
        assert relative_error(0.0, 1e-9) == pytest.approx(1e-6)
        assert relative_error(2.0, 1.0) == pytest.approx(0.5)

    def test_report_row(self):
        row = GradCheckReport("matmul", 2e-9, 1e-6).to_row()
        assert row.startswith("matmul")
        assert "PASS" in row


class TestOperations:

    @pytest.mark.parametrize("index", range(len(OP_NAMES)), ids=OP_NAMES)
    def test_op_gradient(self, index):
        with precision(np.float64):
            name, f, params, tol = op_checks(0)[index]
            report = finite_diff_check(f, params, step=1e-5, tol=tol, op_name=name)
        assert report.passed, report.to_row()

    def test_attention_gradient(self):
        with precision(np.float64):
            name, f, params, tol = attention_check(0)
            report = finite_diff_check(f, params, step=1e-5, tol=tol, op_name=name)
        assert report.passed, report.to_row()


def test_mask_token_pipeline_is_named_apart():
    assert pipeline_check(0)[0] == "full_pipeline"
    assert pipeline_check(0, mask_token=True)[0] == "full_pipeline_mask_token"


@pytest.mark.slow
class TestPipeline:

    @pytest.mark.parametrize("mask_token", [False, True])
    def test_full_pipeline_gradient(self, mask_token):
        with precision(np.float64):
            name, f, params, tol = pipeline_check(0, mask_token=mask_token)
            report = finite_diff_check(f, params, step=1e-5, tol=tol, op_name=name)
        assert report.passed, report.to_row()

    def test_suite_passes_with_failing_control(self):
        result = run_suite(seed=0)
        assert result.passed, result.table()
        assert not result.control.passed
        assert "expected FAIL" in result.table()
        names = [report.op_name for report in result.reports]
        assert names[-2:] == ["full_pipeline", "full_pipeline_mask_token"]
