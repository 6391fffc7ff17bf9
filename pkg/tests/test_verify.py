"""Tests for the named self-checks and their fault-injection hooks."""

import pytest

from polyspeech.errors import ContractError
from polyspeech.verify import (
    CheckResult,
    check_adam_oracle,
    check_closed_form_losses,
    check_gradient_reversal,
    check_gradients,
    check_identity_at_init,
    check_masking_statistics,
    format_report,
    injected_fault,
    run_all_checks,
)


class TestChecksPassOnAHealthyBuild:
    def test_gradients(self):
        r = check_gradients()
        assert r.passed and r.value < r.threshold

    def test_identity_at_init(self):
        assert check_identity_at_init().passed

    def test_gradient_reversal(self):
        assert check_gradient_reversal().passed

    def test_masking_statistics(self):
        assert check_masking_statistics().passed

    def test_adam_oracle(self):
        assert check_adam_oracle().passed

    def test_closed_form_losses(self):
        assert check_closed_form_losses().passed

    def test_run_all_returns_one_result_per_check(self):
        results = run_all_checks()
        assert len(results) == 6
        assert all(isinstance(r, CheckResult) for r in results)
        assert all(r.passed for r in results)
        assert len({r.name for r in results}) == 6


class TestFaultInjectionProvesTheChecksHaveTeeth:
    def test_a_tape_invisible_loss_term_fails_the_gradient_check(self):
        with injected_fault("gradient_bias"):
            r = check_gradients()
        assert not r.passed
        assert r.value > r.threshold

    def test_a_perturbed_adapter_fails_the_identity_check(self):
        with injected_fault("identity_offset"):
            assert not check_identity_at_init().passed

    def test_a_skipped_sign_flip_fails_the_reversal_check(self):
        with injected_fault("reversal_skipped"):
            assert not check_gradient_reversal().passed

    def test_a_biased_mask_rate_fails_the_statistics_check(self):
        with injected_fault("mask_rate_bias"):
            assert not check_masking_statistics().passed

    def test_epsilon_inside_the_root_fails_the_adam_check(self):
        with injected_fault("adam_eps_inside_root"):
            assert not check_adam_oracle().passed

    def test_faults_clear_when_the_block_exits(self):
        with injected_fault("reversal_skipped"):
            pass
        assert check_gradient_reversal().passed

    def test_unknown_fault_names_are_rejected(self):
        with pytest.raises(ContractError):
            with injected_fault("not_a_fault"):
                pass


class TestReportFormat:
    def test_one_line_per_check_plus_a_tally(self):
        results = run_all_checks()
        report = format_report(results)
        lines = report.strip().split("\n")
        assert len(lines) == len(results) + 1
        assert all(line.startswith("[PASS]") for line in lines[:-1])
        assert lines[-1].startswith(f"{len(results)}/{len(results)}")

    def test_failures_are_named_in_the_tally(self):
        with injected_fault("adam_eps_inside_root"):
            results = run_all_checks()
        report = format_report(results)
        assert "[FAIL] adam_oracle" in report
        assert "failing: adam_oracle" in report
