"""Penalty schedules: growth validation, derived constants, integrability."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from penflow.oracles import make_affine_distance_constraint, make_zero_constraint
from penflow.schedules import (
    DynamicsParams,
    PenaltySchedule,
    _adaptive_simpson,
    condition_H_check,
    k_max,
    validate_growth,
)


class TestPenaltySchedule:
    def test_families_positive_and_nondecreasing(self):
        ts = np.linspace(0.0, 200.0, 1001)
        for sched in [PenaltySchedule.shifted_power(1.5, 30.0),
                      PenaltySchedule.exponential(2.0, 0.1),
                      PenaltySchedule.constant(5.0)]:
            beta = np.asarray(sched.beta(ts))
            beta_dot = np.asarray(sched.beta_dot(ts))
            assert np.all(beta > 0.0)
            assert np.all(beta_dot >= 0.0)

    def test_derivative_matches_finite_difference(self):
        h = 1e-6
        for sched in [PenaltySchedule.shifted_power(2.0, 1.0, 3.0),
                      PenaltySchedule.exponential(1.5, 0.3),
                      PenaltySchedule.constant(2.0)]:
            for t in np.linspace(0.1, 50.0, 200):
                fd = (sched.beta(t + h) - sched.beta(t - h)) / (2 * h)
                exact = sched.beta_dot(t)
                assert abs(fd - exact) <= 1e-8 * (1.0 + abs(exact)) + 1e-8

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            PenaltySchedule.shifted_power(1.0, 30.0)  # alpha must exceed 1
        with pytest.raises(ValueError):
            PenaltySchedule.shifted_power(1.5, -1.0)
        with pytest.raises(ValueError):
            PenaltySchedule.exponential(0.0, 1.0)
        with pytest.raises(ValueError):
            PenaltySchedule.constant(-2.0)

    def test_json_roundtrip(self):
        for sched in [PenaltySchedule.shifted_power(1.5, 30.0, 0.04),
                      PenaltySchedule.exponential(1.0, 2.0),
                      PenaltySchedule.constant(7.0)]:
            again = PenaltySchedule.from_json(sched.to_json())
            assert again == sched
        with pytest.raises(ValueError, match="unknown schedule"):
            PenaltySchedule.from_json({"family": "log"})

    def test_tends_to_infinity_flag(self):
        assert PenaltySchedule.shifted_power(1.5, 1.0).tends_to_infinity
        assert PenaltySchedule.exponential(1.0, 0.5).tends_to_infinity
        assert not PenaltySchedule.constant(3.0).tends_to_infinity


class TestDynamicsParams:
    def test_k_max_examples(self):
        assert k_max(DynamicsParams(3.0, 2.0, 0.5)) == pytest.approx(1.0 / 14.0)
        # tie case 2*gamma/3 == 2/lam
        assert k_max(DynamicsParams(1.5, 2.0, 0.5)) == pytest.approx(1.0 / 8.0)
        assert k_max(DynamicsParams(0.3, 1.0, 0.9)) == pytest.approx(0.9 * 0.2 / 1.3)

    def test_validation(self):
        with pytest.raises(ValueError):
            DynamicsParams(-1.0, 1.0, 0.5)
        with pytest.raises(ValueError):
            DynamicsParams(1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            DynamicsParams(1.0, 1.0, 0.0)

    @given(gamma=st.floats(1e-3, 1e3), lam=st.floats(1e-3, 1e3),
           theta=st.floats(1e-6, 1.0, exclude_max=True))
    @settings(max_examples=200)
    def test_epsilon_identity(self, gamma, lam, theta):
        p = DynamicsParams(gamma, lam, theta)
        lhs = p.epsilon
        rhs = (1.0 + lam * gamma) * p.k_max
        assert abs(lhs - rhs) <= 4.0 * np.finfo(float).eps * abs(lhs)
        assert p.k_max > 0.0 and p.epsilon > 0.0


class TestValidateGrowth:
    def test_exponential_fails(self):
        rep = validate_growth(PenaltySchedule.exponential(1.0, 2.0),
                              DynamicsParams(3.0, 2.0, 0.5))
        assert not rep.passed
        assert rep.sup_ratio_analytic == pytest.approx(2.0)

    def test_shifted_power_passes(self):
        rep = validate_growth(PenaltySchedule.shifted_power(1.5, 30.0),
                              DynamicsParams(3.0, 2.0, 0.5))
        assert rep.passed
        assert rep.sup_ratio_analytic == pytest.approx(0.05)
        assert rep.certified_k == pytest.approx(0.05)
        assert rep.k_max == pytest.approx(1.0 / 14.0)

    def test_constant_passes_growth_but_flagged_bounded(self):
        rep = validate_growth(PenaltySchedule.constant(5.0),
                              DynamicsParams(3.0, 2.0, 0.5))
        assert rep.passed
        assert rep.sup_ratio_analytic == 0.0
        assert not rep.tends_to_infinity

    def test_errors_on_bad_horizon(self):
        with pytest.raises(ValueError):
            validate_growth(PenaltySchedule.constant(1.0),
                            DynamicsParams(1.0, 1.0, 0.5), horizon=-1.0)

    @given(theta_lo=st.floats(0.05, 0.9), bump=st.floats(0.01, 0.09))
    @settings(max_examples=100)
    def test_verdict_monotone_in_theta(self, theta_lo, bump):
        sched = PenaltySchedule.shifted_power(1.5, 20.0)
        lo = validate_growth(sched, DynamicsParams(3.0, 2.0, theta_lo))
        hi = validate_growth(sched, DynamicsParams(3.0, 2.0, theta_lo + bump))
        if lo.passed:
            assert hi.passed


class TestConditionH:
    def setup_method(self):
        self.affine = make_affine_distance_constraint(
            np.array([[1.0, 0.0]]), np.array([0.0]))

    def test_closed_form_power_tail(self):
        # integrand ||p||^2 / (2 beta) = 2/(1+t)^2, total integral 2
        sched = PenaltySchedule.shifted_power(2.0, 1.0, 1.0)
        rep = condition_H_check(self.affine, np.array([2.0, 0.0]), sched,
                                horizon=10_000.0)
        assert rep.passed
        assert rep.closed_form_total == pytest.approx(2.0, rel=1e-12)
        # numeric quadrature covers [0, horizon]; tail is 2/(1+T)
        assert rep.numeric_integral == pytest.approx(2.0 - 2.0 / 10_001.0, rel=1e-6)

    def test_zero_constraint_trivially_holds(self):
        rep = condition_H_check(make_zero_constraint(2), np.zeros(2),
                                PenaltySchedule.constant(1.0))
        assert rep.passed
        assert rep.numeric_integral == 0.0

    def test_constant_schedule_diverges(self):
        rep = condition_H_check(self.affine, np.array([1.0, 0.0]),
                                PenaltySchedule.constant(1.0))
        assert not rep.passed
        assert rep.tail_convergent is False
        assert math.isinf(rep.closed_form_total)

    def test_sentinel_off_normal_range(self):
        rep = condition_H_check(self.affine, np.array([1.0, 1.0]),
                                PenaltySchedule.shifted_power(2.0, 1.0))
        assert not rep.passed
        assert "ran N" in rep.diagnostic

    def test_exponential_converges(self):
        rep = condition_H_check(self.affine, np.array([1.0, 0.0]),
                                PenaltySchedule.exponential(2.0, 0.5))
        assert rep.passed
        # int 1/beta = 1/(beta0 c) = 1; total = ||p||^2/2 * 1
        assert rep.closed_form_total == pytest.approx(0.5)


def test_quadrature_matches_antiderivative():
    """Adaptive Simpson against the closed-form integral of the power family."""
    sched = PenaltySchedule.shifted_power(1.7, 3.0, 2.5)
    for T in [1.0, 10.0, 250.0]:
        numeric = _adaptive_simpson(lambda t: 1.0 / sched.beta(t), 0.0, T, 1e-10)
        exact = sched.integral_inv_beta(0.0, T)
        assert numeric == pytest.approx(exact, rel=1e-6)


def test_inv_beta_integrals():
    power = PenaltySchedule.shifted_power(1.5, 4.0, 2.0)
    assert power.integral_inv_beta_converges()
    # int_0^inf dt / (2 (t+4)^1.5) = (1/2) * 2 / sqrt(4) = 0.5
    assert power.integral_inv_beta(0.0) == pytest.approx(0.5)
    const = PenaltySchedule.constant(3.0)
    assert not const.integral_inv_beta_converges()
    assert math.isinf(const.integral_inv_beta(0.0))
    assert const.integral_inv_beta(0.0, 30.0) == pytest.approx(10.0)
