"""Energies, derivative identities, integrals, and verdict machinery."""

import math

import numpy as np
import pytest

import penflow as pf
from penflow.lyapunov import (
    delta_one,
    delta_two,
    energy_delta_dot_series,
    energy_delta_series,
    energy_record,
    fd_derivative,
    lemma_coefficient,
)

RNG_SEED = 20240812


def _g2_setup():
    a = np.array([1.0, 2.0])
    problem = pf.make_quadratic(np.eye(2), a, c=0.5 * float(a @ a))
    constraint = pf.make_affine_distance_constraint(np.array([[1.0, 0.0]]),
                                                    np.array([0.0]))
    return problem, constraint


class TestEnergyDelta:
    def test_stationary_anchor_leaves_level_term(self):
        # x = z with grad Phi(z) = 0, Psi(z) = 0, v = 0: E_delta = delta*Phi(z)
        problem = pf.make_quadratic(np.eye(2), np.zeros(2), c=1.7)
        constraint = pf.make_zero_constraint(2)
        params = pf.DynamicsParams(2.0, 1.0, 0.9)
        sched = pf.PenaltySchedule.constant(3.0)
        val = pf.energy_delta(4.0, 0.0, np.zeros(2), np.zeros(2),
                              problem, constraint, sched, params)
        assert val == pytest.approx(4.0 * 1.7)

    def test_unit_quadratic_direct_value(self):
        problem = pf.make_quadratic(np.eye(2), np.zeros(2))
        constraint = pf.make_zero_constraint(2)
        params = pf.DynamicsParams(1.0, 1.0, 0.9)
        sched = pf.PenaltySchedule.constant(1.0)
        x, v = np.array([1.0, 0.0]), np.zeros(2)
        for delta in (0.0, 1.0, 3.5):
            val = pf.energy_delta(delta, 0.0, x, v, problem, constraint, sched, params)
            assert val == pytest.approx(delta * 0.5 + 0.5)

    def test_kinetic_only_at_delta_zero(self):
        problem, constraint = _g2_setup()
        params = pf.DynamicsParams(3.0, 2.0, 0.9)
        sched = pf.PenaltySchedule.shifted_power(1.5, 30.0)
        rng = np.random.default_rng(RNG_SEED)
        x, v = rng.standard_normal(2), rng.standard_normal(2)
        beta = sched.beta(2.0)
        y = v + params.lam * (problem.gradient(x) + beta * constraint.base.gradient(x))
        val = pf.energy_delta(0.0, 2.0, x, v, problem, constraint, sched, params)
        assert val == pytest.approx(0.5 * float(y @ y))

    def test_lower_bound_invariant(self):
        problem, constraint = _g2_setup()
        params = pf.DynamicsParams(3.0, 2.0, 0.9)
        sched = pf.PenaltySchedule.shifted_power(1.5, 30.0)
        rng = np.random.default_rng(RNG_SEED + 1)
        for _ in range(100):
            delta = rng.uniform(0.0, 10.0)
            x, v = 3 * rng.standard_normal(2), rng.standard_normal(2)
            val = pf.energy_delta(delta, rng.uniform(0, 5), x, v,
                                  problem, constraint, sched, params)
            assert val >= delta * problem.lower_bound - 1e-12


class TestEnergyDeltaDot:
    """The derivative formula and its perfect-square collapses."""

    def _random_states(self, n_states=60):
        problem, constraint = _g2_setup()
        params = pf.DynamicsParams(3.0, 2.0, 0.9)
        sched = pf.PenaltySchedule.shifted_power(1.5, 12.0, 0.04)
        rng = np.random.default_rng(RNG_SEED + 2)
        for _ in range(n_states):
            t = float(rng.uniform(0.0, 20.0))
            x = 2 * rng.standard_normal(2)
            v = 2 * rng.standard_normal(2)
            yield t, x, v, problem, constraint, sched, params

    def test_one_plus_gl_drops_inner_products(self):
        for t, x, v, problem, constraint, sched, params in self._random_states():
            delta = 1.0 + params.gamma * params.lam
            beta = sched.beta(t)
            comb = problem.gradient(x) + beta * constraint.base.gradient(x)
            expected = (delta * sched.beta_dot(t) * constraint.base.value(x)
                        - params.gamma * v @ v - params.lam * comb @ comb)
            got = pf.energy_delta_dot_analytic(delta, t, x, v, problem,
                                               constraint, sched, params)
            assert abs(got - expected) <= 1e-12 * (1.0 + abs(expected))

    def test_delta_one_perfect_square(self):
        for t, x, v, problem, constraint, sched, params in self._random_states():
            d1 = delta_one(params)
            beta = sched.beta(t)
            comb = problem.gradient(x) + beta * constraint.base.gradient(x)
            sq = math.sqrt(params.gamma) * v - math.sqrt(params.lam) * comb
            expected = d1 * sched.beta_dot(t) * constraint.base.value(x) - sq @ sq
            got = pf.energy_delta_dot_analytic(d1, t, x, v, problem,
                                               constraint, sched, params)
            assert abs(got - expected) <= 1e-12 * (1.0 + abs(expected))

    def test_delta_two_perfect_square(self):
        for t, x, v, problem, constraint, sched, params in self._random_states():
            d2 = delta_two(params)
            beta = sched.beta(t)
            comb = problem.gradient(x) + beta * constraint.base.gradient(x)
            sq = math.sqrt(params.gamma) * v + math.sqrt(params.lam) * comb
            expected = d2 * sched.beta_dot(t) * constraint.base.value(x) - sq @ sq
            got = pf.energy_delta_dot_analytic(d2, t, x, v, problem,
                                               constraint, sched, params)
            assert abs(got - expected) <= 1e-12 * (1.0 + abs(expected))

    def test_dissipation_nonpositive_after_beta_term(self):
        for t, x, v, problem, constraint, sched, params in self._random_states():
            for delta in (delta_one(params), delta_two(params)):
                got = pf.energy_delta_dot_analytic(delta, t, x, v, problem,
                                                   constraint, sched, params)
                drop = got - delta * sched.beta_dot(t) * constraint.base.value(x)
                assert drop <= 1e-10

    def test_equilibrium_slope_zero(self):
        problem = pf.make_quadratic(np.eye(2), np.zeros(2))
        constraint = pf.make_zero_constraint(2)
        params = pf.DynamicsParams(2.0, 0.5, 0.9)
        sched = pf.PenaltySchedule.constant(1.0)
        got = pf.energy_delta_dot_analytic(3.0, 1.0, np.zeros(2), np.zeros(2),
                                           problem, constraint, sched, params)
        assert got == 0.0

    def test_degenerate_lam_gamma_one(self):
        params = pf.DynamicsParams(1.0, 1.0, 0.9)
        assert delta_two(params) == 0.0
        problem, constraint = _g2_setup()
        sched = pf.PenaltySchedule.shifted_power(1.5, 6.0, 0.04)
        got = pf.energy_delta_dot_analytic(0.0, 1.0, np.ones(2), np.ones(2),
                                           problem, constraint, sched, params)
        assert np.isfinite(got)


class TestEnergyE:
    def test_anchored_minimum_value(self):
        problem = pf.make_quadratic(np.eye(2), np.zeros(2), c=2.0)
        constraint = pf.make_zero_constraint(2)
        params = pf.DynamicsParams(2.0, 1.5, 0.9)
        sched = pf.PenaltySchedule.constant(1.0)
        z = np.zeros(2)
        val = pf.energy_E(0.0, z, np.zeros(2), z, problem, constraint, sched, params)
        expected = (1.0 + params.gamma * params.lam) * 2.0 / params.epsilon
        assert val == pytest.approx(expected)

    def test_translation_invariance(self):
        params = pf.DynamicsParams(3.0, 2.0, 0.9)
        sched = pf.PenaltySchedule.shifted_power(1.5, 30.0)
        rng = np.random.default_rng(RNG_SEED + 3)
        shift = rng.standard_normal(2)
        a = np.array([1.0, 2.0])
        A = np.array([[1.0, 0.0]])
        # original problem and its translate x -> x - shift
        prob1 = pf.make_quadratic(np.eye(2), a, c=0.5 * float(a @ a))
        con1 = pf.make_affine_distance_constraint(A, np.array([0.0]))
        a2 = a + shift
        prob2 = pf.make_quadratic(np.eye(2), a2, c=0.5 * float(a2 @ a2))
        con2 = pf.make_affine_distance_constraint(A, A @ shift)
        z = np.array([0.0, 2.0])
        for _ in range(30):
            t = float(rng.uniform(0.0, 5.0))
            x, v = rng.standard_normal(2), rng.standard_normal(2)
            e1 = pf.energy_E(t, x, v, z, prob1, con1, sched, params)
            e2 = pf.energy_E(t, x + shift, v, z + shift, prob2, con2, sched, params)
            assert e1 == pytest.approx(e2, rel=1e-10, abs=1e-10)


class TestSeriesAndFiniteDifference:
    def test_fd_matches_analytic_along_trajectory(self, gallery, tight_run):
        traj, sched, params = tight_run("G2", 20.0, 1e-3)
        g2 = gallery["G2"]
        deltas = [1.0 + params.gamma * params.lam, delta_one(params),
                  delta_two(params), 0.0, 7.3]
        for delta in deltas:
            E = energy_delta_series(delta, traj, g2.problem, g2.constraint,
                                    sched, params)
            dE = energy_delta_dot_series(delta, traj, g2.problem, g2.constraint,
                                         sched, params)
            fd = fd_derivative(traj.t, E)
            err = np.abs(fd[1:-1] - dE[1:-1])
            assert np.all(err <= 1e-4 * (1.0 + np.abs(dE[1:-1])))

    def test_series_consistent_with_pointwise(self, gallery, tight_run):
        traj, sched, params = tight_run("G2", 20.0, 1e-3)
        g2 = gallery["G2"]
        i = len(traj) // 3
        val = pf.energy_delta(7.3, traj.t[i], traj.x[i], traj.v[i],
                              g2.problem, g2.constraint, sched, params)
        series = energy_delta_series(7.3, traj, g2.problem, g2.constraint,
                                     sched, params)
        assert val == pytest.approx(series[i], rel=1e-12)


class TestBetaTilde:
    def test_positive_under_certified_growth(self):
        params = pf.DynamicsParams(3.0, 2.0, 0.9)
        sched = pf.PenaltySchedule.shifted_power(1.5, 12.0, 0.04)
        rep = pf.validate_growth(sched, params)
        assert rep.passed
        bt = pf.beta_tilde(np.linspace(0, 100, 11), sched, params, rep.certified_k)
        assert np.all(np.asarray(bt) > 0.0)
        assert lemma_coefficient(params, rep.certified_k) > 0.0

    def test_energy_record_keys(self):
        problem, constraint = _g2_setup()
        params = pf.DynamicsParams(3.0, 2.0, 0.9)
        sched = pf.PenaltySchedule.shifted_power(1.5, 12.0, 0.04)
        rec = energy_record(1.0, np.ones(2), np.zeros(2), problem, constraint,
                            sched, params, certified_k=0.125,
                            z=np.array([0.0, 2.0]), extra_deltas=(7.3,))
        assert set(rec.E_delta) == {"one_plus_gl", "delta1", "delta2", "custom(7.3)"}
        assert set(rec.analytic_dE) == set(rec.E_delta)
        assert rec.E is not None and np.isfinite(rec.E)
        assert rec.beta_tilde > 0.0


class TestRunningIntegrals:
    def test_equilibrium_trajectory_all_zero(self):
        problem = pf.make_quadratic(np.eye(2), np.zeros(2))
        constraint = pf.make_zero_constraint(2)
        params = pf.DynamicsParams(1.0, 1.0, 0.9)
        sched = pf.PenaltySchedule.constant(1.0)
        traj = pf.integrate(problem, constraint, sched, params, np.zeros(2),
                            np.zeros(2), 5.0, pf.IntegratorControls(),
                            cadence=0.1, reference=(np.zeros(2), 0.0))
        integ = pf.accumulate_integrals(traj, np.zeros(2), problem, constraint,
                                        sched, params, certified_k=0.0)
        for name, arr in integ.finals().items():
            assert arr == pytest.approx(0.0, abs=1e-14), name

    def test_speed_integral_quarter(self, gallery):
        """Closed-form check: int_0^inf t^2 e^{-2t} dt = 1/4."""
        g1 = gallery["G1"]
        params = pf.DynamicsParams(1.0, 1.0, 0.9)
        sched = pf.PenaltySchedule.constant(1.0)
        controls = pf.IntegratorControls(rel_tol=1e-9, abs_tol=1e-12, max_step=0.01)
        traj = pf.integrate(g1.problem, g1.constraint, sched, params,
                            [1.0, 0.0], [0.0, 0.0], 10.0, controls,
                            cadence=0.005, reference=g1.reference())
        assert traj.integrals.int_speed_sq[-1] == pytest.approx(0.25, abs=1e-4)
        integ = pf.accumulate_integrals(traj, g1.z, g1.problem, g1.constraint,
                                        sched, params, certified_k=0.0)
        assert integ.int_speed_sq[-1] == pytest.approx(0.25, abs=1e-4)

    def test_monotone_and_tail(self, gallery, long_run):
        traj, sched, params = long_run("G2")
        for name in ("int_beta_psi", "int_speed_sq", "int_grad_comb_sq"):
            arr = getattr(traj.integrals, name)
            assert np.all(np.diff(arr) >= -1e-12)
            assert np.all(np.isfinite(arr))
        half = len(traj) // 2
        total = traj.integrals.int_beta_psi[-1]
        assert total - traj.integrals.int_beta_psi[half] <= 0.05 * total

    def test_sample_accumulation_tracks_step_accumulation(self, gallery, tight_run):
        traj, sched, params = tight_run("G2", 20.0, 1e-3)
        g2 = gallery["G2"]
        rep = pf.validate_growth(sched, params)
        integ = pf.accumulate_integrals(traj, g2.z, g2.problem, g2.constraint,
                                        sched, params, rep.certified_k)
        for name in ("int_beta_psi", "int_speed_sq", "int_grad_comb_sq",
                     "int_inner_gradz", "int_lemma_iii"):
            a = getattr(integ, name)[-1]
            b = getattr(traj.integrals, name)[-1]
            assert a == pytest.approx(b, rel=1e-4, abs=1e-6), name


class TestLyapunovInequality:
    def test_unconstrained_case_bound_is_zero(self, gallery):
        g1 = gallery["G1"]
        params = pf.DynamicsParams(1.0, 1.0, 0.9)
        sched = pf.PenaltySchedule.constant(1.0)
        controls = pf.IntegratorControls(rel_tol=1e-10, abs_tol=1e-12)
        traj = pf.integrate(g1.problem, g1.constraint, sched, params,
                            [1.0, 0.0], [0.0, 0.0], 10.0, controls,
                            cadence=1e-3, reference=g1.reference())
        check = pf.lyapunov_inequality_check(
            traj, g1.z, g1.problem, g1.constraint, sched, params,
            certified_k=0.0, mu=g1.mu)
        assert np.all(check.bound == 0.0)
        assert check.status == "pass"
        assert check.status_strong == "pass"

    def test_constrained_compliant_passes(self, gallery, tight_run):
        traj, sched, params = tight_run("G2", 20.0, 1e-3)
        g2 = gallery["G2"]
        rep = pf.validate_growth(sched, params)
        check = pf.lyapunov_inequality_check(
            traj, g2.z, g2.problem, g2.constraint, sched, params,
            rep.certified_k, mu=g2.mu)
        assert check.status == "pass"
        assert check.status_strong == "pass"
        assert np.all(np.isfinite(check.bound))

    def test_energy_limit_exists_numerically(self, gallery, long_run):
        """Last-window oscillation of E_{1+gl} within tolerance."""
        from penflow.lyapunov import energy_series

        traj, sched, params = long_run("G2")
        g2 = gallery["G2"]
        rep = pf.validate_growth(sched, params)
        series = energy_series(traj, g2.problem, g2.constraint, sched, params,
                               rep.certified_k, z=g2.z)
        half = len(traj) // 2
        for key in ("E_1gl", "E"):
            window = series[key][half:]
            assert window.max() - window.min() <= 1e-2

    def test_distance_limits_for_sampled_anchors(self, gallery, long_run):
        """||x(t) - z|| settles for several anchors in the solution set."""
        traj, sched, params = long_run("G3")
        g3 = gallery["G3"]
        half = len(traj) // 2
        for s in (-1.0, 0.0, 1.0, 2.0):
            z = g3.z.copy()
            z[4] += s  # the flat direction stays inside the solution set
            assert g3.constraint.argmin_contains(z, 1e-9)
            d = np.linalg.norm(traj.x - z, axis=1)[half:]
            assert d.max() - d.min() <= 1e-2


class TestConvergenceVerdicts:
    def test_equilibrium_start_trivially_passes(self, gallery):
        g1 = gallery["G1"]
        params = pf.DynamicsParams(1.0, 1.0, 0.9)
        sched = pf.PenaltySchedule.constant(1.0)
        traj = pf.integrate(g1.problem, g1.constraint, sched, params,
                            np.zeros(2), np.zeros(2), 100.0,
                            pf.IntegratorControls(), cadence=0.5,
                            reference=g1.reference())
        report = pf.convergence_verdicts(traj, g1, sched, params, certified_k=0.0)
        assert report.all_passed()
        assert report["S1_strong_convergence"].verdict == "pass"

    def test_long_run_passes_all_claims(self, gallery, long_run):
        traj, sched, params = long_run("G2")
        rep = pf.validate_growth(sched, params)
        report = pf.convergence_verdicts(traj, gallery["G2"], sched, params,
                                         certified_k=rep.certified_k)
        failing = [c.claim for c in report.claims if c.verdict not in ("pass", "not_claimed")]
        assert not failing, failing

    def test_flat_instance_skips_strong_claim(self, gallery, long_run):
        traj, sched, params = long_run("G3")
        rep = pf.validate_growth(sched, params)
        report = pf.convergence_verdicts(traj, gallery["G3"], sched, params,
                                         certified_k=rep.certified_k)
        assert report["S1_strong_convergence"].verdict == "not_claimed"
        assert report["T1_phi_value"].verdict == "pass"
        assert report["T2_beta_psi_to_zero"].verdict == "pass"
        assert report["T6_trajectory_converges"].verdict == "pass"

    def test_constant_beta_ablation_reported_honestly(self, gallery):
        """With beta fixed the objective gap stalls at ~|grad Phi(z)|^2/beta."""
        g2 = gallery["G2"]
        params = pf.DynamicsParams(3.0, 2.0, 0.9)
        sched = pf.PenaltySchedule.constant(5.0)
        traj = pf.integrate(g2.problem, g2.constraint, sched, params,
                            [2.0, 1.0], np.zeros(2), 200.0,
                            pf.IntegratorControls(), cadence=0.5,
                            reference=g2.reference())
        report = pf.convergence_verdicts(traj, g2, sched, params, certified_k=0.0)
        assert report["T1_phi_value"].verdict in ("fail", "inconclusive")

    def test_report_json_shape(self, gallery, long_run):
        traj, sched, params = long_run("G2")
        report = pf.convergence_verdicts(traj, gallery["G2"], sched, params)
        doc = report.to_json()
        names = [c["claim"] for c in doc["claims"]]
        assert names == ["T1_phi_value", "T2_beta_psi_to_zero", "T2_psi_to_zero",
                         "T3_int_beta_psi_finite", "T4_L2_memberships",
                         "T5_combined_velocity_to_zero", "T6_trajectory_converges",
                         "S1_strong_convergence"]
        assert "counts" in doc


def test_diagnostics_csv(tmp_path, gallery, tight_run):
    traj, sched, params = tight_run("G2", 20.0, 1e-3)
    g2 = gallery["G2"]
    rep = pf.validate_growth(sched, params)
    path = tmp_path / "diag.csv"
    pf.write_diagnostics_csv(path, traj, g2.problem, g2.constraint, sched,
                             params, rep.certified_k, z=g2.z)
    lines = path.read_text().splitlines()
    assert lines[0] == ("t,E_1gl,E_d1,E_d2,E,dE_fd,dE_analytic_1gl,beta_tilde,"
                        "int_beta_psi,int_speed_sq,int_grad_comb_sq,margin_lyap")
    assert len(lines) == len(traj) + 1
    # interior rows carry finite FD values
    mid = lines[len(lines) // 2].split(",")
    assert all(np.isfinite(float(v)) for v in mid)
