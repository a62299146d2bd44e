import numpy as np
import pytest
import scipy.optimize
from scipy.integrate import trapezoid
from hypothesis import assume, given
from hypothesis import strategies as st

from conftest import benchmark_run, linear_problem
from vemoc import (
    ConstraintClass,
    DomainError,
    EvaluationError,
    GainConfig,
    build_table,
    builtin_problem,
    classify_constraint,
    compute_pu,
    costate_by_backward_integration,
    cycloid_oracle,
    evolution_rhs,
    lq_oracle,
    lq_oracle_arrays,
    optimality_residuals,
    reconstruct_costate,
)
from vemoc.evolution import ActiveSetState
from vemoc.problem import evaluate_nodes, terminal_values


def _aset(defn, I_p=(), pi_E=None, pi_I=None):
    pi_E = np.zeros(defn.q_E) if pi_E is None else np.asarray(pi_E, float)
    pi_I = np.zeros(defn.q_I) if pi_I is None else np.asarray(pi_I, float)
    return ActiveSetState(tuple(I_p), tuple(I_p), pi_E, pi_I)


class TestClassify:
    @pytest.mark.parametrize("pi, expected", [
        (0.3, ConstraintClass.PEEC),
        (-0.3, ConstraintClass.NEEC),
        (0.0, ConstraintClass.PSEUDO_PEEC),
    ])
    def test_signs(self, pi, expected):
        assert classify_constraint(pi) is expected

    def test_tolerance_band(self):
        assert classify_constraint(1e-9, tol=1e-6) is ConstraintClass.PSEUDO_PEEC
        assert classify_constraint(-1e-9, tol=1e-6) is ConstraintClass.PSEUDO_PEEC

    def test_rejects_bad_input(self):
        with pytest.raises(EvaluationError):
            classify_constraint(float("nan"))
        with pytest.raises(DomainError):
            classify_constraint(1.0, tol=-1.0)

    @given(st.floats(-3, 3))
    def test_strengthened_equality_predicts_relaxed_inequality(self, a):
        # min (y-1)^2 with y = a has multiplier 2(1-a); relaxing to y <= a
        # keeps the constraint binding exactly when that multiplier is positive
        assume(abs(a - 1.0) > 1e-3)
        pi = 2.0 * (1.0 - a)
        res = scipy.optimize.minimize(
            lambda y: (y[0] - 1.0) ** 2, x0=[a - 1.0], method="SLSQP",
            constraints=[{"type": "ineq", "fun": lambda y: a - y[0]}], tol=1e-12,
        )
        binding = abs(res.x[0] - a) < 1e-6
        cls = classify_constraint(pi)
        assert binding == (cls is ConstraintClass.PEEC)
        # the multiplier is minus the sensitivity of the strengthened optimum
        J = lambda s: (s - 1.0) ** 2
        assert (J(a + 1e-6) - J(a - 1e-6)) / 2e-6 == pytest.approx(-pi, abs=1e-6)


class TestCycloid:
    def test_brachA_frozen(self):
        # independently computed values
        t_f, theta, R = cycloid_oracle(2.0, 2.0, 10.0)
        assert theta == pytest.approx(2.412011, abs=1e-6)
        assert R == pytest.approx(1.145834, abs=1e-6)
        assert t_f == pytest.approx(0.81646990, abs=1e-8)

    def test_half_turn(self):
        sol = cycloid_oracle(np.pi / 2, 1.0, 10.0)
        assert sol.theta_f == pytest.approx(np.pi, abs=1e-12)
        assert sol.R == pytest.approx(0.5, abs=1e-12)

    def test_brachB_analytic(self):
        # theta = pi puts the end at (pi R, -2 R); x = 2 gives R = 2/pi
        sol = cycloid_oracle(2.0, 4.0 / np.pi, 10.0)
        assert sol.theta_f == pytest.approx(np.pi, abs=1e-10)
        assert sol.R == pytest.approx(2 / np.pi, abs=1e-10)
        assert sol.t_f == pytest.approx(0.79266546, abs=1e-8)

    @given(st.floats(0.2, 5.0), st.floats(0.2, 5.0))
    def test_endpoint_reached(self, x, d):
        sol = cycloid_oracle(x, d, 9.81)
        th, R = sol.theta_f, sol.R
        assert R * (th - np.sin(th)) == pytest.approx(x, rel=1e-9)
        assert R * (1 - np.cos(th)) == pytest.approx(d, rel=1e-9)

    @given(st.floats(0.2, 5.0), st.floats(0.2, 5.0))
    def test_gravity_scaling(self, x, d):
        assert cycloid_oracle(x, d, 40.0).t_f == pytest.approx(cycloid_oracle(x, d, 10.0).t_f / 2, rel=1e-12)

    def test_beats_straight_line(self):
        L = 2 * np.sqrt(2.0)
        straight = np.sqrt(2 * L / (10.0 * np.sin(np.pi / 4)))
        assert cycloid_oracle(2.0, 2.0, 10.0).t_f < straight

    @pytest.mark.parametrize("args", [(0.0, 1.0, 10.0), (1.0, -1.0, 10.0), (1.0, 1.0, 0.0)])
    def test_domain(self, args):
        with pytest.raises(DomainError):
            cycloid_oracle(*args)


class TestLqOracle:
    def test_unit_case(self):
        sol = lq_oracle(1.0, 1.0)
        assert sol.J == pytest.approx(1.5, abs=1e-14)
        assert sol.u(0.0) == pytest.approx(3.0)
        assert sol.u(1.0) == pytest.approx(0.0)

    def test_zero_target(self):
        sol = lq_oracle(2.0, 0.0)
        assert sol.J == 0.0 and not np.any(sol.u(np.linspace(0, 2, 5)))

    @given(st.floats(0.3, 4.0), st.floats(-3, 3))
    def test_hits_target_and_scales(self, T, P):
        sol = lq_oracle(T, P)
        assert sol.x(T)[0] == pytest.approx(P, abs=1e-12)
        assert sol.J == pytest.approx(1.5 * P**2 / T**3, rel=1e-12, abs=1e-14)

    @given(st.floats(0.3, 4.0), st.floats(-3, 3), st.floats(-3, 3))
    def test_fixed_velocity(self, T, P, V):
        sol = lq_oracle(T, P, V)
        np.testing.assert_allclose(sol.x(T), [P, V], atol=1e-10)

    @given(st.floats(-1, 1), st.floats(-1, 1))
    def test_is_minimal(self, c1, c2):
        # perturbations with zero effect on p(1): int (1-t) du dt = 0
        t = np.linspace(0, 1, 4001)
        du = c1 * (np.sin(2 * np.pi * t)) + c2 * (t**2 - 2 * t / 3 - 1.0 / 6.0)
        du -= trapezoid((1 - t) * du, t) / trapezoid((1 - t) * np.sin(np.pi * t), t) * np.sin(np.pi * t)
        u = lq_oracle(1.0, 1.0).u(t) + du
        assert 0.5 * trapezoid(u * u, t) >= 1.5 - 1e-6

    def test_arrays(self):
        t = np.linspace(0, 1, 11)
        u, x, J = lq_oracle_arrays(lq_oracle(1.0, 1.0), t)
        assert u.shape == (11, 1) and x.shape == (11, 2) and J == pytest.approx(1.5)

    def test_domain(self):
        with pytest.raises(DomainError):
            lq_oracle(0.0, 1.0)
        with pytest.raises(DomainError):
            lq_oracle(1.0, float("inf"))


class TestCostateIdentities:
    @pytest.mark.parametrize("pid", ["brachA", "brachB"])
    def test_terminal_value(self, pid):
        defn, traj = builtin_problem(pid, 41)
        rng = np.random.default_rng(1)
        aset = _aset(defn, I_p=tuple(range(defn.q_I)), pi_E=rng.normal(size=defn.q_E),
                     pi_I=rng.normal(size=defn.q_I))
        gamma = reconstruct_costate(defn, traj, build_table(defn, traj), aset)
        term = terminal_values(defn, traj)
        G_E = term["g_E_x"].reshape(defn.q_E, defn.n)
        G_I = term["g_I_x"].reshape(defn.q_I, defn.n)
        expected = term["phi_x"] + G_E.T @ aset.pi_E + G_I.T @ aset.pi_I
        np.testing.assert_allclose(gamma[-1], expected, atol=1e-14)

    @given(st.floats(-2, 2), st.floats(-2, 2))
    def test_stationarity_residual_matches_gradient(self, a, b):
        # with no terminal constraints H_u equals p_u node by node
        defn = linear_problem([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], phi_x=[a, b])
        defn, traj = defn, builtin_problem("lq", 31)[1]
        table = build_table(defn, traj)
        nodes = evaluate_nodes(defn, traj)
        gamma = reconstruct_costate(defn, traj, table, _aset(defn))
        hu = nodes.L_u + np.einsum("kji,kj->ki", nodes.f_u, gamma)
        np.testing.assert_allclose(hu, compute_pu(defn, traj, table), atol=1e-12)

    def test_lq_costate_against_backward_integration(self):
        defn, traj = builtin_problem("lq", 51)
        aset = _aset(defn, pi_E=[-3.0])
        gamma = reconstruct_costate(defn, traj, build_table(defn, traj), aset)
        oracle = costate_by_backward_integration(defn, traj, aset)
        np.testing.assert_allclose(gamma, oracle, atol=1e-9)


class TestResiduals:
    def test_lq_optimum(self):
        defn, _ = builtin_problem("lq", 101)
        t = np.linspace(0, 1, 101)
        sol = lq_oracle(1.0, 1.0)
        from vemoc import TrajectoryState

        traj = TrajectoryState(sol.x(t), sol.u(t)[:, None], 1.0)
        rep = optimality_residuals(defn, traj, build_table(defn, traj), _aset(defn, pi_E=[-3.0]))
        assert rep.r_u < 1e-12
        assert rep.r_tf == 0.0 and rep.r_transversality_time == 0.0
        assert rep.r_costate_ode < 1e-12
        assert rep.r_stationary_pi < 1e-3

    def test_initial_guess_is_not_stationary(self):
        defn, traj = builtin_problem("brachA", 101)
        res = evolution_rhs(defn, traj, GainConfig.make(defn))
        rep = optimality_residuals(defn, traj, build_table(defn, traj), res.aset)
        assert rep.r_u > 0.1
        assert rep.r_tf > 0.01

    def test_report_serializes(self):
        defn, traj = builtin_problem("brachB", 21)
        rep = optimality_residuals(defn, traj, build_table(defn, traj), _aset(defn))
        d = rep.to_dict()
        assert set(d) >= {"r_u", "r_tf", "r_costate_ode", "r_stationary_pi", "complementary_slackness"}
        assert rep.r_transversality == (d["r_transversality_time"], d["r_transversality_state"])


@pytest.mark.slow
class TestConvergedBenchmarks:
    @pytest.mark.parametrize("pid", ["brachA", "brachB"])
    def test_first_order_conditions(self, pid):
        run = benchmark_run(pid)
        rep = optimality_residuals(run.defn, run.final, build_table(run.defn, run.final), run.aset)
        assert rep.r_u <= 1e-3
        assert rep.r_tf <= 1e-3
        assert rep.r_costate_ode <= 5e-3 * rep.gamma_norm
        assert rep.r_stationary_pi <= 5e-3
        assert rep.complementary_slackness <= 1e-5

    @pytest.mark.parametrize("pid", ["brachA", "brachB"])
    def test_costate_matches_backward_integration(self, pid):
        run = benchmark_run(pid)
        gamma = reconstruct_costate(run.defn, run.final, build_table(run.defn, run.final), run.aset)
        oracle = costate_by_backward_integration(run.defn, run.final, run.aset)
        assert np.max(np.abs(gamma - oracle)) <= 1e-3 * np.max(np.abs(oracle))

    def test_constraint_classes(self):
        # the free-descent optimum ends at y = -4/pi: above -2, inside [-1.3, -1]
        pi_A = benchmark_run("brachA").aset.pi_I
        assert classify_constraint(pi_A[0], tol=1e-6) is ConstraintClass.PEEC
        for pi in benchmark_run("brachB").aset.pi_I:
            assert classify_constraint(pi, tol=1e-6) is not ConstraintClass.PEEC

    def test_gains_do_not_enter_residuals(self):
        run = benchmark_run("brachA")
        table = build_table(run.defn, run.final)
        a = optimality_residuals(run.defn, run.final, table, run.aset)
        GainConfig.make(run.defn, K=5.0)  # gains are not an input
        b = optimality_residuals(run.defn, run.final, table, run.aset)
        assert a == b
