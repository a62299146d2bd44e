import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import linear_problem
from vemoc import DomainError, EvaluationError, TimeGrid, TrajectoryState, interpolate, quadrature
from vemoc import builtin_problem, node_motion_term
from vemoc.grid import reproject_states, time_derivative

finite = st.floats(-1e3, 1e3, allow_nan=False)


class TestTimeGrid:
    @given(st.integers(2, 500), st.floats(-5, 5), st.floats(0.01, 10))
    def test_abscissae(self, N, t0, length):
        g = TimeGrid(N, t0, t0 + length)
        s = g.sigma
        assert s[0] == 0.0 and s[-1] == 1.0
        assert np.all(np.diff(s) > 0)
        np.testing.assert_allclose(np.diff(s), 1 / (N - 1), rtol=1e-9)
        np.testing.assert_allclose(g.times, t0 + s * length)

    def test_rejects_collapsed_horizon(self):
        with pytest.raises(DomainError):
            TimeGrid(5, 1.0, 1.0)


class TestQuadrature:
    @pytest.mark.parametrize("N", [2, 3, 17, 101])
    def test_constant(self, N):
        assert quadrature(np.ones(N), TimeGrid(N, 0.0, 2.0)) == pytest.approx(2.0, abs=1e-14)

    def test_linear_is_exact(self):
        g = TimeGrid(101, 0.0, 1.0)
        assert quadrature(g.times, g) == pytest.approx(0.5, abs=1e-15)

    def test_quadratic_error_bound(self):
        g = TimeGrid(101, 0.0, 1.0)
        # (b - a) h^2 / 12 max|f''| = 1e-4 * 2 / 12
        assert abs(quadrature(g.times**2, g) - 1 / 3) <= 2e-5

    @given(
        hnp.arrays(float, (12, 2), elements=finite),
        hnp.arrays(float, (12, 2), elements=finite),
        finite,
    )
    def test_linearity(self, a, b, c):
        g = TimeGrid(12, 0.0, 1.3)
        lhs = quadrature(a + c * b, g)
        rhs = quadrature(a, g) + c * quadrature(b, g)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9 * (1 + abs(c)) * 1e3)

    @given(finite, finite, st.floats(0.1, 5))
    def test_affine_exact(self, a, b, tf):
        g = TimeGrid(9, 0.0, tf)
        exact = a * tf + 0.5 * b * tf**2
        assert quadrature(a + b * g.times, g) == pytest.approx(exact, rel=1e-12, abs=1e-9)

    def test_matrix_valued(self):
        g = TimeGrid(5, 0.0, 1.0)
        vals = np.broadcast_to(np.eye(2), (5, 2, 2))
        np.testing.assert_allclose(quadrature(vals, g), np.eye(2))

    def test_non_finite(self):
        with pytest.raises(EvaluationError):
            quadrature(np.array([0.0, np.inf, 1.0]), TimeGrid(3, 0.0, 1.0))

    def test_row_count_mismatch(self):
        with pytest.raises(DomainError):
            quadrature(np.ones(4), TimeGrid(5, 0.0, 1.0))


class TestInterpolate:
    def _traj(self, N=11, tf=2.0):
        rng = np.random.default_rng(0)
        return TrajectoryState(rng.normal(size=(N, 2)), rng.normal(size=(N, 1)), tf)

    def test_nodes_bitwise(self):
        traj = self._traj()
        for i, t in enumerate(traj.times):
            x, u = interpolate(traj, t)
            np.testing.assert_array_equal(x, traj.x_nodes[i])
            np.testing.assert_array_equal(u, traj.u_nodes[i])

    def test_midpoint_mean(self):
        traj = self._traj()
        t = 0.5 * (traj.times[3] + traj.times[4])
        x, u = interpolate(traj, t)
        np.testing.assert_allclose(x, 0.5 * (traj.x_nodes[3] + traj.x_nodes[4]), rtol=1e-12)
        np.testing.assert_allclose(u, 0.5 * (traj.u_nodes[3] + traj.u_nodes[4]), rtol=1e-12)

    @given(st.floats(0.0, 3.0))
    def test_linear_reproduction(self, t):
        times = np.linspace(0, 3, 8)
        traj = TrajectoryState(np.column_stack([2 * times + 1, -times]), 4 * times, 3.0)
        x, u = interpolate(traj, t)
        np.testing.assert_allclose(x, [2 * t + 1, -t], atol=1e-12)
        np.testing.assert_allclose(u, [4 * t], atol=1e-12)

    @pytest.mark.parametrize("t", [-1e-9, 2.0 + 1e-9])
    def test_outside_horizon(self, t):
        with pytest.raises(DomainError):
            interpolate(self._traj(), t)


class TestNodeMotion:
    def test_zero_rate(self):
        defn, traj = builtin_problem("brachA", 11)
        assert not np.any(node_motion_term(traj, defn, 0.0))

    @given(st.floats(-2, 2).filter(lambda d: d != 0))
    def test_first_row_pinned(self, d):
        defn, traj = builtin_problem("brachB", 11)
        assert not np.any(node_motion_term(traj, defn, d)[0])

    @given(st.floats(-3, 3), st.floats(-2, 2))
    def test_identity_dynamics_closed_form(self, c, d):
        defn = linear_problem([[0.0]], [[1.0]], fixed=False)
        N, tf = 21, 1.5
        t = np.linspace(0, tf, N)
        traj = TrajectoryState((c * t)[:, None], np.full((N, 1), c), tf)
        out = node_motion_term(traj, defn, d)
        np.testing.assert_allclose(out[:, 0], c * traj.sigma * d, atol=1e-14)
        np.testing.assert_allclose(out[:, 1], 0.0, atol=1e-12)

    def test_vanishes_for_fixed_time(self):
        defn, traj = builtin_problem("lq", 11)
        assert not np.any(node_motion_term(traj, defn, 0.7))

    def test_control_column_uses_second_order_differences(self):
        defn = linear_problem([[0.0]], [[1.0]], fixed=False)
        N, tf = 11, 1.0
        t = np.linspace(0, tf, N)
        traj = TrajectoryState(np.zeros((N, 1)), (t**2)[:, None], tf)
        out = node_motion_term(traj, defn, 1.0)
        # second-order differences are exact for quadratics, ends included
        np.testing.assert_allclose(out[:, 1], 2 * t * traj.sigma, atol=1e-12)


def test_time_derivative_exact_for_quadratics():
    t = np.linspace(0, 2, 9)
    np.testing.assert_allclose(time_derivative(3 * t**2 - t, t[1] - t[0]), 6 * t - 1, atol=1e-12)


def test_reproject_is_identity_on_exact_guess():
    # piecewise-linear controls: the straight-line guess has constant u
    defn, traj = builtin_problem("brachA", 41)
    back = reproject_states(defn, traj)
    np.testing.assert_allclose(back.x_nodes, traj.x_nodes, atol=1e-12)
