"""Optimality residuals, costate reconstruction and independent oracles.

The flow itself never forms a costate. At an equilibrium, though, the
quantity ``gamma = phi_x + Psi^T (g_E_x^T pi_E + g_I_x^T pi_I) + w`` obeys the
classical adjoint equation, so the classical necessary conditions can be
checked against the solver output without solving a boundary value problem.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np
import scipy.integrate
import scipy.optimize

from .errors import DomainError, EvaluationError, StaleTableError
from .evolution import ActiveSetState, _terminal_covector
from .grid import TimeGrid, quadrature
from .problem import NodeData, OcpDefinition, TrajectoryState, evaluate_nodes, terminal_values
from .sweeps import TransitionTable, compute_pu

Array = np.ndarray


@dataclass
class ResidualReport:
    """Residual norms of the first-order conditions at one trajectory.

    Attributes
    ----------
    r_u : float
        Max-norm over nodes of the control stationarity residual.
    r_tf : float
        Magnitude of the terminal-time stationarity residual (0 for fixed time).
    r_costate_ode : float
        Max-norm over interior nodes of ``gamma' + L_x + f_x^T gamma`` with a
        central-difference ``gamma'``.
    r_transversality_time, r_transversality_state : float
        Terminal Hamiltonian condition and terminal costate condition.
    r_stationary_pi : float
        Gap between the flow multipliers and the least-squares multipliers of
        the gain-free stationary system.
    complementary_slackness : float
        ``max_i |pi_I,i g_I,i|``.
    """

    r_u: float
    r_tf: float
    r_costate_ode: float
    r_transversality_time: float
    r_transversality_state: float
    r_stationary_pi: float
    complementary_slackness: float
    gamma_norm: float = 0.0
    stationary_lsq_residual: float = 0.0

    @property
    def r_transversality(self) -> tuple[float, float]:
        return (self.r_transversality_time, self.r_transversality_state)

    def to_dict(self) -> dict:
        return asdict(self)

    def check(self) -> None:
        for name, value in self.to_dict().items():
            if not (np.isfinite(value) and value >= 0):
                raise EvaluationError(f"residual {name} = {value} is not a finite non-negative number")


def _check_current(traj: TrajectoryState, table: TransitionTable) -> None:
    table.check(traj)
    if table.w is None:
        raise StaleTableError("transition table has no adjoint accumulator")


def reconstruct_costate(
    defn: OcpDefinition,
    traj: TrajectoryState,
    table: TransitionTable,
    aset: ActiveSetState,
    nodes: NodeData | None = None,
) -> Array:
    """Costate estimate ``gamma`` at every node, shape ``(N, n)``."""
    _check_current(traj, table)
    if nodes is None:
        nodes = evaluate_nodes(defn, traj)
    lam = _terminal_covector(defn, terminal_values(defn, traj), aset)
    return nodes.phi_x + np.einsum("kji,j->ki", table.psi, lam) + table.w


def _stationary_multipliers(defn, traj, table, p_u, aset, term, nodes):
    """Least-squares solution of the stacked gain-free stationary system."""
    idx = list(aset.I_p)
    G = np.vstack([
        term["g_E_x"].reshape(defn.q_E, defn.n),
        term["g_I_x"].reshape(defn.q_I, defn.n)[idx],
    ])
    gt = np.concatenate([term["g_E_t"], term["g_I_t"][idx]])
    if G.shape[0] == 0:
        return np.zeros(0), 0.0
    grid = TimeGrid.for_trajectory(traj)
    D = np.einsum("qn,knm->kqm", G, table.psi @ nodes.f_u)
    M1 = quadrature(D @ np.swapaxes(D, 1, 2), grid)
    r1 = quadrature(np.einsum("kqm,km->kq", D, p_u), grid)
    blocks_M, blocks_r = [M1], [r1]
    if not defn.fixed_time:
        c = G @ term["f"] + gt
        H0 = term["phi_t"] + term["phi_x"] @ term["f"] + term["L"]
        blocks_M.append(np.outer(c, c))
        blocks_r.append(c * H0)
    A = np.vstack(blocks_M)
    b = -np.concatenate(blocks_r)
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    return pi, float(np.linalg.norm(A @ pi - b))


def optimality_residuals(
    defn: OcpDefinition,
    traj: TrajectoryState,
    table: TransitionTable,
    aset: ActiveSetState,
) -> ResidualReport:
    """Evaluate every first-order residual at ``traj`` with multipliers from ``aset``."""
    _check_current(traj, table)
    nodes = evaluate_nodes(defn, traj)
    term = terminal_values(defn, traj)
    p_u = compute_pu(defn, traj, table, nodes)
    gamma = reconstruct_costate(defn, traj, table, aset, nodes)

    hu = nodes.L_u + np.einsum("kji,kj->ki", nodes.f_u, gamma)
    r_u = float(np.max(np.abs(hu)))

    f_N = term["f"]
    cE = term["g_E_x"].reshape(defn.q_E, defn.n) @ f_N + term["g_E_t"]
    cI = term["g_I_x"].reshape(defn.q_I, defn.n) @ f_N + term["g_I_t"]
    H0 = term["phi_t"] + term["phi_x"] @ f_N + term["L"]
    r_tf = 0.0 if defn.fixed_time else abs(float(H0 + aset.pi_E @ cE + aset.pi_I @ cI))

    h = traj.step
    dgamma = (gamma[2:] - gamma[:-2]) / (2.0 * h)
    ode = dgamma + nodes.L_x[1:-1] + np.einsum("kji,kj->ki", nodes.f_x[1:-1], gamma[1:-1])
    r_ode = float(np.max(np.abs(ode))) if ode.size else 0.0

    # terminal conditions written with the reconstructed costate
    H_f = term["L"] + gamma[-1] @ f_N
    r_time = 0.0
    if not defn.fixed_time:
        r_time = abs(float(H_f + term["phi_t"] + aset.pi_E @ term["g_E_t"] + aset.pi_I @ term["g_I_t"]))
    lam_f = term["phi_x"] + _terminal_covector(defn, term, aset)
    r_state = float(np.max(np.abs(gamma[-1] - lam_f)))

    pi_lsq, lsq_res = _stationary_multipliers(defn, traj, table, p_u, aset, term, nodes)
    pi_flow = aset.pi
    r_pi = float(np.max(np.abs(pi_lsq - pi_flow))) if pi_flow.size else 0.0

    slack = float(np.max(np.abs(aset.pi_I * term["g_I"]))) if defn.q_I else 0.0
    report = ResidualReport(
        r_u=r_u,
        r_tf=r_tf,
        r_costate_ode=r_ode,
        r_transversality_time=r_time,
        r_transversality_state=r_state,
        r_stationary_pi=r_pi,
        complementary_slackness=slack,
        gamma_norm=float(np.max(np.abs(gamma))),
        stationary_lsq_residual=lsq_res,
    )
    report.check()
    return report


def costate_by_backward_integration(
    defn: OcpDefinition,
    traj: TrajectoryState,
    aset: ActiveSetState,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> Array:
    """Classical costate from ``lambda' = -L_x - f_x^T lambda`` integrated backward.

    The terminal value is ``phi_x + g_E_x^T pi_E + g_I_x^T pi_I`` and the
    coefficients are linearly interpolated between nodes. Independent of the
    transition-matrix sweeps, so it serves as an oracle for ``gamma``.
    """
    nodes = evaluate_nodes(defn, traj)
    term = terminal_values(defn, traj)
    lam_f = term["phi_x"] + _terminal_covector(defn, term, aset)
    t = traj.times
    h = traj.step

    def coeffs(s):
        k = min(max(int((s - t[0]) / h), 0), traj.N - 2)
        a = (s - t[k]) / h
        A = (1 - a) * nodes.f_x[k] + a * nodes.f_x[k + 1]
        q = (1 - a) * nodes.L_x[k] + a * nodes.L_x[k + 1]
        return A, q

    def rhs(s, lam):
        A, q = coeffs(s)
        return -q - A.T @ lam

    sol = scipy.integrate.solve_ivp(
        rhs, (t[-1], t[0]), lam_f, method="DOP853", t_eval=t[::-1], rtol=rtol, atol=atol
    )
    if not sol.success:
        raise EvaluationError(f"backward costate integration failed: {sol.message}")
    return sol.y.T[::-1]


class ConstraintClass(str, enum.Enum):
    PEEC = "PEEC"
    PSEUDO_PEEC = "PseudoPEEC"
    NEEC = "NEEC"


def classify_constraint(pi_i: float, tol: float = 0.0) -> ConstraintClass:
    """Effect class of a strengthened constraint from its multiplier sign.

    A positive multiplier means relaxing the constraint would lower the cost,
    so it binds (PEEC). A negative one means the optimum would leave it (NEEC).
    """
    if not np.isfinite(pi_i):
        raise EvaluationError(f"multiplier {pi_i} is not finite")
    if tol < 0:
        raise DomainError("tol must be non-negative")
    if pi_i > tol:
        return ConstraintClass.PEEC
    if pi_i < -tol:
        return ConstraintClass.NEEC
    return ConstraintClass.PSEUDO_PEEC


@dataclass(frozen=True)
class CycloidSolution:
    t_f: float
    theta_f: float
    R: float

    def __iter__(self):
        return iter((self.t_f, self.theta_f, self.R))


def cycloid_oracle(x_target: float, drop: float, g: float) -> CycloidSolution:
    """Minimum descent time from rest to ``(x_target, -drop)`` along a cycloid."""
    if not (x_target > 0 and drop > 0 and g > 0):
        raise DomainError("x_target, drop and g must all be positive")
    ratio = x_target / drop

    def shape(theta):
        return (theta - np.sin(theta)) / (1.0 - np.cos(theta)) - ratio

    lo, hi = 1e-6, 2.0 * np.pi - 1e-6
    if not shape(lo) < 0 < shape(hi):
        raise DomainError(f"no cycloid arc reaches ratio {ratio}")
    theta = scipy.optimize.bisect(shape, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    R = x_target / (theta - np.sin(theta))
    return CycloidSolution(float(theta * np.sqrt(R / g)), float(theta), float(R))


@dataclass(frozen=True)
class LqSolution:
    """Minimum-energy double-integrator optimum ``u = a + b t`` from rest."""

    a: float
    b: float
    t_f: float

    def u(self, t) -> Array:
        return self.a + self.b * np.asarray(t, dtype=float)

    def x(self, t) -> Array:
        t = np.asarray(t, dtype=float)
        pos = self.a * t**2 / 2 + self.b * t**3 / 6
        vel = self.a * t + self.b * t**2 / 2
        return np.stack([pos, vel], axis=-1)

    @property
    def J(self) -> float:
        a, b, T = self.a, self.b, self.t_f
        return 0.5 * (a * a * T + a * b * T**2 + b * b * T**3 / 3)


def lq_oracle(t_f: float, target: float, velocity_target: float | None = None) -> LqSolution:
    """Closed-form optimum of ``p'' = u``, ``J = int u^2/2`` with ``p(t_f) = target``.

    With a free terminal velocity the costate of the velocity vanishes at
    ``t_f``, so the control ramps linearly to zero there.
    """
    if not (np.isfinite(t_f) and t_f > 0):
        raise DomainError("t_f must be positive and finite")
    if not np.isfinite(target) or (velocity_target is not None and not np.isfinite(velocity_target)):
        raise DomainError("targets must be finite")
    T = float(t_f)
    if velocity_target is None:
        c = 3.0 * target / T**3
        return LqSolution(c * T, -c, T)
    A = np.array([[T**2 / 2, T**3 / 6], [T, T**2 / 2]])
    a, b = np.linalg.solve(A, [target, velocity_target])
    return LqSolution(float(a), float(b), T)


def lq_oracle_arrays(sol: LqSolution, times: Array) -> tuple[Array, Array, float]:
    """``(u*, x*, J*)`` sampled at ``times``."""
    return sol.u(times)[:, None], sol.x(times), sol.J


__all__ = [
    "ConstraintClass",
    "CycloidSolution",
    "LqSolution",
    "ResidualReport",
    "classify_constraint",
    "costate_by_backward_integration",
    "cycloid_oracle",
    "lq_oracle",
    "lq_oracle_arrays",
    "optimality_residuals",
    "reconstruct_costate",
]
