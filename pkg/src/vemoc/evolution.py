"""Right-hand side of the virtual-time flow.

One evaluation runs the sweeps, resolves the terminal multipliers on a
working set of strengthened inequality constraints, and returns the
variations of the controls, the terminal time and (through the linearized
dynamics) the states.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import CyclingError, DefinitionError, EvaluationError
from .grid import TimeGrid, node_motion_term, quadrature
from .problem import (
    NodeData,
    OcpDefinition,
    TrajectoryState,
    evaluate_nodes,
    performance_index,
    terminal_values,
)
from .sweeps import TransitionTable, build_table, compute_pu, propagate_variation

Array = np.ndarray


@dataclass
class GainConfig:
    """Evolution gains.

    ``K`` weights the control flow, ``k_tf`` the terminal-time flow and
    ``k_g`` the soft barrier on each inequality constraint. ``tol_act`` is
    the activation threshold in units of ``g_I``.
    """

    K: Array
    k_tf: float
    k_g: Array
    tol_act: float = 1e-9

    @classmethod
    def make(cls, defn: OcpDefinition, K=0.1, k_tf=0.05, k_g=0.1, tol_act=1e-9):
        K = np.asarray(K, dtype=float)
        if K.ndim == 0:
            K = float(K) * np.eye(defn.m)
        k_g = np.broadcast_to(np.asarray(k_g, dtype=float), (defn.q_I,)).copy()
        if defn.fixed_time:
            k_tf = 0.0
        gains = cls(K, float(k_tf), k_g, float(tol_act))
        gains.validate(defn)
        return gains

    def validate(self, defn: OcpDefinition) -> None:
        if self.K.shape != (defn.m, defn.m):
            raise DefinitionError(f"K has shape {self.K.shape}, expected ({defn.m}, {defn.m})")
        if not np.allclose(self.K, self.K.T, rtol=1e-12, atol=0.0):
            raise DefinitionError("K must be symmetric")
        try:
            np.linalg.cholesky(self.K)
        except np.linalg.LinAlgError:
            raise DefinitionError("K must be positive definite") from None
        if self.k_tf < 0:
            raise DefinitionError("k_tf must be non-negative")
        if defn.fixed_time and self.k_tf != 0.0:
            raise DefinitionError("k_tf must be 0 for a fixed terminal time")
        if not defn.fixed_time and self.k_tf == 0.0:
            raise DefinitionError("k_tf must be positive for a free terminal time")
        if self.k_g.shape != (defn.q_I,) or np.any(self.k_g <= 0):
            raise DefinitionError("k_g must hold one positive gain per inequality constraint")
        if self.tol_act < 0:
            raise DefinitionError("tol_act must be non-negative")

    def scaled(self, c: float) -> "GainConfig":
        return GainConfig(c * self.K, c * self.k_tf, self.k_g.copy(), self.tol_act)


@dataclass
class EvolutionOptions:
    barrier: bool = True
    node_motion: bool = True


@dataclass
class ActiveSetState:
    I_active: tuple[int, ...]
    I_p: tuple[int, ...]
    pi_E: Array
    pi_I: Array
    iterations: list[dict] = field(default_factory=list)
    M_cond: float = 1.0
    degenerate: bool = False

    @property
    def pi(self) -> Array:
        """Solved multipliers stacked as ``[pi_E; pi_I(I_p)]``."""
        return np.concatenate([self.pi_E, self.pi_I[list(self.I_p)]])

    @property
    def mask(self) -> int:
        return sum(1 << i for i in self.I_p)


@dataclass
class MultiplierSolution:
    pi: Array
    degenerate: bool
    cond: float


@dataclass
class Diagnostics:
    J: float
    dJ_dtau: float
    t_f: float
    dtf_dtau: float
    r_u: float
    r_tf: float
    pi_E: Array
    pi_I: Array
    g_E: Array
    g_I: Array
    I_active: tuple[int, ...]
    I_p: tuple[int, ...]
    M_cond: float
    degenerate: bool
    feasibility: Array  # implied dg_E/dtau
    barrier_rate: Array  # implied dg_I/dtau on every constraint


# --------------------------------------------------------------------------


class _System:
    """Full multiplier system over every terminal constraint.

    The working set only selects rows and columns, so the quadratures are
    done once per right-hand-side evaluation.
    """

    def __init__(self, defn, traj, table, p_u, gains, nodes, term):
        self.qE = defn.q_E
        G = np.vstack([term["g_E_x"], term["g_I_x"]]).reshape(defn.q_E + defn.q_I, defn.n)
        gt = np.concatenate([term["g_E_t"], term["g_I_t"]])
        self.G = G
        self.c = G @ term["f"] + gt
        self.H0 = term["phi_t"] + term["phi_x"] @ term["f"] + term["L"]
        self.Z = table.psi @ nodes.f_u  # (N, n, m): Phi(t_f, t_i) f_u(t_i)
        D = np.einsum("qn,knm->kqm", G, self.Z)
        self.D = D
        grid = TimeGrid.for_trajectory(traj)
        DK = D @ gains.K
        M = quadrature(DK @ np.swapaxes(D, 1, 2), grid) + gains.k_tf * np.outer(self.c, self.c)
        r = quadrature(np.einsum("kqm,km->kq", DK, p_u), grid) + gains.k_tf * self.c * self.H0
        self.M = M
        self.r = r
        self.g_I = term["g_I"]
        self.k_g = gains.k_g

    def select(self, working_set, barrier_on):
        idx = np.concatenate([np.arange(self.qE), self.qE + np.asarray(working_set, dtype=int)])
        idx = idx.astype(int)
        M = self.M[np.ix_(idx, idx)]
        r = self.r[idx].copy()
        if barrier_on and len(working_set):
            r[self.qE:] -= self.k_g[list(working_set)] * self.g_I[list(working_set)]
        asym = np.max(np.abs(M - M.T)) if M.size else 0.0
        if asym > 1e-10 * max(1.0, np.max(np.abs(M)) if M.size else 1.0):
            raise EvaluationError(f"multiplier matrix is not symmetric (|M - M^T| = {asym:.3e})")
        return 0.5 * (M + M.T), r


def detect_active(defn: OcpDefinition, traj: TrajectoryState, gains: GainConfig,
                  g_I: Array | None = None) -> tuple[int, ...]:
    """Indices (0-based) with ``g_I >= -tol_act``; violated constraints included."""
    if g_I is None:
        g_I = defn.call("g_I", traj.x_nodes[-1], traj.t_f)
    return tuple(int(i) for i in np.flatnonzero(np.asarray(g_I) >= -gains.tol_act))


def assemble_system(
    defn: OcpDefinition,
    traj: TrajectoryState,
    table: TransitionTable,
    p_u: Array,
    working_set,
    gains: GainConfig,
    barrier_on: bool = True,
    nodes: NodeData | None = None,
) -> tuple[Array, Array]:
    """Matrix ``M`` and vector ``r`` of ``M pi = -r`` for ``g = [g_E; g_I(working_set)]``.

    With the barrier on, ``k_g g_I`` is subtracted from the inequality rows so
    the implied ``dg_I/dtau`` equals ``-k_g g_I`` on the working set.
    """
    table.check(traj)
    if nodes is None:
        nodes = evaluate_nodes(defn, traj)
    term = terminal_values(defn, traj)
    return _System(defn, traj, table, p_u, gains, nodes, term).select(tuple(working_set), barrier_on)


def solve_multipliers(M: Array, r: Array, rank_tol: float = 1e-10) -> MultiplierSolution:
    """Solve ``M pi = -r``; fall back to minimum norm when ``M`` is rank deficient."""
    M = np.asarray(M, dtype=float)
    r = np.asarray(r, dtype=float)
    if M.shape != (r.size, r.size):
        raise DefinitionError(f"M {M.shape} does not match r {r.shape}")
    if r.size == 0:
        return MultiplierSolution(np.zeros(0), False, 1.0)
    if not (np.all(np.isfinite(M)) and np.all(np.isfinite(r))):
        raise EvaluationError("multiplier system has non-finite entries")
    s = np.linalg.svd(M, compute_uv=False)
    cond = float(s[0] / s[-1]) if s[-1] > 0 else float("inf")
    if s[-1] <= rank_tol * s[0] or s[0] == 0.0:
        pi = np.linalg.lstsq(M, -r, rcond=rank_tol)[0]
        return MultiplierSolution(pi, True, cond)
    pi = scipy.linalg.solve(M, -r, assume_a="sym")
    return MultiplierSolution(pi, False, cond)


def _working_set_loop(system: _System, I_active, q_I, barrier_on) -> ActiveSetState:
    qE = system.qE
    working = list(I_active)
    log = []
    for k in range(q_I + 1):
        M, r = system.select(tuple(working), barrier_on)
        sol = solve_multipliers(M, r)
        pi_I_ws = sol.pi[qE:]
        tol_sign = 1e-12 * (np.max(np.abs(sol.pi)) if sol.pi.size else 0.0) + 1e-14
        entry = {"pass": k, "I_p": list(working), "pi_I": pi_I_ws.tolist(), "dropped": None}
        log.append(entry)
        if pi_I_ws.size and np.min(pi_I_ws) < -tol_sign:
            j = int(np.argmin(pi_I_ws))
            entry["dropped"] = working[j]
            del working[j]
            continue
        pi_I = np.zeros(q_I)
        pi_I[working] = np.maximum(pi_I_ws, 0.0) if pi_I_ws.size else pi_I_ws
        return ActiveSetState(
            tuple(I_active), tuple(working), sol.pi[:qE].copy(), pi_I, log, sol.cond, sol.degenerate
        )
    raise CyclingError(f"working-set loop exceeded {q_I + 1} passes", log)


def working_set_loop(
    defn: OcpDefinition,
    traj: TrajectoryState,
    table: TransitionTable,
    p_u: Array,
    gains: GainConfig,
    barrier_on: bool = True,
    nodes: NodeData | None = None,
) -> ActiveSetState:
    """Start from every detected-active constraint, drop the most negative multiplier until all are non-negative."""
    table.check(traj)
    if nodes is None:
        nodes = evaluate_nodes(defn, traj)
    term = terminal_values(defn, traj)
    system = _System(defn, traj, table, p_u, gains, nodes, term)
    I = detect_active(defn, traj, gains, term["g_I"])
    return _working_set_loop(system, I, defn.q_I, barrier_on)


def _terminal_covector(defn, term, aset) -> Array:
    lam = term["g_E_x"].reshape(defn.q_E, defn.n).T @ aset.pi_E
    return lam + term["g_I_x"].reshape(defn.q_I, defn.n).T @ aset.pi_I


def control_variation(
    defn: OcpDefinition,
    traj: TrajectoryState,
    table: TransitionTable,
    p_u: Array,
    aset: ActiveSetState,
    gains: GainConfig,
    nodes: NodeData | None = None,
) -> Array:
    """``du/dtau = -K (p_u + f_u^T Phi^T(t_f, t) (g_E_x^T pi_E + g_I_x^T pi_I))``."""
    table.check(traj)
    if nodes is None:
        nodes = evaluate_nodes(defn, traj)
    lam = _terminal_covector(defn, terminal_values(defn, traj), aset)
    Z = table.psi @ nodes.f_u
    v = p_u + np.einsum("knm,n->km", Z, lam)
    return -v @ gains.K.T


def terminal_time_variation(
    defn: OcpDefinition, traj: TrajectoryState, aset: ActiveSetState, gains: GainConfig
) -> float:
    """``dt_f/dtau``; zero for a fixed terminal time."""
    if gains.k_tf == 0.0:
        return 0.0
    term = terminal_values(defn, traj)
    return -gains.k_tf * _stationarity_tf(defn, term, aset)


def _stationarity_tf(defn, term, aset) -> float:
    f = term["f"]
    H0 = term["phi_t"] + term["phi_x"] @ f + term["L"]
    cE = term["g_E_x"].reshape(defn.q_E, defn.n) @ f + term["g_E_t"]
    cI = term["g_I_x"].reshape(defn.q_I, defn.n) @ f + term["g_I_t"]
    return float(H0 + aset.pi_E @ cE + aset.pi_I @ cI)


@dataclass
class RhsResult:
    vector: Array
    x_rate: Array  # (N, n), includes node motion
    u_rate: Array  # (N, m), includes node motion
    aset: ActiveSetState
    diagnostics: Diagnostics
    du_dtau: Array
    dx_dtau: Array
    dtf_dtau: float
    table: TransitionTable
    p_u: Array


def evolution_rhs(
    defn: OcpDefinition,
    traj: TrajectoryState,
    gains: GainConfig,
    options: EvolutionOptions | None = None,
) -> RhsResult:
    """Full right-hand side, stacked as ``[x rows | u rows | t_f]``."""
    options = options or EvolutionOptions()
    nodes = evaluate_nodes(defn, traj)
    table = build_table(defn, traj, nodes)
    p_u = compute_pu(defn, traj, table, nodes)
    term = terminal_values(defn, traj)
    system = _System(defn, traj, table, p_u, gains, nodes, term)
    I = detect_active(defn, traj, gains, term["g_I"])
    aset = _working_set_loop(system, I, defn.q_I, options.barrier)

    lam = _terminal_covector(defn, term, aset)
    v = p_u + np.einsum("knm,n->km", system.Z, lam)
    du = -v @ gains.K.T
    stat_tf = _stationarity_tf(defn, term, aset)
    dtf = -gains.k_tf * stat_tf if gains.k_tf else 0.0
    dx = propagate_variation(defn, traj, du, table, nodes)

    rows = np.hstack([dx, du])
    if options.node_motion and dtf != 0.0:
        rows = rows + node_motion_term(traj, defn, dtf, nodes.f)
    vec = np.concatenate([rows[:, : defn.n].ravel(), rows[:, defn.n :].ravel(), [dtf]])
    if not np.all(np.isfinite(vec)):
        raise EvaluationError("evolution right-hand side is not finite")

    grid = TimeGrid.for_trajectory(traj)
    dxf = dx[-1]
    gEx = term["g_E_x"].reshape(defn.q_E, defn.n)
    gIx = term["g_I_x"].reshape(defn.q_I, defn.n)
    feas = gEx @ dxf + (gEx @ term["f"] + term["g_E_t"]) * dtf
    bar = gIx @ dxf + (gIx @ term["f"] + term["g_I_t"]) * dtf
    dJ = system.H0 * dtf + float(quadrature(np.sum(p_u * du, axis=1), grid))
    diag = Diagnostics(
        J=performance_index(defn, traj),
        dJ_dtau=dJ,
        t_f=traj.t_f,
        dtf_dtau=dtf,
        r_u=float(np.max(np.abs(v))),
        r_tf=0.0 if defn.fixed_time else abs(stat_tf),
        pi_E=aset.pi_E,
        pi_I=aset.pi_I,
        g_E=term["g_E"],
        g_I=term["g_I"],
        I_active=aset.I_active,
        I_p=aset.I_p,
        M_cond=aset.M_cond,
        degenerate=aset.degenerate,
        feasibility=feas,
        barrier_rate=bar,
    )
    return RhsResult(
        vec, rows[:, : defn.n], rows[:, defn.n :], aset, diag, du, dx, dtf, table, p_u
    )
