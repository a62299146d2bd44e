"""Transition-matrix and adjoint sweeps along physical time.

``psi[i] = Phi(t_f, t_i)`` comes from a backward RK4 sweep of
``dPsi/dt = -Psi f_x``; each step's transition ``T_i = Phi(t_{i+1}, t_i)`` is
kept so the forward variation propagation reuses exactly the same matrices.
The accumulator ``w`` integrates ``dw/dt = -f_x^T w - q`` backward with the
same stepping, which replaces the double integral in the gradient ``p_u`` by
an O(N) sweep. Coefficients are linearly interpolated between nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError, StaleTableError
from .problem import NodeData, OcpDefinition, TrajectoryState, evaluate_nodes

Array = np.ndarray


@dataclass(frozen=True)
class TransitionTable:
    psi: Array  # (N, n, n)
    steps: Array  # (N-1, n, n), steps[i] = Phi(t_{i+1}, t_i)
    w: Array | None  # (N, n)
    revision: int

    def check(self, traj: TrajectoryState) -> None:
        if traj.revision != self.revision:
            raise StaleTableError(
                f"table built for trajectory revision {self.revision}, "
                f"used with revision {traj.revision}"
            )


def _transition_steps(A: Array, h: float) -> Array:
    """Batched backward RK4 maps ``S_i`` with ``Psi_i = Psi_{i+1} S_i``."""
    A1, A2 = A[:-1], A[1:]
    Am = 0.5 * (A1 + A2)
    eye = np.broadcast_to(np.eye(A.shape[1]), A1.shape)
    Y2 = eye + 0.5 * h * A2
    Y3 = eye + 0.5 * h * (Y2 @ Am)
    Y4 = eye + h * (Y3 @ Am)
    return eye + h / 6.0 * (A2 + 2.0 * (Y2 @ Am) + 2.0 * (Y3 @ Am) + Y4 @ A1)


def _affine_offsets(A: Array, q: Array, h: float) -> Array:
    """Constant part of one backward RK4 step of ``dw/dt = -A^T w - q``."""
    A1t = np.swapaxes(A[:-1], 1, 2)
    A2t = np.swapaxes(A[1:], 1, 2)
    Amt = 0.5 * (A1t + A2t)
    q1, q2 = q[:-1], q[1:]
    qm = 0.5 * (q1 + q2)
    mv = lambda M, v: np.einsum("kij,kj->ki", M, v)  # noqa: E731
    k1 = -q2
    k2 = -mv(Amt, -0.5 * h * k1) - qm
    k3 = -mv(Amt, -0.5 * h * k2) - qm
    k4 = -mv(A1t, -h * k3) - q1
    return -h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise EvaluationError(f"{name} is not finite")


def backward_transition_sweep(
    defn: OcpDefinition, traj: TrajectoryState, nodes: NodeData | None = None
) -> TransitionTable:
    """``psi[i] = Phi(t_f, t_i)`` at every node (the ``w`` slot is left empty)."""
    if nodes is None:
        nodes = evaluate_nodes(defn, traj)
    _check_finite("f_x", nodes.f_x)
    steps = _transition_steps(nodes.f_x, traj.step)
    N, n = traj.N, defn.n
    psi = np.empty((N, n, n))
    psi[-1] = np.eye(n)
    for i in range(N - 2, -1, -1):
        psi[i] = psi[i + 1] @ steps[i]
    return TransitionTable(psi, steps, None, traj.revision)


def adjoint_source(nodes: NodeData) -> Array:
    """``q = L_x + phi_tx + phi_xx f + f_x^T phi_x`` at each node."""
    return (
        nodes.L_x
        + nodes.phi_tx
        + np.einsum("kij,kj->ki", nodes.phi_xx, nodes.f)
        + np.einsum("kji,kj->ki", nodes.f_x, nodes.phi_x)
    )


def adjoint_sweep(
    defn: OcpDefinition,
    traj: TrajectoryState,
    table: TransitionTable | None = None,
    nodes: NodeData | None = None,
) -> TransitionTable:
    """Fill ``w(t_i) = int_{t_i}^{t_f} Phi^T(s, t_i) q(s) ds`` by a backward sweep."""
    if nodes is None:
        nodes = evaluate_nodes(defn, traj)
    if table is None:
        table = backward_transition_sweep(defn, traj, nodes)
    table.check(traj)
    q = adjoint_source(nodes)
    _check_finite("adjoint source q", q)
    d = _affine_offsets(nodes.f_x, q, traj.step)
    w = np.zeros((traj.N, defn.n))
    for i in range(traj.N - 2, -1, -1):
        w[i] = table.steps[i].T @ w[i + 1] + d[i]
    return TransitionTable(table.psi, table.steps, w, table.revision)


def build_table(
    defn: OcpDefinition, traj: TrajectoryState, nodes: NodeData | None = None
) -> TransitionTable:
    if nodes is None:
        nodes = evaluate_nodes(defn, traj)
    return adjoint_sweep(defn, traj, backward_transition_sweep(defn, traj, nodes), nodes)


def compute_pu(
    defn: OcpDefinition,
    traj: TrajectoryState,
    table: TransitionTable,
    nodes: NodeData | None = None,
) -> Array:
    """Gradient ``p_u = L_u + f_u^T phi_x + f_u^T w`` at each node, shape ``(N, m)``."""
    table.check(traj)
    if table.w is None:
        raise StaleTableError("transition table has no adjoint accumulator")
    if nodes is None:
        nodes = evaluate_nodes(defn, traj)
    return nodes.L_u + np.einsum("kji,kj->ki", nodes.f_u, nodes.phi_x + table.w)


def propagate_variation(
    defn: OcpDefinition,
    traj: TrajectoryState,
    du_dtau: Array,
    table: TransitionTable | None = None,
    nodes: NodeData | None = None,
) -> Array:
    """State variation driven by ``du_dtau`` from ``dx(t0) = 0``.

    Each interval applies the RK4 transition of the linearized dynamics and a
    trapezoidal rule for the forcing ``f_u du``. With this pairing the terminal
    value equals the trapezoidal quadrature of ``Phi(t_f, t) f_u du`` over the
    same transition table, which is what the multiplier system is built on.
    """
    if nodes is None:
        nodes = evaluate_nodes(defn, traj)
    if table is None:
        table = backward_transition_sweep(defn, traj, nodes)
    table.check(traj)
    du = np.asarray(du_dtau, dtype=float).reshape(traj.N, defn.m)
    b = np.einsum("kij,kj->ki", nodes.f_u, du)
    h = traj.step
    dx = np.zeros((traj.N, defn.n))
    for i in range(traj.N - 1):
        T = table.steps[i]
        dx[i + 1] = T @ (dx[i] + 0.5 * h * b[i]) + 0.5 * h * b[i + 1]
    return dx
