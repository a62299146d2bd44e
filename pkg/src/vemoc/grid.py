"""Normalized moving time grid.

Variables live at fixed normalized abscissae ``sigma_i = i/(N-1)``; the
physical node times ``t_i = t0 + sigma_i (t_f - t0)`` stretch with ``t_f`` so
the last node always sits on the terminal time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EvaluationError
from .problem import OcpDefinition, TrajectoryState

Array = np.ndarray


@dataclass(frozen=True)
class TimeGrid:
    N: int
    t0: float
    t_f: float

    def __post_init__(self):
        if self.N < 2:
            raise DomainError("a grid needs at least two nodes")
        if not self.t_f > self.t0:
            raise DomainError(f"t_f = {self.t_f} must exceed t0 = {self.t0}")

    @classmethod
    def for_trajectory(cls, traj: TrajectoryState) -> "TimeGrid":
        return cls(traj.N, traj.t0, traj.t_f)

    @property
    def sigma(self) -> Array:
        return np.linspace(0.0, 1.0, self.N)

    @property
    def times(self) -> Array:
        return self.t0 + self.sigma * (self.t_f - self.t0)

    @property
    def h(self) -> float:
        return (self.t_f - self.t0) / (self.N - 1)

    @property
    def weights(self) -> Array:
        w = np.full(self.N, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w


def quadrature(values: Array, grid: TimeGrid) -> Array:
    """Composite trapezoidal integral of each column over ``[t0, t_f]``.

    Accepts ``(N,)`` or ``(N, ...)`` input; the sum runs in ascending node
    order so results are reproducible bit for bit.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[0] != grid.N:
        raise DomainError(f"expected {grid.N} rows, got {values.shape[0]}")
    if not np.all(np.isfinite(values)):
        raise EvaluationError("quadrature input is not finite")
    w = grid.weights
    acc = np.zeros(values.shape[1:])
    for i in range(grid.N):
        acc = acc + w[i] * values[i]
    return acc


def interpolate(traj: TrajectoryState, t: float) -> tuple[Array, Array]:
    """Piecewise-linear state and control at physical time ``t``."""
    t = float(t)
    if t < traj.t0 or t > traj.t_f:
        raise DomainError(f"t = {t} lies outside [{traj.t0}, {traj.t_f}]")
    s = (t - traj.t0) / (traj.t_f - traj.t0) * (traj.N - 1)
    k = int(round(s))
    if traj.times[k] == t:
        # node times do not always survive the round trip through s
        return traj.x_nodes[k].copy(), traj.u_nodes[k].copy()
    i = min(int(np.floor(s)), traj.N - 2)
    a = s - i
    if a == 0.0:
        return traj.x_nodes[i].copy(), traj.u_nodes[i].copy()
    if a == 1.0:
        return traj.x_nodes[i + 1].copy(), traj.u_nodes[i + 1].copy()
    x = (1 - a) * traj.x_nodes[i] + a * traj.x_nodes[i + 1]
    u = (1 - a) * traj.u_nodes[i] + a * traj.u_nodes[i + 1]
    return x, u


def time_derivative(values: Array, h: float) -> Array:
    """Second-order finite-difference derivative along axis 0, one-sided at the ends."""
    return np.gradient(np.asarray(values, dtype=float), h, axis=0, edge_order=2)


def node_motion_term(
    traj: TrajectoryState, defn: OcpDefinition, dtf_dtau: float, f_nodes: Array | None = None
) -> Array:
    """Convective correction for values held at fixed ``sigma`` while ``t_f`` moves.

    Returns an ``(N, n+m)`` array: ``f(x_i, u_i, t_i) sigma_i dtf`` in the state
    columns and ``du/dt(t_i) sigma_i dtf`` in the control columns.
    """
    N, n, m = traj.N, defn.n, defn.m
    out = np.zeros((N, n + m))
    if dtf_dtau == 0.0 or defn.fixed_time:
        return out
    sigma = traj.sigma
    if f_nodes is None:
        t = traj.times
        f_nodes = np.array(
            [defn.call("f", traj.x_nodes[i], traj.u_nodes[i], t[i]) for i in range(N)]
        )
    out[:, :n] = f_nodes * (sigma * dtf_dtau)[:, None]
    out[:, n:] = time_derivative(traj.u_nodes, traj.step) * (sigma * dtf_dtau)[:, None]
    return out


def reproject_states(defn: OcpDefinition, traj: TrajectoryState) -> TrajectoryState:
    """Re-integrate the dynamics from ``x0`` under the node controls.

    Classical RK4 node to node with the control linearly interpolated.
    """
    t = traj.times
    h = traj.step
    x = np.empty_like(traj.x_nodes)
    x[0] = defn.x0
    u = traj.u_nodes
    for i in range(traj.N - 1):
        um = 0.5 * (u[i] + u[i + 1])
        tm = t[i] + 0.5 * h
        k1 = defn.call("f", x[i], u[i], t[i])
        k2 = defn.call("f", x[i] + 0.5 * h * k1, um, tm)
        k3 = defn.call("f", x[i] + 0.5 * h * k2, um, tm)
        k4 = defn.call("f", x[i] + h * k3, u[i + 1], t[i + 1])
        x[i + 1] = x[i] + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return traj.replace(x_nodes=x)
