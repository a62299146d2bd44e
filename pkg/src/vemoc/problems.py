"""Built-in benchmark problems with feasible initial trajectories."""

from __future__ import annotations

import numpy as np

from .errors import DomainError
from .problem import OcpDefinition, TrajectoryState

GRAVITY = 10.0

PROBLEM_IDS = ("brachA", "brachB", "lq")

# per-problem gain defaults that differ from the Brachistochrone settings
PROBLEM_GAINS = {
    "brachA": {"K": 0.1, "k_tf": 0.05, "k_g": 0.1},
    "brachB": {"K": 0.1, "k_tf": 0.05, "k_g": 0.1},
    "lq": {"K": 1.0, "k_tf": 0.0, "k_g": 0.1},
}

DESCRIPTIONS = {
    "brachA": "Brachistochrone, x(t_f) = 2, y(t_f) <= -2, straight-line start to (2, -2*sqrt(3))",
    "brachB": "Brachistochrone, x(t_f) = 2, -1.3 <= y(t_f) <= -1, straight-line start to (2, -1)",
    "lq": "double integrator, min int u^2/2, t_f = 1, p(t_f) = 1, start u = 2",
}


def _zeros(*shape):
    z = np.zeros(shape)
    return lambda *args: z


def _brach_f(x, u, t):
    V, a = x[2], u[0]
    return np.array([V * np.sin(a), -V * np.cos(a), GRAVITY * np.cos(a)])


def _brach_fx(x, u, t):
    a = u[0]
    return np.array([[0.0, 0.0, np.sin(a)], [0.0, 0.0, -np.cos(a)], [0.0, 0.0, 0.0]])


def _brach_fu(x, u, t):
    V, a = x[2], u[0]
    return np.array([[V * np.cos(a)], [V * np.sin(a)], [-GRAVITY * np.sin(a)]])


def brachistochrone(variant: str) -> OcpDefinition:
    """Minimum-time descent ``J = t_f`` with ``x = (x, y, V)`` and path angle ``u``."""
    if variant == "A":
        g_I = lambda x, t: np.array([x[1] + 2.0])  # noqa: E731
        g_I_x = _const(np.array([[0.0, 1.0, 0.0]]))
        q_I = 1
    elif variant == "B":
        g_I = lambda x, t: np.array([x[1] + 1.0, -x[1] - 1.3])  # noqa: E731
        g_I_x = _const(np.array([[0.0, 1.0, 0.0], [0.0, -1.0, 0.0]]))
        q_I = 2
    else:
        raise DomainError(f"unknown Brachistochrone variant {variant!r}")
    return OcpDefinition(
        name=f"brach{variant}",
        n=3,
        m=1,
        q_E=1,
        q_I=q_I,
        t0=0.0,
        x0=np.zeros(3),
        terminal_time_mode="free",
        f=_brach_f,
        f_x=_brach_fx,
        f_u=_brach_fu,
        L=lambda x, u, t: 0.0,
        L_x=_zeros(3),
        L_u=_zeros(1),
        phi=lambda x, t: t,
        phi_x=_zeros(3),
        phi_t=lambda x, t: 1.0,
        phi_tx=_zeros(3),
        phi_xx=_zeros(3, 3),
        g_E=lambda x, t: np.array([x[0] - 2.0]),
        g_E_x=_const(np.array([[1.0, 0.0, 0.0]])),
        g_E_t=_zeros(1),
        g_I=g_I,
        g_I_x=g_I_x,
        g_I_t=_zeros(q_I),
        x_bounds=np.array([[-3.0, 3.0], [-3.0, 3.0], [0.0, 10.0]]),
        u_bounds=np.array([[-np.pi, np.pi]]),
        t_bounds=(0.1, 2.0),
    )


def _const(value):
    return lambda *args: value


def _straight_line(N, t_f, accel, angle):
    """Uniformly accelerated slide along a line at fixed path angle."""
    t = np.linspace(0.0, t_f, N)
    s = 0.5 * accel * t**2
    x = np.column_stack([s * np.sin(angle), -s * np.cos(angle), accel * t])
    u = np.full((N, 1), angle)
    return TrajectoryState(x, u, t_f)


def double_integrator(target: float = 1.0, t_f: float = 1.0) -> OcpDefinition:
    """``p' = v, v' = u``, ``J = int u^2/2``, fixed ``t_f`` and ``p(t_f) = target``."""
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    return OcpDefinition(
        name="lq",
        n=2,
        m=1,
        q_E=1,
        q_I=0,
        t0=0.0,
        x0=np.zeros(2),
        terminal_time_mode="fixed",
        f=lambda x, u, t: A @ x + B @ u,
        f_x=_const(A),
        f_u=_const(B),
        L=lambda x, u, t: 0.5 * float(u[0] ** 2),
        L_x=_zeros(2),
        L_u=lambda x, u, t: np.array([u[0]]),
        phi=lambda x, t: 0.0,
        phi_x=_zeros(2),
        phi_t=lambda x, t: 0.0,
        phi_tx=_zeros(2),
        phi_xx=_zeros(2, 2),
        g_E=lambda x, t: np.array([x[0] - target]),
        g_E_x=_const(np.array([[1.0, 0.0]])),
        g_E_t=_zeros(1),
        g_I=_zeros(0),
        g_I_x=_zeros(0, 2),
        g_I_t=_zeros(0),
        x_bounds=np.array([[-2.0, 2.0], [-2.0, 2.0]]),
        u_bounds=np.array([[-3.0, 3.0]]),
        t_bounds=(0.0, 2.0),
    )


def builtin_problem(problem_id: str, N: int = 101) -> tuple[OcpDefinition, TrajectoryState]:
    """Problem definition and its feasible starting trajectory on ``N`` nodes."""
    if N < 3:
        raise DomainError(f"N must be at least 3, got {N}")
    if problem_id == "brachA":
        angle = np.pi / 6
        t_f = np.sqrt(8.0 * np.sqrt(3.0) / 15.0)
        return brachistochrone("A"), _straight_line(N, t_f, GRAVITY * np.cos(angle), angle)
    if problem_id == "brachB":
        angle = np.arctan(2.0)
        return brachistochrone("B"), _straight_line(N, 1.0, GRAVITY * np.cos(angle), angle)
    if problem_id == "lq":
        defn = double_integrator()
        t = np.linspace(0.0, 1.0, N)
        x = np.column_stack([t**2, 2.0 * t])
        return defn, TrajectoryState(x, np.full((N, 1), 2.0), 1.0)
    raise DomainError(f"unknown problem id {problem_id!r}; choose from {', '.join(PROBLEM_IDS)}")
