"""Independent reference computations used by several test modules."""

from __future__ import annotations

import numpy as np
import scipy.integrate
from vemoc import OcpDefinition


def _zeros(*shape):
    z = np.zeros(shape)
    return lambda *args: z


def ltv_problem(A0, A1, B0, B1, t_f=1.0) -> OcpDefinition:
    """``x' = (A0 + A1 t) x + (B0 + B1 t) u`` with no cost or constraints."""
    A0, A1, B0, B1 = (np.asarray(a, dtype=float) for a in (A0, A1, B0, B1))
    n, m = B0.shape
    return OcpDefinition(
        name="ltv", n=n, m=m, q_E=0, q_I=0, t0=0.0, x0=np.zeros(n),
        terminal_time_mode="fixed",
        f=lambda x, u, t: (A0 + A1 * t) @ x + (B0 + B1 * t) @ u,
        f_x=lambda x, u, t: A0 + A1 * t,
        f_u=lambda x, u, t: B0 + B1 * t,
        L=lambda x, u, t: 0.0, L_x=_zeros(n), L_u=_zeros(m),
        phi=lambda x, t: 0.0, phi_x=_zeros(n), phi_t=lambda x, t: 0.0,
        phi_tx=_zeros(n), phi_xx=_zeros(n, n),
        g_E=_zeros(0), g_E_x=_zeros(0, n), g_E_t=_zeros(0),
        g_I=_zeros(0), g_I_x=_zeros(0, n), g_I_t=_zeros(0),
    )


def pairwise_transitions(A_nodes: np.ndarray, times: np.ndarray) -> np.ndarray:
    """``Phi[i, j] = Phi(t_i, t_j)`` for ``i >= j`` by adaptive integration.

    ``A`` is interpolated linearly between the node values.
    """
    N, n, _ = A_nodes.shape

    def A_of(t):
        k = min(max(np.searchsorted(times, t, side="right") - 1, 0), N - 2)
        a = (t - times[k]) / (times[k + 1] - times[k])
        return (1 - a) * A_nodes[k] + a * A_nodes[k + 1]

    Phi = np.zeros((N, N, n, n))
    for j in range(N):
        Phi[j, j] = np.eye(n)
        if j == N - 1:
            continue
        sol = scipy.integrate.solve_ivp(
            lambda t, y: (A_of(t) @ y.reshape(n, n)).ravel(),
            (times[j], times[-1]), np.eye(n).ravel(), t_eval=times[j:],
            method="DOP853", rtol=1e-12, atol=1e-14,
        )
        Phi[j:, j] = sol.y.T.reshape(-1, n, n)
    return Phi


def variation_by_quadrature(A_nodes, B_nodes, du, times) -> np.ndarray:
    """Trapezoidal rule applied to ``dx(t_i) = int_0^{t_i} Phi(t_i, s) B(s) du(s) ds``."""
    Phi = pairwise_transitions(A_nodes, times)
    N, n = A_nodes.shape[0], A_nodes.shape[1]
    b = np.einsum("kij,kj->ki", B_nodes, du)
    h = times[1] - times[0]
    dx = np.zeros((N, n))
    for i in range(1, N):
        w = np.full(i + 1, h)
        w[0] = w[-1] = 0.5 * h
        dx[i] = sum(w[j] * Phi[i, j] @ b[j] for j in range(i + 1))
    return dx
