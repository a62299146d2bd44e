"""Shared fixtures: toy problems and cached benchmark runs."""

from __future__ import annotations

import functools
import time
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vemoc import GainConfig, IntegratorConfig, OcpDefinition, builtin_problem, evolve
from vemoc.integrator import FlowRhs
from vemoc.problems import PROBLEM_GAINS

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def _zeros(*shape):
    z = np.zeros(shape)
    return lambda *args: z


def _const(value):
    value = np.asarray(value, dtype=float)
    return lambda *args: value


def linear_problem(
    A,
    B,
    *,
    x0=None,
    g_E=None,
    g_I=None,
    phi_x=None,
    energy=True,
    fixed=True,
    name="linear",
):
    """``x' = A x + B u`` with optional ``L = |u|^2 / 2``, linear terminal cost and constraints.

    ``g_E`` and ``g_I`` are ``(G, c)`` pairs meaning ``G x_f - c``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n, m = B.shape
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    c_phi = np.zeros(n) if phi_x is None else np.asarray(phi_x, dtype=float)

    def lin(pair):
        if pair is None:
            return 0, _zeros(0), _zeros(0, n), _zeros(0)
        G, c = np.atleast_2d(pair[0]).astype(float), np.atleast_1d(pair[1]).astype(float)
        return G.shape[0], (lambda x, t: G @ x - c), _const(G), _zeros(G.shape[0])

    qE, gE, gEx, gEt = lin(g_E)
    qI, gI, gIx, gIt = lin(g_I)
    return OcpDefinition(
        name=name, n=n, m=m, q_E=qE, q_I=qI, t0=0.0, x0=x0,
        terminal_time_mode="fixed" if fixed else "free",
        f=lambda x, u, t: A @ x + B @ u,
        f_x=_const(A), f_u=_const(B),
        L=(lambda x, u, t: 0.5 * float(u @ u)) if energy else (lambda x, u, t: 0.0),
        L_x=_zeros(n),
        L_u=(lambda x, u, t: np.array(u, dtype=float)) if energy else _zeros(m),
        phi=lambda x, t: float(c_phi @ x),
        phi_x=_const(c_phi), phi_t=lambda x, t: 0.0,
        phi_tx=_zeros(n), phi_xx=_zeros(n, n),
        g_E=gE, g_E_x=gEx, g_E_t=gEt,
        g_I=gI, g_I_x=gIx, g_I_t=gIt,
    )


@pytest.fixture
def make_linear():
    return linear_problem


class AuditedRhs(FlowRhs):
    """Derivative oracle that checks invariants at every evaluation it serves."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.max_feasibility = 0.0
        self.min_pi_I = np.inf
        self.max_off_set_pi = 0.0
        self.max_barrier_error = 0.0

    def __call__(self, vec):
        out = super().__call__(vec)
        d = self.last.diagnostics
        if d.feasibility.size:
            self.max_feasibility = max(self.max_feasibility, float(np.max(np.abs(d.feasibility))))
        ip = list(d.I_p)
        off = [i for i in range(self.defn.q_I) if i not in ip]
        if ip:
            self.min_pi_I = min(self.min_pi_I, float(np.min(d.pi_I[ip])))
            # implied dg_I/dtau on the working set equals -k_g g_I
            target = -self.gains.k_g[ip] * d.g_I[ip]
            self.max_barrier_error = max(
                self.max_barrier_error, float(np.max(np.abs(d.barrier_rate[ip] - target)))
            )
        if off:
            self.max_off_set_pi = max(self.max_off_set_pi, float(np.max(np.abs(d.pi_I[off]))))
        return out


@dataclass
class BenchmarkRun:
    defn: OcpDefinition
    gains: GainConfig
    traj0: object
    final: object
    history: object
    aset: object
    rhs: AuditedRhs
    wall_time: float


@functools.lru_cache(maxsize=None)
def benchmark_run(problem: str, N: int = 101, tau_final: float = 300.0) -> BenchmarkRun:
    """Evolve a built-in problem with its default gains; cached for the session."""
    defn, traj0 = builtin_problem(problem, N)
    gains = GainConfig.make(defn, **PROBLEM_GAINS[problem])
    rhs = AuditedRhs(defn, N, gains)
    start = time.perf_counter()
    final, history, aset = evolve(defn, traj0, gains, IntegratorConfig(tau_final=tau_final), rhs=rhs)
    return BenchmarkRun(defn, gains, traj0, final, history, aset, rhs, time.perf_counter() - start)


@pytest.fixture(scope="session")
def brachA_run():
    return benchmark_run("brachA")


@pytest.fixture(scope="session")
def brachB_run():
    return benchmark_run("brachB")
