"""Optimal control problem model.

An :class:`OcpDefinition` bundles a Bolza problem with terminal equality and
inequality constraints together with every partial derivative the evolution
laws need. Derivatives are supplied by hand; :func:`audit_derivatives` checks
them against central differences.

A :class:`TrajectoryState` is the evolving unknown: state and control values
on a uniform normalized grid plus the terminal time.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DefinitionError, EvaluationError

Array = np.ndarray

_revision_counter = itertools.count(1)

# name -> (argument kind, shape builder from (n, m, qE, qI))
_SHAPES = {
    "f": lambda n, m, qe, qi: (n,),
    "f_x": lambda n, m, qe, qi: (n, n),
    "f_u": lambda n, m, qe, qi: (n, m),
    "L": lambda n, m, qe, qi: (),
    "L_x": lambda n, m, qe, qi: (n,),
    "L_u": lambda n, m, qe, qi: (m,),
    "phi": lambda n, m, qe, qi: (),
    "phi_x": lambda n, m, qe, qi: (n,),
    "phi_t": lambda n, m, qe, qi: (),
    "phi_tx": lambda n, m, qe, qi: (n,),
    "phi_xx": lambda n, m, qe, qi: (n, n),
    "g_E": lambda n, m, qe, qi: (qe,),
    "g_E_x": lambda n, m, qe, qi: (qe, n),
    "g_E_t": lambda n, m, qe, qi: (qe,),
    "g_I": lambda n, m, qe, qi: (qi,),
    "g_I_x": lambda n, m, qe, qi: (qi, n),
    "g_I_t": lambda n, m, qe, qi: (qi,),
}


@dataclass(frozen=True)
class OcpDefinition:
    """Bolza problem ``J = phi(x_f, t_f) + int L dt`` with terminal constraints.

    Running callbacks take ``(x, u, t)``; terminal callbacks take
    ``(x_f, t_f)``. ``phi_x``, ``phi_tx`` and ``phi_xx`` are also evaluated
    along the trajectory as ``(x(t), t)``.

    ``x_bounds``, ``u_bounds`` and ``t_bounds`` are the sampling boxes used by
    the derivative auditor; they do not constrain the solution.
    """

    name: str
    n: int
    m: int
    q_E: int
    q_I: int
    t0: float
    x0: Array
    terminal_time_mode: str
    f: Callable
    f_x: Callable
    f_u: Callable
    L: Callable
    L_x: Callable
    L_u: Callable
    phi: Callable
    phi_x: Callable
    phi_t: Callable
    phi_tx: Callable
    phi_xx: Callable
    g_E: Callable
    g_E_x: Callable
    g_E_t: Callable
    g_I: Callable
    g_I_x: Callable
    g_I_t: Callable
    x_bounds: Array | None = None
    u_bounds: Array | None = None
    t_bounds: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        for k in ("n", "m", "q_E", "q_I"):
            v = getattr(self, k)
            if int(v) != v or v < 0:
                raise DefinitionError(f"{k} must be a non-negative integer, got {v!r}")
        if self.n == 0 or self.m == 0:
            raise DefinitionError("state and control dimensions must be positive")
        if self.terminal_time_mode not in ("free", "fixed"):
            raise DefinitionError(
                f"terminal_time_mode must be 'free' or 'fixed', got {self.terminal_time_mode!r}"
            )
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (self.n,):
            raise DefinitionError(f"x0 has shape {x0.shape}, expected ({self.n},)")
        object.__setattr__(self, "x0", x0)

    @property
    def fixed_time(self) -> bool:
        return self.terminal_time_mode == "fixed"

    def call(self, name: str, *args) -> Array:
        """Evaluate callback ``name`` and check its shape and finiteness."""
        out = np.asarray(getattr(self, name)(*args), dtype=float)
        shape = _SHAPES[name](self.n, self.m, self.q_E, self.q_I)
        if out.shape != shape:
            if out.size == int(np.prod(shape)) and out.ndim <= 1 and len(shape) <= 1:
                out = out.reshape(shape)
            else:
                raise DefinitionError(
                    f"{self.name}.{name} returned shape {out.shape}, expected {shape}"
                )
        if not np.all(np.isfinite(out)):
            bad = np.argwhere(~np.isfinite(np.atleast_1d(out)))
            raise EvaluationError(
                f"{self.name}.{name} is non-finite at component(s) {bad.tolist()} "
                f"for arguments {[np.asarray(a).tolist() for a in args]}"
            )
        return out


@dataclass(frozen=True)
class TrajectoryState:
    """Node values of ``x`` and ``u`` on ``t_i = t0 + sigma_i (t_f - t0)``.

    Arrays are stored read-only; every instance gets a fresh ``revision`` so
    derived tables can detect that they were built from another trajectory.
    """

    x_nodes: Array
    u_nodes: Array
    t_f: float
    t0: float = 0.0
    revision: int = field(default_factory=lambda: next(_revision_counter), compare=False)

    def __post_init__(self):
        x = np.array(self.x_nodes, dtype=float)
        u = np.array(self.u_nodes, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        if x.ndim != 2 or u.ndim != 2 or x.shape[0] != u.shape[0]:
            raise DefinitionError(
                f"x_nodes {x.shape} and u_nodes {u.shape} must be (N, n) and (N, m)"
            )
        if x.shape[0] < 2:
            raise DefinitionError("a trajectory needs at least two nodes")
        if not float(self.t_f) > float(self.t0):
            raise DefinitionError(f"t_f = {self.t_f} must exceed t0 = {self.t0}")
        x.flags.writeable = False
        u.flags.writeable = False
        object.__setattr__(self, "x_nodes", x)
        object.__setattr__(self, "u_nodes", u)
        object.__setattr__(self, "t_f", float(self.t_f))
        object.__setattr__(self, "t0", float(self.t0))

    @property
    def N(self) -> int:
        return self.x_nodes.shape[0]

    @property
    def sigma(self) -> Array:
        return np.linspace(0.0, 1.0, self.N)

    @property
    def times(self) -> Array:
        return self.t0 + self.sigma * (self.t_f - self.t0)

    @property
    def step(self) -> float:
        return (self.t_f - self.t0) / (self.N - 1)

    @property
    def size(self) -> int:
        return self.x_nodes.size + self.u_nodes.size + 1

    def to_vector(self) -> Array:
        """Stack as ``[x rows | u rows | t_f]``."""
        return np.concatenate([self.x_nodes.ravel(), self.u_nodes.ravel(), [self.t_f]])

    @classmethod
    def from_vector(cls, vec: Array, N: int, n: int, m: int, t0: float = 0.0):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (N * (n + m) + 1,):
            raise DefinitionError(f"stacked vector has shape {vec.shape}")
        x = vec[: N * n].reshape(N, n)
        u = vec[N * n : N * (n + m)].reshape(N, m)
        return cls(x, u, vec[-1], t0)

    def replace(self, x_nodes=None, u_nodes=None, t_f=None) -> "TrajectoryState":
        return TrajectoryState(
            self.x_nodes if x_nodes is None else x_nodes,
            self.u_nodes if u_nodes is None else u_nodes,
            self.t_f if t_f is None else t_f,
            self.t0,
        )


def check_trajectory(defn: OcpDefinition, traj: TrajectoryState) -> None:
    if traj.x_nodes.shape[1] != defn.n or traj.u_nodes.shape[1] != defn.m:
        raise DefinitionError(
            f"trajectory widths ({traj.x_nodes.shape[1]}, {traj.u_nodes.shape[1]}) "
            f"do not match problem dimensions ({defn.n}, {defn.m})"
        )
    if traj.t0 != defn.t0:
        raise DefinitionError(f"trajectory t0 = {traj.t0} but problem t0 = {defn.t0}")


@dataclass
class NodeData:
    """Callback values at every grid node of one trajectory."""

    t: Array
    f: Array
    f_x: Array
    f_u: Array
    L: Array
    L_x: Array
    L_u: Array
    phi_x: Array
    phi_tx: Array
    phi_xx: Array


def evaluate_nodes(defn: OcpDefinition, traj: TrajectoryState) -> NodeData:
    check_trajectory(defn, traj)
    t = traj.times
    N, n, m = traj.N, defn.n, defn.m
    f = np.empty((N, n))
    fx = np.empty((N, n, n))
    fu = np.empty((N, n, m))
    L = np.empty(N)
    Lx = np.empty((N, n))
    Lu = np.empty((N, m))
    px = np.empty((N, n))
    ptx = np.empty((N, n))
    pxx = np.empty((N, n, n))
    call = defn.call
    for i in range(N):
        x, u, ti = traj.x_nodes[i], traj.u_nodes[i], t[i]
        f[i] = call("f", x, u, ti)
        fx[i] = call("f_x", x, u, ti)
        fu[i] = call("f_u", x, u, ti)
        L[i] = call("L", x, u, ti)
        Lx[i] = call("L_x", x, u, ti)
        Lu[i] = call("L_u", x, u, ti)
        px[i] = call("phi_x", x, ti)
        ptx[i] = call("phi_tx", x, ti)
        pxx[i] = call("phi_xx", x, ti)
    return NodeData(t, f, fx, fu, L, Lx, Lu, px, ptx, pxx)


def evaluate_dynamics(defn: OcpDefinition, x, u, t) -> Array:
    """Right-hand side ``f(x, u, t)`` with shape checks."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.shape != (defn.n,) or u.shape != (defn.m,):
        raise DefinitionError(
            f"expected x of length {defn.n} and u of length {defn.m}, got {x.size}, {u.size}"
        )
    return defn.call("f", x, u, float(t))


def lagrange_integrand(defn: OcpDefinition, traj: TrajectoryState) -> Array:
    """Node values of ``phi_t + phi_x^T f + L``, the Lagrange-form cost."""
    check_trajectory(defn, traj)
    t = traj.times
    out = np.empty(traj.N)
    for i in range(traj.N):
        x, u = traj.x_nodes[i], traj.u_nodes[i]
        out[i] = (
            defn.call("phi_t", x, t[i])
            + defn.call("phi_x", x, t[i]) @ defn.call("f", x, u, t[i])
            + defn.call("L", x, u, t[i])
        )
    return out


def performance_index(defn: OcpDefinition, traj: TrajectoryState) -> float:
    """Bolza cost with trapezoidal quadrature of the running cost."""
    from .grid import TimeGrid, quadrature

    check_trajectory(defn, traj)
    t = traj.times
    run = np.array(
        [defn.call("L", traj.x_nodes[i], traj.u_nodes[i], t[i]) for i in range(traj.N)]
    )
    J = defn.call("phi", traj.x_nodes[-1], traj.t_f) + quadrature(
        run[:, None], TimeGrid.for_trajectory(traj)
    )[0]
    if not np.isfinite(J):
        raise EvaluationError(f"performance index is not finite ({J})")
    return float(J)


def terminal_values(defn: OcpDefinition, traj: TrajectoryState) -> dict:
    """All terminal-point quantities at ``(x_f, t_f)``."""
    xf, tf = traj.x_nodes[-1], traj.t_f
    uf = traj.u_nodes[-1]
    call = defn.call
    return {
        "x_f": xf,
        "f": call("f", xf, uf, tf),
        "L": float(call("L", xf, uf, tf)),
        "phi_t": float(call("phi_t", xf, tf)),
        "phi_x": call("phi_x", xf, tf),
        "g_E": call("g_E", xf, tf),
        "g_E_x": call("g_E_x", xf, tf),
        "g_E_t": call("g_E_t", xf, tf),
        "g_I": call("g_I", xf, tf),
        "g_I_x": call("g_I_x", xf, tf),
        "g_I_t": call("g_I_t", xf, tf),
    }


# --------------------------------------------------------------------------
# derivative audit


@dataclass
class AuditReport:
    errors: dict[str, float]
    tolerance: float
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures and all(e <= self.tolerance for e in self.errors.values())

    @property
    def failed_checks(self) -> list[str]:
        return sorted(k for k, e in self.errors.items() if e > self.tolerance)

    def summary(self) -> str:
        lines = [f"{k:8s} {e:.3e}" for k, e in sorted(self.errors.items())]
        lines += self.failures
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def _central_jacobian(fun, z, h):
    z = np.asarray(z, dtype=float)
    f0 = np.asarray(fun(z), dtype=float)
    jac = np.empty(f0.shape + z.shape)
    for k in range(z.size):
        dz = np.zeros_like(z)
        dz[k] = h
        jac[..., k] = (np.asarray(fun(z + dz)) - np.asarray(fun(z - dz))) / (2 * h)
    return jac


def _rel_err(analytic, approx):
    analytic = np.asarray(analytic, dtype=float)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - approx) / np.maximum(1.0, np.abs(approx))))


def audit_derivatives(
    defn: OcpDefinition, sample_count: int = 100, h: float = 1e-6, seed: int = 0,
    tol: float = 1e-5,
) -> AuditReport:
    """Compare every analytic partial with a central difference.

    Errors are measured as ``|a - d| / max(1, |d|)`` and the audit passes when
    every check stays at or below ``tol``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    rng = np.random.default_rng(seed)
    xb = np.array(defn.x_bounds if defn.x_bounds is not None else [[-1.0, 1.0]] * defn.n)
    ub = np.array(defn.u_bounds if defn.u_bounds is not None else [[-1.0, 1.0]] * defn.m)
    tb = defn.t_bounds
    errors: dict[str, float] = {}
    failures: list[str] = []

    def note(name, value):
        errors[name] = max(errors.get(name, 0.0), value)

    for _ in range(sample_count):
        x = rng.uniform(xb[:, 0], xb[:, 1])
        u = rng.uniform(ub[:, 0], ub[:, 1])
        t = rng.uniform(*tb)
        try:
            note("f_x", _rel_err(defn.call("f_x", x, u, t),
                                 _central_jacobian(lambda z: defn.call("f", z, u, t), x, h)))
            note("f_u", _rel_err(defn.call("f_u", x, u, t),
                                 _central_jacobian(lambda z: defn.call("f", x, z, t), u, h)))
            note("L_x", _rel_err(defn.call("L_x", x, u, t),
                                 _central_jacobian(lambda z: defn.call("L", z, u, t), x, h)))
            note("L_u", _rel_err(defn.call("L_u", x, u, t),
                                 _central_jacobian(lambda z: defn.call("L", x, z, t), u, h)))
            note("phi_x", _rel_err(defn.call("phi_x", x, t),
                                   _central_jacobian(lambda z: defn.call("phi", z, t), x, h)))
            note("phi_t", _rel_err(defn.call("phi_t", x, t),
                                   _central_jacobian(lambda s: defn.call("phi", x, s[0]),
                                                     np.array([t]), h)[..., 0]))
            note("phi_xx", _rel_err(defn.call("phi_xx", x, t),
                                    _central_jacobian(lambda z: defn.call("phi_x", z, t), x, h)))
            note("phi_tx", _rel_err(defn.call("phi_tx", x, t),
                                    _central_jacobian(lambda s: defn.call("phi_x", x, s[0]),
                                                      np.array([t]), h)[..., 0]))
            for g in ("g_E", "g_I"):
                note(f"{g}_x", _rel_err(defn.call(f"{g}_x", x, t),
                                        _central_jacobian(lambda z: defn.call(g, z, t), x, h)))
                note(f"{g}_t", _rel_err(defn.call(f"{g}_t", x, t),
                                        _central_jacobian(lambda s: defn.call(g, x, s[0]),
                                                          np.array([t]), h)[..., 0]))
        except EvaluationError as exc:
            failures.append(f"non-finite evaluation at x={x.tolist()}, u={u.tolist()}, t={t}: {exc}")
    return AuditReport(errors, tol, failures)
