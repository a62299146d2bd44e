"""Adaptive Dormand-Prince 4(5) integration of the virtual-time flow."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import EvaluationError, StepFailure, VemocError
from .evolution import (
    ActiveSetState,
    EvolutionOptions,
    GainConfig,
    RhsResult,
    evolution_rhs,
)
from .grid import reproject_states
from .problem import OcpDefinition, TrajectoryState

log = logging.getLogger(__name__)

Array = np.ndarray

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_E = _B5 - _B4

# continuous extension of the Dormand-Prince pair (fourth order)
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY = 0.9
_ALPHA = 0.7 / 5
_BETA = 0.4 / 5
_MIN_FACTOR, _MAX_FACTOR = 0.2, 5.0

# cap on the virtual-time step; longer steps let dynamics drift across
# active-set switches at rtol=1e-3
DEFAULT_H_MAX = 1.0

DEFAULT_SNAPSHOTS = (0.0, 5.0, 10.0, 20.0, 40.0, 80.0, 150.0, 300.0)


@dataclass
class IntegratorConfig:
    rtol: float = 1e-3
    atol: float = 1e-6
    tau_final: float = 300.0
    h_init: float = 1e-2
    h_min: float = 1e-10
    h_max: float | None = None  # defaults to min(1, tau_final / 10)
    snapshot_every: float | None = None
    stop_residual: float | None = None
    reproject: int | None = None
    max_steps: int = 200_000

    def __post_init__(self):
        if self.h_max is None:
            self.h_max = min(DEFAULT_H_MAX, self.tau_final / 10.0)
            self.h_init = min(self.h_init, self.h_max)
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")
        if not self.tau_final > 0:
            raise ValueError("tau_final must be positive")
        if not (0 < self.h_min <= self.h_init <= self.h_max):
            raise ValueError("step bounds must satisfy 0 < h_min <= h_init <= h_max")

    def snapshot_times(self) -> list[float]:
        if self.snapshot_every:
            k = int(np.floor(self.tau_final / self.snapshot_every + 1e-9))
            times = [i * self.snapshot_every for i in range(k + 1)]
        else:
            times = [t for t in DEFAULT_SNAPSHOTS if t <= self.tau_final]
        if times[-1] < self.tau_final:
            times.append(self.tau_final)
        return times


@dataclass
class StepResult:
    y: Array
    f: Array
    h_next: float
    accepted: bool
    err: float
    stages: Array | None = None

    def dense(self, y_old: Array, h: float, theta: float) -> Array:
        """State at fraction ``theta`` of an accepted step from ``y_old``."""
        powers = theta ** np.arange(1, 5)
        return y_old + h * (self.stages.T @ (_P @ powers))


def rk45_step(
    fun: Callable[[Array], Array],
    y: Array,
    f0: Array,
    h: float,
    rtol: float,
    atol: float,
    err_prev: float = 1.0,
) -> StepResult:
    """One embedded Dormand-Prince attempt with a PI step-size proposal.

    ``fun`` maps the state to its derivative (the flow is autonomous in
    virtual time). ``f0`` is ``fun(y)``; on acceptance ``f`` of the result
    is the derivative at the new point, reusable as the next ``f0``.
    """
    k = [f0]
    for s in range(1, 7):
        ys = y + h * sum(a * kk for a, kk in zip(_A[s], k) if a != 0.0)
        k.append(fun(ys))
    y_new = ys  # stage 7 sits at the fifth-order solution
    delta = h * sum(e * kk for e, kk in zip(_E, k) if e != 0.0)
    scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
    err = float(np.max(np.abs(delta) / scale)) if y.size else 0.0
    if not np.isfinite(err):
        return StepResult(y, f0, h * _MIN_FACTOR, False, float("inf"))
    if err <= 1.0:
        if err == 0.0:
            factor = _MAX_FACTOR
        else:
            factor = _SAFETY * err ** -_ALPHA * max(err_prev, 1e-4) ** _BETA
        factor = min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
        return StepResult(y_new, k[6], h * factor, True, err, np.array(k))
    factor = max(_MIN_FACTOR, _SAFETY * err ** -(1 / 5))
    return StepResult(y, f0, h * factor, False, err)


@dataclass
class HistoryRow:
    tau: float
    J: float
    t_f: float
    pi_E: Array
    pi_I: Array
    g_E: Array
    g_I: Array
    r_u: float
    r_tf: float
    I_p_mask: int
    step: float
    M_cond: float
    dJ_dtau: float
    feasibility: float
    rejected: int


@dataclass
class EvolutionHistory:
    rows: list[HistoryRow] = field(default_factory=list)
    snapshots: dict[float, TrajectoryState] = field(default_factory=dict)
    events: list[dict] = field(default_factory=list)
    stop_reason: str = ""
    rhs_evaluations: int = 0
    rejected_steps: int = 0

    def column(self, name: str) -> Array:
        return np.array([getattr(r, name) for r in self.rows])

    def __len__(self):
        return len(self.rows)


def stopping_check(row: HistoryRow, iconfig: IntegratorConfig) -> str | None:
    """Reason to stop after ``row``, or ``None`` to continue."""
    if row.tau >= iconfig.tau_final:
        return "horizon"
    if iconfig.stop_residual is not None and max(row.r_u, row.r_tf) <= iconfig.stop_residual:
        return "converged"
    return None


class FlowRhs:
    """Vector-valued derivative oracle that remembers its last evaluation."""

    def __init__(self, defn: OcpDefinition, N: int, gains: GainConfig,
                 options: EvolutionOptions | None = None):
        self.defn = defn
        self.N = N
        self.gains = gains
        self.options = options or EvolutionOptions()
        self.calls = 0
        self.last: RhsResult | None = None
        self.results: list[RhsResult] = []
        self.keep_results = False

    def unpack(self, vec: Array) -> TrajectoryState:
        return TrajectoryState.from_vector(vec, self.N, self.defn.n, self.defn.m, self.defn.t0)

    def __call__(self, vec: Array) -> Array:
        self.calls += 1
        if not vec[-1] > self.defn.t0:
            raise EvaluationError(f"terminal time collapsed to {vec[-1]}")
        traj = self.unpack(vec)
        res = evolution_rhs(self.defn, traj, self.gains, self.options)
        self.last = res
        if self.keep_results:
            self.results.append(res)
        return res.vector


def _row(tau, res: RhsResult, h, rejected) -> HistoryRow:
    d = res.diagnostics
    return HistoryRow(
        tau=tau, J=d.J, t_f=d.t_f, pi_E=d.pi_E.copy(), pi_I=d.pi_I.copy(),
        g_E=np.asarray(d.g_E).copy(), g_I=np.asarray(d.g_I).copy(), r_u=d.r_u, r_tf=d.r_tf,
        I_p_mask=res.aset.mask, step=h, M_cond=d.M_cond, dJ_dtau=d.dJ_dtau,
        feasibility=float(np.max(np.abs(d.feasibility))) if d.feasibility.size else 0.0,
        rejected=rejected,
    )


def check_feasible(defn: OcpDefinition, traj: TrajectoryState, tol_act: float) -> None:
    g_E = defn.call("g_E", traj.x_nodes[-1], traj.t_f)
    g_I = defn.call("g_I", traj.x_nodes[-1], traj.t_f)
    if np.any(np.abs(g_E) > 1e-6) or np.any(g_I > tol_act):
        warnings.warn(
            f"initial trajectory is infeasible (g_E = {g_E.tolist()}, g_I = {g_I.tolist()}); "
            "the soft barrier may recover small inequality violations",
            stacklevel=3,
        )
    if not np.allclose(traj.x_nodes[0], defn.x0, rtol=0, atol=0):
        warnings.warn("initial trajectory does not start at x0", stacklevel=3)


def evolve(
    defn: OcpDefinition,
    traj0: TrajectoryState,
    gains: GainConfig,
    iconfig: IntegratorConfig | None = None,
    options: EvolutionOptions | None = None,
    rhs: FlowRhs | None = None,
) -> tuple[TrajectoryState, EvolutionHistory, ActiveSetState]:
    """Integrate the flow from ``traj0`` to ``tau_final`` or an early stop."""
    iconfig = iconfig or IntegratorConfig()
    gains.validate(defn)
    check_feasible(defn, traj0, gains.tol_act)
    rhs = rhs or FlowRhs(defn, traj0.N, gains, options)
    history = EvolutionHistory()
    stops = iconfig.snapshot_times()
    next_stop = 0

    tau = 0.0
    y = traj0.to_vector()
    f = rhs(y)
    res = rhs.last
    history.rows.append(_row(tau, res, 0.0, 0))
    if stops and stops[0] == 0.0:
        history.snapshots[0.0] = rhs.unpack(y)
        next_stop = 1
    mask = res.aset.mask
    h = iconfig.h_init
    err_prev = 1.0
    rejected = 0
    accepted_steps = 0

    try:
        reason = stopping_check(history.rows[-1], iconfig)
        while reason is None:
            if accepted_steps >= iconfig.max_steps:
                raise StepFailure(f"exceeded {iconfig.max_steps} steps", {"tau": tau})
            target = iconfig.tau_final
            h_cap = min(h, iconfig.h_max)
            clipped = target - tau <= h_cap
            h_try = target - tau if clipped else h_cap
            step = rk45_step(rhs, y, f, h_try, iconfig.rtol, iconfig.atol, err_prev)
            if not step.accepted:
                rejected += 1
                history.rejected_steps += 1
                h = step.h_next
                if h < iconfig.h_min:
                    raise StepFailure(
                        f"step size {h:.3e} fell below h_min at tau = {tau:.6g}",
                        {"tau": tau, "err": step.err, "rejected": rejected},
                    )
                continue
            tau_old, y_old = tau, y
            tau = target if clipped else tau + h_try
            y, f = step.y, step.f
            while next_stop < len(stops) and stops[next_stop] <= tau:
                theta = (stops[next_stop] - tau_old) / h_try
                y_snap = y if stops[next_stop] == tau else step.dense(y_old, h_try, theta)
                history.snapshots[stops[next_stop]] = rhs.unpack(y_snap)
                next_stop += 1
            err_prev = max(step.err, 1e-4)
            # the last stage was evaluated at the accepted point
            res = rhs.last
            accepted_steps += 1
            if not clipped:
                h = step.h_next
            else:
                h = max(h, step.h_next)
            if iconfig.reproject and accepted_steps % iconfig.reproject == 0:
                y = reproject_states(defn, rhs.unpack(y)).to_vector()
                f = rhs(y)
                res = rhs.last
            row = _row(tau, res, h_try, rejected)
            rejected = 0
            history.rows.append(row)
            if res.aset.mask != mask:
                event = {"tau": tau, "I_p_before": _members(mask), "I_p_after": list(res.aset.I_p)}
                history.events.append(event)
                log.info("working set change at tau=%.6g: %s -> %s", tau,
                         event["I_p_before"], event["I_p_after"])
                mask = res.aset.mask
            reason = stopping_check(row, iconfig)
    except VemocError as exc:
        # callers can flush what was integrated before the failure
        history.stop_reason = "error"
        history.rhs_evaluations = rhs.calls
        exc.history = history
        raise
    history.stop_reason = reason
    history.rhs_evaluations = rhs.calls
    final = rhs.unpack(y)
    if tau not in history.snapshots:
        history.snapshots[tau] = final
    return final, history, res.aset


def _members(mask: int) -> list[int]:
    return [i for i in range(mask.bit_length()) if mask >> i & 1]
