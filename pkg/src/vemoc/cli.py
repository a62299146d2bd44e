"""Command-line driver: ``vemoc run | verify | audit | list-problems``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ValidationError, VemocError
from .evolution import EvolutionOptions, GainConfig, evolution_rhs
from .integrator import IntegratorConfig, evolve
from .io import (
    HISTORY_COLUMNS_VERSION,
    fmt,
    history_columns,
    read_snapshot,
    validate_snapshot,
    write_history,
    write_json,
    write_snapshot,
)
from .problem import audit_derivatives
from .problems import DESCRIPTIONS, PROBLEM_GAINS, PROBLEM_IDS, builtin_problem
from .verify import optimality_residuals

log = logging.getLogger("vemoc")

OUTPUT_ROOT_ENV = "VEMOC_OUTPUT_ROOT"


@dataclass
class RunConfig:
    """Resolved settings of one run; ``None`` gains fall back to per-problem defaults."""

    problem: str = "brachA"
    grid_points: int = 101
    K: object = None  # scalar or m x m nested list
    ktf: float | None = None
    kg: object = None  # scalar or list, one per inequality constraint
    tol_act: float = 1e-9
    rtol: float = 1e-3
    atol: float = 1e-6
    tau_final: float = 300.0
    h_max: float | None = None
    stop_residual: float | None = None
    node_motion: bool = True
    barrier: bool = True
    reproject: int | None = None
    snapshot_every: float | None = None
    out: str | None = None
    format: str = "csv"
    seed: int = 0

    def gains(self, defn) -> GainConfig:
        base = PROBLEM_GAINS.get(self.problem, {})
        K = self.K if self.K is not None else base.get("K", 0.1)
        ktf = self.ktf if self.ktf is not None else base.get("k_tf", 0.05)
        kg = self.kg if self.kg is not None else base.get("k_g", 0.1)
        return GainConfig.make(defn, K=K, k_tf=ktf, k_g=kg, tol_act=self.tol_act)

    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig(
            rtol=self.rtol, atol=self.atol, tau_final=self.tau_final, h_max=self.h_max,
            snapshot_every=self.snapshot_every, stop_residual=self.stop_residual,
            reproject=self.reproject,
        )

    def options(self) -> EvolutionOptions:
        return EvolutionOptions(barrier=self.barrier, node_motion=self.node_motion)

    def output_dir(self) -> Path:
        if self.out:
            return Path(self.out)
        root = os.environ.get(OUTPUT_ROOT_ENV, "vemoc-runs")
        return Path(root) / self.problem

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# value parsing shared by flags and config files


def _on_off(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).lower()
    if text in ("on", "true", "1", "yes"):
        return True
    if text in ("off", "false", "0", "no"):
        return False
    raise ValidationError(f"expected on/off, got {value!r}")


def _reproject(value):
    if value is None or value is False:
        return None
    if str(value).lower() == "off":
        return None
    k = int(value)
    if k < 1:
        raise ValidationError("reproject interval must be a positive integer or 'off'")
    return k


def _matrix_or_scalar(value):
    if isinstance(value, (int, float, list)):
        return value
    text = str(value).strip()
    if text.startswith("["):
        return json.loads(text)
    return float(text)


def _vector_or_scalar(value):
    if isinstance(value, (int, float, list)):
        return value
    parts = [p for p in str(value).replace(";", ",").split(",") if p.strip()]
    return float(parts[0]) if len(parts) == 1 else [float(p) for p in parts]


def _optional_float(value):
    if value is None or str(value).lower() in ("none", "off", ""):
        return None
    return float(value)


_CONVERTERS = {
    "problem": str,
    "grid_points": int,
    "K": _matrix_or_scalar,
    "ktf": float,
    "kg": _vector_or_scalar,
    "tol_act": float,
    "rtol": float,
    "atol": float,
    "tau_final": float,
    "h_max": _optional_float,
    "stop_residual": _optional_float,
    "node_motion": _on_off,
    "barrier": _on_off,
    "reproject": _reproject,
    "snapshot_every": _optional_float,
    "out": str,
    "format": str,
    "seed": int,
}


def load_config_file(path: str | Path) -> dict:
    """Flat JSON object whose keys match the CLI flags (dashes or underscores)."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file {path} does not exist")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ValidationError("config file must hold a flat key-value object")
    out = {}
    for key, value in doc.items():
        name = key.lstrip("-").replace("-", "_")
        if name not in _CONVERTERS:
            raise ValidationError(f"unknown config key {key!r}")
        if isinstance(value, (dict,)):
            raise ValidationError(f"config key {key!r} must not be nested")
        out[name] = value
    return out


def resolve_config(file_values: dict, cli_values: dict) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    merged = {**file_values, **{k: v for k, v in cli_values.items() if v is not None}}
    kwargs = {}
    for name, value in merged.items():
        try:
            kwargs[name] = _CONVERTERS[name](value) if value is not None else None
        except (TypeError, ValueError, json.JSONDecodeError) as exc:
            raise ValidationError(f"bad value for {name}: {value!r} ({exc})") from None
    cfg = RunConfig(**kwargs)
    if cfg.problem not in PROBLEM_IDS:
        raise ValidationError(f"unknown problem {cfg.problem!r}; choose from {', '.join(PROBLEM_IDS)}")
    if cfg.format not in ("csv", "json"):
        raise ValidationError(f"format must be csv or json, got {cfg.format!r}")
    return cfg


# --------------------------------------------------------------------------


def _snapshot_name(tau: float, ext: str) -> str:
    return f"snapshot_tau_{tau:012.6f}.{ext}"


def _flush(out: Path, cfg: RunConfig, defn, gains, iconfig, history, final, extra: dict) -> None:
    ext = cfg.format
    write_history(history, defn, out / f"history.{ext}", ext)
    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    for tau, traj in sorted(history.snapshots.items()):
        write_snapshot(traj, cfg.problem, tau, snap_dir / _snapshot_name(tau, ext), ext)
    manifest = {
        "vemoc_version": __version__,
        "history_column_version": HISTORY_COLUMNS_VERSION,
        "history_columns": history_columns(defn),
        "config": cfg.to_dict(),
        "resolved": {
            "K": gains.K, "k_tf": gains.k_tf, "k_g": gains.k_g, "tol_act": gains.tol_act,
            "h_init": iconfig.h_init, "h_min": iconfig.h_min, "h_max": iconfig.h_max,
            "snapshot_times": iconfig.snapshot_times(),
        },
        "stop_reason": history.stop_reason,
        "accepted_steps": len(history) - 1 if len(history) else 0,
        "rejected_steps": history.rejected_steps,
        "rhs_evaluations": history.rhs_evaluations,
        "events": history.events,
        **extra,
    }
    if final is not None:
        manifest["final_t_f"] = final.t_f
    write_json(manifest, out / "manifest.json")


def cmd_run(cfg: RunConfig) -> int:
    defn, traj0 = builtin_problem(cfg.problem, cfg.grid_points)
    gains = cfg.gains(defn)
    iconfig = cfg.integrator()
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        final, history, aset = evolve(defn, traj0, gains, iconfig, cfg.options())
    except VemocError as exc:
        history = getattr(exc, "history", None)
        log.error("run failed: %s", exc)
        if history is not None:
            _flush(out, cfg, defn, gains, iconfig, history, None, {
                "status": "error", "error": str(exc), "wall_time_s": time.perf_counter() - start,
            })
        return 2
    wall = time.perf_counter() - start
    res = evolution_rhs(defn, final, gains, cfg.options())
    report = optimality_residuals(defn, final, res.table, res.aset)
    write_json({"problem": cfg.problem, "tau": history.rows[-1].tau, **report.to_dict()},
               out / "residuals.json")
    _flush(out, cfg, defn, gains, iconfig, history, final, {
        "status": "ok",
        "wall_time_s": wall,
        "final_J": history.rows[-1].J,
        "final_pi_E": aset.pi_E,
        "final_pi_I": aset.pi_I,
        "final_I_p": list(aset.I_p),
        "final_residuals": report.to_dict(),
    })
    print(f"{cfg.problem}: stop={history.stop_reason} tau={fmt(history.rows[-1].tau)} "
          f"t_f={final.t_f:.6f} pi_E={np.round(aset.pi_E, 6).tolist()} "
          f"pi_I={np.round(aset.pi_I, 6).tolist()} r_u={report.r_u:.3e} -> {out}")
    return 0


def cmd_verify(path: Path, problem: str | None, out: Path | None, cfg: RunConfig) -> int:
    path = Path(path)
    if path.is_dir():
        snaps = sorted(p for p in (path / "snapshots").glob("snapshot_tau_*")
                       if p.suffix in (".csv", ".json") and "residuals" not in p.name)
        if not snaps:
            raise ValidationError(f"no snapshots under {path}")
        path = snaps[-1]
    declared, tau, traj = read_snapshot(path)
    pid = problem or declared
    if pid not in PROBLEM_IDS:
        raise ValidationError(f"unknown problem {pid!r}")
    defn, _ = builtin_problem(pid, traj.N)
    validate_snapshot(defn, traj)
    cfg.problem = pid
    gains = cfg.gains(defn)
    res = evolution_rhs(defn, traj, gains, cfg.options())
    report = optimality_residuals(defn, traj, res.table, res.aset)
    target = Path(out) if out else path.with_name(path.stem + "_residuals.json")
    write_json({"problem": pid, "tau": tau, "snapshot": str(path), "pi_E": res.aset.pi_E,
                "pi_I": res.aset.pi_I, **report.to_dict()}, target)
    print(f"{pid} snapshot tau={fmt(tau)}: r_u={report.r_u:.3e} r_tf={report.r_tf:.3e} "
          f"r_costate_ode={report.r_costate_ode:.3e} -> {target}")
    return 0


def cmd_audit(problem: str, N: int, samples: int, h: float, seed: int) -> int:
    defn, _ = builtin_problem(problem, N)
    report = audit_derivatives(defn, sample_count=samples, h=h, seed=seed)
    print(report.summary())
    return 0 if report.passed else 1


def cmd_list() -> int:
    for pid in PROBLEM_IDS:
        print(f"{pid:8s} {DESCRIPTIONS[pid]}")
    return 0


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    # defaults are None so that config-file values survive unless overridden
    p.add_argument("--config", help="flat JSON file with the same keys as the flags")
    p.add_argument("--problem", choices=PROBLEM_IDS)
    p.add_argument("--grid-points", type=int, dest="grid_points")
    p.add_argument("--K", help="control gain: scalar or JSON matrix")
    p.add_argument("--ktf", type=float, help="terminal-time gain")
    p.add_argument("--kg", help="barrier gain: scalar or comma-separated list")
    p.add_argument("--tol-act", type=float, dest="tol_act")
    p.add_argument("--rtol", type=float)
    p.add_argument("--atol", type=float)
    p.add_argument("--tau-final", type=float, dest="tau_final")
    p.add_argument("--h-max", dest="h_max", help="largest virtual-time step")
    p.add_argument("--stop-residual", dest="stop_residual")
    p.add_argument("--node-motion", dest="node_motion", choices=("on", "off"))
    p.add_argument("--barrier", choices=("on", "off"))
    p.add_argument("--reproject", help="'off' or re-integrate states every k accepted steps")
    p.add_argument("--snapshot-every", dest="snapshot_every")
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV}/<problem>)")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--seed", type=int)


_RUN_KEYS = [f.name for f in fields(RunConfig)]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vemoc", description="Variation-evolving optimal control solver")
    parser.add_argument("--version", action="version", version=f"vemoc {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_run_flags(sub.add_parser("run", help="evolve a built-in problem and write artifacts"))

    pv = sub.add_parser("verify", help="optimality residuals of a stored trajectory")
    pv.add_argument("snapshot", help="snapshot file or run directory (uses its last snapshot)")
    pv.add_argument("--problem", choices=PROBLEM_IDS, help="override the problem named in the file")
    pv.add_argument("--out", help="report path")
    pv.add_argument("--config", help="flat JSON file supplying gains")

    pa = sub.add_parser("audit", help="finite-difference derivative audit")
    pa.add_argument("--problem", choices=PROBLEM_IDS, default="brachA")
    pa.add_argument("--grid-points", type=int, default=101, dest="grid_points")
    pa.add_argument("--samples", type=int, default=100)
    pa.add_argument("--h", type=float, default=1e-6)
    pa.add_argument("--seed", type=int, default=0)

    sub.add_parser("list-problems", help="list built-in problem ids")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "list-problems":
            return cmd_list()
        if args.command == "audit":
            return cmd_audit(args.problem, args.grid_points, args.samples, args.h, args.seed)
        file_values = load_config_file(args.config) if args.config else {}
        if args.command == "run":
            cli = {k: getattr(args, k) for k in _RUN_KEYS if hasattr(args, k)}
            return cmd_run(resolve_config(file_values, cli))
        if args.command == "verify":
            file_values.pop("problem", None)
            file_values.pop("out", None)
            cfg = resolve_config(file_values, {})
            return cmd_verify(Path(args.snapshot), args.problem, args.out, cfg)
    except VemocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
