"""Text serialization of histories, snapshots, reports and manifests.

Every float is written with 17 significant digits so that reading a file
back gives the same doubles. Column order of the history table is frozen and
versioned by ``HISTORY_COLUMNS_VERSION``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .errors import DefinitionError, ValidationError
from .integrator import EvolutionHistory
from .problem import OcpDefinition, TrajectoryState

HISTORY_COLUMNS_VERSION = 1

# vector-valued entries expand to name_0, name_1, ... per component
HISTORY_LAYOUT = (
    ("tau", "scalar"),
    ("J", "scalar"),
    ("t_f", "scalar"),
    ("pi_E", "E"),
    ("pi_I", "I"),
    ("g_E", "E"),
    ("g_I", "I"),
    ("r_u", "scalar"),
    ("r_tf", "scalar"),
    ("I_p_mask", "int"),
    ("step", "scalar"),
    ("M_cond", "scalar"),
    ("dJ_dtau", "scalar"),
    ("feasibility", "scalar"),
    ("rejected", "int"),
)


def fmt(value) -> str:
    """Shortest text that is exact for integers and round-trips doubles."""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return "%.17g" % float(value)


def _emit(o, level: int, indent: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(o, dict):
        if not o:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_emit(v, level + 1, indent)}" for k, v in o.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(o, np.ndarray):
        o = o.tolist()
    if isinstance(o, (list, tuple)):
        if not o:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in o):
            return "[" + ", ".join(_emit(v, level + 1, indent) for v in o) + "]"
        return "[\n" + ",\n".join(pad + _emit(v, level + 1, indent) for v in o) + "\n" + end + "]"
    if o is None or isinstance(o, (bool, np.bool_)):
        return json.dumps(None if o is None else bool(o))
    if isinstance(o, (int, np.integer)):
        return str(int(o))
    if isinstance(o, (float, np.floating)):
        v = float(o)
        if math.isfinite(v):
            return fmt(v)
        # JSON has no literal for these
        return json.dumps("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    return json.dumps(o if isinstance(o, str) else str(o))


def dumps(obj, indent: int = 2) -> str:
    """JSON text with floats at 17 significant digits and non-finite values as strings."""
    return _emit(obj, 0, indent) + "\n"


def history_columns(defn: OcpDefinition) -> list[str]:
    sizes = {"scalar": None, "int": None, "E": defn.q_E, "I": defn.q_I}
    cols = []
    for name, kind in HISTORY_LAYOUT:
        k = sizes[kind]
        cols.extend([name] if k is None else [f"{name}_{i}" for i in range(k)])
    return cols


def history_table(history: EvolutionHistory) -> list[list]:
    rows = []
    for r in history.rows:
        vals = []
        for name, kind in HISTORY_LAYOUT:
            v = getattr(r, name)
            if kind in ("E", "I"):
                vals.extend(float(x) for x in np.atleast_1d(v))
            elif kind == "int":
                vals.append(int(v))
            else:
                vals.append(float(v))
        rows.append(vals)
    return rows


def write_history(history: EvolutionHistory, defn: OcpDefinition, path: Path, fmt_: str = "csv") -> Path:
    cols = history_columns(defn)
    rows = history_table(history)
    path = Path(path)
    if fmt_ == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([fmt(v) for v in row])
        path.write_text(buf.getvalue())
    elif fmt_ == "json":
        path.write_text(dumps({"column_version": HISTORY_COLUMNS_VERSION, "columns": cols, "rows": rows}))
    else:
        raise ValidationError(f"unknown format {fmt_!r}")
    return path


def read_history(path: Path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        return doc["columns"], np.array(doc["rows"], dtype=float)
    with path.open() as fh:
        reader = csv.reader(fh)
        cols = next(reader)
        data = np.array([[float(v) for v in row] for row in reader], dtype=float)
    return cols, data


def _snapshot_columns(n: int, m: int) -> list[str]:
    return ["t"] + [f"x_{i}" for i in range(n)] + [f"u_{j}" for j in range(m)]


def write_snapshot(traj: TrajectoryState, problem: str, tau: float, path: Path, fmt_: str = "csv") -> Path:
    """Per-node ``t, x, u`` of one trajectory plus the metadata needed to rebuild it."""
    path = Path(path)
    n, m = traj.x_nodes.shape[1], traj.u_nodes.shape[1]
    t = traj.times
    if fmt_ == "csv":
        buf = io.StringIO()
        buf.write(f"# problem={problem}\n# tau={fmt(tau)}\n# t0={fmt(traj.t0)}\n")
        buf.write(f"# t_f={fmt(traj.t_f)}\n# N={traj.N}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(_snapshot_columns(n, m))
        for i in range(traj.N):
            w.writerow([fmt(t[i])] + [fmt(v) for v in traj.x_nodes[i]] + [fmt(v) for v in traj.u_nodes[i]])
        path.write_text(buf.getvalue())
    elif fmt_ == "json":
        doc = {
            "problem": problem, "tau": float(tau), "t0": float(traj.t0), "t_f": float(traj.t_f),
            "N": traj.N, "t": t, "x": traj.x_nodes, "u": traj.u_nodes,
        }
        path.write_text(dumps(doc))
    else:
        raise ValidationError(f"unknown format {fmt_!r}")
    return path


def read_snapshot(path: Path) -> tuple[str, float, TrajectoryState]:
    """Inverse of :func:`write_snapshot`; raises ``ValidationError`` on schema mismatch."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"snapshot file {path} does not exist")
    try:
        if path.suffix == ".json":
            doc = json.loads(path.read_text())
            meta = {k: doc[k] for k in ("problem", "tau", "t0", "t_f", "N")}
            x = np.array(doc["x"], dtype=float)
            u = np.array(doc["u"], dtype=float)
        else:
            meta, rows, header = {}, [], None
            for line in path.read_text().splitlines():
                if line.startswith("#"):
                    key, _, value = line[1:].strip().partition("=")
                    meta[key] = value
                elif header is None:
                    header = line.split(",")
                elif line.strip():
                    rows.append([float(v) for v in line.split(",")])
            data = np.array(rows, dtype=float)
            nx = sum(c.startswith("x_") for c in header)
            nu = sum(c.startswith("u_") for c in header)
            if header != _snapshot_columns(nx, nu):
                raise ValidationError(f"unexpected snapshot columns {header}")
            x, u = data[:, 1 : 1 + nx], data[:, 1 + nx :]
        problem = str(meta["problem"])
        tau = float(meta["tau"])
        N = int(meta["N"])
        traj = TrajectoryState(x, u, float(meta["t_f"]), t0=float(meta["t0"]))
    except ValidationError:
        raise
    except (KeyError, ValueError, TypeError, IndexError, DefinitionError) as exc:
        raise ValidationError(f"malformed snapshot {path}: {exc}") from None
    if traj.N != N or x.ndim != 2 or u.ndim != 2:
        raise ValidationError(f"snapshot {path} declares N={N} but holds {traj.N} rows")
    return problem, tau, traj


def validate_snapshot(defn: OcpDefinition, traj: TrajectoryState) -> None:
    if traj.x_nodes.shape[1] != defn.n or traj.u_nodes.shape[1] != defn.m:
        raise ValidationError(
            f"snapshot has {traj.x_nodes.shape[1]} states and {traj.u_nodes.shape[1]} controls, "
            f"problem {defn.name} expects {defn.n} and {defn.m}"
        )
    if not np.array_equal(traj.x_nodes[0], defn.x0):
        raise ValidationError(
            f"snapshot initial state {traj.x_nodes[0].tolist()} differs from x0 = {defn.x0.tolist()}"
        )
    if not traj.t_f > traj.t0:
        raise ValidationError("snapshot terminal time does not exceed t0")


def write_json(obj, path: Path) -> Path:
    path = Path(path)
    path.write_text(dumps(obj))
    return path
