"""Brachistochrone with x(t_f) = 2 and y(t_f) <= -2, compared with the cycloid optimum.

Usage: python scripts/brachistochrone_a.py [--grid-points 101] [--tau-final 300] [--out DIR]
"""

import argparse
import time
from pathlib import Path

from vemoc import GainConfig, IntegratorConfig, builtin_problem, cycloid_oracle, evolve
from vemoc.io import write_history, write_snapshot
from vemoc.problems import PROBLEM_GAINS


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid-points", type=int, default=101)
    ap.add_argument("--tau-final", type=float, default=300.0)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    defn, traj = builtin_problem("brachA", args.grid_points)
    gains = GainConfig.make(defn, **PROBLEM_GAINS["brachA"])
    start = time.perf_counter()
    final, hist, aset = evolve(defn, traj, gains, IntegratorConfig(tau_final=args.tau_final))
    wall = time.perf_counter() - start

    print(f"{'tau':>8} {'t_f':>10} {'pi_E':>10} {'pi_I':>10} {'y_f':>10}")
    for tau, snap in sorted(hist.snapshots.items()):
        row = min(hist.rows, key=lambda r: abs(r.tau - tau))
        print(f"{tau:8.1f} {snap.t_f:10.6f} {row.pi_E[0]:10.6f} {row.pi_I[0]:10.6f} {snap.x_nodes[-1, 1]:10.6f}")
    for ev in hist.events:
        print(f"working set {ev['I_p_before']} -> {ev['I_p_after']} at tau = {ev['tau']:.3f}")

    oracle = cycloid_oracle(2.0, 2.0, 10.0)
    print(f"final t_f = {final.t_f:.6f}, cycloid t_f* = {oracle.t_f:.6f}, "
          f"relative gap {abs(final.t_f - oracle.t_f) / oracle.t_f:.2e}")
    print(f"pi_E = {aset.pi_E[0]:.4f}, pi_I = {aset.pi_I[0]:.4f}, wall time {wall:.1f} s")

    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        write_history(hist, defn, args.out / "history.csv")
        for tau, snap in hist.snapshots.items():
            write_snapshot(snap, "brachA", tau, args.out / f"snapshot_tau_{tau:012.6f}.csv")


if __name__ == "__main__":
    main()
