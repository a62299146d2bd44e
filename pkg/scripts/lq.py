"""Double integrator, minimum energy to p(1) = 1, against the closed-form optimum.

Prints the control and cost error for a sequence of grid sizes. Usage:
python scripts/lq.py [--grid-points 51 101 201 401] [--tau-final 50]
"""

import argparse

import numpy as np

from vemoc import GainConfig, IntegratorConfig, builtin_problem, evolve, lq_oracle
from vemoc.problems import PROBLEM_GAINS


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid-points", type=int, nargs="+", default=[51, 101, 201, 401])
    ap.add_argument("--tau-final", type=float, default=50.0)
    args = ap.parse_args()

    sol = lq_oracle(1.0, 1.0)
    print(f"{'N':>5} {'|u - u*|_inf':>14} {'J':>14} {'rel J err':>10}")
    for N in args.grid_points:
        defn, traj = builtin_problem("lq", N)
        gains = GainConfig.make(defn, **PROBLEM_GAINS["lq"])
        final, hist, _ = evolve(defn, traj, gains, IntegratorConfig(tau_final=args.tau_final))
        u_err = np.max(np.abs(final.u_nodes[:, 0] - sol.u(final.times)))
        J = hist.rows[-1].J
        print(f"{N:5d} {u_err:14.3e} {J:14.10f} {abs(J - sol.J) / sol.J:10.2e}")
    # trapezoid cost bias falls as h^2; the control error reaches the flow tolerance


if __name__ == "__main__":
    main()
