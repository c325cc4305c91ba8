"""Example 1: evolve from u = 0 and compare with the Riccati optimum.

    python scripts/run_example1.py [--mode projected] [--tau-end 300] [--out runs/ex1_script]
"""

import argparse
import time
from pathlib import Path

import numpy as np

from vem.cli import write_snapshot_csv, write_trace_csv
from vem.numerics import TimeGrid
from vem.oracles import riccati_lqr
from vem.problems import EX1_A, EX1_B, EX1_F, EX1_Q, EX1_R, build_example1
from vem.solver import EvolutionConfig, evolve, initial_feasible


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--nodes", type=int, default=61)
    ap.add_argument("--gain", type=float, default=2e-2)
    ap.add_argument("--tau-end", type=float, default=300.0)
    ap.add_argument("--mode", default="coupled")
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()

    ocp = build_example1()
    cfg = EvolutionConfig(gain=args.gain, nodes=args.nodes, tau_end=args.tau_end, mode=args.mode, residual_tol=0.0, record_every=1.0)
    t0 = time.perf_counter()
    tr = evolve(ocp, initial_feasible(ocp, nodes=args.nodes), cfg)
    secs = time.perf_counter() - t0
    lqr = riccati_lqr(EX1_A, EX1_B, EX1_Q, EX1_R, EX1_F, TimeGrid(0.0, 3.0, args.nodes), ocp.x0)

    tau, J = np.asarray(tr.tau), np.asarray(tr.J)
    print(f"{tr.state_size} states, {tr.n_steps} steps ({tr.n_rejected} rejected), {secs:.1f} s")
    for mark in (0, 10, 25, 50, 100, 200, 300):
        if mark <= tau[-1]:
            k = np.searchsorted(tau, mark)
            print(f"tau={tau[k]:6.1f}  J={J[k]:.6f}  stationarity={tr.stationarity[k]:.3e}")
    fin = tr.final
    print(f"Riccati J*={lqr.J_star:.6f}")
    print(f"u error vs Riccati {np.max(np.abs(fin.U - lqr.u_star.values)) / np.max(np.abs(lqr.u_star.values)):.3%}")
    print(f"x error vs Riccati {np.max(np.abs(fin.X - lqr.x_star.values)) / np.max(np.abs(lqr.x_star.values)):.3%}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        write_trace_csv(args.out / "trace.csv", tr.as_array())
        write_snapshot_csv(args.out / "final.csv", fin.t, fin.X, fin.U)
        write_snapshot_csv(args.out / "riccati.csv", lqr.grid.nodes, lqr.x_star.values, lqr.u_star.values)


if __name__ == "__main__":
    main()
