"""Gradient flow of J = int y'^2 dt: a sine perturbation of the line decays like the heat equation.

    python scripts/heat_equation.py [--nodes 51] [--gain 1e-2]
"""

import argparse

import numpy as np

from vem.numerics import GridFunction
from vem.variational import build_dirichlet, evolve_functional


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--nodes", type=int, default=51)
    ap.add_argument("--gain", type=float, default=1e-2)
    ap.add_argument("--tau-end", type=float, default=40.0)
    args = ap.parse_args()

    p = build_dirichlet()
    g = p.grid(args.nodes)
    t = g.nodes
    tr = evolve_functional(p, GridFunction(g, (t + 0.5 * np.sin(np.pi * t))[:, None]), args.gain, args.tau_end, record_every=0.25)
    mode = np.sin(np.pi * t)
    amp = np.array([(s.values[:, 0] - t) @ mode / (mode @ mode) for s in tr.snapshots])
    tau = np.asarray(tr.tau)
    end = int(np.argmax(amp <= 0.1 * amp[0])) or len(amp) - 1
    rate = -np.polyfit(tau[: end + 1], np.log(amp[: end + 1]), 1)[0]
    expected = 2 * args.gain * np.pi**2
    print(f"{tr.n_steps} steps ({tr.n_rejected} rejected)")
    print(f"fitted decay rate {rate:.6f}, continuum 2 k pi^2 = {expected:.6f} ({abs(rate / expected - 1):.3%} off)")
    # on the grid the mode's eigenvalue is 8 k sin^2(pi h / 2) / h^2
    h = g.step
    print(f"grid eigenvalue {2 * args.gain * 4 * np.sin(np.pi * h / 2) ** 2 / h**2:.6f}")
    print(f"J: {tr.J[0]:.6f} -> {tr.J[-1]:.6f}, terminal max |y - t| = {np.max(np.abs(tr.final.values[:, 0] - t)):.2e}")


if __name__ == "__main__":
    main()
