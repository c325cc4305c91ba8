"""Reference optimum for Example 2 by indirect shooting.

The missile problem has ``L = R u^2 / 2`` and no state in ``L``, so the
stationarity condition gives ``u = -R^-1 f_u^T lambda`` and the costate obeys
``lambda' = -f_x^T lambda``. Unknowns are ``lambda(0)`` and ``tf``; residuals
are ``lambda(tf) - phi_x`` and the transversality value ``H(tf) + phi_t``.
Newton with a forward-difference Jacobian, integrating with the package's
Dormand-Prince pair at tight tolerances.

    python scripts/ex2_reference.py
"""

import argparse

import numpy as np

from vem.numerics import integrate_adaptive
from vem.problems import EX2_R, build_example2, evaluate


def shoot(ocp, p, rtol=1e-11, atol=1e-11):
    n = ocp.n
    Rinv = 1.0 / EX2_R

    def control(x, lam):
        return -Rinv * (evaluate(ocp, "dynamics_jac_u", x, np.zeros(1), 0.0).T @ lam)

    def rhs(t, z):
        x, lam = z[:n], z[n:]
        u = control(x, lam)
        return np.concatenate([ocp.dynamics(x, u, t), -evaluate(ocp, "dynamics_jac_x", x, u, t).T @ lam])

    lam0, tf = p[:n], p[n]
    z = integrate_adaptive(rhs, np.concatenate([ocp.x0, lam0]), (0.0, tf), rtol, atol).y
    x, lam = z[:n], z[n:]
    u = control(x, lam)
    H = float(evaluate(ocp, "running_cost", x, u, tf) + lam @ ocp.dynamics(x, u, tf))
    res = np.concatenate([lam - evaluate(ocp, "terminal_cost_grad_x", x, tf), [H + evaluate(ocp, "terminal_cost_grad_t", x, tf)]])
    return res, x, u


def solve(ocp, guess, tol=1e-10, max_iter=50, verbose=True):
    p = np.asarray(guess, dtype=float)
    for it in range(max_iter):
        r, _, _ = shoot(ocp, p)
        if verbose:
            print(f"iter {it:2d}  tf={p[-1]:.8f}  |res|={np.max(np.abs(r)):.3e}")
        if np.max(np.abs(r)) < tol:
            break
        Jac = np.empty((len(r), len(p)))
        for j in range(len(p)):
            dp = 1e-7 * max(1.0, abs(p[j])) if j == len(p) - 1 else 1e-7 * max(1e-3, abs(p[j]))
            q = p.copy()
            q[j] += dp
            Jac[:, j] = (shoot(ocp, q)[0] - r) / dp
        step = np.linalg.solve(Jac, -r)
        # damp steps that would push tf far
        scale = min(1.0, 2.0 / max(abs(step[-1]), 1e-300))
        p = p + scale * step
    return p


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--tf-guess", type=float, default=24.0)
    args = ap.parse_args()
    ocp = build_example2()
    # costate guess: terminal gradient magnitudes of a near-hit trajectory
    p = solve(ocp, [-5e-4, -3e-3, -40.0, args.tf_guess])
    r, x, u = shoot(ocp, p)
    print(f"tf* = {p[-1]:.6f} s")
    print(f"lambda(0) = {p[:3]}")
    print(f"x(tf) = {x}, max residual {np.max(np.abs(r)):.2e}")


if __name__ == "__main__":
    main()
