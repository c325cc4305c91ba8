"""State-transition matrices and the costate-equivalent field gamma(t).

``gamma`` is defined without costates as

    gamma(t) = phi_x(t) + int_t^tf Phi(s, t)^T (L_x + phi_tx + phi_xx^T f + f_x^T phi_x)(s) ds

and satisfies ``gamma' = -L_x - f_x^T gamma`` with ``gamma(tf) = phi_x(tf)``.
:func:`gamma_direct` evaluates the integral with a full transition tensor;
:func:`gamma_backward` integrates the terminal-value ODE and is what the
solver uses. The two agree to discretization order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch, IndexOutOfRange
from .numerics import GridFunction, TimeGrid, integrate_fixed_rk4, linear_rk4_propagators, sweep_linear
from .problems import OcpDefinition, evaluate
from .trajectory import GridTrajectory, Linearization, _linear_interpolant, check_same_grid

__all__ = [
    "TransitionTensor",
    "transition_tensor",
    "gamma_backward",
    "gamma_direct",
    "control_gradient",
    "hamiltonian",
]


@dataclass(frozen=True)
class TransitionTensor:
    """``blocks[j, i] = Phi(t_j, t_i)`` for ``j >= i``; entries with ``j < i`` are NaN."""

    grid: TimeGrid
    blocks: np.ndarray

    def __call__(self, j: int, i: int) -> np.ndarray:
        if j < i:
            raise IndexOutOfRange(f"Phi(t_{j}, t_{i}) requested with j < i")
        return self.blocks[j, i]

    def identity_error(self) -> float:
        n = self.blocks.shape[-1]
        d = np.arange(self.grid.n_nodes)
        return float(np.max(np.abs(self.blocks[d, d] - np.eye(n))))

    def composition_error(self, triples=None) -> float:
        """Max |Phi(c,a) - Phi(c,b) Phi(b,a)| over node triples ``a <= b <= c``."""
        N = self.grid.n_nodes
        if triples is None:
            idx = range(N)
            triples = [(a, b, c) for a in idx for b in range(a, N) for c in range(b, N)]
        worst = 0.0
        for a, b, c in triples:
            err = np.max(np.abs(self.blocks[c, a] - self.blocks[c, b] @ self.blocks[b, a]))
            worst = max(worst, float(err))
        return worst


def transition_tensor(ocp: OcpDefinition, traj: GridTrajectory, substeps: int = 4) -> TransitionTensor:
    """Integrate ``dPhi(s, t_i)/ds = f_x(s) Phi(s, t_i)``, ``Phi(t_i, t_i) = I`` for every base node.

    O(N^2) storage; meant for verification at desk scale.
    """
    grid = traj.grid
    N, n = grid.n_nodes, ocp.n
    x_at = _linear_interpolant(grid, traj.X)
    u_at = _linear_interpolant(grid, traj.U)

    def rhs(t, y):
        A = evaluate(ocp, "dynamics_jac_x", x_at(t), u_at(t), t)
        return (A @ y.reshape(n, n)).ravel()

    blocks = np.full((N, N, n, n), np.nan)
    t = grid.nodes
    for i in range(N):
        blocks[i, i] = np.eye(n)
        if i == N - 1:
            break
        sub = TimeGrid(t[i], grid.tf, N - i)
        sol = integrate_fixed_rk4(rhs, np.eye(n).ravel(), sub, substeps=substeps)
        blocks[i + 1 :, i] = sol.values[1:].reshape(N - i - 1, n, n)
    return TransitionTensor(grid, blocks)


def _terminal_quantities(ocp: OcpDefinition, traj: GridTrajectory):
    """phi derivatives along the trajectory, i.e. evaluated at (x(t_i), t_i)."""
    X, t = traj.X, traj.t
    return (
        evaluate(ocp, "terminal_cost_grad_x", X, t),
        evaluate(ocp, "terminal_cost_hess_xx", X, t),
        evaluate(ocp, "terminal_cost_hess_tx", X, t),
    )


def gamma_backward(ocp: OcpDefinition, traj: GridTrajectory, substeps: int = 1, lin: Linearization | None = None) -> GridFunction:
    """Integrate ``gamma' = -L_x - f_x^T gamma`` backward from ``gamma(tf) = phi_x(x(tf), tf)``."""
    if lin is None:
        lin = Linearization(ocp, traj, substeps)
    gT = evaluate(ocp, "terminal_cost_grad_x", traj.X[-1], traj.tf)
    # reverse step order and stage order for the backward sweep
    A = -np.swapaxes(lin.stage_fx, -1, -2)[::-1, ::-1]
    c = -lin.stage_Lx[::-1, ::-1]
    M, d = linear_rk4_propagators(A, c, -lin.h_sub)
    vals = sweep_linear(M, d, gT, lin.substeps)[::-1]
    return GridFunction(traj.grid, vals)


def gamma_direct(ocp: OcpDefinition, traj: GridTrajectory, phi: TransitionTensor) -> GridFunction:
    """Evaluate gamma from its integral definition with trapezoid quadrature."""
    try:
        check_same_grid(phi.grid, traj.grid)
    except GridMismatch:
        raise GridMismatch("transition tensor and trajectory grids differ") from None
    lin = Linearization(ocp, traj)
    phix, phixx, phitx = _terminal_quantities(ocp, traj)
    v = lin.Lx + phitx + np.einsum("kji,kj->ki", phixx, lin.f) + np.einsum("kji,kj->ki", lin.fx, phix)
    N, h = traj.grid.n_nodes, traj.grid.step
    out = np.empty((N, ocp.n))
    for i in range(N):
        # Phi(t_j, t_i)^T v_j for j = i..N-1
        terms = np.einsum("jkl,jk->jl", phi.blocks[i:, i], v[i:])
        if len(terms) > 1:
            integral = h * (terms.sum(axis=0) - 0.5 * (terms[0] + terms[-1]))
        else:
            integral = 0.0
        out[i] = phix[i] + integral
    return GridFunction(traj.grid, out)


def control_gradient(ocp: OcpDefinition, traj: GridTrajectory, gamma: GridFunction, lin: Linearization | None = None) -> GridFunction:
    """``g = L_u + f_u^T gamma`` at every node (zero at a stationary control)."""
    check_same_grid(gamma.grid, traj.grid)
    if lin is None:
        lin = Linearization(ocp, traj)
    g = lin.Lu + np.einsum("kij,ki->kj", lin.fu, gamma.values)
    return GridFunction(traj.grid, g)


def hamiltonian(ocp: OcpDefinition, traj: GridTrajectory, gamma: GridFunction, node: int) -> float:
    N = traj.grid.n_nodes
    if not (-N <= node < N):
        raise IndexOutOfRange(f"node {node} out of range for N={N}")
    x, u, t = traj.X[node], traj.U[node], traj.t[node]
    L = float(evaluate(ocp, "running_cost", x, u, t))
    f = evaluate(ocp, "dynamics", x, u, t)
    return L + float(gamma.values[node] @ f)
