"""Exact derivatives of the discretized problem.

On the grid, the state recursion is ``x_{i+1} = Psi_i(x_i, u_i, u_{i+1})``
(RK4 substeps with linearly interpolated control) and the index is
``J = phi(x_N, tf) + sum_i w_i L(x_i, u_i, t_i)`` with trapezoid weights.
This module differentiates exactly that recursion: forward-mode for the
node maps, reverse-mode for the gradient. Dividing the reverse-mode
gradient by ``w_i`` gives a second-order approximation of
``L_u + f_u^T gamma`` at the nodes whose zero set is the minimizer of the
discrete index, so the evolution is a true gradient flow of the recorded J.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .numerics import GridFunction, sweep_linear, trapezoid_weights
from .problems import OcpDefinition, evaluate
from .trajectory import GridTrajectory

__all__ = ["NodeMaps", "node_maps", "DiscreteAdjoint"]


@dataclass(frozen=True)
class NodeMaps:
    """Node-to-node map values and Jacobians, one entry per interval."""

    x_next: np.ndarray  # (N-1, n)  Psi_i evaluated at the stored x_i
    M: np.ndarray  # (N-1, n, n)  dPsi_i/dx_i
    N0: np.ndarray  # (N-1, n, m)  dPsi_i/du_i
    N1: np.ndarray  # (N-1, n, m)  dPsi_i/du_{i+1}


def node_maps(ocp: OcpDefinition, traj: GridTrajectory, substeps: int = 1) -> NodeMaps:
    """Propagate every interval independently, vectorized across intervals."""
    X, U, t = traj.X, traj.U, traj.t
    n, m = ocp.n, ocp.m
    P = len(X) - 1
    x = X[:-1].copy()
    ua, du = U[:-1], U[1:] - U[:-1]
    ta, step = t[:-1], traj.grid.step
    h = step / substeps
    Tx = np.broadcast_to(np.eye(n), (P, n, n)).copy()
    Tu = np.zeros((P, n, 2 * m))

    def stage(xi, dxi_x, dxi_u, alpha):
        u = ua + alpha * du
        tt = ta + alpha * step
        k = evaluate(ocp, "dynamics", xi, u, tt)
        A = evaluate(ocp, "dynamics_jac_x", xi, u, tt)
        B = evaluate(ocp, "dynamics_jac_u", xi, u, tt)
        dk_x = A @ dxi_x
        dk_u = A @ dxi_u + np.concatenate([(1.0 - alpha) * B, alpha * B], axis=-1)
        return k, dk_x, dk_u

    for s in range(substeps):
        a0, am, a1 = s / substeps, (s + 0.5) / substeps, (s + 1) / substeps
        k1, k1x, k1u = stage(x, Tx, Tu, a0)
        k2, k2x, k2u = stage(x + 0.5 * h * k1, Tx + 0.5 * h * k1x, Tu + 0.5 * h * k1u, am)
        k3, k3x, k3u = stage(x + 0.5 * h * k2, Tx + 0.5 * h * k2x, Tu + 0.5 * h * k2u, am)
        k4, k4x, k4u = stage(x + h * k3, Tx + h * k3x, Tu + h * k3u, a1)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        Tx = Tx + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        Tu = Tu + (h / 6.0) * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
    return NodeMaps(x, Tx, Tu[..., :m], Tu[..., m:])


class DiscreteAdjoint:
    """Reverse-mode gradient of the discrete index with respect to node controls."""

    def __init__(self, ocp: OcpDefinition, traj: GridTrajectory, substeps: int = 1):
        self.ocp = ocp
        self.traj = traj
        self.substeps = substeps
        self.weights = trapezoid_weights(traj.grid)

    @cached_property
    def maps(self) -> NodeMaps:
        return node_maps(self.ocp, self.traj, self.substeps)

    @cached_property
    def _sweep(self):
        ocp, tr, w = self.ocp, self.traj, self.weights
        X, U, t = tr.X, tr.U, tr.t
        Lx = evaluate(ocp, "running_cost_grad_x", X, U, t)
        Lu = evaluate(ocp, "running_cost_grad_u", X, U, t)
        mp = self.maps
        N = len(X)
        wLx = w[:, None] * Lx
        # lam_i = w_i L_x,i + M_i^T lam_{i+1}, swept from the terminal node
        MT = np.swapaxes(mp.M, 1, 2)[::-1]
        lamN = evaluate(ocp, "terminal_cost_grad_x", X[-1], tr.tf) + wLx[-1]
        lam = sweep_linear(MT, wLx[-2::-1], lamN)[::-1]
        G = w[:, None] * Lu
        G[:-1] += np.einsum("knm,kn->km", mp.N0, lam[1:])
        G[1:] += np.einsum("knm,kn->km", mp.N1, lam[1:])
        return lam, G

    @property
    def state_sensitivity(self) -> np.ndarray:
        """``dJ/dx_i`` treating ``x_i`` as the start of the remaining recursion."""
        return self._sweep[0]

    @property
    def raw_gradient(self) -> np.ndarray:
        """``dJ/du_i``, shape (N, m)."""
        return self._sweep[1]

    def gradient(self) -> GridFunction:
        """``dJ/du_i / w_i``; approximates ``L_u + f_u^T gamma`` at the nodes."""
        return GridFunction(self.traj.grid, self.raw_gradient / self.weights[:, None])

    def tangent(self, dU) -> np.ndarray:
        """State response ``dx`` of the recursion to a node-control perturbation ``dU``."""
        mp = self.maps
        dU = np.asarray(dU, dtype=float).reshape(-1, self.ocp.m)
        b = np.einsum("knm,km->kn", mp.N0, dU[:-1]) + np.einsum("knm,km->kn", mp.N1, dU[1:])
        return sweep_linear(mp.M, b, np.zeros(self.ocp.n))
