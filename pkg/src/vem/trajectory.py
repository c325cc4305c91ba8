"""Grid trajectories, forward simulation and stage-point linearizations."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import GridMismatch, NonFiniteState
from .numerics import GridFunction, TimeGrid, integrate_fixed_rk4, stage_samples, trapezoid_weights
from .problems import OcpDefinition, Scaling, evaluate

__all__ = ["GridTrajectory", "simulate", "Linearization", "to_scaled", "to_physical", "check_same_grid"]


@dataclass(frozen=True)
class GridTrajectory:
    """State and control samples on a uniform grid over ``[t0, tf]``."""

    grid: TimeGrid
    x: GridFunction
    u: GridFunction

    @classmethod
    def from_arrays(cls, grid: TimeGrid, x, u) -> "GridTrajectory":
        return cls(grid, GridFunction(grid, x), GridFunction(grid, u))

    def __post_init__(self):
        if self.x.grid != self.grid or self.u.grid != self.grid:
            raise GridMismatch("state/control samples live on a different grid")

    @property
    def X(self) -> np.ndarray:
        return self.x.values

    @property
    def U(self) -> np.ndarray:
        return self.u.values

    @property
    def tf(self) -> float:
        return self.grid.tf

    @property
    def t(self) -> np.ndarray:
        return self.grid.nodes


def check_same_grid(a: TimeGrid, b: TimeGrid):
    if a.n_nodes != b.n_nodes or not np.isclose(a.t0, b.t0) or not np.isclose(a.tf, b.tf, rtol=1e-12, atol=0):
        raise GridMismatch(f"grid mismatch: {a} vs {b}")


def _linear_interpolant(grid: TimeGrid, values: np.ndarray):
    t0, h, last = grid.t0, grid.step, grid.n_nodes - 2

    def at(t):
        s = (t - t0) / h
        i = min(max(int(s), 0), last)
        a = s - i
        return values[i] + a * (values[i + 1] - values[i])

    return at


def simulate(ocp: OcpDefinition, u, grid: TimeGrid, substeps: int = 1) -> GridTrajectory:
    """Integrate the dynamics from ``x0`` under piecewise-linear control ``u``.

    ``u`` is an ``(N, m)`` array of node values. This is the classical RK4 scheme of :func:`integrate_fixed_rk4` with the
    control stages read off the nodes directly (the hot path of every
    feasibility check).
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    U = np.asarray(u, dtype=float).reshape(grid.n_nodes, ocp.m)
    f = ocp.dynamics
    t, step = grid.nodes, grid.step
    h = step / substeps
    X = np.empty((grid.n_nodes, ocp.n))
    x = X[0] = ocp.x0
    for i in range(grid.n_nodes - 1):
        ua, du, ta = U[i], U[i + 1] - U[i], t[i]
        for s in range(substeps):
            a0, am, a1 = s / substeps, (s + 0.5) / substeps, (s + 1) / substeps
            um, tm = ua + am * du, ta + am * step
            k1 = np.asarray(f(x, ua + a0 * du, ta + a0 * step), dtype=float)
            k2 = np.asarray(f(x + 0.5 * h * k1, um, tm), dtype=float)
            k3 = np.asarray(f(x + 0.5 * h * k2, um, tm), dtype=float)
            k4 = np.asarray(f(x + h * k3, ua + a1 * du, ta + a1 * step), dtype=float)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        X[i + 1] = x
    if not np.all(np.isfinite(X)):
        bad = np.argwhere(~np.isfinite(X))[0]
        raise NonFiniteState(float(t[bad[0]]), int(bad[1]), "simulate")
    return GridTrajectory.from_arrays(grid, X, U)


class Linearization:
    """Jacobians and cost gradients evaluated once along a trajectory.

    Node quantities are evaluated at the samples; stage quantities at the
    RK4 stage points of each (sub)step with linearly interpolated x and u.
    """

    def __init__(self, ocp: OcpDefinition, traj: GridTrajectory, substeps: int = 1):
        self.ocp = ocp
        self.traj = traj
        self.substeps = substeps
        self.grid = traj.grid

    # node quantities -------------------------------------------------
    @cached_property
    def f(self):
        return evaluate(self.ocp, "dynamics", self.traj.X, self.traj.U, self.traj.t)

    @cached_property
    def fx(self):
        return evaluate(self.ocp, "dynamics_jac_x", self.traj.X, self.traj.U, self.traj.t)

    @cached_property
    def fu(self):
        return evaluate(self.ocp, "dynamics_jac_u", self.traj.X, self.traj.U, self.traj.t)

    @cached_property
    def L(self):
        return evaluate(self.ocp, "running_cost", self.traj.X, self.traj.U, self.traj.t)

    @cached_property
    def Lx(self):
        return evaluate(self.ocp, "running_cost_grad_x", self.traj.X, self.traj.U, self.traj.t)

    @cached_property
    def Lu(self):
        return evaluate(self.ocp, "running_cost_grad_u", self.traj.X, self.traj.U, self.traj.t)

    # stage quantities, forward order, shape (S, 3, ...) ---------------
    @cached_property
    def _stage_points(self):
        s = self.substeps
        xs = stage_samples(self.traj.X, s)
        us = stage_samples(self.traj.U, s)
        ts = stage_samples(self.traj.t, s)[..., 0]
        return xs, us, ts

    def _stage_eval(self, name):
        xs, us, ts = self._stage_points
        S = xs.shape[0]
        flat = evaluate(
            self.ocp,
            name,
            xs.reshape(S * 3, -1),
            us.reshape(S * 3, -1),
            ts.reshape(S * 3),
        )
        return flat.reshape((S, 3) + flat.shape[1:])

    @cached_property
    def stage_fx(self):
        return self._stage_eval("dynamics_jac_x")

    @cached_property
    def stage_fu(self):
        return self._stage_eval("dynamics_jac_u")

    @cached_property
    def stage_Lx(self):
        return self._stage_eval("running_cost_grad_x")

    @property
    def h_sub(self) -> float:
        return self.grid.step / self.substeps

    @cached_property
    def weights(self):
        return trapezoid_weights(self.grid)


def to_scaled(traj: GridTrajectory, scaling: Scaling | None) -> GridTrajectory:
    if scaling is None or scaling.is_identity():
        return traj
    g = traj.grid
    sg = TimeGrid(g.t0 / scaling.time, g.tf / scaling.time, g.n_nodes)
    return GridTrajectory.from_arrays(sg, traj.X / scaling.state, traj.U / scaling.control)


def to_physical(traj: GridTrajectory, scaling: Scaling | None) -> GridTrajectory:
    if scaling is None or scaling.is_identity():
        return traj
    g = traj.grid
    pg = TimeGrid(g.t0 * scaling.time, g.tf * scaling.time, g.n_nodes)
    return GridTrajectory.from_arrays(pg, traj.X * scaling.state, traj.U * scaling.control)
