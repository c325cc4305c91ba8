"""Independent reference values: Riccati sweep, finite-difference gradients, descent-rate check."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import IndexOutOfRange
from .numerics import GridFunction, TimeGrid, integrate_fixed_rk4, trapezoid_weights
from .problems import OcpDefinition, scale_problem
from .solver import EvolutionConfig, EvolutionTrace, node_gradient, performance_index, transversality
from .trajectory import GridTrajectory, simulate, to_scaled

__all__ = [
    "CheckResult",
    "LqrSolution",
    "riccati_lqr",
    "finite_difference_gradient",
    "RateReport",
    "djdtau_consistency",
]


@dataclass
class CheckResult:
    """One named verification outcome, as exported in JSON reports."""

    name: str
    value: float
    bound: float
    passed: bool
    detail: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["value"] = float(d["value"])
        d["bound"] = float(d["bound"])
        d["passed"] = bool(d["passed"])
        return d


@dataclass(frozen=True)
class LqrSolution:
    grid: TimeGrid
    S: np.ndarray  # (N, n, n)
    u_star: GridFunction
    x_star: GridFunction
    J_star: float  # 0.5 x0^T S(t0) x0


def riccati_lqr(A, B, Q, R, F, grid: TimeGrid, x0, substeps: int = 8) -> LqrSolution:
    """Finite-horizon LQR by a backward Riccati sweep and a closed-loop forward pass.

    ``-S' = S A + A^T S - S B R^-1 B^T S + Q``, ``S(tf) = F``. The sweep runs
    on a grid refined by ``2 * substeps``; the closed loop is then integrated
    with RK4 steps spanning two refined intervals, so every stage value of
    ``S`` is a sweep sample.
    """
    A, B, Q, R, F = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, R, F))
    n = A.shape[0]
    Rinv = np.linalg.inv(R)
    BRB = B @ Rinv @ B.T

    def ric(t, s):
        S = s.reshape(n, n)
        S = 0.5 * (S + S.T)
        return -(S @ A + A.T @ S - S @ BRB @ S + Q).ravel()

    fine = TimeGrid(grid.t0, grid.tf, 2 * substeps * (grid.n_nodes - 1) + 1)
    Sf = integrate_fixed_rk4(ric, F, fine, backward=True).values.reshape(-1, n, n)
    Sf = 0.5 * (Sf + np.swapaxes(Sf, 1, 2))
    Sf[-1] = F
    gain = Rinv @ B.T @ Sf  # (Nf, m, n)

    x = np.asarray(x0, dtype=float).ravel()
    h = 2.0 * fine.step
    xs = [x]
    for k in range(0, fine.n_nodes - 1, 2):
        Acl = [A - B @ gain[k + j] for j in range(3)]
        k1 = Acl[0] @ x
        k2 = Acl[1] @ (x + 0.5 * h * k1)
        k3 = Acl[1] @ (x + 0.5 * h * k2)
        k4 = Acl[2] @ (x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        xs.append(x)
    X = np.array(xs)[:: substeps]
    idx = np.arange(grid.n_nodes) * 2 * substeps
    S = Sf[idx]
    U = -np.einsum("kmn,kn->km", gain[idx], X)
    J = 0.5 * float(X[0] @ S[0] @ X[0])
    return LqrSolution(grid, S, GridFunction(grid, U), GridFunction(grid, X), J)


def finite_difference_gradient(ocp: OcpDefinition, traj: GridTrajectory, node: int, bump_height: float, substeps: int = 1) -> np.ndarray:
    """Central difference of J under a hat-shaped control bump at an interior node.

    The hat has unit peak at ``t_node`` and support on the two adjacent
    intervals, so its integral weight is ``h``. Returns one value per
    control component.
    """
    grid = traj.grid
    N = grid.n_nodes
    if not 0 < node < N - 1:
        raise IndexOutOfRange(f"node {node} is not interior for N={N}")
    if not bump_height > 0:
        raise ValueError("bump_height must be positive")
    out = np.empty(ocp.m)
    for c in range(ocp.m):
        Jpm = []
        for sgn in (1.0, -1.0):
            U = traj.U.copy()
            U[node, c] += sgn * bump_height
            Jpm.append(performance_index(ocp, simulate(ocp, U, grid, substeps)))
        out[c] = (Jpm[0] - Jpm[1]) / (2.0 * bump_height * grid.step)
    return out


@dataclass
class RateReport:
    tau: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray  # NaN at the end samples
    rel_mismatch: np.ndarray  # NaN where not checked
    threshold: float
    rel_tol: float
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> str:
        return json.dumps([c.to_dict() for c in self.checks], indent=2)


def djdtau_consistency(
    ocp: OcpDefinition,
    trace: EvolutionTrace,
    config: EvolutionConfig,
    threshold: float = 1e-6,
    rel_tol: float = 0.05,
) -> RateReport:
    """Compare ``-int g^T K g dt - k_tf T^2`` with the centered slope of the recorded J.

    ``g`` is formed the way the run formed it (``config.gradient``), in the
    scaled variables the run used.
    """
    if len(trace.tau) < 3:
        raise ValueError("need at least 3 trace samples")
    sc = scale_problem(ocp)
    K = config.gain_matrix(ocp.m)
    tau = np.asarray(trace.tau, dtype=float)
    J = np.asarray(trace.J, dtype=float)
    analytic = np.empty(len(tau))
    for k, snap in enumerate(trace.snapshots):
        traj = to_scaled(snap, ocp.scaling)
        g = node_gradient(sc, traj, config.substeps, config.gradient).values
        w = trapezoid_weights(traj.grid)
        rate = -float(np.sum(w * np.einsum("ki,ij,kj->k", g, K, g)))
        if sc.free_tf:
            rate -= config.gain_tf * transversality(sc, traj) ** 2
        analytic[k] = rate
    numeric = np.full(len(tau), np.nan)
    numeric[1:-1] = np.gradient(J, tau)[1:-1]
    rel = np.full(len(tau), np.nan)
    mask = np.abs(analytic) > threshold
    mask[[0, -1]] = False
    rel[mask] = np.abs(numeric[mask] - analytic[mask]) / np.abs(analytic[mask])
    worst = float(np.nanmax(rel)) if np.any(mask) else 0.0
    checks = [
        CheckResult("djdtau_nonpositive", float(analytic.max()), 0.0, bool(analytic.max() <= 0.0)),
        CheckResult(
            "djdtau_slope_match",
            worst,
            rel_tol,
            worst <= rel_tol,
            f"{int(mask.sum())} samples with |rate| > {threshold:g}",
        ),
    ]
    return RateReport(tau, analytic, numeric, rel, threshold, rel_tol, checks)
