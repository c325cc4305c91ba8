"""Evolution of a feasible trajectory toward optimality along variation time tau.

The control moves along ``du/dtau = -K g`` with ``g = L_u + f_u^T gamma``, the
state follows the linearized dynamics driven by ``du/dtau`` (Coupled mode) or
is re-simulated from the control (Projected mode), and a free terminal time
moves along ``dtf/dtau = -k_tf (L + phi_t + phi_x^T f)|_tf``. After
semi-discretization on the normalized grid this is one large ODE in tau,
integrated with the adaptive Dormand-Prince pair.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .adjoint import control_gradient, gamma_backward
from .discrete import DiscreteAdjoint
from .errors import FeasibilityLost, GridMismatch, ModeError, NonFiniteState
from .numerics import GridFunction, TimeGrid, integrate_adaptive, linear_rk4_propagators, stage_samples, sweep_linear
from .problems import Fixed, OcpDefinition, evaluate, scale_problem
from .trajectory import GridTrajectory, Linearization, check_same_grid, simulate, to_physical, to_scaled

log = logging.getLogger(__name__)

__all__ = [
    "COUPLED",
    "PROJECTED",
    "EvolutionConfig",
    "EvolutionTrace",
    "StateLayout",
    "initial_feasible",
    "delta_u",
    "delta_tf",
    "delta_x",
    "epde_rhs",
    "evolve",
    "performance_index",
    "lagrange_form_index",
    "transversality",
    "optimality_residual",
    "node_gradient",
    "feasibility_defect",
]

COUPLED = "coupled"
PROJECTED = "projected"
DISCRETE = "discrete"
COSTATE = "costate"


@dataclass
class EvolutionConfig:
    """Gains, discretization and integrator settings for one evolution run.

    Gains are interpreted in the scaled variables of the problem.
    ``restore_every`` of None disables feasibility restoration.
    ``gradient`` selects how the node gradient ``g`` is formed: ``"discrete"``
    differentiates the discretized index exactly (the recorded J is then a
    Lyapunov function of the semi-discrete flow), ``"costate"`` uses
    ``L_u + f_u^T gamma`` with gamma from the backward RK4 sweep.
    """

    gain: object = 2e-2  # scalar or m x m matrix
    gain_tf: float = 1e-4
    mode: str = COUPLED
    nodes: int = 61
    rtol: float = 1e-3
    atol: float = 1e-6
    tau_end: float = 300.0
    residual_tol: float = 1e-3
    restore_every: Optional[int] = None
    record_every: float = 0.5
    substeps: int = 1
    feas_tol: float = 1e-3
    gradient: str = DISCRETE

    def __post_init__(self):
        if self.gradient not in (DISCRETE, COSTATE):
            raise ValueError(f"gradient must be {DISCRETE!r} or {COSTATE!r}, got {self.gradient!r}")
        if self.mode not in (COUPLED, PROJECTED):
            raise ValueError(f"mode must be {COUPLED!r} or {PROJECTED!r}, got {self.mode!r}")
        if self.nodes < 3:
            raise ValueError("nodes must be >= 3")
        if not self.gain_tf > 0:
            raise ValueError("gain_tf must be positive")
        if not (self.rtol > 0 and self.atol > 0 and self.tau_end > 0 and self.record_every > 0):
            raise ValueError("rtol, atol, tau_end and record_every must be positive")
        if self.restore_every is not None and self.restore_every < 1:
            raise ValueError("restore_every must be a positive step count or None")
        K = np.atleast_2d(np.asarray(self.gain, dtype=float))
        if K.shape[0] != K.shape[1] or not np.allclose(K, K.T):
            raise ValueError("gain must be a symmetric matrix or a scalar")
        if np.any(np.linalg.eigvalsh(K) <= 0):
            raise ValueError("gain must be positive definite")

    def gain_matrix(self, m: int) -> np.ndarray:
        K = np.atleast_2d(np.asarray(self.gain, dtype=float))
        if K.shape == (1, 1) and m > 1:
            K = K[0, 0] * np.eye(m)
        if K.shape != (m, m):
            raise ValueError(f"gain has shape {K.shape}, expected ({m}, {m})")
        return K

    def to_dict(self) -> dict:
        d = asdict(self)
        g = np.asarray(self.gain, dtype=float)
        d["gain"] = float(g) if g.ndim == 0 else g.tolist()
        return d


# ---------------------------------------------------------------------------
# scalar functionals of a trajectory


def performance_index(ocp: OcpDefinition, traj: GridTrajectory) -> float:
    """``phi(x(tf), tf)`` plus the trapezoid rule applied to ``L`` on the grid."""
    L = evaluate(ocp, "running_cost", traj.X, traj.U, traj.t)
    h = traj.grid.step
    J = float(evaluate(ocp, "terminal_cost", traj.X[-1], traj.tf)) + h * (L.sum() - 0.5 * (L[0] + L[-1]))
    if not np.isfinite(J):
        raise NonFiniteState(traj.tf, 0, "performance index")
    return float(J)


def lagrange_form_index(ocp: OcpDefinition, traj: GridTrajectory) -> float:
    """``phi(x0, t0) + int (phi_t + phi_x^T f + L) dt`` by trapezoid; equals J up to quadrature."""
    X, U, t = traj.X, traj.U, traj.t
    integrand = (
        evaluate(ocp, "terminal_cost_grad_t", X, t)
        + np.einsum("ki,ki->k", evaluate(ocp, "terminal_cost_grad_x", X, t), evaluate(ocp, "dynamics", X, U, t))
        + evaluate(ocp, "running_cost", X, U, t)
    )
    h = traj.grid.step
    return float(evaluate(ocp, "terminal_cost", X[0], t[0])) + h * (integrand.sum() - 0.5 * (integrand[0] + integrand[-1]))


def transversality(ocp: OcpDefinition, traj: GridTrajectory) -> float:
    """``L + phi_t + phi_x^T f`` at the terminal node."""
    x, u, t = traj.X[-1], traj.U[-1], traj.tf
    return float(
        evaluate(ocp, "running_cost", x, u, t)
        + evaluate(ocp, "terminal_cost_grad_t", x, t)
        + evaluate(ocp, "terminal_cost_grad_x", x, t) @ evaluate(ocp, "dynamics", x, u, t)
    )


def node_gradient(ocp: OcpDefinition, traj: GridTrajectory, substeps: int = 1, gradient: str = COSTATE) -> GridFunction:
    """Control gradient at the nodes by either route (see :class:`EvolutionConfig`)."""
    if gradient == DISCRETE:
        return DiscreteAdjoint(ocp, traj, substeps).gradient()
    lin = Linearization(ocp, traj, substeps)
    return control_gradient(ocp, traj, gamma_backward(ocp, traj, lin=lin), lin=lin)


def optimality_residual(ocp: OcpDefinition, traj: GridTrajectory, substeps: int = 1, gradient: str = COSTATE):
    """(max node |g|, |transversality|); the second entry is 0 for fixed tf."""
    g = node_gradient(ocp, traj, substeps, gradient)
    stat = float(np.max(np.abs(g.values)))
    trans = abs(transversality(ocp, traj)) if ocp.free_tf else 0.0
    return stat, trans


def feasibility_defect(ocp: OcpDefinition, traj: GridTrajectory, substeps: int = 1) -> float:
    sim = simulate(ocp, traj.U, traj.grid, substeps)
    return float(np.max(np.abs(sim.X - traj.X)))


# ---------------------------------------------------------------------------
# evolution rates


def initial_feasible(ocp: OcpDefinition, u_guess=None, tf_guess: Optional[float] = None, nodes: int = 61, substeps: int = 1) -> GridTrajectory:
    """Simulate the dynamics under an initial control guess (zero by default).

    ``u_guess`` may be None, a constant, an ``(N, m)`` array or a
    :class:`GridFunction`. For fixed-tf problems ``tf_guess`` defaults to the
    problem's terminal time.
    """
    if nodes < 3:
        raise ValueError("initial_feasible needs N >= 3 nodes")
    if tf_guess is None:
        if not isinstance(ocp.terminal_time, Fixed):
            raise ValueError("tf_guess is required for free terminal time")
        tf_guess = ocp.terminal_time.tf
    if not tf_guess > ocp.t0:
        raise ValueError("tf_guess must exceed t0")
    grid = TimeGrid(ocp.t0, tf_guess, nodes)
    if u_guess is None:
        U = np.zeros((nodes, ocp.m))
    elif isinstance(u_guess, GridFunction):
        U = u_guess.values
    else:
        U = np.broadcast_to(np.asarray(u_guess, dtype=float), (nodes, ocp.m)) if np.ndim(u_guess) < 2 else np.asarray(u_guess, dtype=float)
    return simulate(ocp, U, grid, substeps)


def delta_u(ocp: OcpDefinition, traj: GridTrajectory, gamma: GridFunction, K, lin: Linearization | None = None) -> GridFunction:
    """``du/dtau = -K g`` at every node."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape == (1, 1) and ocp.m > 1:
        K = K[0, 0] * np.eye(ocp.m)
    g = control_gradient(ocp, traj, gamma, lin=lin)
    return GridFunction(traj.grid, -g.values @ K.T)


def delta_tf(ocp: OcpDefinition, traj: GridTrajectory, k_tf: float) -> float:
    """``dtf/dtau = -k_tf (L + phi_t + phi_x^T f)`` at the terminal node."""
    if not ocp.free_tf:
        raise ModeError("terminal time is fixed; there is no tf evolution")
    return -float(k_tf) * transversality(ocp, traj)


def delta_x(ocp: OcpDefinition, traj: GridTrajectory, du: GridFunction, substeps: int = 1, lin: Linearization | None = None) -> GridFunction:
    """Solve ``dx' = f_x dx + f_u du`` forward from ``dx(t0) = 0``.

    Coefficients and forcing are linearly interpolated between nodes, and the
    RK4 sweep is evaluated through exact one-step affine maps.
    """
    try:
        check_same_grid(du.grid, traj.grid)
    except GridMismatch:
        raise GridMismatch("control rate and trajectory grids differ") from None
    if lin is None:
        lin = Linearization(ocp, traj, substeps)
    du_st = stage_samples(du.values, lin.substeps)
    c = np.einsum("sqij,sqj->sqi", lin.stage_fu, du_st)
    M, d = linear_rk4_propagators(lin.stage_fx, c, lin.h_sub)
    vals = sweep_linear(M, d, np.zeros(ocp.n), lin.substeps)
    return GridFunction(traj.grid, vals)


@dataclass(frozen=True)
class StateLayout:
    """Packing of (x nodes, u nodes, tf) into the flat tau-integration vector."""

    n: int
    m: int
    nodes: int
    mode: str
    free_tf: bool

    @property
    def size(self) -> int:
        core = self.m * self.nodes
        if self.mode == COUPLED:
            core += self.n * self.nodes
        return core + (1 if self.free_tf else 0)

    def pack(self, traj: GridTrajectory) -> np.ndarray:
        parts = []
        if self.mode == COUPLED:
            parts.append(traj.X.ravel())
        parts.append(traj.U.ravel())
        if self.free_tf:
            parts.append([traj.tf])
        return np.concatenate(parts).astype(float)

    def unpack(self, y):
        """Returns ``(X or None, U, tf or None)``."""
        y = np.asarray(y, dtype=float)
        if y.size != self.size:
            raise ValueError(f"state vector has length {y.size}, expected {self.size}")
        k = 0
        X = None
        if self.mode == COUPLED:
            X = y[: self.n * self.nodes].reshape(self.nodes, self.n)
            k = self.n * self.nodes
        U = y[k : k + self.m * self.nodes].reshape(self.nodes, self.m)
        tf = float(y[-1]) if self.free_tf else None
        return X, U, tf


class EpdeSystem:
    """Semi-discrete evolution equations for one (scaled) problem and config."""

    def __init__(self, ocp: OcpDefinition, config: EvolutionConfig):
        self.ocp = ocp
        self.config = config
        self.K = config.gain_matrix(ocp.m)
        self.layout = StateLayout(ocp.n, ocp.m, config.nodes, config.mode, ocp.free_tf)
        self.n_calls = 0

    def grid_for(self, tf):
        if tf is None:
            tf = self.ocp.terminal_time.tf
        return TimeGrid(self.ocp.t0, tf, self.config.nodes)

    def trajectory(self, y) -> GridTrajectory:
        X, U, tf = self.layout.unpack(y)
        grid = self.grid_for(tf)
        if X is None:
            return simulate(self.ocp, U, grid, self.config.substeps)
        return GridTrajectory.from_arrays(grid, X, U)

    def pack(self, traj: GridTrajectory) -> np.ndarray:
        return self.layout.pack(traj)

    def rates(self, traj: GridTrajectory):
        """Returns ``(dX, dU, dtf)``: fixed-time rates plus the motion of the nodes with tf."""
        ocp, cfg = self.ocp, self.config
        dX = None
        if cfg.gradient == DISCRETE:
            da = DiscreteAdjoint(ocp, traj, cfg.substeps)
            dU = -da.gradient().values @ self.K.T
            if cfg.mode == COUPLED:
                dX = da.tangent(dU)
        else:
            lin = Linearization(ocp, traj, cfg.substeps)
            gamma = gamma_backward(ocp, traj, lin=lin)
            du = delta_u(ocp, traj, gamma, self.K, lin=lin)
            dU = du.values.copy()
            if cfg.mode == COUPLED:
                dX = delta_x(ocp, traj, du, lin=lin).values.copy()
        dtf = None
        if ocp.free_tf:
            dtf = delta_tf(ocp, traj, cfg.gain_tf)
            # nodes sit at fixed sigma, so they move with tf
            sigma = traj.grid.sigma[:, None]
            if dX is not None:
                f = evaluate(ocp, "dynamics", traj.X, traj.U, traj.t)
                dX = dX + f * sigma * dtf
            u_t = np.gradient(traj.U, traj.grid.step, axis=0)
            dU = dU + u_t * sigma * dtf
        return dX, dU, dtf

    def rhs(self, tau, y) -> np.ndarray:
        self.n_calls += 1
        traj = self.trajectory(y)
        dX, dU, dtf = self.rates(traj)
        parts = []
        if dX is not None:
            parts.append(dX.ravel())
        parts.append(dU.ravel())
        if dtf is not None:
            parts.append([dtf])
        return np.concatenate(parts)


def epde_rhs(ocp: OcpDefinition, state, config: EvolutionConfig) -> np.ndarray:
    """d(state)/dtau for a problem already expressed in solver variables."""
    return EpdeSystem(ocp, config).rhs(0.0, state)


# ---------------------------------------------------------------------------
# driver


@dataclass
class EvolutionTrace:
    """Samples recorded along tau. Snapshots are in physical units; residuals in scaled units."""

    tau: list = field(default_factory=list)
    J: list = field(default_factory=list)
    stationarity: list = field(default_factory=list)
    transversality: list = field(default_factory=list)
    tf: list = field(default_factory=list)
    feas_defect: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    stop_reason: str = ""
    n_steps: int = 0
    n_rejected: int = 0
    n_rhs: int = 0
    n_restores: int = 0
    state_size: int = 0

    def as_array(self) -> np.ndarray:
        return np.column_stack([self.tau, self.J, self.stationarity, self.transversality, self.tf, self.feas_defect])

    @property
    def final(self) -> GridTrajectory:
        return self.snapshots[-1]


def evolve(ocp: OcpDefinition, traj0: GridTrajectory, config: EvolutionConfig) -> EvolutionTrace:
    """Integrate the evolution equations from a feasible trajectory.

    ``ocp`` and ``traj0`` are in physical units; the run itself happens in the
    problem's scaled variables. Stops at ``config.tau_end`` or as soon as
    both optimality residuals drop to ``config.residual_tol``.
    """
    sc = scale_problem(ocp)
    scaling = ocp.scaling
    straj0 = to_scaled(traj0, scaling)
    if straj0.grid.n_nodes != config.nodes:
        raise GridMismatch(f"initial trajectory has {straj0.grid.n_nodes} nodes, config asks for {config.nodes}")
    system = EpdeSystem(sc, config)
    defect0 = feasibility_defect(sc, straj0, config.substeps)
    if defect0 > 1e-6:
        raise FeasibilityLost(0.0, defect0, 1e-6)

    trace = EvolutionTrace(state_size=system.layout.size)
    restoring = config.mode == COUPLED and config.restore_every is not None
    feas_limit = 100.0 * config.feas_tol

    def record(tau, y):
        traj = system.trajectory(y)
        stat, trans = optimality_residual(sc, traj, config.substeps, config.gradient)
        defect = 0.0 if config.mode == PROJECTED else feasibility_defect(sc, traj, config.substeps)
        trace.tau.append(float(tau))
        trace.J.append(performance_index(sc, traj))
        trace.stationarity.append(stat)
        trace.transversality.append(trans)
        trace.tf.append(traj.tf * (scaling.time if scaling is not None else 1.0))
        trace.feas_defect.append(defect)
        trace.snapshots.append(to_physical(traj, scaling))
        return stat, trans, defect

    step_count = [0]

    def observer(tau, y):
        step_count[0] += 1
        if restoring and step_count[0] % config.restore_every == 0:
            trace.n_restores += 1
            X, U, tf = system.layout.unpack(y)
            sim = simulate(sc, U, system.grid_for(tf), config.substeps)
            return system.pack(sim)
        return None

    y = system.pack(straj0)
    tau = 0.0
    record(tau, y)
    h = None
    trace.stop_reason = "tau_end"
    while tau < config.tau_end - 1e-12 * config.tau_end:
        tau_next = min(tau + config.record_every, config.tau_end)
        res = integrate_adaptive(system.rhs, y, (tau, tau_next), config.rtol, config.atol, observer=observer, h0=h)
        y, tau = res.y, tau_next
        h = res.h_next
        trace.n_steps += len(res.steps)
        trace.n_rejected += res.n_rejected
        trace.n_rhs += res.n_rhs
        stat, trans, defect = record(tau, y)
        if config.mode == COUPLED and not restoring and defect > feas_limit:
            err = FeasibilityLost(tau, defect, feas_limit)
            err.trace = trace
            raise err
        if stat <= config.residual_tol and trans <= config.residual_tol:
            trace.stop_reason = "converged"
            break
    log.info("evolve: %s at tau=%.4g after %d steps (%d rejected)", trace.stop_reason, tau, trace.n_steps, trace.n_rejected)
    return trace
