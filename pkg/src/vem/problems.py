"""Bolza optimal control problems and the built-in benchmark instances.

A problem is a bundle of pure evaluators for the dynamics ``f``, running
cost ``L`` and terminal cost ``phi`` together with the partial derivatives
the solver needs. Evaluators take ``(x, u, t)`` (or ``(x, t)`` for the
terminal cost). When ``vectorized`` is set they must also broadcast over
leading batch axes: ``x`` of shape ``(..., n)``, ``u`` of shape ``(..., m)``
and ``t`` of shape ``(...)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DerivativeMismatch

__all__ = [
    "Fixed",
    "Free",
    "FREE",
    "Scaling",
    "OcpDefinition",
    "evaluate",
    "scale_problem",
    "build_example1",
    "build_example2",
    "build_zero_cost",
    "ValidationReport",
    "validate_derivatives",
    "sample_envelope",
]


@dataclass(frozen=True)
class Fixed:
    tf: float

    def __str__(self):
        return "Fixed"


@dataclass(frozen=True)
class Free:
    def __str__(self):
        return "Free"


FREE = Free()


@dataclass(frozen=True)
class Scaling:
    """Diagonal change of variables ``x = state*xs``, ``u = control*us``, ``t = time*ts``."""

    state: np.ndarray
    control: np.ndarray
    time: float = 1.0

    def __post_init__(self):
        s = np.asarray(self.state, dtype=float).ravel()
        c = np.asarray(self.control, dtype=float).ravel()
        if np.any(s <= 0) or np.any(c <= 0) or not self.time > 0:
            raise ValueError("scale factors must be strictly positive")
        object.__setattr__(self, "state", s)
        object.__setattr__(self, "control", c)
        object.__setattr__(self, "time", float(self.time))

    @classmethod
    def identity(cls, n, m):
        return cls(np.ones(n), np.ones(m), 1.0)

    def is_identity(self) -> bool:
        return bool(np.all(self.state == 1) and np.all(self.control == 1) and self.time == 1)

    def to_dict(self):
        return {"state": self.state.tolist(), "control": self.control.tolist(), "time": self.time}


Evaluator = Callable[..., np.ndarray]


@dataclass(frozen=True)
class OcpDefinition:
    """Bolza problem ``J = phi(x(tf), tf) + int L dt`` subject to ``x' = f(x, u, t)``."""

    name: str
    n: int
    m: int
    t0: float
    x0: np.ndarray
    terminal_time: object  # Fixed | Free
    dynamics: Evaluator
    dynamics_jac_x: Evaluator
    dynamics_jac_u: Evaluator
    running_cost: Evaluator
    running_cost_grad_x: Evaluator
    running_cost_grad_u: Evaluator
    terminal_cost: Evaluator
    terminal_cost_grad_x: Evaluator
    terminal_cost_grad_t: Evaluator
    terminal_cost_hess_xx: Evaluator
    terminal_cost_hess_tx: Evaluator
    scaling: Optional[Scaling] = None
    vectorized: bool = False
    # (lo, hi) boxes for x, u, t used for random derivative checks
    envelope: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("state and control dimensions must be >= 1")
        x0 = np.asarray(self.x0, dtype=float).ravel()
        if x0.size != self.n:
            raise ValueError(f"x0 has length {x0.size}, expected {self.n}")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        if not isinstance(self.terminal_time, (Fixed, Free)):
            raise TypeError("terminal_time must be Fixed(tf) or FREE")
        if isinstance(self.terminal_time, Fixed) and not self.terminal_time.tf > self.t0:
            raise ValueError("fixed terminal time must exceed t0")

    @property
    def free_tf(self) -> bool:
        return isinstance(self.terminal_time, Free)

    @property
    def scale(self) -> Scaling:
        return self.scaling if self.scaling is not None else Scaling.identity(self.n, self.m)


_POINTWISE = {
    "dynamics": 3,
    "dynamics_jac_x": 3,
    "dynamics_jac_u": 3,
    "running_cost": 3,
    "running_cost_grad_x": 3,
    "running_cost_grad_u": 3,
    "terminal_cost": 2,
    "terminal_cost_grad_x": 2,
    "terminal_cost_grad_t": 2,
    "terminal_cost_hess_xx": 2,
    "terminal_cost_hess_tx": 2,
}


def evaluate(ocp: OcpDefinition, name: str, x, u=None, t=None) -> np.ndarray:
    """Evaluate ``ocp.<name>`` on a batch of points (leading axis = batch)."""
    fn = getattr(ocp, name)
    terminal = _POINTWISE[name] == 2
    x = np.asarray(x, dtype=float)
    if terminal:
        t = u if t is None else t
    t = np.asarray(t, dtype=float)
    if ocp.vectorized:
        out = fn(x, t) if terminal else fn(x, np.asarray(u, dtype=float), t)
        return np.asarray(out, dtype=float)
    if x.ndim == 1:
        return np.asarray(fn(x, t) if terminal else fn(x, np.asarray(u, dtype=float), t), dtype=float)
    tt = np.broadcast_to(t, x.shape[:-1])
    if terminal:
        vals = [fn(x[k], float(tt[k])) for k in range(x.shape[0])]
    else:
        uu = np.asarray(u, dtype=float)
        vals = [fn(x[k], uu[k], float(tt[k])) for k in range(x.shape[0])]
    return np.asarray(vals, dtype=float)


def scale_problem(ocp: OcpDefinition) -> OcpDefinition:
    """Return the equivalent problem in scaled variables.

    The cost value is unchanged; only states, controls and time are rescaled.
    Returns ``ocp`` itself when no scaling is attached.
    """
    if ocp.scaling is None or ocp.scaling.is_identity():
        return replace(ocp, scaling=None)
    sx, su, st = ocp.scaling.state, ocp.scaling.control, ocp.scaling.time
    o = ocp

    def ev(name, *a):
        return evaluate(o, name, *a)

    def X(xs):
        return np.asarray(xs) * sx

    def U(us):
        return np.asarray(us) * su

    def T(ts):
        return np.asarray(ts) * st

    def f(xs, us, ts):
        return st * ev("dynamics", X(xs), U(us), T(ts)) / sx

    def fx(xs, us, ts):
        return ev("dynamics_jac_x", X(xs), U(us), T(ts)) * (st / sx)[:, None] * sx[None, :]

    def fu(xs, us, ts):
        return ev("dynamics_jac_u", X(xs), U(us), T(ts)) * (st / sx)[:, None] * su[None, :]

    def L(xs, us, ts):
        return st * ev("running_cost", X(xs), U(us), T(ts))

    def Lx(xs, us, ts):
        return st * sx * ev("running_cost_grad_x", X(xs), U(us), T(ts))

    def Lu(xs, us, ts):
        return st * su * ev("running_cost_grad_u", X(xs), U(us), T(ts))

    def phi(xs, ts):
        return ev("terminal_cost", X(xs), T(ts))

    def phix(xs, ts):
        return sx * ev("terminal_cost_grad_x", X(xs), T(ts))

    def phit(xs, ts):
        return st * ev("terminal_cost_grad_t", X(xs), T(ts))

    def phixx(xs, ts):
        return ev("terminal_cost_hess_xx", X(xs), T(ts)) * sx[:, None] * sx[None, :]

    def phitx(xs, ts):
        return st * sx * ev("terminal_cost_hess_tx", X(xs), T(ts))

    tt = ocp.terminal_time
    if isinstance(tt, Fixed):
        tt = Fixed(tt.tf / st)
    env = None
    if ocp.envelope is not None:
        env = {
            "x": (np.asarray(ocp.envelope["x"][0]) / sx, np.asarray(ocp.envelope["x"][1]) / sx),
            "u": (np.asarray(ocp.envelope["u"][0]) / su, np.asarray(ocp.envelope["u"][1]) / su),
            "t": (ocp.envelope["t"][0] / st, ocp.envelope["t"][1] / st),
        }
    return OcpDefinition(
        name=ocp.name,
        n=ocp.n,
        m=ocp.m,
        t0=ocp.t0 / st,
        x0=ocp.x0 / sx,
        terminal_time=tt,
        dynamics=f,
        dynamics_jac_x=fx,
        dynamics_jac_u=fu,
        running_cost=L,
        running_cost_grad_x=Lx,
        running_cost_grad_u=Lu,
        terminal_cost=phi,
        terminal_cost_grad_x=phix,
        terminal_cost_grad_t=phit,
        terminal_cost_hess_xx=phixx,
        terminal_cost_hess_tx=phitx,
        scaling=None,
        vectorized=True,
        envelope=env,
    )


# ---------------------------------------------------------------------------
# built-in problems


def _quadratic_form(x, M):
    return 0.5 * np.einsum("...i,ij,...j->...", x, M, x)


def _bcast(M, batch_shape):
    return np.broadcast_to(M, tuple(batch_shape) + M.shape)


def _lq_problem(name, A, B, Q, R, F, x0, terminal_time, envelope=None):
    """Time-invariant linear dynamics with quadratic running and terminal cost."""
    A, B, Q, R, F = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, R, F))
    n, m = B.shape

    def f(x, u, t):
        return x @ A.T + u @ B.T

    def fx(x, u, t):
        return _bcast(A, np.shape(x)[:-1])

    def fu(x, u, t):
        return _bcast(B, np.shape(x)[:-1])

    def L(x, u, t):
        return _quadratic_form(x, Q) + _quadratic_form(u, R)

    def Lx(x, u, t):
        return x @ Q.T

    def Lu(x, u, t):
        return u @ R.T

    def phi(x, t):
        return _quadratic_form(x, F)

    def phix(x, t):
        return x @ F.T

    def phit(x, t):
        return np.zeros(np.shape(x)[:-1])

    def phixx(x, t):
        return _bcast(F, np.shape(x)[:-1])

    def phitx(x, t):
        return np.zeros(np.shape(x))

    if envelope is None:
        envelope = {"x": (-5 * np.ones(n), 5 * np.ones(n)), "u": (-5 * np.ones(m), 5 * np.ones(m)), "t": (0.0, 3.0)}
    return OcpDefinition(
        name=name,
        n=n,
        m=m,
        t0=0.0,
        x0=x0,
        terminal_time=terminal_time,
        dynamics=f,
        dynamics_jac_x=fx,
        dynamics_jac_u=fu,
        running_cost=L,
        running_cost_grad_x=Lx,
        running_cost_grad_u=Lu,
        terminal_cost=phi,
        terminal_cost_grad_x=phix,
        terminal_cost_grad_t=phit,
        terminal_cost_hess_xx=phixx,
        terminal_cost_hess_tx=phitx,
        vectorized=True,
        envelope=envelope,
    )


EX1_A = np.array([[0.0, 1.0], [0.0, 0.0]])
EX1_B = np.array([[0.0], [1.0]])
EX1_Q = np.array([[2.0, 1.0], [1.0, 4.0]])
EX1_R = np.array([[0.5]])
EX1_F = np.diag([1.0, 2.0])


def build_example1(x0=None, Q=None, R=None, F=None, tf: float = 3.0) -> OcpDefinition:
    """Double integrator with quadratic cost on ``[0, 3]`` (fixed terminal time)."""
    return _lq_problem(
        "ex1",
        EX1_A,
        EX1_B,
        EX1_Q if Q is None else Q,
        EX1_R if R is None else np.atleast_2d(R),
        EX1_F if F is None else F,
        [1.0, 1.0] if x0 is None else x0,
        Fixed(tf),
    )


def build_zero_cost() -> OcpDefinition:
    """Example 1 dynamics with ``L = 0`` and ``phi = 0``; every trajectory is optimal."""
    z = _lq_problem("zero-cost", EX1_A, EX1_B, np.zeros((2, 2)), np.zeros((1, 1)), np.zeros((2, 2)), [1.0, 1.0], Fixed(3.0))
    return z


# missile / target data, SI units and radians internally
EX2_VM = 1000.0
EX2_VT = 500.0
EX2_THETA_T = np.deg2rad(30.0)
EX2_R = 5e-4
EX2_F = np.diag([1e-2, 2e-2, 0.0])
EX2_X0_DEG = (10000.0, 5000.0, 0.0)
EX2_SCALING = Scaling(state=[1e4, 1e4, 1.0], control=[100.0], time=1.0)


def build_example2(x0_deg=None, R: Optional[float] = None, F=None, scaling: Optional[Scaling] = EX2_SCALING) -> OcpDefinition:
    """Constant-speed homing missile against a constant-velocity target, free tf.

    States are relative abscissa, relative ordinate (m) and missile azimuth
    (rad); the control is normal acceleration (m/s^2). ``x0_deg`` gives the
    initial azimuth in degrees.
    """
    vm, vt, tht = EX2_VM, EX2_VT, EX2_THETA_T
    Rv = EX2_R if R is None else float(R)
    Fm = EX2_F if F is None else np.asarray(F, dtype=float)
    x0d = EX2_X0_DEG if x0_deg is None else x0_deg
    x0 = np.array([x0d[0], x0d[1], np.deg2rad(x0d[2])], dtype=float)

    def f(x, u, t):
        th = x[..., 2]
        return np.stack(
            [
                vt * np.sin(tht) - vm * np.sin(th),
                vt * np.cos(tht) - vm * np.cos(th),
                u[..., 0] / vm,
            ],
            axis=-1,
        )

    def fx(x, u, t):
        th = x[..., 2]
        out = np.zeros(np.shape(th) + (3, 3))
        out[..., 0, 2] = -vm * np.cos(th)
        out[..., 1, 2] = vm * np.sin(th)
        return out

    def fu(x, u, t):
        out = np.zeros(np.shape(x)[:-1] + (3, 1))
        out[..., 2, 0] = 1.0 / vm
        return out

    def L(x, u, t):
        return 0.5 * Rv * np.sum(u * u, axis=-1)

    def Lx(x, u, t):
        return np.zeros(np.shape(x))

    def Lu(x, u, t):
        return Rv * np.asarray(u, dtype=float)

    def phi(x, t):
        return _quadratic_form(x, Fm)

    def phix(x, t):
        return x @ Fm.T

    def phit(x, t):
        return np.zeros(np.shape(x)[:-1])

    def phixx(x, t):
        return _bcast(Fm, np.shape(x)[:-1])

    def phitx(x, t):
        return np.zeros(np.shape(x))

    return OcpDefinition(
        name="ex2",
        n=3,
        m=1,
        t0=0.0,
        x0=x0,
        terminal_time=FREE,
        dynamics=f,
        dynamics_jac_x=fx,
        dynamics_jac_u=fu,
        running_cost=L,
        running_cost_grad_x=Lx,
        running_cost_grad_u=Lu,
        terminal_cost=phi,
        terminal_cost_grad_x=phix,
        terminal_cost_grad_t=phit,
        terminal_cost_hess_xx=phixx,
        terminal_cost_hess_tx=phitx,
        scaling=scaling,
        vectorized=True,
        envelope={
            "x": (np.array([-2e4, -2e4, -np.pi]), np.array([2e4, 2e4, np.pi])),
            "u": (np.array([-300.0]), np.array([300.0])),
            "t": (0.0, 40.0),
        },
    )


# ---------------------------------------------------------------------------
# derivative validation


@dataclass
class ValidationReport:
    """Worst relative error per evaluator: ``{name: (error, sample_index)}``."""

    rel_tol: float
    worst: dict
    n_samples: int

    @property
    def passed(self) -> bool:
        return all(err <= self.rel_tol for err, _ in self.worst.values())

    def worst_offender(self):
        name = max(self.worst, key=lambda k: self.worst[k][0])
        return name, self.worst[name]


def sample_envelope(ocp: OcpDefinition, count: int, rng=None):
    """Uniform random ``(x, u, t)`` samples from the problem's operating envelope."""
    rng = np.random.default_rng(rng)
    env = ocp.envelope
    if env is None:
        raise ValueError(f"problem {ocp.name!r} has no operating envelope")
    out = []
    for _ in range(count):
        x = rng.uniform(env["x"][0], env["x"][1])
        u = rng.uniform(env["u"][0], env["u"][1])
        t = float(rng.uniform(env["t"][0], env["t"][1]))
        out.append((x, u, t))
    return out


def _fd_jacobian(fun, z, eps):
    """Central differences of ``fun`` w.r.t. vector ``z``; columns = d/dz_j."""
    z = np.asarray(z, dtype=float)
    f0 = np.atleast_1d(fun(z))
    J = np.empty(f0.shape + z.shape)
    for j in range(z.size):
        h = eps * max(1.0, abs(z[j]))
        zp, zm = z.copy(), z.copy()
        zp[j] += h
        zm[j] -= h
        J[..., j] = (np.atleast_1d(fun(zp)) - np.atleast_1d(fun(zm))) / (2 * h)
    return J


def _rel_err(analytic, fd):
    a = np.atleast_1d(np.asarray(analytic, dtype=float))
    d = np.atleast_1d(np.asarray(fd, dtype=float)).reshape(a.shape)
    # scale by the evaluator's own magnitude so exact zeros compare absolutely
    floor = max(1e-3 * float(np.max(np.abs(a), initial=0.0)), 1e-6)
    return float(np.max(np.abs(a - d) / np.maximum(np.abs(a), floor)))


def validate_derivatives(
    ocp: OcpDefinition,
    samples: Sequence,
    rel_tol: float = 1e-6,
    eps: float = 1e-6,
    raise_on_fail: bool = True,
) -> ValidationReport:
    """Check every declared derivative against central finite differences.

    Raises :class:`DerivativeMismatch` naming the worst evaluator when any
    entry exceeds ``rel_tol``.
    """
    if not samples:
        raise ValueError("samples must be non-empty")
    if not rel_tol > 0:
        raise ValueError("rel_tol must be positive")

    def ev(name, *a):
        return evaluate(ocp, name, *a)

    worst = {}

    def note(name, err, k):
        if name not in worst or err > worst[name][0]:
            worst[name] = (err, k)

    for k, (x, u, t) in enumerate(samples):
        x = np.asarray(x, dtype=float)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        t = float(t)
        note("dynamics_jac_x", _rel_err(ev("dynamics_jac_x", x, u, t), _fd_jacobian(lambda z: ev("dynamics", z, u, t), x, eps)), k)
        note("dynamics_jac_u", _rel_err(ev("dynamics_jac_u", x, u, t), _fd_jacobian(lambda z: ev("dynamics", x, z, t), u, eps)), k)
        note("running_cost_grad_x", _rel_err(ev("running_cost_grad_x", x, u, t), _fd_jacobian(lambda z: ev("running_cost", z, u, t), x, eps)), k)
        note("running_cost_grad_u", _rel_err(ev("running_cost_grad_u", x, u, t), _fd_jacobian(lambda z: ev("running_cost", x, z, t), u, eps)), k)
        note("terminal_cost_grad_x", _rel_err(ev("terminal_cost_grad_x", x, t), _fd_jacobian(lambda z: ev("terminal_cost", z, t), x, eps)), k)
        note("terminal_cost_grad_t", _rel_err(ev("terminal_cost_grad_t", x, t), _fd_jacobian(lambda z: ev("terminal_cost", x, z[0]), np.array([t]), eps)), k)
        note("terminal_cost_hess_xx", _rel_err(ev("terminal_cost_hess_xx", x, t), _fd_jacobian(lambda z: ev("terminal_cost_grad_x", z, t), x, eps)), k)
        note("terminal_cost_hess_tx", _rel_err(ev("terminal_cost_hess_tx", x, t), _fd_jacobian(lambda z: ev("terminal_cost_grad_x", x, z[0]), np.array([t]), eps)), k)

    report = ValidationReport(rel_tol=rel_tol, worst=worst, n_samples=len(samples))
    if raise_on_fail and not report.passed:
        name, (err, k) = report.worst_offender()
        raise DerivativeMismatch(name, samples[k], err, rel_tol)
    return report
