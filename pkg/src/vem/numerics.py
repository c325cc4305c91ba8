"""Grid, interpolation, quadrature and ODE kernels.

Everything here is pure: functions take arrays and return new arrays.
Node-sampled data is stored row-per-node, i.e. ``values.shape == (N, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import IndexOutOfRange, NonFiniteState, OutOfDomain, StepSizeUnderflow

__all__ = [
    "TimeGrid",
    "GridFunction",
    "integrate_fixed_rk4",
    "linear_rk4_propagators",
    "sweep_linear",
    "stage_samples",
    "integrate_adaptive",
    "AdaptiveResult",
    "trapezoid_integral",
    "trapezoid_weights",
    "sample_linear",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = t0 + sigma_i (tf - t0)`` with ``sigma_i = i/(N-1)``."""

    t0: float
    tf: float
    n_nodes: int

    def __post_init__(self):
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 2:
            raise ValueError(f"TimeGrid needs at least 2 nodes, got {self.n_nodes}")
        if not np.isfinite(self.tf) or not self.tf > self.t0:
            raise ValueError(f"TimeGrid needs tf > t0, got t0={self.t0}, tf={self.tf}")
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "tf", float(self.tf))
        object.__setattr__(self, "n_nodes", int(self.n_nodes))

    @property
    def sigma(self) -> np.ndarray:
        return np.arange(self.n_nodes) / (self.n_nodes - 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.t0 + self.sigma * (self.tf - self.t0)

    @property
    def step(self) -> float:
        return (self.tf - self.t0) / (self.n_nodes - 1)

    def with_tf(self, tf: float) -> "TimeGrid":
        return TimeGrid(self.t0, tf, self.n_nodes)


@dataclass(frozen=True)
class GridFunction:
    """Node samples of a vector-valued function of time."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != self.grid.n_nodes:
            raise ValueError(
                f"values shape {v.shape} does not match grid with {self.grid.n_nodes} nodes"
            )
        if not np.all(np.isfinite(v)):
            bad = np.argwhere(~np.isfinite(v))[0]
            raise NonFiniteState(self.grid.nodes[bad[0]], int(bad[1]), "GridFunction")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.grid.n_nodes


def _check_finite(y, t, where):
    if not np.all(np.isfinite(y)):
        comp = int(np.flatnonzero(~np.isfinite(np.ravel(y)))[0])
        raise NonFiniteState(t, comp, where)


def integrate_fixed_rk4(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0,
    grid: TimeGrid,
    substeps: int = 1,
    backward: bool = False,
) -> GridFunction:
    """Classical RK4 on ``grid`` with ``substeps`` equal steps per interval.

    With ``backward=True`` the initial value is taken at ``grid.tf`` and the
    step is negated; the returned samples are still in forward node order.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    y = np.array(y0, dtype=float).ravel()
    _check_finite(y, grid.tf if backward else grid.t0, "initial value")
    t_nodes = grid.nodes
    n = grid.n_nodes
    out = np.empty((n, y.size))
    order = range(n - 1, 0, -1) if backward else range(n - 1)
    idx0 = n - 1 if backward else 0
    out[idx0] = y
    for i in order:
        j = i - 1 if backward else i + 1
        ta, tb = t_nodes[i], t_nodes[j]
        h = (tb - ta) / substeps
        for k in range(substeps):
            t = ta + k * h if k else ta
            k1 = rhs(t, y)
            k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
            k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
            t_end = tb if k == substeps - 1 else t + h
            k4 = rhs(t_end, y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            _check_finite(y, t_end, "integrate_fixed_rk4")
        out[j] = y
    return GridFunction(grid, out)


def stage_samples(values: np.ndarray, substeps: int = 1, backward: bool = False) -> np.ndarray:
    """Piecewise-linear samples of node data at the RK4 stage times.

    Returns shape ``(S, 3, d)`` with ``S = (N-1)*substeps``; the three entries
    are the start, midpoint and end of each step, in integration order.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    k = np.arange(substeps)
    fr = np.stack([k / substeps, (k + 0.5) / substeps, (k + 1) / substeps], axis=1)
    if backward:
        v = v[::-1]
    a = v[:-1, None, None, :]
    b = v[1:, None, None, :]
    s = a + (b - a) * fr[None, :, :, None]
    return s.reshape(-1, 3, v.shape[1])


def linear_rk4_propagators(A, c, h):
    """One-step RK4 maps for ``y' = A(t) y + c(t)``.

    ``A`` holds the coefficient at the stage points of each step, shape
    ``(S, 3, n, n)`` for (start, midpoint, end) or ``(S, 4, n, n)`` when the
    two midpoint stages differ. ``c`` is the forcing at the same points,
    ``(S, k, n)`` for a vector or ``(S, k, n, p)`` for ``p`` forcing columns,
    or None. Returns ``(M, D)`` with the RK4 step exactly
    ``y_next = M[s] @ y + D[s]``.
    """
    A = np.asarray(A, dtype=float)
    S, k, n, _ = A.shape
    if k == 3:
        A = A[:, [0, 1, 1, 2]]
    if c is None:
        c = np.zeros((S, 4, n))
    c = np.asarray(c, dtype=float)
    if c.shape[1] == 3:
        c = c[:, [0, 1, 1, 2]]
    vec = c.ndim == 3
    if vec:
        c = c[..., None]
    A1, A2, A3, A4 = (A[:, j] for j in range(4))
    c1, c2, c3, c4 = (c[:, j] for j in range(4))
    K1, e1 = A1, c1
    K2 = A2 + 0.5 * h * (A2 @ K1)
    e2 = 0.5 * h * (A2 @ e1) + c2
    K3 = A3 + 0.5 * h * (A3 @ K2)
    e3 = 0.5 * h * (A3 @ e2) + c3
    K4 = A4 + h * (A4 @ K3)
    e4 = h * (A4 @ e3) + c4
    M = np.eye(n) + (h / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
    D = (h / 6.0) * (e1 + 2.0 * e2 + 2.0 * e3 + e4)
    return M, (D[..., 0] if vec else D)


def sweep_linear(M, d, y0, substeps: int = 1) -> np.ndarray:
    """Apply step maps ``y <- M[k] @ y + d[k]`` in sequence.

    Returns the value after every ``substeps`` steps (first row is ``y0``).
    The recurrence is evaluated as a log-depth prefix scan over the affine
    maps, so the cost is a handful of batched products rather than one
    small product per step; results match the sequential loop to rounding.
    """
    M = np.asarray(M, dtype=float)
    A = M.copy()
    c = np.array(d, dtype=float)
    y0 = np.array(y0, dtype=float).ravel()
    P = A.shape[0]
    s = 1
    while s < P:
        # prefix[k] <- step[k] o prefix[k - s]
        c[s:] = np.einsum("kij,kj->ki", A[s:], c[:-s]) + c[s:]
        A[s:] = A[s:] @ A[:-s]
        s *= 2
    ys = np.empty((P + 1, y0.size))
    ys[0] = y0
    ys[1:] = A @ y0 + c
    out = ys[::substeps]
    _check_finite(out, float("nan"), "sweep_linear")
    return out


# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)


@dataclass
class AdaptiveResult:
    y: np.ndarray
    tau: float
    steps: list  # accepted (tau, h, err_norm)
    h_next: float
    n_rejected: int = 0
    n_rhs: int = 0


def _initial_step(rhs, t, y, f0, span, rtol, atol):
    scale = atol + rtol * np.abs(y)
    d0 = np.max(np.abs(y) / scale)
    d1 = np.max(np.abs(f0) / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = rhs(t + h0, y + h0 * f0)
    d2 = np.max(np.abs(f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, span)


def integrate_adaptive(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0,
    span,
    rtol: float = 1e-3,
    atol: float = 1e-6,
    observer: Optional[Callable[[float, np.ndarray], Optional[np.ndarray]]] = None,
    h0: Optional[float] = None,
    max_steps: int = 1_000_000,
) -> AdaptiveResult:
    """Dormand-Prince 5(4) with per-component error control.

    A step is accepted when ``|err_i| <= atol + rtol*max(|y_i|, |y_new_i|)`` for
    all components. ``observer(tau, y)`` is called after each accepted step; if
    it returns an array, that array replaces the current state (used for
    projections such as feasibility restoration).
    """
    ta, tb = float(span[0]), float(span[1])
    if not (rtol > 0 and atol > 0):
        raise ValueError("rtol and atol must be positive")
    if not tb > ta:
        raise ValueError("span must satisfy tau_b > tau_a")
    y = np.array(y0, dtype=float).ravel()
    _check_finite(y, ta, "initial value")
    t = ta
    f = np.asarray(rhs(t, y), dtype=float)
    n_rhs = 1
    _check_finite(f, t, "rhs")
    h_min = (tb - ta) * 1e-14
    if h0 is None:
        h = _initial_step(rhs, t, y, f, tb - ta, rtol, atol)
        n_rhs += 1
    else:
        h = min(float(h0), tb - ta)
    steps = []
    n_rej = 0
    ks = np.empty((7, y.size))
    while t < tb:
        if len(steps) >= max_steps:
            raise StepSizeUnderflow(t, h)
        last = False
        if t + h >= tb or t + 1.01 * h >= tb:
            h_try = tb - t
            last = True
        else:
            h_try = h
        if h_try < h_min:
            raise StepSizeUnderflow(t, h_try)
        ks[0] = f
        for s in range(1, 7):
            ys = y + h_try * (np.asarray(_DP_A[s]) @ ks[:s])
            ks[s] = rhs(t + _DP_C[s] * h_try, ys)
            n_rhs += 1
        y_new = y + h_try * (_DP_B @ ks)
        err = h_try * (_DP_E @ ks)
        if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(err))):
            # shrink hard; give up only at the floor
            h = 0.25 * h_try
            n_rej += 1
            if h < h_min:
                _check_finite(y_new, t + h_try, "integrate_adaptive")
            continue
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        en = float(np.max(np.abs(err) / sc))
        if en <= 1.0:
            t = tb if last else t + h_try
            y = y_new
            f = ks[6].copy()  # FSAL
            steps.append((t, h_try, en))
            if en == 0.0:
                # the embedded pair agrees exactly: nothing limits the next step
                h = max(tb - t, h_try)
            else:
                h = h_try * min(5.0, max(0.2, 0.9 * en ** (-0.2)))
            if observer is not None:
                repl = observer(t, y)
                if repl is not None:
                    y = np.array(repl, dtype=float).ravel()
                    f = np.asarray(rhs(t, y), dtype=float)
                    n_rhs += 1
        else:
            n_rej += 1
            h = h_try * max(0.1, 0.9 * en ** (-0.2))
            if h < h_min:
                raise StepSizeUnderflow(t, h)
    return AdaptiveResult(y=y, tau=t, steps=steps, h_next=h, n_rejected=n_rej, n_rhs=n_rhs)


def trapezoid_weights(grid: TimeGrid) -> np.ndarray:
    w = np.full(grid.n_nodes, grid.step)
    w[0] = w[-1] = 0.5 * grid.step
    return w


def trapezoid_integral(gf: GridFunction, from_index: int = 0, to_index: Optional[int] = None) -> np.ndarray:
    """Composite trapezoid over nodes ``from_index..to_index`` (inclusive)."""
    n = gf.grid.n_nodes
    if to_index is None:
        to_index = n - 1
    if not (0 <= from_index <= to_index <= n - 1):
        raise IndexOutOfRange(f"invalid node range ({from_index}, {to_index}) for N={n}")
    v = gf.values[from_index : to_index + 1]
    if len(v) < 2:
        return np.zeros(gf.dim)
    h = gf.grid.step
    return h * (v.sum(axis=0) - 0.5 * (v[0] + v[-1]))


def sample_linear(gf: GridFunction, t) -> np.ndarray:
    """Piecewise-linear interpolation of node data; exact at the nodes.

    Accepts a scalar (returns a d-vector) or an array of times (returns
    ``(len(t), d)``).
    """
    g = gf.grid
    tol = 1e-9 * (g.tf - g.t0)
    ts = np.asarray(t, dtype=float)
    if np.any(ts < g.t0 - tol) or np.any(ts > g.tf + tol):
        raise OutOfDomain(f"t={t} outside [{g.t0}, {g.tf}]")
    s = (np.clip(ts, g.t0, g.tf) - g.t0) / g.step
    i = np.clip(np.floor(s).astype(int), 0, g.n_nodes - 2)
    a = (s - i)[..., None]
    v = gf.values
    out = v[i] * (1.0 - a) + v[i + 1] * a
    # snap exactly onto nodes
    on_node = np.isclose(s, np.round(s), rtol=0, atol=1e-12)
    if np.any(on_node):
        out = np.where(on_node[..., None], v[np.round(s).astype(int)], out)
    return out
