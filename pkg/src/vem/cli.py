"""Command-line front end: ``vem solve | verify | list``.

Exit codes: 0 success, 1 argument error, 2 solver error, 3 verification
failure, 4 run finished but the recorded J increased somewhere.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .adjoint import control_gradient, gamma_backward, gamma_direct, transition_tensor
from .errors import VemError
from .numerics import GridFunction, TimeGrid
from .oracles import CheckResult, djdtau_consistency, finite_difference_gradient
from .problems import Scaling, build_example1, build_example2, build_zero_cost, scale_problem
from .solver import (
    COUPLED,
    PROJECTED,
    EvolutionConfig,
    evolve,
    initial_feasible,
    lagrange_form_index,
    performance_index,
)
from .trajectory import to_scaled
from .variational import build_catenary_like, build_dirichlet, euler_lagrange_residual, evolve_functional

log = logging.getLogger("vem")

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_VERIFY, EXIT_ASCENT = 0, 1, 2, 3, 4
ASCENT_SLACK = 1e-9
VERIFY_RECORD_EVERY = 0.1


# ---------------------------------------------------------------------------
# registry


@dataclass(frozen=True)
class Entry:
    name: str
    kind: str  # "ocp" or "variational"
    build: Callable
    defaults: dict = field(default_factory=dict)
    tf_init: Optional[float] = None
    summary: str = ""


def _build_ex1(o):
    return build_example1(x0=o.get("x0"), Q=o.get("Q"), R=o.get("R"), F=o.get("F"))


def _build_ex2(o):
    kw = {}
    if "scaling" in o:
        s = o["scaling"]
        kw["scaling"] = Scaling(state=s["state"], control=s["control"], time=s.get("time", 1.0))
    return build_example2(x0_deg=o.get("x0_deg"), R=o.get("R"), F=o.get("F"), **kw)


EX1_DEFAULTS = dict(gain=2e-2, nodes=61, rtol=1e-3, atol=1e-6, tau_end=300.0)
REGISTRY = {
    e.name: e
    for e in (
        Entry("ex1", "ocp", _build_ex1, EX1_DEFAULTS, summary="double integrator, quadratic cost"),
        Entry(
            "ex2",
            "ocp",
            _build_ex2,
            dict(gain=1.5e-6, gain_tf=1e-4, nodes=51, rtol=1e-3, atol=1e-6, tau_end=300.0, restore_every=10),
            tf_init=25.0,
            summary="homing missile, free terminal time",
        ),
        Entry("zero-cost", "ocp", lambda o: build_zero_cost(), EX1_DEFAULTS, summary="L = 0, phi = 0"),
        Entry(
            "dirichlet",
            "variational",
            lambda o: build_dirichlet(),
            dict(gain=1e-2, nodes=51, rtol=1e-6, atol=1e-9, tau_end=40.0),
            summary="F = y'^2 on [0, 1]",
        ),
        Entry(
            "catenary-like",
            "variational",
            lambda o: build_catenary_like(),
            dict(gain=1e-2, nodes=51, rtol=1e-6, atol=1e-9, tau_end=40.0),
            summary="F = y'^2 + y^2 on [0, 1]",
        ),
    )
}


def registry_rows() -> list:
    rows = []
    for e in REGISTRY.values():
        p = e.build({})
        if e.kind == "ocp":
            rows.append(dict(name=e.name, kind=e.kind, n=p.n, m=p.m, terminal_time=str(p.terminal_time), summary=e.summary))
        else:
            rows.append(dict(name=e.name, kind=e.kind, n=p.n, m=0, terminal_time="Fixed", summary=e.summary))
    return rows


# ---------------------------------------------------------------------------
# argument handling

CONFIG_FLAGS = {
    "nodes": "nodes",
    "gain": "gain",
    "gain_tf": "gain_tf",
    "tau_end": "tau_end",
    "rtol": "rtol",
    "atol": "atol",
    "mode": "mode",
    "restore_every": "restore_every",
    "residual_tol": "residual_tol",
    "record_every": "record_every",
}


class UsageError(Exception):
    pass


def _restore_arg(s: str):
    if s.lower() in ("off", "none", "0"):
        return None
    return int(s)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vem", description="Variation-evolving optimal control solver.")
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--problem", help="registered problem name (see `vem list`)")
        sp.add_argument("--nodes", type=int)
        sp.add_argument("--gain", type=float)
        sp.add_argument("--gain-tf", dest="gain_tf", type=float)
        sp.add_argument("--tf-init", dest="tf_init", type=float)
        sp.add_argument("--tau-end", dest="tau_end", type=float)
        sp.add_argument("--rtol", type=float)
        sp.add_argument("--atol", type=float)
        sp.add_argument("--mode", choices=[COUPLED, PROJECTED])
        sp.add_argument("--restore-every", dest="restore_every", type=_restore_arg, help="step count or 'off'")
        sp.add_argument("--residual-tol", dest="residual_tol", type=float)
        sp.add_argument("--record-every", dest="record_every", type=float)
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--config", type=Path, help="JSON problem/run config or a previous manifest.json")
        sp.add_argument("--json", action="store_true", help="machine-readable stdout")
        sp.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("solve", help="evolve a problem and write trace, snapshots and manifest"))
    common(sub.add_parser("verify", help="run the verification battery on a problem"))
    lp = sub.add_parser("list", help="list registered problems")
    lp.add_argument("--json", action="store_true")
    return p


@dataclass
class RunSpec:
    problem: str
    config: dict
    tf_init: Optional[float]
    overrides: dict

    def canonical(self) -> dict:
        return dict(problem=self.problem, config=self.config, tf_init=self.tf_init, overrides=self.overrides)

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def resolve(args) -> RunSpec:
    """Merge registry defaults, an optional config file and explicit flags (flags win)."""
    file_cfg = {}
    if args.config is not None:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
    name = args.problem or file_cfg.get("problem")
    if name is None:
        raise UsageError("--problem is required")
    if name not in REGISTRY:
        raise UsageError(f"unknown problem {name!r}; registered problems: {', '.join(REGISTRY)}")
    entry = REGISTRY[name]
    cfg = dict(entry.defaults)
    cfg.update(file_cfg.get("config", {}))
    for flag, key in CONFIG_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None or (flag == "restore_every" and flag in _explicit(args)):
            cfg[key] = v
    known = {f.name for f in fields(EvolutionConfig)}
    unknown = set(cfg) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    tf_init = args.tf_init if args.tf_init is not None else file_cfg.get("tf_init", entry.tf_init)
    return RunSpec(name, cfg, tf_init, file_cfg.get("overrides", {}))


def _explicit(args) -> set:
    return getattr(args, "_explicit", set())


# ---------------------------------------------------------------------------
# output


def _num(x) -> str:
    return format(float(x), ".17g")


def write_trace_csv(path: Path, rows) -> None:
    lines = ["tau,J,stationarity,transversality,tf,feas_defect"]
    lines += [",".join(_num(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def write_snapshot_csv(path: Path, t, X, U=None) -> None:
    X = np.atleast_2d(X)
    cols = ["t"] + [f"x{i + 1}" for i in range(X.shape[1])]
    data = [np.asarray(t)[:, None], X]
    if U is not None:
        cols += [f"u{i + 1}" for i in range(U.shape[1])]
        data.append(U)
    M = np.hstack(data)
    lines = [",".join(cols)] + [",".join(_num(v) for v in row) for row in M]
    path.write_text("\n".join(lines) + "\n")


def _monotone(J) -> bool:
    J = np.asarray(J)
    return bool(np.all(np.diff(J) <= ASCENT_SLACK * np.abs(J[:-1])))


# ---------------------------------------------------------------------------
# commands


def _solve_ocp(spec: RunSpec, config: EvolutionConfig, entry: Entry):
    ocp = entry.build(spec.overrides)
    traj0 = initial_feasible(ocp, tf_guess=spec.tf_init, nodes=config.nodes, substeps=config.substeps)
    trace = evolve(ocp, traj0, config)
    rows = trace.as_array()
    snaps = [(s.t, s.X, s.U) for s in trace.snapshots]
    return ocp.scaling, rows, snaps, trace.stop_reason


def _solve_variational(spec: RunSpec, config: EvolutionConfig, entry: Entry):
    prob = entry.build(spec.overrides)
    grid = prob.grid(config.nodes)
    t = grid.nodes
    # endpoint-matching start with one sine mode on top
    line = prob.y0 + np.outer((t - t[0]) / (t[-1] - t[0]), prob.yf - prob.y0)
    y0 = line + 0.5 * np.sin(np.pi * (t - t[0]) / (t[-1] - t[0]))[:, None]
    tr = evolve_functional(prob, GridFunction(grid, y0), config.gain, config.tau_end, config.rtol, config.atol, config.record_every)
    n = len(tr.tau)
    rows = np.column_stack([tr.tau, tr.J, tr.residual, np.zeros(n), np.full(n, prob.tf), np.zeros(n)])
    snaps = [(t, s.values, None) for s in tr.snapshots]
    return None, rows, snaps, "tau_end"


def _checked_config(spec: RunSpec, entry: Entry) -> EvolutionConfig:
    try:
        config = EvolutionConfig(**spec.config)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if entry.kind == "ocp":
        ocp = entry.build(spec.overrides)
        if spec.tf_init is None and ocp.free_tf:
            raise UsageError("--tf-init is required for free terminal time")
        if spec.tf_init is not None and not spec.tf_init > ocp.t0:
            raise UsageError(f"--tf-init must exceed t0 = {ocp.t0:g}")
    return config


def cmd_solve(args) -> int:
    spec = resolve(args)
    entry = REGISTRY[spec.problem]
    config = _checked_config(spec, entry)
    out = args.out or Path("runs") / spec.problem
    out.mkdir(parents=True, exist_ok=True)
    t_start = time.perf_counter()
    try:
        run = _solve_ocp if entry.kind == "ocp" else _solve_variational
        scaling, rows, snaps, stop = run(spec, config, entry)
    except VemError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    elapsed = time.perf_counter() - t_start

    write_trace_csv(out / "trace.csv", rows)
    for k, (t, X, U) in enumerate(snaps):
        write_snapshot_csv(out / f"snapshot_{k:05d}.csv", t, X, U)
    manifest = dict(
        spec.canonical(),
        config=config.to_dict(),
        scaling=scaling.to_dict() if scaling is not None else None,
        version=__version__,
        config_hash=spec.digest(),
        snapshot_tau=[float(r[0]) for r in rows],
    )
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

    last = rows[-1]
    monotone = _monotone(rows[:, 1])
    summary = dict(
        problem=spec.problem,
        J=_num(last[1]),
        stationarity=_num(last[2]),
        transversality=_num(last[3]),
        tf=_num(last[4]),
        tau=_num(last[0]),
        stop=stop,
        monotone=monotone,
        seconds=round(elapsed, 2),
        out=str(out),
    )
    if args.json:
        print(json.dumps(summary))
    else:
        print(
            f"{spec.problem}: J={summary['J']} stationarity={summary['stationarity']} "
            f"transversality={summary['transversality']} tf={summary['tf']} tau={summary['tau']} "
            f"stop={stop} monotone={monotone} ({elapsed:.1f}s) -> {out}"
        )
    return EXIT_OK if monotone else EXIT_ASCENT


def _n_model(nodes: int, ref: int = 61) -> float:
    """Tolerance multiplier for second-order discretization errors at ``nodes``."""
    return max(1.0, ((ref - 1) / (nodes - 1)) ** 2)


def _rel_linf(a, b) -> float:
    den = max(np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / den) if np.max(np.abs(a - b)) > 0 else 0.0


def verify_ocp(spec: RunSpec, config: EvolutionConfig, entry: Entry) -> list:
    ocp = entry.build(spec.overrides)
    sc = scale_problem(ocp)
    N = config.nodes
    traj = to_scaled(initial_feasible(ocp, tf_guess=spec.tf_init, nodes=N), ocp.scaling)
    checks = []
    model = _n_model(N)

    gb = gamma_backward(sc, traj)
    phi = transition_tensor(sc, traj)
    gd = gamma_direct(sc, traj, phi)
    gmax = float(np.max(np.abs(gb.values)))
    diff = float(np.max(np.abs(gd.values - gb.values)))
    checks.append(CheckResult("gamma_equivalence", diff, 1e-3 * gmax * model, diff <= 1e-3 * gmax * model, f"max|gamma|={gmax:.6g}"))
    ide = phi.identity_error()
    checks.append(CheckResult("transition_identity", ide, 1e-12, ide <= 1e-12))
    comp = phi.composition_error()
    checks.append(CheckResult("transition_composition", comp, 1e-6, comp <= 1e-6))

    g = control_gradient(sc, traj, gb).values
    fd = np.array([finite_difference_gradient(sc, traj, i, 1e-3) for i in range(1, N - 1)])
    floor = 1e-8 + 1e-3 * float(np.max(np.abs(g)))
    rel = float(np.max(np.abs(fd - g[1:-1]) / np.maximum(np.abs(g[1:-1]), floor)))
    checks.append(CheckResult("fd_gradient", rel, 1e-2 * model, rel <= 1e-2 * model))

    J = performance_index(sc, traj)
    JL = lagrange_form_index(sc, traj)
    lag = abs(J - JL) / max(abs(J), 1.0)
    checks.append(CheckResult("lagrange_form", lag, 1e-3 * model, lag <= 1e-3 * model, f"J={J:.10g} lagrange={JL:.10g}"))

    # centered slopes of J need dense samples; 0.5 leaves a ~20% sampling error early on
    run_cfg = dict(spec.config)
    run_cfg.setdefault("record_every", VERIFY_RECORD_EVERY)
    traces = {}
    for mode, base in ((COUPLED, run_cfg), (PROJECTED, spec.config)):
        cfg = EvolutionConfig(**dict(base, mode=mode))
        traces[mode] = evolve(ocp, initial_feasible(ocp, tf_guess=spec.tf_init, nodes=N), cfg)
    tr = traces[COUPLED]
    if len(tr.tau) >= 3:
        checks.extend(djdtau_consistency(ocp, tr, EvolutionConfig(**run_cfg)).checks)
    else:
        # already stationary at the start: nothing moves, so there is no slope to compare
        checks.append(CheckResult("djdtau_slope_match", 0.0, 0.05, tr.stop_reason == "converged", f"stopped at tau={tr.tau[-1]:g}"))
    mono = max(0.0, float(np.max(np.diff(tr.J) / np.maximum(np.abs(tr.J[:-1]), 1e-300))))
    checks.append(CheckResult("descent", mono, ASCENT_SLACK, mono <= ASCENT_SLACK))
    uc, up = traces[COUPLED].final.U, traces[PROJECTED].final.U
    agree = _rel_linf(uc, up)
    checks.append(CheckResult("coupled_vs_projected", agree, 1e-2, agree <= 1e-2))
    return checks


def verify_variational(spec: RunSpec, config: EvolutionConfig, entry: Entry) -> list:
    prob = entry.build(spec.overrides)
    checks = []
    a, b = prob.y0, prob.yf
    if prob.name == "dirichlet":
        extremal = lambda t: a + np.outer(t, b - a)  # noqa: E731
    else:
        extremal = lambda t: np.outer(np.sinh(1 - t) / np.sinh(1.0), a) + np.outer(np.sinh(t) / np.sinh(1.0), b)  # noqa: E731
    res = []
    for N in (config.nodes, 2 * config.nodes - 1):
        grid = prob.grid(N)
        res.append(float(np.max(np.abs(euler_lagrange_residual(prob, GridFunction(grid, extremal(grid.nodes))).values))))
    if res[0] < 1e-10:
        checks.append(CheckResult("extremal_residual", res[0], 1e-10, True))
    else:
        ratio = res[0] / max(res[1], 1e-300)
        checks.append(CheckResult("extremal_residual_order", ratio, 3.0, 3.0 <= ratio <= 5.0, "ratio when N-1 doubles"))
    grid = prob.grid(config.nodes)
    t = grid.nodes
    y0 = extremal(t) + 0.5 * np.sin(np.pi * t)[:, None]
    tr = evolve_functional(prob, GridFunction(grid, y0), config.gain, min(config.tau_end, 10.0), config.rtol, config.atol, config.record_every)
    J = np.asarray(tr.J)
    mono = max(0.0, float(np.max(np.diff(J) / np.abs(J[:-1]))))
    checks.append(CheckResult("descent", mono, ASCENT_SLACK, mono <= ASCENT_SLACK))
    return checks


def cmd_verify(args) -> int:
    spec = resolve(args)
    entry = REGISTRY[spec.problem]
    config = _checked_config(spec, entry)
    try:
        checks = (verify_ocp if entry.kind == "ocp" else verify_variational)(spec, config, entry)
    except VemError as exc:
        print(f"solver error during verification: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    report = dict(problem=spec.problem, nodes=config.nodes, checks=[c.to_dict() for c in checks], passed=all(c.passed for c in checks))
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "verify.json").write_text(json.dumps(report, indent=2) + "\n")
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        for c in checks:
            print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.value:.3e} (bound {c.bound:.3e}) {c.detail}".rstrip())
    if not report["passed"]:
        failing = ", ".join(c.name for c in checks if not c.passed)
        print(f"verification failed: {failing}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_list(args) -> int:
    rows = registry_rows()
    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        for r in rows:
            print(f"{r['name']:<14} {r['kind']:<12} n={r['n']} m={r['m']} {r['terminal_time']:<6} {r['summary']}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    args._explicit = {a.lstrip("-").replace("-", "_").split("=")[0] for a in argv if a.startswith("--")}
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(name)s: %(message)s")
    handlers = {"solve": cmd_solve, "verify": cmd_verify, "list": cmd_list}
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
