"""Command-line entry point: ``mfgc run | sweep | stationary | show``.

A scenario is either a ``key = value`` file or a built-in name prefixed
with ``builtin:`` (``builtin:example1``, ``builtin:example2-queue``,
``builtin:example2-constant``).
"""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import sys
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .drift import drift_gradient
from .linalg import KrylovConfig
from .outer import (ContinuationSchedule, NewtonConfig, OuterDivergenceError, OuterState, StageReport,
                    continuation, neighbor_order, newton_outer, stationary_solve)
from .hjb import HjbNewtonError
from .problem import Problem
from .scenarios import ScenarioConfig, example1, example2

log = logging.getLogger("mfgc")

REPORT_HEADER = ["stage", "nu", "lambda", "theta", "c", "L", "grid", "newton_iters", "avg_bicgstab",
                 "final_residual", "seconds"]
SNAPSHOT_FIELDS = ("m", "u", "alpha_abs", "alpha1", "alpha2")

BUILTINS = {
    "example1": example1,
    "example2-queue": lambda: example2("queue"),
    "example2-constant": lambda: example2("constant"),
}

# short parameter names accepted by --vary and --continuation
SHORT_KEYS = {"nu": "model.nu", "lambda": "model.lambda", "theta": "model.theta", "c": "model.c",
              "L": "drift.L", "pi": "perturbation.pi", "a_tilde": "model.a_tilde"}


class CliError(Exception):
    """Bad input detected before any output is written."""


@dataclass
class RunManifest:
    scenario: ScenarioConfig
    out: Path
    snapshots: list
    schedule: tuple = ()  # (dotted key, [values])
    solver: NewtonConfig = field(default_factory=NewtonConfig)

    def __post_init__(self):
        T = self.scenario.domain.T
        bad = [t for t in self.snapshots if not -1e-12 <= t <= T + 1e-12]
        if bad:
            raise CliError(f"snapshot times {bad} outside [0, {T}]")


# ---- inputs ------------------------------------------------------------------------------

def load_scenario(spec: str, sets=()) -> ScenarioConfig:
    cfg = _load(spec)
    if not sets:
        return cfg
    over = {}
    for item in sets:
        if "=" not in item:
            raise CliError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        over[full_key(k.strip())] = v.strip()
    try:
        return cfg.with_overrides(over)
    except (KeyError, ValueError, TypeError) as exc:
        raise CliError(f"--set: {exc}") from exc


def _load(spec: str) -> ScenarioConfig:
    if spec.startswith("builtin:"):
        name = spec[len("builtin:"):]
        if name not in BUILTINS:
            raise CliError(f"unknown built-in scenario {name!r} (choose from {', '.join(BUILTINS)})")
        return BUILTINS[name]()
    path = Path(spec)
    if not path.is_file():
        raise CliError(f"scenario file not found: {spec}")
    try:
        return ScenarioConfig.load(path)
    except (KeyError, ValueError, TypeError) as exc:
        raise CliError(f"{spec}: {exc}") from exc


def full_key(key: str) -> str:
    return SHORT_KEYS.get(key, key)


def parse_assignment(text: str) -> tuple:
    if "=" not in text:
        raise CliError(f"expected key=v1,v2,... got {text!r}")
    key, vals = text.split("=", 1)
    values = [v.strip() for v in vals.split(",") if v.strip()]
    if not values:
        raise CliError(f"no values for {key!r}")
    return full_key(key.strip()), values


def parse_times(text: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise CliError(f"bad snapshot list {text!r}") from exc


def solver_config(cfg: ScenarioConfig, args) -> NewtonConfig:
    s = cfg.solver
    tol = args.tol_outer if args.tol_outer is not None else s.tol_outer
    inner = args.tol_inner if args.tol_inner is not None else s.tol_inner
    mx = args.max_newton if args.max_newton is not None else s.max_newton
    base = NewtonConfig()
    return replace(base, tol=tol, krylov=KrylovConfig(inner, s.max_bicgstab), max_newton=mx,
                   hjb=replace(base.hjb, newton_tol=s.hjb_tol), warmup=s.warmup)


def schedule_from(cfg: ScenarioConfig, args) -> tuple:
    if getattr(args, "continuation", None):
        key, values = parse_assignment(args.continuation)
        for v in values:
            try:
                cfg.with_overrides({key: v})
            except (KeyError, ValueError) as exc:
                raise CliError(f"--continuation {key}={v}: {exc}") from exc
        return key, values
    if cfg.continuation.parameter and cfg.continuation.values:
        return full_key(cfg.continuation.parameter), [str(v) for v in cfg.continuation.values]
    return ()


# ---- solving -----------------------------------------------------------------------------

def _problem_maker(cfg: ScenarioConfig, key: str | None):
    """``value -> Problem`` reusing the kernel table and face layout across stages."""
    base = cfg.build()

    def make(value):
        if key is None:
            return base
        new = cfg.with_overrides({key: str(value)}).build()
        return base.with_changes(**{k: getattr(new, k) for k in new.__dataclass_fields__})

    return make


def solve_config(cfg: ScenarioConfig, schedule: tuple, solver: NewtonConfig, initial: OuterState | None = None):
    """Run the continuation schedule (or a single stage) and return ``(state, stages, problem, error)``."""
    try:
        if not schedule:
            prob = cfg.build()
            state, rep = newton_outer(prob, initial, solver, label=cfg.name)
            return state, [rep], prob, None
        key, values = schedule
        make = _problem_maker(cfg, key)
        state, rep = continuation(ContinuationSchedule(key, values), make, initial, solver)
        return state, rep.stages, make(values[-1]), None
    except OuterDivergenceError as exc:
        rep = exc.report
        return None, rep.stages if hasattr(rep, "stages") else [rep], None, str(exc)
    except HjbNewtonError as exc:
        return None, [], None, str(exc)


def report_row(rep: StageReport, label: str | None = None) -> list:
    p = rep.params
    return [label or rep.label, p.get("nu"), p.get("lambda"), p.get("theta"), p.get("c"), p.get("L"),
            p.get("grid"), rep.newton_iters, f"{rep.avg_bicgstab:.4g}", f"{rep.final_residual:.3e}",
            f"{rep.seconds:.3f}"]


def write_report(path: Path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        w.writerows(rows)


# ---- snapshots ---------------------------------------------------------------------------

def control_field(prob: Problem, u: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Optimal feedback ``alpha = -(grad u / a - lambda theta V)`` at one time level."""
    return -(drift_gradient(u, prob.grid, prob.ham) - prob.ham.lt * V)


def write_field(path: Path, prob: Problem, values: np.ndarray) -> None:
    g = prob.grid
    I, J = np.meshgrid(np.arange(g.nx1), np.arange(g.nx2), indexing="ij")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "x1", "x2", "value"])
        for i, j in zip(I.ravel(), J.ravel()):
            w.writerow([i, j, repr(float(g.x1[i])), repr(float(g.x2[j])), repr(float(values[i, j]))])


def write_slice(outdir: Path, tag: str, prob: Problem, u, m, V) -> list:
    alpha = control_field(prob, u, V)
    fields = dict(m=m, u=u, alpha_abs=np.hypot(alpha[..., 0], alpha[..., 1]), alpha1=alpha[..., 0],
                  alpha2=alpha[..., 1])
    paths = []
    for name in SNAPSHOT_FIELDS:
        p = outdir / f"{name}_{tag}.csv"
        write_field(p, prob, fields[name])
        paths.append(p)
    return paths


def write_snapshots(outdir: Path, prob: Problem, state: OuterState, times: list) -> list:
    outdir.mkdir(parents=True, exist_ok=True)
    g = prob.grid
    paths = []
    for t in times:
        k = g.level_of(t)
        V = state.V[min(k, g.nt - 1)]
        paths += write_slice(outdir, f"t{t:g}", prob, state.u[k], state.m[k], V)
    return paths


def write_summary(path: Path, items: dict) -> None:
    path.write_text("".join(f"{k} = {v}\n" for k, v in items.items()))


# ---- commands ----------------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = load_scenario(args.scenario, args.set)
    times = parse_times(args.snapshots) if args.snapshots else list(cfg.output.snapshots)
    man = RunManifest(cfg, Path(args.out), times, schedule_from(cfg, args), solver_config(cfg, args))
    state, stages, prob, err = solve_config(man.scenario, man.schedule, man.solver)
    man.out.mkdir(parents=True, exist_ok=True)
    write_report(man.out / "report.csv", [report_row(r) for r in stages])
    summary = dict(scenario=cfg.name, converged=err is None, stages=len(stages))
    if err is not None:
        summary["error"] = err
        write_summary(man.out / "summary.txt", summary)
        print(f"error: {err}", file=sys.stderr)
        return 1
    write_snapshots(man.out / "snapshots", prob, state, man.snapshots)
    g = prob.grid
    mass = state.m.reshape(g.nt + 1, -1).sum(axis=1) * g.h1 * g.h2
    summary.update(final_residual=f"{stages[-1].final_residual:.3e}",
                   newton_iters=sum(r.newton_iters for r in stages),
                   mass_initial=repr(float(mass[0])), mass_final=repr(float(mass[-1])),
                   min_m=repr(float(state.m.min())), snapshots=", ".join(f"{t:g}" for t in man.snapshots))
    write_summary(man.out / "summary.txt", summary)
    print(f"{cfg.name}: converged, {summary['newton_iters']} Newton steps, residual {summary['final_residual']}")
    return 0


def _cell_label(keys, combo) -> str:
    return " ".join(f"{k.split('.')[-1]}={v}" for k, v in zip(keys, combo))


def _solve_cell(cfg: ScenarioConfig, keys, combo, schedule, solver, initial):
    """Solve one sweep cell; warm-started cells only solve their final parameters."""
    cell = cfg.with_overrides(dict(zip(keys, combo)))
    state, stages, _, err = solve_config(cell, () if initial is not None else schedule, solver, initial)
    if state is not None:
        state = OuterState(state.f, state.V)
    return state, stages, err


def _row_for(keys, combo, stages, err) -> list:
    label = _cell_label(keys, combo)
    if stages:
        last = stages[-1]
        row = report_row(last, label if err is None else f"{label} [failed]")
        if len(stages) > 1:
            # the cell's cost includes its continuation stages
            row[7] = sum(r.newton_iters for r in stages)
            its = [i for r in stages for i in r.bicgstab_iters]
            row[8] = f"{np.mean(its):.4g}" if its else "0"
            row[10] = f"{sum(r.seconds for r in stages):.3f}"
        return row
    return [f"{label} [failed]"] + [""] * (len(REPORT_HEADER) - 1)


def cmd_sweep(args) -> int:
    cfg = load_scenario(args.scenario, args.set)
    if not args.vary:
        raise CliError("sweep needs at least one --vary key=v1,v2,...")
    axes = [parse_assignment(v) for v in args.vary]
    keys = [k for k, _ in axes]
    for k, vals in axes:
        for v in vals:
            try:
                cfg.with_overrides({k: v})
            except (KeyError, ValueError) as exc:
                raise CliError(f"--vary {k}={v}: {exc}") from exc
    schedule = schedule_from(cfg, args)
    solver = solver_config(cfg, args)
    out = Path(args.out)

    if sorted(keys) == ["model.lambda", "model.theta"]:
        li, ti = keys.index("model.lambda"), keys.index("model.theta")
        lam_vals, th_vals = axes[li][1], axes[ti][1]

        def combo_of(i, j):
            c = [None, None]
            c[li], c[ti] = lam_vals[i], th_vals[j]
            return tuple(c)

        order = [(combo_of(*cell), None if src is None else combo_of(*src))
                 for cell, src in neighbor_order(len(lam_vals), len(th_vals))]
    else:
        order = [(combo, None) for combo in itertools.product(*(v for _, v in axes))]

    results = _run_cells(cfg, keys, order, schedule, solver, args.jobs)
    rows = [_row_for(keys, combo, *results[combo]) for combo, _ in order]
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "report.csv", rows)
    failed = sum(1 for combo, _ in order if results[combo][1] is not None)
    print(f"sweep: {len(order)} cells, {failed} failed")
    return 0


def _cell_task(cfg, keys, combo, schedule, solver, initial):
    state, stages, err = _solve_cell(cfg, keys, combo, schedule, solver, initial)
    return combo, state, stages, err


def _run_cells(cfg, keys, order, schedule, solver, jobs) -> dict:
    """Solve cells respecting warm-start dependencies; returns ``combo -> (stages, error)``."""
    states, results = {}, {}
    deps = dict(order)

    def ready(combo):
        src = deps[combo]
        return src is None or src in results

    def initial_for(combo):
        src = deps[combo]
        return None if src is None else states.get(src)

    pending = [c for c, _ in order]
    if jobs <= 1:
        for combo in pending:
            _, state, stages, err = _cell_task(cfg, keys, combo, schedule, solver, initial_for(combo))
            states[combo], results[combo] = state, (stages, err)
            log.info("cell %s: %s", combo, "ok" if err is None else err)
        return results
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        running = {}
        while pending or running:
            for combo in [c for c in pending if ready(c)]:
                if len(running) >= jobs:
                    break
                pending.remove(combo)
                fut = pool.submit(_cell_task, cfg, keys, combo, schedule, solver, initial_for(combo))
                running[fut] = combo
            done, _ = wait(running, return_when=FIRST_COMPLETED)
            for fut in done:
                running.pop(fut)
                combo, state, stages, err = fut.result()
                states[combo], results[combo] = state, (stages, err)
    return results


def cmd_stationary(args) -> int:
    cfg = load_scenario(args.scenario, args.set)
    solver = solver_config(cfg, args)
    schedule = schedule_from(cfg, args)
    out = Path(args.out)
    state, stages, prob, err = solve_config(cfg, schedule, solver)
    rows = [report_row(r) for r in stages]
    if err is None:
        try:
            res = stationary_solve(prob, solver, args.steady_tol, args.max_cycles, OuterState(state.f, state.V))
        except (OuterDivergenceError, RuntimeError) as exc:
            err = str(exc)
    out.mkdir(parents=True, exist_ok=True)
    if err is not None:
        write_report(out / "report.csv", rows)
        write_summary(out / "summary.txt", dict(scenario=cfg.name, converged=False, error=err))
        print(f"error: {err}", file=sys.stderr)
        return 1
    rows += [report_row(r) for r in res.reports]
    write_report(out / "report.csv", rows)
    snap = out / "snapshots"
    snap.mkdir(exist_ok=True)
    write_slice(snap, "stationary", prob, res.u, res.m, res.V)
    write_summary(out / "summary.txt", dict(
        scenario=cfg.name, converged=True, cycles=res.cycles,
        variation=f"{res.variations[-1]:.3e}",
        **{f"residual_{k}": f"{v:.3e}" for k, v in res.residuals.items()}))
    print(f"{cfg.name}: stationary after {res.cycles} cycles, variation {res.variations[-1]:.3e}")
    return 0


def cmd_show(args) -> int:
    cfg = load_scenario(args.scenario, args.set)
    sys.stdout.write(cfg.to_text())
    return 0


# ---- argument parsing --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tol-outer", type=float, help="outer Newton tolerance on the RMS residual")
    common.add_argument("--tol-inner", type=float, help="BiCGStab relative tolerance")
    common.add_argument("--max-newton", type=int, help="outer Newton step cap per stage")
    common.add_argument("--continuation", metavar="KEY=V1,V2,...",
                        help="continuation schedule, e.g. nu=0.5,0.1,0.05,0.01")
    common.add_argument("--out", default="mfgc-out", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one scenario entry (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mfgc", description="Mean field games of controls solver.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="solve one scenario and write snapshots")
    r.add_argument("scenario")
    r.add_argument("--snapshots", metavar="T1,T2,...", help="snapshot times (default from the scenario)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", parents=[common], help="parameter sweep with one report row per cell")
    s.add_argument("scenario")
    s.add_argument("--vary", action="append", metavar="KEY=V1,V2,...", default=[])
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    st = sub.add_parser("stationary", parents=[common], help="iterate to the stationary regime")
    st.add_argument("scenario")
    st.add_argument("--steady-tol", type=float, default=1e-6)
    st.add_argument("--max-cycles", type=int, default=40)
    st.set_defaults(func=cmd_stationary)

    sh = sub.add_parser("show", help="print the normalized scenario file")
    sh.add_argument("scenario")
    sh.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    sh.set_defaults(func=cmd_show)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
