"""Command line entry point.

    jfnkgw run tc1 --method jfnk --out runs/tc1_jfnk
    jfnkgw compare runs/tc1_nk runs/tc1_jfnk --out tc1_errors.csv
    jfnkgw scenarios

Exit codes: 0 success, 1 usage or config error, 2 solver failure (Newton
nonconvergence under the abort policy, or a non-finite state), 3 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .compare import CompareError, compare_runs, write_compare_csv, write_compare_summary, \
    write_snapshot_csv
from .config import BUILTINS, ConfigError, builtin_names, parse_config, parse_config_text
from .driver import SimulationError, run_simulation
from .io import RunIOError, load_run, prepare_output_dir, run_summary, write_run

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("jfnkgw")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="jfnkgw", description="Groundwater scenarios solved with NK or JFNK.")
    p.add_argument("-v", "--verbose", action="store_true", help="log every time step")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    r = sub.add_parser("run", help="run a scenario and write a run directory")
    r.add_argument("config", help="config file or built-in scenario name")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--method", choices=("nk", "jfnk"), help="override solver.method")
    r.add_argument("--steps", type=int, help="override time.n_steps")
    r.add_argument("--abort-on-nonconvergence", action="store_true",
                   help="stop with exit code 2 at the first step Newton fails")

    c = sub.add_parser("compare", help="compare run B against baseline run A")
    c.add_argument("run_a", help="baseline run directory (normally NK)")
    c.add_argument("run_b", help="run directory to compare")
    c.add_argument("--out", required=True, help="per-node error CSV; summary files go next to it")

    sub.add_parser("scenarios", help="list built-in scenarios")
    return p


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    if args.method:
        cfg = cfg.with_overrides(method=args.method)
    if args.steps is not None:
        cfg = cfg.with_steps(args.steps)
    if args.abort_on_nonconvergence:
        cfg = cfg.with_overrides(on_nonconvergence="abort")
    if cfg.solver.method == "jfnk" and cfg.solver.preconditioner is True:
        raise ConfigError("solver.preconditioner: the jfnk method runs unpreconditioned")
    out = prepare_output_dir(args.out)

    every = 1 if args.verbose else max(1, cfg.n_steps // 10)

    def progress(m, rep):
        if m % every == 0 or m == cfg.n_steps:
            log.info("step %d/%d: %d Newton iterations, %d residual calls", m, cfg.n_steps,
                     rep.newton_iterations, rep.residual_calls)

    log.info("running %s (%s, %d steps) -> %s", args.config, cfg.solver.method, cfg.n_steps, out)
    try:
        art = run_simulation(cfg, progress=progress)
    except SimulationError as exc:
        if exc.artifacts is not None:
            write_run(exc.artifacts, out)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    write_run(art, out)
    s = run_summary(art)
    print(f"{s['steps_completed']} steps, {s['residual_calls']} residual calls, "
          f"median {s['median_newton_iterations']:g} / max {s['max_newton_iterations']} Newton "
          f"iterations, {s['wall_time']:.1f} s; wrote {out}")
    if s["nonconverged_steps"]:
        print(f"warning: Newton did not converge at {len(s['nonconverged_steps'])} step(s): "
              f"{s['nonconverged_steps'][:10]}", file=sys.stderr)
    return EXIT_OK


def _cmd_compare(args) -> int:
    a, b = load_run(args.run_a), load_run(args.run_b)
    rep = compare_runs(a, b)
    out = Path(args.out)
    try:
        write_compare_csv(rep, out)
        stem = out.with_suffix("")
        write_snapshot_csv(rep, f"{stem}_snapshots.csv")
        write_compare_summary(rep, f"{stem}_summary.json")
    except OSError as exc:
        raise RunIOError(f"cannot write {out}: {exc.strerror or exc}") from None
    print(f"max |h_a - h_b| = {rep.final.max_abs:.3e}, max relative error = {rep.final.max_rel:.3e}")
    for step, e in sorted(rep.snapshots.items()):
        print(f"  step {step}: max abs {e.max_abs:.3e}, max rel {e.max_rel:.3e}")
    print(f"residual calls: {rep.residual_calls_a} (a) vs {rep.residual_calls_b} (b); "
          f"call ratio b/a = {rep.call_ratio:.3f}")
    return EXIT_OK


def _cmd_scenarios(args) -> int:
    for name in builtin_names():
        cfg = parse_config_text(BUILTINS[name], name)
        n = cfg.nx * cfg.ny if cfg.model == "fd" else (cfg.nx + 1) * (cfg.ny + 1) * 2
        print(f"{name}\t{cfg.model}\t{n} unknowns\t{cfg.n_steps} steps of {cfg.dt:g}\t{cfg.description}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("jfnkgw: a subcommand is required (run, compare, scenarios)")
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.command == "run" else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    handlers = {"run": _cmd_run, "compare": _cmd_compare, "scenarios": _cmd_scenarios}
    try:
        return handlers[args.command](args)
    except (ConfigError, CompareError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RunIOError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
