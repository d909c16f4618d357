"""``cwcsim`` command line.

Exit codes: 0 success, 1 model or usage error, 2 I/O error, 3 simulation
failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import output
from .dsl import ModelError, ModelSource, expand, parse, suggest
from .engine import ENGINES, GENERATOR, NonFiniteTau, SimConfig, select_engine, simulate
from .network import GENERATOR as NETWORK_GENERATOR
from .library import BUILTINS, UnknownBuiltin, default_thresholds, describe_builtin, load_builtin
from .patterns import multiplicity
from .replicas import ReplicaPlan, default_workers, run_replicas
from .terms import collect_compartments, resolve, walk

OK, MODEL_ERROR, IO_ERROR, SIM_ERROR = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(MODEL_ERROR, f"{self.prog}: {message}")


def _key_value(text: str) -> tuple[str, float]:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(f"expected NAME=VALUE, got {text!r}")
    try:
        return key.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"value of {key!r} is not a number: {value!r}") from None


def _positive_int(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be positive: {n}")
    return n


def _seed(text: str) -> int:
    try:
        n = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= n < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cwcsim", description="Stochastic simulation of CWC models.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def source(p):
        g = p.add_mutually_exclusive_group(required=True)
        g.add_argument("--builtin", metavar="NAME", help=f"one of {', '.join(BUILTINS)}")
        g.add_argument("--model", metavar="PATH", help="a .cwc model file")
        p.add_argument("--param", action="append", type=_key_value, default=[], metavar="K=V",
                       help="override a model parameter (repeatable)")

    p = sub.add_parser("run", help="simulate one trajectory or a batch of replicas")
    source(p)
    p.add_argument("--t-end", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--seed", type=_seed)
    p.add_argument("--max-events", type=_positive_int)
    p.add_argument("--replicas", type=_positive_int, help="run N seeded replicas and summarise")
    p.add_argument("--workers", type=_positive_int, help="parallel workers (default $CWC_SIM_WORKERS or 1)")
    p.add_argument("--crossing", action="append", type=_key_value, default=None, metavar="OBS=THRESHOLD",
                   help="report the first time OBS reaches THRESHOLD (repeatable)")
    p.add_argument("--engine", choices=ENGINES, default="auto")
    p.add_argument("--out", metavar="DIR", help="write CSV files and metadata here (default: CSV on stdout)")
    p.add_argument("--emit-replicas", action="store_true", help="also write replica_<i>.csv files")
    p.add_argument("--plot", action="store_true", help="render PNG figures into --out (needs matplotlib)")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("validate", help="parse, expand and check a model")
    source(p)

    p = sub.add_parser("inspect", help="list the match sites of one rule")
    source(p)
    p.add_argument("--rule", required=True)
    p.add_argument("--state", metavar="FILE", help="term to inspect instead of the initial term")

    sub.add_parser("builtin-list", help="list the bundled models")
    return parser


# -- helpers -------------------------------------------------------------

def load_model(args):
    params = dict(args.param)
    if args.builtin is not None:
        try:
            return load_builtin(args.builtin, params)
        except UnknownBuiltin as exc:
            raise CliError(MODEL_ERROR, str(exc)) from None
    try:
        src = ModelSource.from_path(args.model)
    except OSError as exc:
        raise CliError(IO_ERROR, f"cannot read {args.model}: {exc.strerror or exc}") from None
    except UnicodeDecodeError as exc:
        raise CliError(IO_ERROR, f"{args.model} is not UTF-8: {exc}") from None
    return expand(parse(src), params)


def _config(args, model) -> SimConfig:
    d = model.defaults
    t_end = args.t_end if args.t_end is not None else d.get("t_end")
    dt = args.dt if args.dt is not None else d.get("dt")
    if t_end is None or dt is None:
        raise CliError(MODEL_ERROR, "no t_end/dt: pass --t-end and --dt or add a sim statement")
    seed = args.seed if args.seed is not None else int(d.get("seed", 0))
    kw = {}
    if args.max_events is not None:
        kw["max_events"] = args.max_events
    elif "max_events" in d:
        kw["max_events"] = int(d["max_events"])
    try:
        return SimConfig(float(t_end), float(dt), seed, **kw)
    except ValueError as exc:
        raise CliError(MODEL_ERROR, str(exc)) from None


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(IO_ERROR, f"cannot create {out}: {exc.strerror or exc}") from None
    return out


def _write(path: Path, writer, *args) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer(fh, *args)
    except OSError as exc:
        raise CliError(IO_ERROR, f"cannot write {path}: {exc.strerror or exc}") from None


def _say(args, message: str) -> None:
    if not getattr(args, "quiet", False):
        print(message, file=sys.stderr)


# -- commands ------------------------------------------------------------

def cmd_validate(args) -> int:
    model = load_model(args)
    _say(args, f"{model.name}: ok ({len(model.rules)} rules, {len(model.observables)} observables)")
    return OK


def cmd_builtin_list(args) -> int:
    for name in BUILTINS:
        d = describe_builtin(name)
        params = ", ".join(d.parameters)
        print(f"{name}\t{d.summary} (time unit: {d.time_unit}; parameters: {params})")
    return OK


def _chain_labels(system) -> dict:
    labels = {}
    for path, comp in walk(system):
        parent = labels.get(path[:-1], "")
        labels[path] = f"{parent}/{comp.label}#{comp.uid}" if path else comp.label
    return labels


def cmd_inspect(args) -> int:
    model = load_model(args)
    try:
        rule = model.rule(args.rule)
    except KeyError:
        near = suggest(args.rule, [r.name for r in model.rules])
        hint = f"; did you mean {', '.join(near)}?" if near else ""
        raise CliError(MODEL_ERROR, f"UnknownRule: no rule named {args.rule!r}{hint}") from None
    system = model.init
    if args.state:
        try:
            text = Path(args.state).read_text(encoding="utf-8")
        except OSError as exc:
            raise CliError(IO_ERROR, f"cannot read {args.state}: {exc.strerror or exc}") from None
        system = expand(parse(ModelSource(f"init: {text}", args.state))).init
    labels = _chain_labels(system)
    total = 0
    print(f"rule {rule.name} @{rule.context} rate {rule.rate!r}")
    paths = collect_compartments(system, rule.context)
    for path in paths:
        m = multiplicity(rule.lhs, resolve(system, path).content)
        total += m
        print(f"{labels[path]}\t{m}")
    print(f"sites: {len(paths)}  total multiplicity: {total}  propensity: {rule.rate * total!r}")
    return OK


def cmd_run(args) -> int:
    model = load_model(args)
    config = _config(args, model)
    overrides = dict(args.param)
    if args.plot and not args.out:
        raise CliError(MODEL_ERROR, "--plot needs --out")
    out = _out_dir(args.out) if args.out else None
    try:
        engine, _ = select_engine(model, args.engine)
    except ValueError as exc:
        raise CliError(MODEL_ERROR, str(exc)) from None
    if args.replicas is None:
        return _run_single(args, model, config, overrides, out, engine)
    return _run_batch(args, model, config, overrides, out, engine)


def _run_single(args, model, config, overrides, out, engine) -> int:
    try:
        traj = simulate(model, config, engine=engine)
    except (NonFiniteTau, ArithmeticError, RecursionError) as exc:
        raise CliError(SIM_ERROR, f"simulation failed: {type(exc).__name__}: {exc}") from None
    partial = traj.reason == "event_cap"
    if partial:
        _say(args, f"warning: stopped at the event cap after {traj.events} events (t < {config.t_end})")
    if out is None:
        output.write_trajectory(sys.stdout, traj)
        return OK
    _write(out / "trajectory.csv", output.write_trajectory, traj)
    meta = output.metadata(model, config, overrides=overrides, generator=traj.generator, engine=engine,
                           replicas=1, reason=traj.reason, events=traj.events, partial=partial)
    _write(out / "metadata.json", output.write_metadata, meta)
    if args.plot:
        _plot(out, traj.times, traj.names, traj.rows, None, model.name)
    _say(args, f"wrote {out / 'trajectory.csv'} ({len(traj.rows)} samples, {traj.events} events)")
    return OK


def _run_batch(args, model, config, overrides, out, engine) -> int:
    workers = args.workers or default_workers()
    if args.crossing is not None:
        thresholds = dict(args.crossing)
    else:
        thresholds = default_thresholds(args.builtin) if args.builtin else {}
    try:
        plan = ReplicaPlan(model, args.replicas, config, workers, thresholds,
                           keep_trajectories=bool(args.emit_replicas and out), engine=engine)
    except ValueError as exc:
        raise CliError(MODEL_ERROR, str(exc)) from None

    def progress(done, total):
        if not args.quiet and (done == total or done % max(1, total // 10) == 0):
            print(f"  {done}/{total} replicas", file=sys.stderr)

    result = run_replicas(plan, progress)
    for f in result.failures:
        print(f"replica {f.index} (seed {f.seed}) failed: {f.error}", file=sys.stderr)
    capped = [r.index for r in result.metrics.replicas if r.reason == "event_cap"]
    if capped:
        _say(args, f"warning: replicas {capped} stopped at the event cap")
    if out is None:
        output.write_summary(sys.stdout, result.stats)
    else:
        _write(out / "summary.csv", output.write_summary, result.stats)
        _write(out / "terminal.csv", output.write_terminal, result.metrics)
        for i, traj in sorted(result.trajectories.items()):
            _write(out / f"replica_{i}.csv", output.write_trajectory, traj)
        generator = NETWORK_GENERATOR if engine == "network" else GENERATOR
        meta = output.metadata(model, config, overrides=overrides, generator=generator, engine=engine,
                               replicas=args.replicas, workers=workers, thresholds=thresholds,
                               partial=result.partial, event_capped=capped,
                               failed=[f.index for f in result.failures])
        _write(out / "metadata.json", output.write_metadata, meta)
        if args.plot and not result.stats.empty:
            _plot(out, result.stats.times, result.stats.names, result.stats.mean, result.stats.std(),
                  f"{model.name} (mean of {args.replicas})")
        _say(args, f"wrote {out / 'summary.csv'} and {out / 'terminal.csv'}")
    return SIM_ERROR if result.failures else OK


def _plot(out, times, names, values, spread, title) -> None:
    from .plotting import render
    try:
        for path in render(out, times, names, values, spread, title):
            print(f"figure: {path}", file=sys.stderr)
    except RuntimeError as exc:
        raise CliError(MODEL_ERROR, str(exc)) from None


COMMANDS = {
    "run": cmd_run,
    "validate": cmd_validate,
    "inspect": cmd_inspect,
    "builtin-list": cmd_builtin_list,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except ModelError as exc:
        for d in exc.diagnostics:
            print(str(d), file=sys.stderr)
        return MODEL_ERROR
    except BrokenPipeError:
        return OK


if __name__ == "__main__":
    sys.exit(main())
