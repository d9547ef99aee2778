"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 malformed input file, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import warnings
from dataclasses import fields
from fractions import Fraction
from pathlib import Path

from . import __version__
from .alloc import BREAKDOWN, COUNT, evolve_allocation
from .analysis import TESTS, run_test
from .errors import CanEvoError, InvalidConfig, MalformedInput
from .evolve import EvoConfig, FitnessConfig, FitnessEvaluator, coevolve, evolve_tests, normalized_fitness
from .formula import builtin, parse_formula, read_formula_file
from .gen import GenParams, generate_corpus, load_corpus
from .model import AnalysisConfig, Platform, load_message_set, load_task_graph
from .sim import critical_instant_scenario, default_horizon, format_scenario_csv, parse_scenario_csv, simulate

COEVO_KEYS = {"rounds": int, "epochs_tests": int, "epochs_scenarios": int, "top_n": int, "scenario_population": int}
COEVO_DEFAULTS = {"rounds": 2, "epochs_tests": 10, "epochs_scenarios": 10, "top_n": 5, "scenario_population": 40}


def _config_keys():
    keys = {}
    for cls in (GenParams, EvoConfig, FitnessConfig, AnalysisConfig):
        for f in fields(cls):
            keys[f.name] = (cls, f)
    return keys


def _convert(name, text):
    """Typed value for a config key, judged from its default."""
    if name in COEVO_KEYS:
        return COEVO_KEYS[name](text)
    cls, f = _config_keys()[name]
    default = f.default
    if name == "msgs_per_set":
        return None if text.lower() in ("", "none") else int(text)
    if name == "grammar":
        return text
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def read_run_config(path) -> dict:
    """Parse a flat ``key=value`` file; unknown keys are rejected."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MalformedInput(f"cannot read config {path}: {exc.strerror}") from None
    known = set(_config_keys()) | set(COEVO_KEYS)
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MalformedInput(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise MalformedInput(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _convert(key, value)
        except ValueError:
            raise MalformedInput(f"{path}:{lineno}: bad value {value!r} for {key}") from None
    return out


class Effective:
    """Defaults, then config file values, then explicit flags."""

    def __init__(self, subcommand, file_values=None, overrides=None):
        self.subcommand = subcommand
        self.values = {}
        for name, (cls, f) in _config_keys().items():
            if name != "seed":
                self.values[name] = f.default
        self.values["seed"] = 0
        self.values.update(COEVO_DEFAULTS)
        self.values.update(file_values or {})
        self.values.update({k: v for k, v in (overrides or {}).items() if v is not None})

    def build(self, cls):
        names = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in self.values.items() if k in names}
        if cls is EvoConfig and kwargs.get("grammar"):
            try:
                kwargs["grammar"] = Path(kwargs["grammar"]).read_text()
            except OSError as exc:
                raise MalformedInput(f"cannot read grammar {kwargs['grammar']}: {exc.strerror}") from None
        return cls(**kwargs)

    def header(self, relevant=None):
        keys = sorted(self.values) if relevant is None else sorted(relevant)
        lines = [f"canevo {__version__}", f"subcommand={self.subcommand}"]
        lines += [f"{k}={self.values[k]}" for k in keys if k != "seed"]
        lines.append(f"seed={self.values['seed']}")
        return lines


def _names(*classes):
    out = set()
    for cls in classes:
        out |= {f.name for f in fields(cls)}
    return out


def _comment(lines, prefix="#"):
    return "".join(f"{prefix} {ln}\n" for ln in lines)


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _csv_text(header_lines, columns, rows):
    buf = io.StringIO()
    buf.write(_comment(header_lines))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, Fraction):
        return f"{float(v):.10g}"
    if isinstance(v, float):
        return "inf" if math.isinf(v) else f"{v:.3f}"
    return str(v)


# -- subcommands ---------------------------------------------------------------


def cmd_gen_corpus(args, eff):
    params = eff.build(GenParams)
    manifest = generate_corpus(params, args.out, header=eff.header(_names(GenParams)))
    print(f"wrote {len(manifest['files'])} sets, {manifest['total_messages']} messages to {args.out}")


def cmd_analyze(args, eff):
    cfg = eff.build(AnalysisConfig)
    ms = load_message_set(args.input)
    tests = TESTS if args.test == "all" else (args.test,)
    rows = []
    for m in ms:
        for name in tests:
            v = run_test(name, ms, m.id, cfg)
            rows.append([m.id, name, v.kind, "" if v.r is None else v.r, v.iterations])
    _write(args.out, _csv_text(eff.header(_names(AnalysisConfig)) + [f"input={Path(args.input).name}"],
                               ["id", "test", "verdict", "r", "iterations"], rows))


def cmd_simulate(args, eff):
    ms = load_message_set(args.input)
    horizon = args.horizon
    if horizon is None:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            horizon = default_horizon(ms)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    if args.scenario == "critical":
        sc = critical_instant_scenario(ms, horizon)
    else:
        try:
            text = Path(args.scenario).read_text()
        except OSError as exc:
            raise MalformedInput(f"cannot read scenario {args.scenario}: {exc.strerror}") from None
        sc = parse_scenario_csv(text, ms, horizon)
    res = simulate(ms, sc, keep_trace=args.trace is not None)
    header = eff.header(()) + [f"input={Path(args.input).name}", f"scenario={args.scenario}", f"horizon={horizon}"]
    rows = [[m.id, "" if res.watermarks[m.id] is None else res.watermarks[m.id], res.instances[m.id], m.d,
             int(res.watermarks[m.id] is not None and res.watermarks[m.id] > m.d)] for m in ms]
    _write(args.out, _csv_text(header, ["id", "watermark", "instances", "deadline", "missed"], rows))
    if args.trace:
        Path(args.trace).write_text(_csv_text(header, ["id", "instance", "release", "enqueue", "start", "finish"],
                                              res.trace))
    if res.first_miss:
        fm = res.first_miss
        print(f"deadline miss: {fm.msg_id} instance {fm.instance} released at {fm.release}", file=sys.stderr)


def _history_rows(history):
    return [[r.generation, r.best_fitness, f"{r.mean_fitness:.3f}", r.best_formula] for r in history.records]


def cmd_evolve_test(args, eff):
    corpus = load_corpus(args.corpus)
    evo, fc, cfg = eff.build(EvoConfig), eff.build(FitnessConfig), eff.build(AnalysisConfig)
    hist = evolve_tests(corpus, evo, fc, cfg)
    header = eff.header(_names(EvoConfig, FitnessConfig, AnalysisConfig)) + [f"corpus={Path(args.corpus).name}"]
    if args.log:
        Path(args.log).write_text(_csv_text(header, ["generation", "best_fitness", "mean_fitness", "best_formula"],
                                            _history_rows(hist)))
    best = hist.best.render() if hist.best is not None else ""
    _write(args.out, _comment(header, ";") + f"; generation={hist.records[-1].generation} "
           f"fitness={hist.best_fitness}\n{best}\n")
    print(f"best fitness {hist.best_fitness}: {best}", file=sys.stderr)


def cmd_coevolve(args, eff):
    params, evo = eff.build(GenParams), eff.build(EvoConfig)
    fc, cfg = eff.build(FitnessConfig), eff.build(AnalysisConfig)
    v = eff.values
    res = coevolve(params, evo, fc, epochs=(v["epochs_tests"], v["epochs_scenarios"]), rounds=v["rounds"],
                   cfg=cfg, top_n=v["top_n"], scenario_population=v["scenario_population"])
    header = eff.header()
    lines = [f"; fitness={fit}\n{f.render()}\n" for f, fit in zip(res.tests, res.test_fitness)]
    _write(args.out, _comment(header, ";") + "".join(lines))
    if args.log:
        rows = [[rnd, phase, g, best, f"{mean:.3f}", item] for rnd, phase, g, best, mean, item in res.history]
        Path(args.log).write_text(_csv_text(header, ["round", "phase", "generation", "best", "mean", "best_item"], rows))
    if args.scenarios:
        out = Path(args.scenarios)
        out.mkdir(parents=True, exist_ok=True)
        for n, (ps, score) in enumerate(zip(res.scenarios, res.scenario_scores)):
            ms = res.sets[ps.set_index]
            extra = [f"set_index={ps.set_index}", f"refuted_tests={score}"]
            (out / f"scenario_{n:03d}.csv").write_text(format_scenario_csv(ms, ps.scenario, header + extra))
    refuting = sum(1 for s in res.scenario_scores if s)
    print(f"{len(res.tests)} tests, {refuting} refuting scenarios", file=sys.stderr)


def cmd_allocate(args, eff):
    tg = load_task_graph(args.tasks)
    platform = Platform(args.nodes)
    evo, cfg = eff.build(EvoConfig), eff.build(AnalysisConfig)
    hist = evolve_allocation(tg, platform, evo, args.fitness, cfg)
    header = eff.header(_names(EvoConfig, AnalysisConfig)) + [
        f"tasks={Path(args.tasks).name}", f"nodes={args.nodes}", f"fitness={args.fitness}"]
    _write(args.out, _csv_text(header, ["task_id", "node"], [[t.id, g] for t, g in zip(tg.tasks, hist.best)]))
    if args.log:
        rows = [[g, _fmt(best), _fmt(mean), " ".join(map(str, genes))] for g, best, mean, genes in hist.records]
        Path(args.log).write_text(_csv_text(header, ["generation", "best_fitness", "mean_fitness", "best_chromosome"],
                                            rows))
    print(f"best {args.fitness} fitness {_fmt(hist.best_fitness.value)}", file=sys.stderr)


def read_history_best(path) -> str:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MalformedInput(f"cannot read history {path}: {exc.strerror}") from None
    rows = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    reader = csv.DictReader(rows)
    if not reader.fieldnames or "best_formula" not in reader.fieldnames:
        raise MalformedInput(f"{path}: history needs a best_formula column")
    best = None
    for row in reader:
        try:
            key = int(row["best_fitness"])
        except (TypeError, ValueError):
            raise MalformedInput(f"{path}: bad best_fitness {row.get('best_fitness')!r}") from None
        if row["best_formula"] and (best is None or key <= best[0]):
            best = (key, row["best_formula"])
    if best is None:
        raise MalformedInput(f"{path}: no evolved formula recorded")
    return best[1]


def report_rows(corpus, evolved_text, fc, cfg):
    """Rows of the reference-versus-evolved comparison; numbers come from the library API."""
    ev = FitnessEvaluator(corpus, fc, cfg)
    entries = [(f"({k})", builtin(k)) for k in (1, 2, 3, 4)]
    if evolved_text:
        entries.append(("evolved", parse_formula(evolved_text)))
    rows = []
    for label, f in entries:
        s = ev.summary(f)
        rows.append({
            "label": label, "formula": f.render(), "fitness": s["fitness"],
            "normalized": normalized_fitness(f, corpus, fc, cfg, evaluator=ev), "optimistic": s["optimistic"],
            "divergent": s["divergent"], "messages": s["messages"],
        })
    return rows


def cmd_report(args, eff):
    from .plotting import normalized_fitness_chart

    fc, cfg = eff.build(FitnessConfig), eff.build(AnalysisConfig)
    corpus = load_corpus(args.baselines)
    evolved = read_history_best(args.history) if args.history else None
    rows = report_rows(corpus, evolved, fc, cfg)
    header = eff.header(_names(FitnessConfig, AnalysisConfig)) + [f"baselines={Path(args.baselines).name}"]
    csv_path = args.csv or (str(Path(args.svg).with_suffix(".csv")) if args.svg else None)
    cols = ["label", "fitness", "normalized", "optimistic", "divergent", "messages", "formula"]
    text = _csv_text(header, cols, [[r[c] if c != "normalized" else f"{float(r[c]):.6f}" for c in cols]
                                    for r in rows])
    _write(csv_path, text)
    if args.svg:
        normalized_fitness_chart([r["label"] for r in rows], [float(r["normalized"]) for r in rows], args.svg,
                                 optimistic=[r["optimistic"] for r in rows], header=header)
    for r in rows:
        print(f"{r['label']:>8}  normalised={float(r['normalized']):.4f}  optimistic={r['optimistic']}/"
              f"{r['messages']}  divergent={r['divergent']}", file=sys.stderr)


# -- parser --------------------------------------------------------------------


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    p = _Parser(prog="canevo", description="CAN schedulability tests, formula evolution and task allocation.")
    p.add_argument("--version", action="version", version=f"canevo {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--config", help="key=value run configuration file")
        return sp

    sp = add("gen-corpus", cmd_gen_corpus, "generate a seeded message-set corpus")
    sp.add_argument("--sets", dest="n_sets", type=int)
    sp.add_argument("--msgs", dest="msgs_per_set", type=int, help="messages per set (default: spread --total)")
    sp.add_argument("--total", dest="total_msgs", type=int)
    sp.add_argument("--util", dest="target_util", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)

    sp = add("analyze", cmd_analyze, "run response-time tests on a message set")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--test", choices=[*TESTS, "all"], default="all")
    sp.add_argument("--out")

    sp = add("simulate", cmd_simulate, "simulate bus arbitration for one scenario")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--scenario", default="critical", help="'critical' or a scenario CSV")
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--trace")
    sp.add_argument("--out")

    sp = add("evolve-test", cmd_evolve_test, "evolve a response-time formula on a corpus")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--generations", type=int)
    sp.add_argument("--population", type=int)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--out")
    sp.add_argument("--log")

    sp = add("coevolve", cmd_coevolve, "co-evolve formulas and counterexample scenarios")
    sp.add_argument("--corpus-params", dest="corpus_params", help="key=value file with corpus parameters")
    sp.add_argument("--rounds", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--generations", type=int)
    sp.add_argument("--population", type=int)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--out")
    sp.add_argument("--log")
    sp.add_argument("--scenarios", help="directory for the final scenario pool")

    sp = add("allocate", cmd_allocate, "evolve a task-to-node allocation")
    sp.add_argument("--tasks", required=True, help="task graph JSON")
    sp.add_argument("--nodes", type=int, required=True)
    sp.add_argument("--fitness", choices=[COUNT, BREAKDOWN], default=COUNT)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--generations", type=int)
    sp.add_argument("--population", type=int)
    sp.add_argument("--out")
    sp.add_argument("--log")

    sp = add("report", cmd_report, "normalised-fitness comparison of the reference and evolved formulas")
    sp.add_argument("--history", help="history CSV from evolve-test")
    sp.add_argument("--baselines", required=True, help="corpus directory")
    sp.add_argument("--svg", help="figure path (format from extension)")
    sp.add_argument("--csv", help="CSV path (default: figure path with .csv)")
    return p


OVERRIDE_KEYS = ("n_sets", "msgs_per_set", "total_msgs", "target_util", "seed", "generations", "population",
                 "workers", "rounds")


def run_cli(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if not argv:
            raise UsageError("no subcommand given")
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("no subcommand given")
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(str(exc), file=sys.stderr)
        return 1
    try:
        file_values = {}
        for path in (getattr(args, "corpus_params", None), args.config):
            if path:
                file_values.update(read_run_config(path))
        overrides = {k: getattr(args, k, None) for k in OVERRIDE_KEYS}
        eff = Effective(args.command, file_values, overrides)
        args.func(args, eff)
    except InvalidConfig as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (MalformedInput, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: malformed input: {exc}", file=sys.stderr)
        return 2
    except (CanEvoError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
