import argparse
import dataclasses
import logging
import sys
from typing import List, Optional

from src import config, console
from src.analyze import AnalyzeOptions, ColumnSpec, analyze_dataset, render_report
from src.errors import EivError, ParameterError
from src.estimators import ESTIMATOR_TAGS, resolve_tags
from src.manifest import RunManifest, check_collision
from src.scenarios import builtin_scenarios, resolve_scenario
from src.simlab import emit_sample, emit_table, run_scenario_result, sample_frame
from src.store import ResultsStore

logger = logging.getLogger(__name__)

TABLE_CHOICES = ["2", "3", "4", "5", "6", "7", "appendix"]


class UsageParser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; route it through ParameterError (exit 1)."""

    def error(self, message):
        self.print_help(sys.stderr)
        raise ParameterError(message)


def _csv_list(value: str) -> List[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def build_parser() -> UsageParser:
    common = UsageParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Master seed (default: EIV_SEED or the scenario seed)")
    common.add_argument("--threads", type=int, default=None, help="Worker processes (default: EIV_THREADS or CPU count)")
    common.add_argument("--format", choices=["csv", "json"], default="csv")
    common.add_argument("--out", default=None, help="Output file (default: standard output)")
    common.add_argument("--force", action="store_true", help="Overwrite an existing --out file")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")

    parser = UsageParser(prog="main.py", description="Robust errors-in-variables regression: simulations and data analysis")
    sub = parser.add_subparsers(dest="command", parser_class=UsageParser)

    def add_sim_flags(p):
        p.add_argument("--n", type=int, default=None, help="Sample size (replaces the scenario's sizes)")
        p.add_argument("--reps", type=int, default=None, help="Replications")
        p.add_argument("--estimators", type=_csv_list, default=None, help=f"Comma list from {','.join(ESTIMATOR_TAGS)}")
        p.add_argument("--subsets", type=int, default=None, help="Elemental subsets for the MM search")
        p.add_argument("--store", default=None, help="SQLite file receiving every replicate estimate")

    sim = sub.add_parser("simulate", parents=[common], help="Run a scenario (builtin name or JSON file)")
    sim.add_argument("--scenario", required=True)
    sim.add_argument("--sample", action="store_true", help="Export one labelled replication instead of running the scenario")
    sim.add_argument("--rep", type=int, default=0, help="Replication exported by --sample")
    add_sim_flags(sim)

    table = sub.add_parser("table", parents=[common], help="Run a builtin table scenario")
    table.add_argument("table", choices=TABLE_CHOICES)
    add_sim_flags(table)

    ana = sub.add_parser("analyze", parents=[common], help="OLS vs DetMCD with a pairs bootstrap on a CSV file")
    ana.add_argument("--data", required=True)
    ana.add_argument("--response", required=True)
    ana.add_argument("--regressors", type=_csv_list, required=True)
    ana.add_argument("--log", default="all", help="all, none, or a comma list of columns to log")
    ana.add_argument("--boot", type=int, default=None, help="Bootstrap resamples")
    ana.add_argument("--robust", default="DetMCD", help="Robust estimator tag")

    sub.add_parser("list-scenarios", parents=[common], help="List builtin scenarios")

    summ = sub.add_parser("summarize", parents=[common], help="Recompute metrics from a replicate store")
    summ.add_argument("--store", required=True)
    summ.add_argument("--scenario", default=None)
    return parser


def _emit(text: str, args, manifest: Optional[RunManifest], store: Optional[str] = None) -> None:
    """
    Writes to --out (or standard output) and a manifest beside every file
    artifact. Standard output is not an artifact; its reproducing command is logged.
    """
    if args.out is None:
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        logger.info(f"Wrote {args.out}")
    if manifest is None:
        return
    artifacts = [path for path in (args.out, store) if path]
    manifest.finish(*artifacts)
    for path in artifacts:
        manifest.write(path)
    if not artifacts:
        logger.info(f"Reproduce with: {manifest.command}")


def _cmd_simulate(args, settings: config.Settings, argv: List[str]) -> int:
    name = args.scenario if args.command == "simulate" else args.table
    cfg = resolve_scenario(name)
    cfg = cfg.with_overrides(
        n=args.n,
        replications=args.reps if args.reps is not None else settings.reps,
        seed=args.seed if args.seed is not None else settings.seed,
        estimators=args.estimators,
    )
    if args.out:
        check_collision(args.out, args.force)
    manifest = RunManifest.start(argv, cfg.seed, cfg.name, settings.threads)
    if getattr(args, "sample", False):
        console.headline(f"{cfg.name}: replication {args.rep} at n={cfg.sizes[0]}")
        frame = sample_frame(cfg, rep=args.rep)
        metadata = {"scenario": cfg.name, "seed": cfg.seed, "rep": args.rep, "n": cfg.sizes[0]}
        _emit(emit_sample(frame, args.format, metadata=metadata), args, manifest)
        return 0
    console.headline(f"{cfg.name}: {cfg.replications} replications at n={cfg.sizes}")

    store = ResultsStore(args.store) if args.store else None
    try:
        result = run_scenario_result(
            cfg,
            threads=settings.threads,
            n_subsets=args.subsets or settings.n_subsets,
            store=store,
        )
    finally:
        if store is not None:
            store.close()
    _emit(emit_table(result.rows, args.format, metadata=result.metadata), args, manifest, store=args.store)
    return 0


def _cmd_analyze(args, settings: config.Settings, argv: List[str]) -> int:
    spec = ColumnSpec.with_log(args.response, args.regressors, args.log)
    options = AnalyzeOptions(
        n_boot=args.boot or settings.n_boot,
        seed=next(s for s in (args.seed, settings.seed, config.DEFAULT_SEED) if s is not None),
        threads=settings.threads,
        robust=args.robust,
        n_subsets=settings.n_subsets,
    )
    if args.out:
        check_collision(args.out, args.force)
    manifest = RunManifest.start(argv, options.seed, args.data, settings.threads)
    console.headline(f"Analyzing {args.data} ({options.n_boot} bootstrap resamples)")
    report = analyze_dataset(args.data, spec, options)
    _emit(render_report(report, args.format), args, manifest)
    return 0


def _cmd_list(args) -> int:
    for cfg in builtin_scenarios():
        sizes = ",".join(str(n) for n in cfg.sizes)
        print(f"{cfg.name:<10} n={sizes:<10} {','.join(cfg.estimators):<24} {cfg.description}")
    return 0


def _cmd_summarize(args, argv: List[str]) -> int:
    store = ResultsStore(args.store)
    try:
        names = [args.scenario] if args.scenario else store.scenarios()
        rows = []
        for name in names:
            beta, order = None, ESTIMATOR_TAGS
            try:
                cfg = resolve_scenario(name)
                beta, order = cfg.beta, resolve_tags(cfg.estimators)
            except ParameterError:
                logger.debug(f"{name} is not a builtin scenario; assuming unit slopes")
            rows.extend(store.summarize(name, beta=beta, estimator_order=order))
    finally:
        store.close()
    if not rows:
        raise ParameterError(f"No stored estimates in {args.store}" + (f" for {args.scenario}" if args.scenario else ""))
    if args.out:
        check_collision(args.out, args.force)
    seed = rows[0].seed
    manifest = RunManifest.start(argv, seed, ",".join(names))
    _emit(emit_table(rows, args.format, metadata={"source": args.store, "scenarios": names}), args, manifest)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_help(sys.stderr)
        return 1
    try:
        settings = config.Settings.from_env()
        args = parser.parse_args(argv)
        console.setup_logging(args.log_level or settings.log_level)
        if args.threads is not None:
            if args.threads < 1:
                raise ParameterError("--threads must be >= 1")
            settings = dataclasses.replace(settings, threads=args.threads)
        if args.command in ("simulate", "table"):
            return _cmd_simulate(args, settings, argv)
        if args.command == "analyze":
            return _cmd_analyze(args, settings, argv)
        if args.command == "list-scenarios":
            return _cmd_list(args)
        if args.command == "summarize":
            return _cmd_summarize(args, argv)
        parser.print_help(sys.stderr)
        return 1
    except EivError as e:
        console.failure(f"{type(e).__name__}: {e}")
        return e.exit_code
    except KeyboardInterrupt:
        console.failure("Interrupted.")
        return 130
