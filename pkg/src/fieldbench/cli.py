"""``fieldbench`` command line: run, analyze, census.

Exit status: 0 ok, 1 other package error, 2 invalid config, 3 run failure,
4 log parse or telemetry error, 5 metrics error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
import tempfile
from pathlib import Path

from . import __version__
from .config import BenchmarkConfig, RunManifest, expand_sweep, load_document
from .errors import FieldBenchError, TelemetryError, WorkloadError
from .fieldstore import Census
from .metrics import aggregate, aggregate_csv, build_report
from .telemetry import EventLog
from .workload import make_environment, run_benchmark, run_census

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_RUN, EXIT_PARSE, EXIT_METRICS = 0, 1, 2, 3, 4, 5

_CHOICES = {
    "pattern": ("a", "b"),
    "driver": ("fieldio", "ior"),
    "mode": ("full", "nocontainers", "noindex"),
    "contention": ("shared", "perproc"),
    "backend": ("memory", "sim", "file"),
}
_HELP = {
    "servers": "simulated server nodes",
    "clients": "client nodes (worker groups)",
    "procs_per_client": "workers per client node",
    "ios": "I/Os per worker (IOR: segments per object)",
    "object_size": "bytes per field, e.g. 1MiB",
    "seed": "base seed; repetition r uses seed + r",
    "repetitions": "runs per config",
}


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", metavar="PATH", help="YAML config; list values expand into a sweep")
    group = parser.add_argument_group("config overrides (one flag per config field)")
    for f in dataclasses.fields(BenchmarkConfig):
        flag = "--" + f.name.replace("_", "-")
        group.add_argument(flag, dest=f.name, default=None, choices=_CHOICES.get(f.name),
                           help=_HELP.get(f.name))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fieldbench", description="Object-store field I/O benchmark.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute benchmark runs and write event logs")
    _add_config_flags(run)
    run.add_argument("--out", default="runs", metavar="DIR")

    analyze = sub.add_parser("analyze", help="compute metrics, aggregate tables and figures from logs")
    analyze.add_argument("logs", nargs="+", metavar="LOG", help="log files or directories of *.log")
    analyze.add_argument("--out", default=None, metavar="DIR", help="defaults to the first log's directory")
    analyze.add_argument("--no-plots", action="store_true")

    cen = sub.add_parser("census", help="count containers, Key-Values and Arrays left by a run")
    cen.add_argument("sources", nargs="*", metavar="PATH", help="census snapshots or event logs")
    _add_config_flags(cen)
    return parser


def _overrides(args) -> dict:
    return {f.name: getattr(args, f.name) for f in dataclasses.fields(BenchmarkConfig)
            if getattr(args, f.name, None) is not None}


def _configs(args) -> list[BenchmarkConfig]:
    doc = load_document(args.config) if args.config else {}
    doc.update(_overrides(args))
    return expand_sweep(doc)


def _manifests(configs: list[BenchmarkConfig]) -> list[tuple[RunManifest, str]]:
    out, seen = [], set()
    for config in configs:
        for rep in range(config.repetitions):
            m = RunManifest(config, rep)
            stem = m.stem
            if stem in seen:
                digest = hashlib.md5(json.dumps(config.to_dict(), sort_keys=True).encode()).hexdigest()[:8]
                stem = f"{stem}_{digest}"
            seen.add(stem)
            out.append((m, stem))
    return out


def _gib(value: float) -> str:
    return f"{value / (1 << 30):.3f} GiB/s"


def cmd_run(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for manifest, stem in _manifests(_configs(args)):
        config = manifest.config
        for note in config.grid_warnings():
            print(f"note: {stem}: {note}", file=sys.stderr)
        with tempfile.TemporaryDirectory(prefix="fieldbench-") as scratch:
            env = make_environment(config, scratch)
            log_path = out / f"{stem}.log"
            try:
                log = run_benchmark(config, env, manifest.repetition)
            except WorkloadError as exc:
                if exc.log is not None:
                    exc.log.save(log_path)
                raise
            log.save(log_path)
            counts = run_census(env, config)
        (out / f"{stem}.census.json").write_text(json.dumps(counts.as_dict(), sort_keys=True) + "\n")
        report = build_report(log)
        rates = ", ".join(f"{name} {_gib(m.global_timing_bandwidth)}" for name, m in report.phases.items())
        print(f"{stem}: {len(log)} records, {rates} -> {log_path}")
    return EXIT_OK


def _expand_logs(paths: list[str]) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(p.glob("*.log")) + sorted(p.glob("*.log.json")))
        else:
            out.append(p)
    return out


def cmd_analyze(args) -> int:
    logs = _expand_logs(args.logs)
    if not logs:
        raise TelemetryError("no logs to analyze")
    out = Path(args.out) if args.out else logs[0].parent
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for path in logs:
        log = EventLog.load(path)
        report = build_report(log, source=str(path))
        stem = path.name.split(".")[0]
        (out / f"{stem}.metrics.json").write_text(report.to_json() + "\n")
        (out / f"{stem}.metrics.csv").write_text(report.to_csv())
        reports.append((stem, log, report))
    rows = aggregate([r for _, _, r in reports])
    table = aggregate_csv(rows)
    (out / "aggregate.csv").write_text(table)
    sys.stdout.write(table)
    if not args.no_plots:
        from .plotting import plot_bandwidth_scaling, plot_timeline

        plot_bandwidth_scaling(rows, out / "bandwidth.png")
        for stem, log, _ in reports:
            plot_timeline(log, out / f"{stem}.timeline.png")
    print(f"analyzed {len(reports)} log(s) -> {out}", file=sys.stderr)
    return EXIT_OK


def _census_of(path: Path) -> Census:
    if path.name.endswith(".census.json"):
        return Census(**json.loads(path.read_text()))
    snapshot = path.with_name(path.name.split(".")[0] + ".census.json")
    if snapshot.exists():
        return Census(**json.loads(snapshot.read_text()))
    # No snapshot: replay the run from its config echo (deterministic backends only).
    log = EventLog.load(path)
    echo = dict(log.config)
    repetition = echo.pop("repetition", 0)
    config = BenchmarkConfig.from_dict(echo)
    with tempfile.TemporaryDirectory(prefix="fieldbench-") as scratch:
        env = make_environment(config, scratch)
        run_benchmark(config, env, repetition)
        return run_census(env, config)


def cmd_census(args) -> int:
    rows = []
    if args.sources:
        rows = [(src, _census_of(Path(src))) for src in args.sources]
    else:
        for manifest, stem in _manifests(_configs(args)):
            with tempfile.TemporaryDirectory(prefix="fieldbench-") as scratch:
                env = make_environment(manifest.config, scratch)
                run_benchmark(manifest.config, env, manifest.repetition)
                rows.append((stem, run_census(env, manifest.config)))
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(("source", "containers", "key_values", "arrays", "unreferenced_arrays"))
    for source, c in rows:
        writer.writerow((source, c.containers, c.key_values, c.arrays, c.unreferenced_arrays))
    return EXIT_OK


_CATEGORY = {EXIT_CONFIG: "config error", EXIT_RUN: "run failed", EXIT_PARSE: "log error",
             EXIT_METRICS: "metrics error"}
_COMMANDS = {"run": cmd_run, "analyze": cmd_analyze, "census": cmd_census}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except FieldBenchError as exc:
        print(f"{_CATEGORY.get(exc.exit_code, 'error')}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR

if __name__ == "__main__":
    sys.exit(main())
