"""Command-line interface: simulate, train, detect, evaluate, report.

Exit codes: 0 success, 2 input error, 3 staleness or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from collections import Counter
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from .aggregator import read_reports, write_blocks, write_events, write_timelines
from .config import PipelineConfig, load_config, parse_value
from .detector import BeliefState, DOWN, UNCERTAIN
from .errors import ConfigError, FormatError, ModelError, OutageError, StaleModelError, StructuralError
from .evaluator import (
    ConfusionMatrix,
    evaluate_reports,
    format_metric,
    format_number,
    metrics,
    read_truth,
    write_truth,
)
from .ingest import IngestStats, parse_flow_records, prepare_observations, read_key_file, write_observations
from .pipeline import SWEEP_COLUMNS, detect_blocks, sweep
from .simulator import PRESETS, ScenarioSpec, generate_trace
from .training import DAY, read_model_cache, train_models, write_model_cache

logger = logging.getLogger("passive_outage")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3


class InputError(OutageError):
    """A named input file is missing or unreadable."""


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(path: str | None, what: str) -> Path:
    if path is None:
        raise InputError(f"missing --{what}")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} file not found: {p}")
    return p


def parse_day(text: str) -> float:
    """A UTC date (``2019-01-12``), ISO timestamp, or Unix seconds."""
    try:
        return float(text)
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse day {text!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _config(args) -> PipelineConfig:
    overrides = {}
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = parse_value(value)
    if args.config:
        _require(args.config, "config")
    return load_config(args.config, args.mode, overrides)


def _provenance(cfg: PipelineConfig, inputs: dict[str, Path]) -> list[str]:
    lines = [f"config_sha256={cfg.digest}", f"config={cfg.to_json()}"]
    lines += [f"{name}_sha256={file_digest(path)}" for name, path in sorted(inputs.items())]
    return lines


def _load_observations(args, cfg: PipelineConfig, path: Path, stats: IngestStats):
    key = read_key_file(_require(args.anon_key_file, "anon-key-file")) if args.anon_key_file else None
    with open(path, "rb") as fh:
        parsed = parse_flow_records(fh, args.format)
    stats.lines += parsed.lines
    stats.malformed += parsed.malformed
    return prepare_observations(parsed.records, cfg.mode, key, stats)


def _read_states(path: Path, cfg: PipelineConfig) -> dict:
    import ipaddress

    states = {}
    with open(path) as fh:
        for row in csv.DictReader(l for l in fh if not l.startswith("#")):
            try:
                states[ipaddress.ip_address(row["address"])] = BeliefState.from_belief(
                    float(row["belief"]), cfg.detector,
                )
            except (KeyError, ValueError) as exc:
                raise FormatError(f"bad state file row: {exc}") from exc
    return states


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    if args.scenario:
        spec = ScenarioSpec.load(_require(args.scenario, "scenario"))
    else:
        builder = PRESETS[args.preset]
        spec = builder(seed=args.seed, family=args.family)
    observations, truth = generate_trace(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec_json = json.dumps(spec.to_dict(), sort_keys=True, indent=1)
    header = [f"scenario_sha256={hashlib.sha256(spec_json.encode()).hexdigest()}"]
    (out / "scenario.json").write_text(spec_json + "\n")
    with open(out / "observations.csv", "w") as fh:
        write_observations(observations, fh, header)
    with open(out / "truth.csv", "w") as fh:
        write_truth(truth, fh, header)
    print(f"{len(observations)} observations, {len(truth)} blocks -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    obs_path = _require(args.observations, "observations")
    day = parse_day(args.day)
    stats = IngestStats()
    observations = _load_observations(args, cfg, obs_path, stats)
    models = train_models(observations, day, cfg.training)
    if not models and args.strict:
        raise InputError(f"no observations in the training window of {obs_path}")
    header = _provenance(cfg, {"observations": obs_path}) + [
        f"trained_for={format_number(day)}", f"d_days={cfg.training.d_days}",
    ]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        write_model_cache(models, fh, header)
    n_models = sum(len(m) for m in models.values())
    n_meas = sum(m.measurable for ms in models.values() for m in ms)
    print(f"trained {n_models} addresses ({n_meas} measurable) in {len(models)} blocks -> {out}")
    return EXIT_OK


def _check_staleness(meta: dict, day: float, cfg: PipelineConfig, allow_stale: bool) -> None:
    if "trained_for" not in meta:
        if not allow_stale:
            raise StaleModelError("model cache has no trained_for stamp; use --allow-stale")
        return
    age = day - float(meta["trained_for"])
    d_days = int(meta.get("d_days", cfg.training.d_days))
    if (age < 0 or age > d_days * DAY) and not allow_stale:
        raise StaleModelError(
            f"models trained for {meta['trained_for']} are {age / DAY:.2f} days from the "
            f"detection start; refusing without --allow-stale"
        )


def cmd_detect(args) -> int:
    cfg = _config(args)
    obs_path = _require(args.observations, "observations")
    model_path = _require(args.models, "models")
    day = parse_day(args.day)
    window = (day, day + args.days * DAY)
    with open(model_path) as fh:
        models, meta = read_model_cache(fh)
    _check_staleness(meta, day, cfg, args.allow_stale)
    stats = IngestStats()
    observations = _load_observations(args, cfg, obs_path, stats)
    initial = _read_states(_require(args.initial_state, "initial-state"), cfg) if args.initial_state else None
    result = detect_blocks(observations, models, window, cfg.detector, initial)

    inputs = {"observations": obs_path, "models": model_path}
    if args.initial_state:
        inputs["initial_state"] = Path(args.initial_state)
    header = _provenance(cfg, inputs)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = [result.reports[b] for b in sorted(result.reports)]
    with open(out / "events.csv", "w") as fh:
        write_events(reports, fh, header)
    with open(out / "blocks.csv", "w") as fh:
        write_blocks(reports, fh, header)
    with open(out / "state.csv", "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write("address,belief\n")
        for addr, state in sorted(result.final_states().items(), key=lambda kv: (kv[0].version, int(kv[0]))):
            fh.write(f"{addr},{state.belief!r}\n")
    if args.timelines:
        with open(out / "timelines.csv", "w") as fh:
            write_timelines(reports, fh, header)
    if args.trace:
        with open(out / "trace.csv", "w") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            fh.write("address,bin_start,positive,belief,status\n")
            for addr in sorted(result.address_timelines, key=lambda a: (a.version, int(a))):
                for b in result.address_timelines[addr]:
                    fh.write(f"{addr},{format_number(b.start)},{int(b.positive)},{b.state.belief!r},{b.state.status}\n")
    measurable = sum(r.measurable for r in reports)
    n_down = sum(ev.kind == DOWN for r in reports for ev in r.events)
    print(
        f"blocks={len(reports)} measurable={measurable} down_events={n_down} "
        f"untrained_addresses={len(result.untrained)} dropped={stats.dropped} malformed={stats.malformed}"
    )
    return EXIT_OK


def _emit_rows(columns: Sequence[str], rows, out: str | None, header: Sequence[str]) -> None:
    fh = open(out, "w") if out else sys.stdout
    try:
        for line in header:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)
    finally:
        if out:
            fh.close()


def cmd_evaluate(args) -> int:
    if args.cells:
        try:
            ta, to, fa, fo = (float(v.replace("_", "")) for v in args.cells.split(","))
        except ValueError as exc:
            raise InputError("--cells expects ta,to,fa,fo") from exc
        cm = ConfusionMatrix(ta, to, fa, fo, args.unit)
        ppv, rec, tnr = metrics(cm).formatted()
        print(f"PPV={ppv} recall={rec} TNR={tnr}")
        return EXIT_OK

    cfg = _config(args)
    truth_path = _require(args.truth, "truth")
    with open(truth_path) as fh:
        truth = read_truth(fh)

    if args.sweep:
        param, sep, values = args.sweep.partition("=")
        if not sep or not values:
            raise ConfigError("--sweep expects PARAM=V1,V2,...")
        obs_path = _require(args.observations, "observations")
        day = parse_day(args.day)
        window = (day, day + args.days * DAY)
        stats = IngestStats()
        observations = _load_observations(args, cfg, obs_path, stats)
        rows = sweep(observations, truth, window, cfg, param.strip(), [v.strip() for v in values.split(",")])
        header = _provenance(cfg, {"observations": obs_path, "truth": truth_path})
        _emit_rows(SWEEP_COLUMNS, rows, args.out, header)
        return EXIT_OK

    det_dir = Path(args.detections or "")
    blocks_path = _require(str(det_dir / "blocks.csv"), "detections")
    events_path = _require(str(det_dir / "events.csv"), "detections")
    with open(blocks_path) as bfh, open(events_path) as efh:
        reports = read_reports(bfh, efh)
    windows = {r.window for r in reports.values()}
    if len(windows) != 1:
        raise StructuralError("detection output mixes several windows")
    window = windows.pop()
    report = evaluate_reports(reports, truth, window)
    header = _provenance(cfg, {"blocks": blocks_path, "events": events_path, "truth": truth_path})
    if args.out:
        with open(args.out, "w") as fh:
            report.write_csv(fh, header)
    print(report.summary_text())
    return EXIT_OK


def cmd_report(args) -> int:
    det_dir = Path(args.detections)
    blocks_path = _require(str(det_dir / "blocks.csv"), "detections")
    events_path = _require(str(det_dir / "events.csv"), "detections")
    with open(blocks_path) as bfh, open(events_path) as efh:
        reports = read_reports(bfh, efh)
    measurable = [r for r in reports.values() if r.measurable]
    downs = [ev for r in measurable for ev in r.events if ev.kind == DOWN]
    unknown = [ev for r in measurable for ev in r.events if ev.kind == UNCERTAIN]
    by_block = Counter(ev.block for ev in downs)
    coverage = len(measurable) / len(reports) if reports else None
    print(f"blocks: {len(reports)}  measurable: {len(measurable)}  coverage: {format_metric(coverage)}")
    print(f"down events: {len(downs)} in {len(by_block)} blocks, "
          f"{format_number(sum(ev.duration for ev in downs))} block-seconds down")
    print(f"uncertain periods: {len(unknown)}")
    if args.out:
        # duration distribution of outages, one row per event
        rows = [[str(ev.block), format_number(ev.start), format_number(ev.end), format_number(ev.duration)]
                for ev in sorted(downs, key=lambda e: (e.block, e.start))]
        header = [f"blocks_sha256={file_digest(blocks_path)}", f"events_sha256={file_digest(events_path)}"]
        _emit_rows(("block", "start", "end", "duration"), rows, args.out, header)
    if args.trace and args.address:
        trace_path = _require(args.trace, "trace")
        with open(trace_path) as fh:
            rows = [row for row in csv.DictReader(l for l in fh if not l.startswith("#"))
                    if row["address"] == args.address]
        if not rows:
            raise InputError(f"address {args.address} not in {trace_path}")
        _emit_rows(("bin_start", "positive", "belief", "status"),
                   [[r["bin_start"], r["positive"], r["belief"], r["status"]] for r in rows],
                   args.series_out, [f"trace_sha256={file_digest(trace_path)}"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of flat configuration keys")
    p.add_argument("--mode", choices=("service", "darknet"), help="data-source mode (sets defaults)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")


def _add_ingest_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--observations", help="flow records (CSV or line-JSON)")
    p.add_argument("--format", default="csv", choices=("csv", "jsonl", "line-json"))
    p.add_argument("--anon-key-file", help="key file; host bits are anonymized when given")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="passive-outage", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic trace and its ground truth")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", help="scenario JSON file")
    src.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--family", choices=("v4", "v6"), default="v4")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="build the per-address model cache for one detection day")
    _add_config_args(p)
    _add_ingest_args(p)
    p.add_argument("--day", required=True, help="detection day start (UTC date or Unix seconds)")
    p.add_argument("--out", required=True)
    p.add_argument("--strict", action="store_true", help="fail when the training window is empty")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="detect outages using a model cache")
    _add_config_args(p)
    _add_ingest_args(p)
    p.add_argument("--models", required=True)
    p.add_argument("--day", required=True)
    p.add_argument("--days", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--allow-stale", action="store_true")
    p.add_argument("--initial-state", help="state.csv from the previous run, to carry beliefs over")
    p.add_argument("--timelines", action="store_true", help="also write block timelines")
    p.add_argument("--trace", action="store_true", help="also write per-address belief traces")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="compare detections to ground truth, or sweep a parameter")
    _add_config_args(p)
    _add_ingest_args(p)
    p.add_argument("--detections", help="directory written by detect")
    p.add_argument("--truth", help="ground truth CSV (block,start,end,state)")
    p.add_argument("--cells", help="pre-aggregated ta,to,fa,fo; prints metrics only")
    p.add_argument("--unit", choices=("seconds", "events"), default="seconds")
    p.add_argument("--sweep", metavar="PARAM=V1,V2", help="e.g. theta_b=0.3,0.6,0.8 or timebin=300,1500,300/1500")
    p.add_argument("--day", help="detection start for --sweep")
    p.add_argument("--days", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="summarise detections; emit plot-ready series")
    p.add_argument("--detections", required=True)
    p.add_argument("--out", help="outage-duration CSV")
    p.add_argument("--trace", help="trace.csv written by detect --trace")
    p.add_argument("--address", help="address whose belief series to emit from --trace")
    p.add_argument("--series-out", help="where to write the belief series (default stdout)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "evaluate" and args.sweep and not args.day:
        parser.error("--sweep needs --day")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, FormatError, ModelError, StructuralError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
