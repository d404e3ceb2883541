"""Command line: ``hux run | oracle | report | memory add | memory query``.

Settings resolve as command-line flags, then the scenario header, then the
config file, then built-in defaults.

Exit codes: 0 ok, 1 other runtime error, 2 bad scenario/config/usage,
3 backend failure, 4 corrupt memory store.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from hux import __version__
from hux.config import Config, load_config
from hux.context import make_backend
from hux.eoi import POLICIES
from hux.errors import (
    BackendUnavailable,
    ConfigInvalid,
    CorruptStore,
    EmptyQuery,
    HuxError,
    ScenarioInvalid,
    UnresolvableImage,
)
from hux.gaze import GazeSample, extract_roi, snapshot_at_release
from hux.memory import MemoryMeta, create_memory, load_store, retrieve
from hux.scene import frame_image
from hux.sim import SimConfig, load_scenario, oracle, run_scenario

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_BACKEND = 3
EXIT_STORE = 4

log = logging.getLogger("hux")


def _latency(value: str) -> int:
    n = int(value)
    if n < 0:
        raise argparse.ArgumentTypeError("latency must be >= 0")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hux", description="Gaze- and event-aware assistant pipeline.")
    parser.add_argument("--version", action="version", version=f"hux {__version__}")
    parser.add_argument("--config", type=Path, help="TOML config file")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="replay a scenario and write report.json + transcript.txt")
    run.add_argument("scenario", type=Path)
    run.add_argument("--policy", choices=POLICIES)
    run.add_argument("--latency-ms", type=_latency, dest="latency_ms")
    run.add_argument("--no-behavior", action="store_true", help="log count changes only")
    run.add_argument("--out", type=Path, help="output directory (default: paths.reports)")

    orc = sub.add_parser("oracle", help="print ground-truth events and counts for a scenario")
    orc.add_argument("scenario", type=Path)
    orc.add_argument("--json", action="store_true")

    rep = sub.add_parser("report", help="summarise a report.json")
    rep.add_argument("report", type=Path)

    mem = sub.add_parser("memory", help="contextual memory store")
    mem_sub = mem.add_subparsers(dest="memory_command", required=True)

    add = mem_sub.add_parser("add", help="remember what the user is gazing at")
    add.add_argument("--scenario", type=Path, required=True, help="scenario supplying frames and gaze")
    add.add_argument("--at-ms", type=int, dest="at_ms", help="instant to capture (default: last frame)")
    add.add_argument("--gaze", type=float, nargs=2, metavar=("X", "Y"), help="override the gaze point")
    add.add_argument("--context", required=True, help="what the user said about it")
    add.add_argument("--name")
    add.add_argument("--object-type", default="Object", dest="object_type")
    add.add_argument("--location", default="")
    add.add_argument("--time", help="default: current UTC time")
    add.add_argument("--device", default="")
    add.add_argument("--store", type=Path)

    query = mem_sub.add_parser("query", help="rank stored memories for a query")
    query.add_argument("text")
    query.add_argument("--top", type=int, default=5)
    query.add_argument("--store", type=Path)
    return parser


def cmd_run(args: argparse.Namespace, config: Config) -> int:
    script = load_scenario(args.scenario)
    if args.policy:
        script = replace(script, policy=args.policy)
    if args.latency_ms is not None:
        script = replace(script, caption_latency_ms=args.latency_ms)
    sim_config = SimConfig(
        backend=config.backend,
        registry=config.registry,
        policy=config.policy,
        disable_behavior=args.no_behavior,
    )
    report = run_scenario(script, sim_config)
    out = args.out or config.paths.reports
    out.mkdir(parents=True, exist_ok=True)
    stem = args.scenario.stem
    report_path = out / f"{stem}.report.json"
    transcript_path = out / f"{stem}.transcript.txt"
    report_path.write_text(report.to_json(), encoding="utf-8")
    transcript_path.write_text(report.transcript_text(), encoding="utf-8")
    m = report.metrics
    print(
        f"{script.name}: {m.events_detected} events logged, {m.events_true} true, "
        f"recall {m.event_recall:.3f}, {m.oracle_count_mismatches} count mismatches, "
        f"{len(report.transcript)} turns"
    )
    print(report_path)
    print(transcript_path)
    return EXIT_OK


def _fmt_counts(counts: dict[str, int]) -> str:
    return " ".join(f"{c}={n}" for c, n in sorted(counts.items())) or "(none)"


def cmd_oracle(args: argparse.Namespace, config: Config) -> int:
    script = load_scenario(args.scenario)
    result = oracle(script, config.registry)
    if args.json:
        doc = {
            "scenario": result.scenario,
            "true_events": [
                {"frame_id": e.frame_id, "timestamp_ms": e.timestamp_ms,
                 "changes": {c: list(v) for c, v in e.changes.items()}}
                for e in result.true_events
            ],
            "counts_timeline": [{"frame_id": f, "counts": c} for f, c in result.counts_timeline],
        }
        print(json.dumps(doc, indent=2, sort_keys=True))
        return EXIT_OK
    print(f"{result.scenario}: {len(result.true_events)} true events")
    for e in result.true_events:
        changes = ", ".join(f"{c} {a}->{b}" for c, (a, b) in e.changes.items())
        print(f"  frame {e.frame_id} @ {e.timestamp_ms} ms: {changes}")
    print("counts:")
    for fid, counts in result.counts_timeline:
        print(f"  frame {fid}: {_fmt_counts(counts)}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace, config: Config) -> int:
    try:
        doc = json.loads(args.report.read_text(encoding="utf-8"))
        metrics = doc["metrics"]
        header = f"{doc['scenario']} ({doc['policy']}, {doc['caption_latency_ms']} ms, {doc['profile']})"
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"hux: cannot read report {args.report}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(header)
    for key in sorted(metrics):
        print(f"  {key}: {metrics[key]}")
    for turn in doc.get("transcript", []):
        print(f"  [{turn['release_ts_ms']} ms] {turn['utterance']} -> {turn['answer']}")
    return EXIT_OK


def cmd_memory_add(args: argparse.Namespace, config: Config) -> int:
    script = load_scenario(args.scenario)
    if not script.frames:
        raise ScenarioInvalid(f"{args.scenario} has no frames to remember")
    profile = script.resolve_profile(config.registry)
    at = args.at_ms if args.at_ms is not None else script.frames[-1].timestamp_ms
    seen = [f for f in script.frames if f.timestamp_ms <= at]
    if args.gaze:
        if not seen:
            raise ScenarioInvalid(f"no frame at or before {at} ms")
        frame = seen[-1]
        gaze = GazeSample(args.gaze[0], args.gaze[1], timestamp_ms=at)
    else:
        gaze, frame = snapshot_at_release(script.gaze_trace, seen, at)

    backend = make_backend(config.backend)
    roi = extract_roi(frame, gaze)
    roi = replace(roi, caption=backend.caption(roi.image_ref, profile.caption_instruction))
    scene_caption = backend.caption(frame_image(frame, profile), profile.caption_instruction)
    when = args.time or datetime.now(timezone.utc).isoformat(timespec="seconds")
    store = load_store(args.store or config.paths.store)
    record = create_memory(
        frame,
        roi,
        args.context,
        MemoryMeta(location=args.location, time=when, device=args.device),
        backend,
        store=store,
        scene_caption=scene_caption,
        object_type=args.object_type,
        name=args.name,
    )
    print(record.record_id)
    print("keywords: " + ", ".join(record.keywords))
    return EXIT_OK


def cmd_memory_query(args: argparse.Namespace, config: Config) -> int:
    store = load_store(args.store or config.paths.store)
    try:
        hits = retrieve(args.text, store)
    except EmptyQuery as exc:
        print(f"hux: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not hits:
        print("no matching memories")
    for hit in hits[: args.top]:
        print(f"{hit.record_id}\t{hit.score:.4f}\t{', '.join(hit.matched_keywords)}")
    return EXIT_OK


def _dispatch(args: argparse.Namespace, config: Config) -> int:
    if args.command == "memory":
        handler = cmd_memory_add if args.memory_command == "add" else cmd_memory_query
    else:
        handler = {"run": cmd_run, "oracle": cmd_oracle, "report": cmd_report}[args.command]
    return handler(args, config)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config)
        return _dispatch(args, config)
    except (ScenarioInvalid, ConfigInvalid) as exc:
        print(f"hux: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BackendUnavailable, UnresolvableImage) as exc:
        print(f"hux: backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except CorruptStore as exc:
        print(f"hux: {exc}", file=sys.stderr)
        return EXIT_STORE
    except KeyError as exc:
        # unknown profile_ref and similar lookups
        print(f"hux: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_USAGE
    except HuxError as exc:
        print(f"hux: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
