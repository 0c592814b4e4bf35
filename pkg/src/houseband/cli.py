"""Command line front end: play traces, serve live, validate, demo."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .events import TraceError, parse_trace, serialize_trace
from .live import run_live
from .session import (
    ALL_INSTRUMENTS,
    DEMO_NAMES,
    RECOGNIZED_CONFIG_KEYS,
    SessionConfig,
    demo_trace,
    run_batch,
)


def _instruments(with_sonic: bool) -> tuple:
    return tuple(n for n in ALL_INSTRUMENTS if with_sonic or n != "tangible_sonic")


def _cmd_play(args) -> int:
    try:
        trace = parse_trace(Path(args.trace).read_bytes())
    except OSError as exc:
        print(f"cannot read {args.trace}: {exc}", file=sys.stderr)
        return 1
    except TraceError as exc:
        print(f"invalid trace: {exc}", file=sys.stderr)
        return 1
    config = SessionConfig(
        instruments=_instruments(with_sonic=args.out_wav is not None),
        seed=args.seed,
        mapping_table_path=args.mapping_table,
    )
    try:
        result = run_batch(config, trace)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out_smf = args.out_smf or str(Path(args.trace).with_suffix(".mid"))
    Path(out_smf).write_bytes(result.smf)
    written = [out_smf]
    if args.out_wav:
        Path(args.out_wav).write_bytes(result.wav)
        written.append(args.out_wav)
    if args.report:
        Path(args.report).write_text(json.dumps(result.report.as_dict(), indent=2) + "\n")
        written.append(args.report)
    counts = ", ".join(f"{k}={v}" for k, v in result.report.event_counts.items())
    print(f"{len(result.events)} events ({counts}); wrote {', '.join(written)}")
    for warning in result.report.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return 0


def _cmd_serve(args) -> int:
    config = SessionConfig(
        seed=args.seed,
        port=args.port,
        record_path=args.record,
        mapping_table_path=args.mapping_table,
    )
    run_live(config)
    return 0


def _cmd_validate(args) -> int:
    try:
        trace = parse_trace(Path(args.trace).read_bytes())
    except OSError as exc:
        print(f"cannot read {args.trace}: {exc}", file=sys.stderr)
        return 1
    except TraceError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    unknown = [k for k in trace.header.instrument_config if k not in RECOGNIZED_CONFIG_KEYS]
    for key in unknown:
        print(f"warning: unrecognized instrument_config key {key!r}")
    print(
        f"ok: {len(trace.events)} events, last t={trace.last_t()} ms, "
        f"grid {trace.header.grid_rows}x{trace.header.grid_cols}, seed {trace.header.seed}"
    )
    return 0


def _cmd_demo(args) -> int:
    trace, config = demo_trace(args.name)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = run_batch(config, trace)
    written = []

    def emit(name: str, data) -> None:
        path = out_dir / name
        if isinstance(data, bytes):
            path.write_bytes(data)
        else:
            path.write_text(data)
        written.append(str(path))

    emit(f"demo_{args.name}.ndjson", serialize_trace(trace))
    emit(f"demo_{args.name}.mid", result.smf)
    if result.wav is not None:
        emit(f"demo_{args.name}.wav", result.wav)
    emit(f"demo_{args.name}.report.json", json.dumps(result.report.as_dict(), indent=2) + "\n")
    print("wrote " + ", ".join(written))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="houseband",
        description="Household instruments: water, doll and camera-grid sessions to MIDI/WAV.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    play = sub.add_parser("play", help="replay a trace file to MIDI/WAV/report")
    play.add_argument("trace")
    play.add_argument("--out-smf", metavar="FILE")
    play.add_argument("--out-wav", metavar="FILE")
    play.add_argument("--report", metavar="FILE")
    play.add_argument("--seed", type=int)
    play.add_argument("--mapping-table", metavar="FILE")
    play.set_defaults(func=_cmd_play)

    serve = sub.add_parser("serve", help="run the live session server")
    serve.add_argument("--port", type=int)
    serve.add_argument("--record", metavar="FILE")
    serve.add_argument("--seed", type=int)
    serve.add_argument("--mapping-table", metavar="FILE")
    serve.set_defaults(func=_cmd_serve)

    validate = sub.add_parser("validate", help="check a trace file")
    validate.add_argument("trace")
    validate.set_defaults(func=_cmd_validate)

    demo = sub.add_parser("demo", help="write a bundled demo trace and its outputs")
    demo.add_argument("name", choices=DEMO_NAMES)
    demo.add_argument("--out-dir", default=".")
    demo.set_defaults(func=_cmd_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
