"""Sensor channels, session traces, and the shared deterministic RNG.

A session is driven entirely by a trace: an NDJSON file whose first line
is a header (format version, RNG seed, grid size, instrument config) and
whose remaining lines are timestamped sensor events. All scalar sensor
values are normalized to [0, 1] at ingestion; the engine never sees raw
hardware units. Timestamps are integer milliseconds from session start
and the engine advances on a 20 ms tick grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable

TICK_MS = 20

# Every channel an event may name. "frame" carries a row-major luminance
# matrix; everything else is a scalar in [0, 1].
SCALAR_CHANNELS = (
    "faucet_flow",
    "main_drain_flow",
    "funnel_level_0",
    "funnel_level_1",
    "funnel_level_2",
    "funnel_level_3",
    "touch_head",
    "touch_belly",
    "touch_back",
    "touch_left_hand",
    "touch_right_hand",
    "bend_left_arm",
    "bend_right_arm",
    "bend_left_leg",
    "bend_right_leg",
    "prox_hip",
    "prox_nose",
    "gforce",
    "heat_in",
    "heat_out",
    "mic_level",
)
FRAME_CHANNEL = "frame"
CHANNELS = SCALAR_CHANNELS + (FRAME_CHANNEL,)

FORMAT_VERSION = 1


class TraceError(ValueError):
    """Raised for a malformed trace; carries the offending line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}" if line_no > 0 else message)
        self.line_no = line_no


@dataclass(frozen=True)
class SensorEvent:
    """One timestamped reading on a named channel.

    ``value`` is a float for scalar channels and a tuple of row tuples
    (luminance in [0, 1]) for the frame channel.
    """

    t: int
    channel: str
    value: float | tuple[tuple[float, ...], ...]


@dataclass(frozen=True)
class TraceHeader:
    format_version: int = FORMAT_VERSION
    seed: int = 0
    grid_rows: int = 8
    grid_cols: int = 8
    instrument_config: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Trace:
    header: TraceHeader
    events: tuple[SensorEvent, ...] = ()

    def last_t(self) -> int:
        return self.events[-1].t if self.events else 0


def _check_scalar(value: Any, line_no: int) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TraceError(line_no, f"value must be a number, got {value!r}")
    if not 0.0 <= value <= 1.0:
        raise TraceError(line_no, f"value {value!r} outside [0, 1]")
    return value


def _check_frame(value: Any, header: TraceHeader, line_no: int) -> tuple:
    if not isinstance(value, list) or not value or not all(isinstance(r, list) for r in value):
        raise TraceError(line_no, "frame value must be a non-empty array of arrays")
    width = len(value[0])
    if width == 0 or any(len(r) != width for r in value):
        raise TraceError(line_no, "frame rows must be non-empty and equal length")
    # Frame pixels tile the configured grid: dimensions must be whole
    # multiples of (grid_rows, grid_cols) so every cell covers the same
    # number of pixels.
    if len(value) % header.grid_rows != 0 or width % header.grid_cols != 0:
        raise TraceError(
            line_no,
            f"frame {len(value)}x{width} does not tile the "
            f"{header.grid_rows}x{header.grid_cols} grid",
        )
    for row in value:
        for px in row:
            if isinstance(px, bool) or not isinstance(px, (int, float)) or not 0.0 <= px <= 1.0:
                raise TraceError(line_no, f"frame luminance {px!r} outside [0, 1]")
    return tuple(tuple(row) for row in value)


def coerce_value(channel: str, value: Any, header: TraceHeader):
    """Validate one channel value in wire or trace form; returns the
    normalized float, or the frame as a tuple of row tuples."""
    if channel == FRAME_CHANNEL:
        if isinstance(value, tuple):
            value = [list(row) for row in value]
        return _check_frame(value, header, 0)
    if channel not in SCALAR_CHANNELS:
        raise TraceError(0, f"unknown channel {channel!r}")
    return float(_check_scalar(value, 0))


def parse_trace(data: bytes) -> Trace:
    """Parse and validate an NDJSON trace.

    Raises TraceError naming the first offending line (1-based) for a
    malformed line, unknown channel, timestamp regression, or
    out-of-range value.
    """
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise TraceError(1, f"not valid UTF-8: {exc}") from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise TraceError(1, "empty trace: missing header line")

    def load(line: str, line_no: int) -> dict:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceError(line_no, f"invalid JSON: {exc.msg}") from None
        if not isinstance(obj, dict):
            raise TraceError(line_no, "expected a JSON object")
        return obj

    head = load(lines[0], 1)
    required = {"format_version", "seed", "grid_rows", "grid_cols", "instrument_config"}
    missing = required - head.keys()
    if missing:
        raise TraceError(1, f"header missing {sorted(missing)}")
    if head["format_version"] != FORMAT_VERSION:
        raise TraceError(1, f"unsupported format_version {head['format_version']!r}")
    if not isinstance(head["seed"], int) or not 0 <= head["seed"] < 2**64:
        raise TraceError(1, "seed must be an unsigned 64-bit integer")
    for key in ("grid_rows", "grid_cols"):
        if not isinstance(head[key], int) or head[key] < 1:
            raise TraceError(1, f"{key} must be a positive integer")
    if not isinstance(head["instrument_config"], dict):
        raise TraceError(1, "instrument_config must be an object")
    header = TraceHeader(
        format_version=head["format_version"],
        seed=head["seed"],
        grid_rows=head["grid_rows"],
        grid_cols=head["grid_cols"],
        instrument_config=head["instrument_config"],
    )

    events = []
    prev_t = -1
    for i, line in enumerate(lines[1:], start=2):
        obj = load(line, i)
        if set(obj.keys()) != {"t", "channel", "value"}:
            raise TraceError(i, f"event keys must be t/channel/value, got {sorted(obj)}")
        t = obj["t"]
        if isinstance(t, bool) or not isinstance(t, int) or t < 0:
            raise TraceError(i, f"t must be a non-negative integer, got {t!r}")
        if t < prev_t:
            raise TraceError(i, f"timestamp regression: t={t} after t={prev_t}")
        prev_t = t
        channel = obj["channel"]
        if channel not in CHANNELS:
            raise TraceError(i, f"unknown channel {channel!r}")
        if channel == FRAME_CHANNEL:
            value = _check_frame(obj["value"], header, i)
        else:
            value = _check_scalar(obj["value"], i)
        events.append(SensorEvent(t=t, channel=channel, value=value))
    return Trace(header=header, events=tuple(events))


def _json_line(obj: Any) -> str:
    # Compact separators and no key reordering keep output byte-stable.
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def serialize_trace(trace: Trace) -> bytes:
    """Serialize a trace to canonical NDJSON bytes.

    Key order is fixed (header fields in declaration order; events as
    t, channel, value) so equal traces serialize byte-identically and
    parse_trace(serialize_trace(x)) == x.
    """
    h = trace.header
    out = [
        _json_line(
            {
                "format_version": h.format_version,
                "seed": h.seed,
                "grid_rows": h.grid_rows,
                "grid_cols": h.grid_cols,
                "instrument_config": h.instrument_config,
            }
        )
    ]
    for ev in trace.events:
        value = [list(row) for row in ev.value] if ev.channel == FRAME_CHANNEL else ev.value
        out.append(_json_line({"t": ev.t, "channel": ev.channel, "value": value}))
    return ("\n".join(out) + "\n").encode("utf-8")


_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class RngStream:
    """SplitMix64 stream; identical seed gives an identical sequence on
    every platform. One instance per consumer, never shared."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n-1] by rejection sampling against the
        largest multiple of n that fits in 64 bits. Always consumes at
        least one draw."""
        if n < 1:
            raise ValueError(f"n must be positive, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            z = self.next_u64()
            if z < limit:
                return z % n

    def clone(self) -> "RngStream":
        return RngStream(self.state)


def round_half_away(x: float) -> int:
    """Round to nearest integer with halves away from zero."""
    if x >= 0:
        return int(x + 0.5)
    return -int(-x + 0.5)


def clamp(x, lo, hi):
    return lo if x < lo else hi if x > hi else x


def latest_values(events: Iterable[SensorEvent]) -> dict:
    """Latest value per channel; later events win."""
    out: dict = {}
    for ev in events:
        out[ev.channel] = ev.value
    return out
