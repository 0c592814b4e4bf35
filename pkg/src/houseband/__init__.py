"""Household objects as instruments: water flow, a sensor doll, and a
camera grid, all feeding one 20 ms music engine."""

from .events import (
    CHANNELS,
    FRAME_CHANNEL,
    RngStream,
    SCALAR_CHANNELS,
    SensorEvent,
    TICK_MS,
    Trace,
    TraceError,
    TraceHeader,
    parse_trace,
    serialize_trace,
)
from .music import (
    Harmony,
    HARMONY_NAMES,
    MidiEvent,
    builtin_harmony,
    harmony_for_rank,
    note_to_freq,
    snap_to_scale,
    track_frequencies,
    write_smf,
)
from .session import BatchResult, SessionConfig, SessionReport, demo_trace, run_batch
from .live import LiveServer, run_live

__all__ = [
    "CHANNELS",
    "FRAME_CHANNEL",
    "RngStream",
    "SCALAR_CHANNELS",
    "SensorEvent",
    "TICK_MS",
    "Trace",
    "TraceError",
    "TraceHeader",
    "parse_trace",
    "serialize_trace",
    "Harmony",
    "HARMONY_NAMES",
    "MidiEvent",
    "builtin_harmony",
    "harmony_for_rank",
    "note_to_freq",
    "snap_to_scale",
    "track_frequencies",
    "write_smf",
    "BatchResult",
    "SessionConfig",
    "SessionReport",
    "demo_trace",
    "run_batch",
    "LiveServer",
    "run_live",
]

__version__ = "0.1.0"
