"""Session orchestration: one tick loop driving all instruments.

A session routes sensor events to the enabled instruments on a shared
20 ms tick, merges their MIDI output into a single time-sorted stream,
and renders files: standard MIDI always, WAV when the sonic instrument
is enabled, plus a JSON report of what happened.

The same Engine serves batch replay and the live server, which is what
makes a recorded live session replay to the identical event list.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field

from .doll import (
    DollState,
    default_mapping_table,
    doll_tick,
    load_mapping_table,
    snapshot_from_values,
)
from .events import (
    FRAME_CHANNEL,
    RngStream,
    SensorEvent,
    TICK_MS,
    Trace,
    TraceHeader,
)
from .flownotes import FlowState, FunnelSpec, default_funnel_config, note_tick
from .flowsonic import (
    DEFAULT_BASE_OCTAVE,
    SUPPORTED_RATES,
    SonicTracker,
    render,
    write_wav,
)
from .motiongrid import GridInstrument, DEFAULT_SEQUENCES, OFF_THRESH, ON_THRESH
from .music import MidiEvent, builtin_harmony, harmony_for_rank, write_smf

ALL_INSTRUMENTS = ("tangible_note", "tangible_sonic", "doll", "iamascope")
DEFAULT_PORT = 7788

# instrument_config keys the engine understands; anything else is kept
# but flagged in the report.
RECOGNIZED_CONFIG_KEYS = (
    "funnel_ranks",
    "sequences",
    "on_thresh",
    "off_thresh",
    "base_octave",
    "sample_rate",
)


def default_port() -> int:
    return int(os.environ.get("HB_PORT", str(DEFAULT_PORT)))


@dataclass(frozen=True)
class SessionConfig:
    instruments: tuple = ALL_INSTRUMENTS
    seed: int | None = None           # None: take the trace header's seed
    grid_rows: int | None = None      # None: take the trace header's dims
    grid_cols: int | None = None
    sample_rate: int | None = None    # None: header setting, else 44100
    base_octave: int | None = None
    mapping_table_path: str | None = None
    port: int | None = None           # None: HB_PORT or 7788
    record_path: str | None = None

    def __post_init__(self):
        if not self.instruments:
            raise ValueError("at least one instrument must be enabled")
        for name in self.instruments:
            if name not in ALL_INSTRUMENTS:
                raise ValueError(f"unknown instrument {name!r}")


@dataclass
class SessionReport:
    event_counts: dict = field(default_factory=dict)
    level_transitions: list = field(default_factory=list)
    progression_log: list = field(default_factory=list)
    rhythm_outcomes: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class BatchResult:
    smf: bytes
    wav: bytes | None
    report: SessionReport
    events: list


def _funnel_config_from(header: TraceHeader):
    ranks = header.instrument_config.get("funnel_ranks")
    if ranks is None:
        return default_funnel_config()
    if sorted(ranks) != [0, 1, 2, 3]:
        raise ValueError(f"funnel_ranks {ranks!r} is not a permutation of 0-3")
    return tuple(FunnelSpec(r, harmony_for_rank(r)) for r in ranks)


def _sequences_from(header: TraceHeader):
    seqs = header.instrument_config.get("sequences")
    if seqs is None:
        return DEFAULT_SEQUENCES
    if not seqs or any(not s for s in seqs):
        raise ValueError("sequences must be non-empty lists of harmony names")
    for s in seqs:
        for name in s:
            builtin_harmony(name)  # raises on unknown names
    return tuple(tuple(s) for s in seqs)


class Engine:
    """All instrument state behind one tick(t, incoming) call.

    Per tick the instruments run in a fixed order (tangible_note, doll,
    iamascope), which is also the tie order of the merged stream.
    Channel values latch between ticks; frames are consumed once.
    """

    def __init__(self, config: SessionConfig, header: TraceHeader):
        if (config.grid_rows is not None and config.grid_rows != header.grid_rows) or (
            config.grid_cols is not None and config.grid_cols != header.grid_cols
        ):
            raise ValueError(
                f"configured grid {config.grid_rows}x{config.grid_cols} does not match "
                f"trace header {header.grid_rows}x{header.grid_cols}"
            )
        self.config = config
        self.header = header
        self.report = SessionReport()
        self.report.event_counts = {name: 0 for name in config.instruments}
        for key in header.instrument_config:
            if key not in RECOGNIZED_CONFIG_KEYS:
                self.report.warnings.append(f"unrecognized instrument_config key {key!r}")

        self.seed = config.seed if config.seed is not None else header.seed
        cfg_get = header.instrument_config.get
        self.sample_rate = config.sample_rate or cfg_get("sample_rate") or 44100
        if self.sample_rate not in SUPPORTED_RATES:
            raise ValueError(f"sample rate {self.sample_rate} not in {SUPPORTED_RATES}")
        self.base_octave = (
            config.base_octave if config.base_octave is not None
            else cfg_get("base_octave", DEFAULT_BASE_OCTAVE)
        )
        self.funnel_cfg = _funnel_config_from(header)

        self.values: dict = {}
        self._pending_frame = None
        self.rng = RngStream(self.seed)
        self.flow_prev = FlowState()
        self.doll_state = DollState()
        self.mapping_table = (
            load_mapping_table(config.mapping_table_path)
            if config.mapping_table_path
            else default_mapping_table()
        )
        self.sonic = SonicTracker(self.funnel_cfg, self.base_octave)
        self.grid = GridInstrument(
            rows=header.grid_rows,
            cols=header.grid_cols,
            sequences=_sequences_from(header),
            base_octave=self.base_octave,
            on_thresh=cfg_get("on_thresh", ON_THRESH),
            off_thresh=cfg_get("off_thresh", OFF_THRESH),
        )

    def enabled(self, name: str) -> bool:
        return name in self.config.instruments

    def _count(self, name: str, events) -> list:
        self.report.event_counts[name] += len(events)
        return events

    def tick(self, t: int, incoming=()) -> list[MidiEvent]:
        """Apply (channel, value) pairs for this tick, advance every
        enabled instrument, and return their MIDI in instrument order."""
        for channel, value in incoming:
            if channel == FRAME_CHANNEL:
                self._pending_frame = value
            else:
                self.values[channel] = value

        out: list[MidiEvent] = []
        if self.enabled("tangible_note"):
            cur = FlowState(
                upper=self.values.get("faucet_flow", 0.0),
                funnel_levels=tuple(self.values.get(f"funnel_level_{i}", 0.0) for i in range(4)),
                main_drain=self.values.get("main_drain_flow", 0.0),
                last_tick=t,
            )
            out.extend(self._count("tangible_note",
                                   note_tick(self.flow_prev, cur, t, self.funnel_cfg, self.rng)))
            self.flow_prev = cur
        if self.enabled("tangible_sonic"):
            self.sonic.tick(self.values)
        if self.enabled("doll"):
            before = self.doll_state.interaction
            self.doll_state, doll_events = doll_tick(
                self.doll_state, snapshot_from_values(self.values, t), self.mapping_table, t
            )
            after = self.doll_state.interaction
            if after.level != before.level:
                self.report.level_transitions.append(
                    {"t": t, "before": before.level, "after": after.level}
                )
                if after.level == 3:
                    self.report.rhythm_outcomes.append({"t": t, "tempo_bpm": after.tempo_bpm})
            out.extend(self._count("doll", doll_events))
        if self.enabled("iamascope"):
            frame = self._pending_frame
            self._pending_frame = None
            before_pos = (self.grid.state.sequence_id, self.grid.state.position,
                          self.grid.state.key_offset)
            grid_events = self.grid.tick(frame, t)
            after_pos = (self.grid.state.sequence_id, self.grid.state.position,
                         self.grid.state.key_offset)
            if after_pos != before_pos:
                self.report.progression_log.append(
                    {"t": t, "sequence_id": after_pos[0], "position": after_pos[1],
                     "key_offset": after_pos[2]}
                )
            out.extend(self._count("iamascope", grid_events))
        return out

    def flush(self, t: int) -> list[MidiEvent]:
        """Close anything still sounding at session end."""
        if self.enabled("iamascope"):
            return self._count("iamascope", self.grid.flush(t))
        return []

    def state_view(self) -> dict:
        """The five live-state fields broadcast to UI clients."""
        if self.enabled("iamascope"):
            harmony = self.grid.state.chord().name
        else:
            highest = max(range(4), key=lambda i: self.funnel_cfg[i].height_rank)
            harmony = self.funnel_cfg[highest].harmony.name
        return {
            "type": "state",
            "level": self.doll_state.interaction.level if self.enabled("doll") else 0,
            "harmony": harmony,
            "progression": self.grid.state.position if self.enabled("iamascope") else 0,
            "q": self.sonic.state.q if self.enabled("tangible_sonic") else 0.0,
            "track_freqs": list(self.sonic.state.current_freqs),
        }


def tick_of(t: int) -> int:
    """The tick that consumes an event at time t."""
    return math.ceil(t / TICK_MS) * TICK_MS


def run_batch(config: SessionConfig, trace: Trace) -> BatchResult:
    """Replay a trace through the engine and render its outputs.

    The tick loop covers t=0 through the tick consuming the last event;
    note_offs scheduled past that point are kept (the merged stream is
    sorted by time at the end, earlier-emitted events first on ties).
    """
    engine = Engine(config, trace.header)
    by_tick: dict[int, list] = {}
    for ev in trace.events:
        by_tick.setdefault(tick_of(ev.t), []).append((ev.channel, ev.value))
    last_tick = tick_of(trace.last_t()) if trace.events else 0

    collected: list[MidiEvent] = []
    for t in range(0, last_tick + TICK_MS, TICK_MS):
        collected.extend(engine.tick(t, by_tick.get(t, ())))
    collected.extend(engine.flush(last_tick))
    merged = sorted(collected, key=lambda e: e.t)

    smf = write_smf(merged)
    wav = None
    if engine.enabled("tangible_sonic"):
        samples = render(trace, engine.sample_rate, engine.funnel_cfg, engine.base_octave)
        wav = write_wav(samples, engine.sample_rate)
    return BatchResult(smf=smf, wav=wav, report=engine.report, events=merged)


# --- bundled demo traces ---------------------------------------------------


def _ev(t, channel, value):
    return SensorEvent(t=t, channel=channel, value=value)


def _water_demo() -> Trace:
    header = TraceHeader(seed=7)
    events = [
        _ev(0, "faucet_flow", 1.0),
        _ev(0, "main_drain_flow", 1.0),
        _ev(500, "main_drain_flow", 0.7),
        _ev(500, "funnel_level_2", 0.3),
        _ev(1000, "funnel_level_2", 0.5),
        _ev(1500, "funnel_level_2", 0.0),
        _ev(1500, "funnel_level_0", 0.6),
        _ev(1500, "main_drain_flow", 0.4),
        _ev(2500, "funnel_level_0", 0.0),
        _ev(2500, "main_drain_flow", 1.0),
        _ev(3000, "faucet_flow", 0.0),
    ]
    return Trace(header=header, events=tuple(events))


def _sonic_demo() -> Trace:
    header = TraceHeader(seed=11, instrument_config={"sample_rate": 44100})
    events = [
        _ev(0, "faucet_flow", 1.0),
        _ev(0, "main_drain_flow", 1.0),
        _ev(200, "funnel_level_1", 0.8),
        _ev(200, "main_drain_flow", 0.2),
        _ev(2000, "funnel_level_1", 0.0),
        _ev(2000, "funnel_level_3", 0.9),
        _ev(2000, "main_drain_flow", 0.05),
        _ev(3500, "funnel_level_3", 0.0),
        _ev(3500, "main_drain_flow", 1.0),
        _ev(4000, "faucet_flow", 0.0),
    ]
    return Trace(header=header, events=tuple(events))


def _doll_demo() -> Trace:
    header = TraceHeader(seed=3)
    events = [
        _ev(0, "touch_left_hand", 1.0),
        _ev(0, "touch_right_hand", 1.0),
        _ev(200, "touch_left_hand", 0.0),
        _ev(200, "touch_right_hand", 0.0),
    ]
    for k in range(4):  # four taps half a second apart: a 120 BPM request
        t = 1000 + 500 * k
        events.append(_ev(t, "gforce", 1.0))
        events.append(_ev(t + 20, "gforce", 0.0))
    events.extend([
        _ev(2600, "bend_left_arm", 0.5),
        _ev(2800, "bend_left_arm", 0.9),
        _ev(3200, "bend_left_arm", 0.0),
        _ev(3400, "heat_out", 0.4),
    ])
    events.sort(key=lambda e: e.t)
    return Trace(header=header, events=tuple(events))


def _grid_demo() -> Trace:
    rows = cols = 8
    px = 16  # frame pixels per side; 2x2 pixels per cell
    header = TraceHeader(seed=5, grid_rows=rows, grid_cols=cols)

    def frame(lit):
        m = [[0.0] * px for _ in range(px)]
        for (r, c) in lit:
            for pr in range(r * 2, r * 2 + 2):
                for pc in range(c * 2, c * 2 + 2):
                    m[pr][pc] = 1.0
        return tuple(tuple(row) for row in m)

    events = []
    for i in range(60):  # a bright cell sweeping the grid row-major
        cell = divmod(i % 64, 8)
        events.append(_ev(i * 20, FRAME_CHANNEL, frame([cell])))
    flash = tuple(tuple(1.0 for _ in range(px)) for _ in range(px))
    events.append(_ev(1200, FRAME_CHANNEL, flash))
    for i in range(61, 70):
        events.append(_ev(i * 20, FRAME_CHANNEL, frame([])))
    events.sort(key=lambda e: e.t)
    dedup = {}
    for ev in events:
        dedup[ev.t] = ev
    return Trace(header=header, events=tuple(dedup[t] for t in sorted(dedup)))


_DEMOS = {
    "water": (_water_demo, ("tangible_note",)),
    "sonic": (_sonic_demo, ("tangible_sonic",)),
    "doll": (_doll_demo, ("doll",)),
    "grid": (_grid_demo, ("iamascope",)),
}

DEMO_NAMES = tuple(_DEMOS)


def demo_trace(name: str) -> tuple[Trace, SessionConfig]:
    try:
        build, instruments = _DEMOS[name]
    except KeyError:
        raise ValueError(f"unknown demo {name!r}; expected one of {DEMO_NAMES}") from None
    return build(), SessionConfig(instruments=instruments)
