"""Note control for the water instrument.

The faucet's upper flow sets velocity and duration for every note; the
four funnels fire the notes themselves. On each 20 ms tick a funnel
emits a note when its quantized level changed or while it holds water
under a running faucet, so a continuous pour reads as a stream of
discrete notes. The note number is drawn uniformly from [0, 2x] for
quantized level x, then snapped into the funnel's harmony; the highest
funnel carries Eb_major and lower funnels descend through F_minor and
G_minor to Ab_major.
"""

from __future__ import annotations

from dataclasses import dataclass

from .events import TICK_MS, RngStream, round_half_away
from .music import Harmony, MidiEvent, NOTE_OFF, NOTE_ON, harmony_for_rank, snap_to_scale

NOTE_CHANNEL = 0
LEVEL_STEPS = 63  # quantized levels 0..63 keep the 2x draw inside MIDI's 0..127


@dataclass(frozen=True)
class FlowState:
    """Normalized water readings at one tick."""

    upper: float = 0.0
    funnel_levels: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    main_drain: float = 0.0
    last_tick: int = -TICK_MS


@dataclass(frozen=True)
class FunnelSpec:
    height_rank: int  # 3 = highest
    harmony: Harmony


FunnelConfig = tuple[FunnelSpec, FunnelSpec, FunnelSpec, FunnelSpec]


def default_funnel_config() -> FunnelConfig:
    """Funnel 0 is the highest drain (Eb_major); ranks descend with index."""
    return tuple(FunnelSpec(3 - i, harmony_for_rank(3 - i)) for i in range(4))


def velocity_from_flow(upper: float) -> int:
    """Velocity 1-127 proportional to the upper flow; any flow at all is
    at least audible."""
    return max(1, round_half_away(127.0 * upper))


def duration_from_flow(upper: float) -> int:
    """Note duration 100-1000 ms, monotone in the upper flow."""
    return 100 + round_half_away(900.0 * upper)


def quantize_level(level: float) -> int:
    return round_half_away(LEVEL_STEPS * level)


def note_for_funnel(funnel: int, level: float, cfg: FunnelConfig, rng: RngStream) -> int:
    """Draw a note for a funnel: uniform raw note in [0, 2x] for quantized
    level x, snapped into the funnel's harmony. Consumes rng."""
    x = quantize_level(level)
    raw = rng.below(2 * x + 1)
    return snap_to_scale(raw, cfg[funnel].harmony)


def note_tick(
    prev: FlowState,
    cur: FlowState,
    t: int,
    cfg: FunnelConfig,
    rng: RngStream,
) -> list[MidiEvent]:
    """Advance one 20 ms tick and return the note pairs it fires.

    Funnels are processed in index order (this fixes rng consumption
    order); a funnel fires when its quantized level changed since the
    previous tick or when it holds water while the faucet runs. No flow
    means no notes. Consumes rng.
    """
    if t % TICK_MS != 0:
        raise ValueError(f"t={t} is not on the {TICK_MS} ms tick grid")
    if cur.upper <= 0.0:
        return []
    velocity = velocity_from_flow(cur.upper)
    duration = duration_from_flow(cur.upper)
    events: list[MidiEvent] = []
    for i in range(4):
        changed = quantize_level(cur.funnel_levels[i]) != quantize_level(prev.funnel_levels[i])
        receiving = cur.funnel_levels[i] > 0.0
        if not (changed or receiving):
            continue
        note = note_for_funnel(i, cur.funnel_levels[i], cfg, rng)
        events.append(MidiEvent(t=t, kind=NOTE_ON, channel=NOTE_CHANNEL, data1=note, data2=velocity))
        events.append(MidiEvent(t=t + duration, kind=NOTE_OFF, channel=NOTE_CHANNEL, data1=note, data2=0))
    return events
