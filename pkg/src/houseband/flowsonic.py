"""Sonic control for the water instrument.

Five tracks loop the same four-second synthetic water sound, each offset
by a fifth of the loop so the copies never line up. Touching the stream
(measured as upper flow minus main-drain flow) drives an intensity q
that simultaneously raises each track's resonance and crossfades from
the dry loop to the filtered one, so broadband water noise is pulled
toward the five resonant frequencies of the active harmony. Pouring
into a different funnel retargets all five frequencies, which glide
exponentially in log-frequency with a 500 ms time constant.

Rendering is an offline pure function of (trace, seed, sample rate):
the control path advances on the session's 20 ms tick and filter
coefficients ramp linearly inside each block to avoid zipper noise.
"""

from __future__ import annotations

import math
import struct
import wave
from dataclasses import dataclass, replace
from io import BytesIO

from .events import TICK_MS, RngStream, Trace, latest_values, round_half_away
from .flownotes import FunnelConfig, default_funnel_config
from .music import track_frequencies

SUPPORTED_RATES = (44100, 48000)
LOOP_SECONDS = 4
NUM_TRACKS = 5
GLIDE_TAU_MS = 500.0
DEFAULT_BASE_OCTAVE = 4
PEAK_TARGET = 0.9


@dataclass(frozen=True)
class SonicState:
    q: float
    active_drain: int | None
    current_freqs: tuple[float, ...]
    target_freqs: tuple[float, ...]


@dataclass(frozen=True)
class ResonatorCoeffs:
    """Two-pole resonator y[n] = b0*x[n] - a1*y[n-1] - a2*y[n-2]."""

    b0: float
    a1: float
    a2: float
    f: float
    r: float


def interaction_intensity(upper: float, main_drain: float) -> float:
    """How much of the stream the performer diverts away from the main
    drain, clamped to [0, 1]."""
    q = upper - main_drain
    return 0.0 if q < 0.0 else 1.0 if q > 1.0 else q


def resonator_coeffs(f: float, q: float, sample_rate: int) -> ResonatorCoeffs:
    """Pole radius 0.90 at q=0 up to 0.9995 at q=1; always stable."""
    if not 0.0 < f < sample_rate / 2.0:
        raise ValueError(f"center frequency {f} outside (0, {sample_rate / 2})")
    r = 0.90 + 0.0995 * q
    a1 = -2.0 * r * math.cos(2.0 * math.pi * f / sample_rate)
    return ResonatorCoeffs(b0=1.0 - r, a1=a1, a2=r * r, f=f, r=r)


def glide_freqs(state: SonicState, dt: float) -> SonicState:
    """Move current frequencies toward targets, exponential in
    log-frequency with time constant GLIDE_TAU_MS."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    k = 1.0 - math.exp(-dt / GLIDE_TAU_MS)
    moved = tuple(
        math.exp(math.log(cur) + k * (math.log(tgt) - math.log(cur)))
        for cur, tgt in zip(state.current_freqs, state.target_freqs)
    )
    return replace(state, current_freqs=moved)


def select_drain(state: SonicState, drain: int, cfg: FunnelConfig, base_octave: int) -> SonicState:
    """Retarget the five tracks at the harmony of the chosen drain; the
    glide supplies the motion. Reselecting the active drain is a no-op."""
    if not 0 <= drain <= 3:
        raise ValueError(f"drain index {drain} outside 0-3")
    if drain == state.active_drain:
        return state
    targets = track_frequencies(cfg[drain].harmony, base_octave)
    return replace(state, active_drain=drain, target_freqs=targets)


def initial_sonic_state(cfg: FunnelConfig, base_octave: int) -> SonicState:
    """Start at rest on the highest drain's harmony with no resonance."""
    highest = max(range(4), key=lambda i: cfg[i].height_rank)
    freqs = track_frequencies(cfg[highest].harmony, base_octave)
    return SonicState(q=0.0, active_drain=None, current_freqs=freqs, target_freqs=freqs)


class SonicTracker:
    """Advances sonic state on the session tick from latest channel values."""

    def __init__(self, cfg: FunnelConfig | None = None, base_octave: int = DEFAULT_BASE_OCTAVE):
        self.cfg = cfg if cfg is not None else default_funnel_config()
        self.base_octave = base_octave
        self.state = initial_sonic_state(self.cfg, base_octave)

    def tick(self, values: dict) -> SonicState:
        st = self.state
        levels = [values.get(f"funnel_level_{i}", 0.0) for i in range(4)]
        top = max(levels)
        if top > 0.0:
            drain = levels.index(top)  # ties resolve to the lowest index
            st = select_drain(st, drain, self.cfg, self.base_octave)
        st = glide_freqs(st, TICK_MS)
        q = interaction_intensity(values.get("faucet_flow", 0.0), values.get("main_drain_flow", 0.0))
        st = replace(st, q=q)
        self.state = st
        return st


def water_loop(seed: int, sample_rate: int) -> list[float]:
    """Four seconds of seeded pink-filtered white noise, peak-normalized.

    Stands in for a recorded flowing-water sample; pink weighting keeps
    the broadband wash that makes the resonant transformation audible.
    """
    rng = RngStream(seed)
    n = LOOP_SECONDS * sample_rate
    out = [0.0] * n
    # Paul Kellet's pink filter state.
    b0 = b1 = b2 = b3 = b4 = b5 = b6 = 0.0
    for i in range(n):
        u = (rng.next_u64() >> 11) * 2.0**-53
        white = 2.0 * u - 1.0
        b0 = 0.99886 * b0 + white * 0.0555179
        b1 = 0.99332 * b1 + white * 0.0750759
        b2 = 0.96900 * b2 + white * 0.1538520
        b3 = 0.86650 * b3 + white * 0.3104856
        b4 = 0.55000 * b4 + white * 0.5329522
        b5 = -0.7616 * b5 - white * 0.0168980
        out[i] = b0 + b1 + b2 + b3 + b4 + b5 + b6 + white * 0.5362
        b6 = white * 0.115926
    peak = 0.0
    for v in out:
        a = v if v >= 0.0 else -v
        if a > peak:
            peak = a
    if peak > 0.0:
        inv = 1.0 / peak
        for i in range(n):
            out[i] *= inv
    return out


def _tick_times(last_t: int) -> range:
    end = ((last_t + TICK_MS - 1) // TICK_MS) * TICK_MS
    return range(0, end + 1, TICK_MS)


def render(trace: Trace, sample_rate: int, cfg: FunnelConfig | None = None,
           base_octave: int | None = None) -> list[float]:
    """Render the whole trace to float samples with peak PEAK_TARGET.

    One 20 ms control block per tick; within a block, each track's
    filter coefficients and wet mix ramp linearly from the previous
    block's values. Tracks are summed in index order so output is
    bit-reproducible.
    """
    if sample_rate not in SUPPORTED_RATES:
        raise ValueError(f"sample rate {sample_rate} unsupported; expected one of {SUPPORTED_RATES}")
    if cfg is None:
        cfg = default_funnel_config()
    if base_octave is None:
        base_octave = int(trace.header.instrument_config.get("base_octave", DEFAULT_BASE_OCTAVE))
    if not trace.events:
        return []

    loop = water_loop(trace.header.seed, sample_rate)
    loop_len = len(loop)
    offsets = [i * loop_len // NUM_TRACKS for i in range(NUM_TRACKS)]
    block_len = sample_rate // (1000 // TICK_MS)

    tracker = SonicTracker(cfg, base_octave)
    values: dict = {}
    ev_idx = 0
    events = trace.events

    ticks = _tick_times(trace.last_t())
    total = len(ticks) * block_len
    out = [0.0] * total

    # Per-track filter memories and the previous block's coefficients.
    y1 = [0.0] * NUM_TRACKS
    y2 = [0.0] * NUM_TRACKS
    prev_coef: list[tuple[float, float, float, float]] | None = None

    pos = 0
    for t in ticks:
        while ev_idx < len(events) and events[ev_idx].t <= t:
            values[events[ev_idx].channel] = events[ev_idx].value
            ev_idx += 1
        state = tracker.tick(values)
        cur_coef = []
        for ti in range(NUM_TRACKS):
            c = resonator_coeffs(state.current_freqs[ti], state.q, sample_rate)
            cur_coef.append((c.b0, c.a1, c.a2, state.q))
        if prev_coef is None:
            prev_coef = cur_coef

        for ti in range(NUM_TRACKS):
            b0p, a1p, a2p, mp = prev_coef[ti]
            b0c, a1c, a2c, mc = cur_coef[ti]
            b0s = (b0c - b0p) / block_len
            a1s = (a1c - a1p) / block_len
            a2s = (a2c - a2p) / block_len
            ms = (mc - mp) / block_len
            base = (offsets[ti] + pos) % loop_len
            w1 = y1[ti]
            w2 = y2[ti]
            if b0s == 0.0 and a1s == 0.0 and a2s == 0.0 and ms == 0.0:
                for i in range(block_len):
                    x = loop[(base + i) % loop_len]
                    w = b0p * x - a1p * w1 - a2p * w2
                    w2 = w1
                    w1 = w
                    out[pos + i] += (1.0 - mp) * x + mp * w
            else:
                for i in range(block_len):
                    k = i + 1.0
                    b0 = b0p + k * b0s
                    a1 = a1p + k * a1s
                    a2 = a2p + k * a2s
                    m = mp + k * ms
                    x = loop[(base + i) % loop_len]
                    w = b0 * x - a1 * w1 - a2 * w2
                    w2 = w1
                    w1 = w
                    out[pos + i] += (1.0 - m) * x + m * w
            y1[ti] = w1
            y2[ti] = w2
        prev_coef = cur_coef
        pos += block_len

    peak = 0.0
    for v in out:
        a = v if v >= 0.0 else -v
        if a > peak:
            peak = a
    if peak > 0.0:
        scale = PEAK_TARGET / peak
        for i in range(total):
            out[i] *= scale
    return out


def write_wav(samples: list[float], sample_rate: int) -> bytes:
    """16-bit little-endian mono RIFF/WAVE bytes."""
    if sample_rate not in SUPPORTED_RATES:
        raise ValueError(f"sample rate {sample_rate} unsupported; expected one of {SUPPORTED_RATES}")
    ints = []
    for x in samples:
        v = round_half_away(x * 32767.0)
        ints.append(-32768 if v < -32768 else 32767 if v > 32767 else v)
    buf = BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(struct.pack(f"<{len(ints)}h", *ints))
    return buf.getvalue()
