"""Musical vocabulary shared by every instrument.

Four harmonies are built in, each an eight-tone scale (seven degrees
plus the octave repeat) rooted on E-flat, F, G or A-flat. They are
ordered by musical tension: E-flat major is the calmest, A-flat major
the tensest. Minor scales are natural minor. Helpers snap arbitrary MIDI
notes into a harmony, convert notes to equal-temperament frequencies,
derive the five per-track frequencies used by the resonant water
instrument, and persist event lists as format 0 Standard MIDI Files.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction

from .events import round_half_away

DEFAULT_DIVISION = 480
DEFAULT_TEMPO_US = 500_000  # 120 BPM

NOTE_ON = "note_on"
NOTE_OFF = "note_off"
CONTROL_CHANGE = "control_change"
TEMPO = "tempo"


@dataclass(frozen=True)
class MidiEvent:
    """A note, controller, or tempo record with a millisecond timestamp."""

    t: int
    kind: str
    channel: int = 0
    data1: int = 0
    data2: int = 0
    tempo_us_per_beat: int | None = None

    def __post_init__(self):
        if self.kind not in (NOTE_ON, NOTE_OFF, CONTROL_CHANGE, TEMPO):
            raise ValueError(f"unknown event kind {self.kind!r}")
        if not 0 <= self.channel <= 15:
            raise ValueError(f"channel {self.channel} outside 0-15")
        if not (0 <= self.data1 <= 127 and 0 <= self.data2 <= 127):
            raise ValueError(f"data bytes {self.data1},{self.data2} outside 0-127")
        if self.kind == TEMPO and (self.tempo_us_per_beat is None or self.tempo_us_per_beat <= 0):
            raise ValueError("tempo events need a positive tempo_us_per_beat")


@dataclass(frozen=True)
class Harmony:
    """A named scale: root pitch class, the seven scale pitch classes in
    degree order, and a tension rank (0 calmest .. 3 tensest)."""

    name: str
    root_pc: int
    scale_pcs: tuple[int, ...]
    tension_rank: int


_HARMONIES = {
    "Eb_major": Harmony("Eb_major", 3, (3, 5, 7, 8, 10, 0, 2), 0),
    "F_minor": Harmony("F_minor", 5, (5, 7, 8, 10, 0, 1, 3), 1),
    "G_minor": Harmony("G_minor", 7, (7, 9, 10, 0, 2, 3, 5), 2),
    "Ab_major": Harmony("Ab_major", 8, (8, 10, 0, 1, 3, 5, 7), 3),
}

HARMONY_NAMES = tuple(_HARMONIES)


def builtin_harmony(name: str) -> Harmony:
    try:
        return _HARMONIES[name]
    except KeyError:
        raise ValueError(f"unknown harmony {name!r}; expected one of {HARMONY_NAMES}") from None


def harmony_for_rank(height_rank: int) -> Harmony:
    """Harmony for a drain height rank; rank 3 (highest) is Eb_major and
    ranks descend through F_minor, G_minor to Ab_major."""
    if not 0 <= height_rank <= 3:
        raise ValueError(f"height_rank {height_rank} outside 0-3")
    return _HARMONIES[HARMONY_NAMES[3 - height_rank]]


def snap_to_scale(note: int, harmony: Harmony) -> int:
    """Nearest note whose pitch class is in the harmony; ties resolve to
    the lower note; result clamped to 0-127."""
    note = min(max(note, 0), 127)
    best = None
    best_dist = None
    for cand in range(128):
        if cand % 12 not in harmony.scale_pcs:
            continue
        dist = abs(cand - note)
        if best_dist is None or dist < best_dist:
            best, best_dist = cand, dist
    return best


def note_to_freq(note: int) -> float:
    """Equal temperament relative to A4 = 440 Hz."""
    return 440.0 * 2.0 ** ((note - 69) / 12.0)


def scale_degree_note(harmony: Harmony, base_octave: int, degree: int) -> int:
    """MIDI note of a 1-based scale degree; degree 1 is the root at
    base_octave (middle-C convention: C4 = 60), degree 8 the octave."""
    if degree < 1:
        raise ValueError(f"degree must be >= 1, got {degree}")
    root = 12 * (base_octave + 1) + harmony.root_pc
    idx = degree - 1
    octave_up, step = divmod(idx, 7)
    offset = (harmony.scale_pcs[step] - harmony.root_pc) % 12
    return root + 12 * octave_up + offset


def build_note_table(harmony: Harmony, base_octave: int, size: int) -> tuple[int, ...]:
    """Scale-degree index (0-based) to MIDI note, strictly increasing."""
    notes = tuple(scale_degree_note(harmony, base_octave, d) for d in range(1, size + 1))
    if notes and not 0 <= notes[-1] <= 127:
        raise ValueError(f"note table exceeds MIDI range at {notes[-1]}")
    return notes


TRACK_DEGREES = (1, 3, 5, 8, 10)  # root, third, fifth, octave, tenth


def track_frequencies(harmony: Harmony, base_octave: int) -> tuple[float, ...]:
    """The five track frequencies of a harmony: scale degrees 1, 3, 5, 8
    and 10 from base_octave, strictly increasing."""
    notes = [scale_degree_note(harmony, base_octave, d) for d in TRACK_DEGREES]
    if notes[0] < 0 or notes[-1] > 127:
        raise ValueError(f"track notes {notes} outside MIDI range")
    return tuple(note_to_freq(n) for n in notes)


def _vlq(value: int) -> bytes:
    """MIDI variable-length quantity, big-endian 7-bit groups."""
    if value < 0:
        raise ValueError("negative delta time")
    chunks = [value & 0x7F]
    value >>= 7
    while value:
        chunks.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(chunks))


def write_smf(events: list[MidiEvent], division: int = DEFAULT_DIVISION) -> bytes:
    """Assemble a format 0, single-track Standard MIDI File.

    Millisecond timestamps become ticks through the tempo map (default
    120 BPM until the first tempo event), rounding half away from zero
    at each event; an end-of-track meta event is appended. Events must
    be time-sorted and every note_on needs a matching later note_off on
    the same channel and note.
    """
    if division <= 0:
        raise ValueError(f"division must be positive, got {division}")
    open_notes: dict[tuple[int, int], int] = {}
    prev_t = None
    for ev in events:
        if prev_t is not None and ev.t < prev_t:
            raise ValueError(f"events not time-sorted at t={ev.t}")
        prev_t = ev.t
        if ev.kind == NOTE_ON:
            key = (ev.channel, ev.data1)
            open_notes[key] = open_notes.get(key, 0) + 1
        elif ev.kind == NOTE_OFF:
            key = (ev.channel, ev.data1)
            if open_notes.get(key, 0) <= 0:
                raise ValueError(f"note_off without matching note_on: channel {key[0]} note {key[1]}")
            open_notes[key] -= 1
    dangling = [k for k, n in open_notes.items() if n]
    if dangling:
        raise ValueError(f"unpaired note_on events: {sorted(dangling)}")

    # Piecewise-linear ms -> tick conversion through tempo changes, kept
    # exact with Fractions so rounding happens once per event.
    tempo_us = DEFAULT_TEMPO_US
    seg_t0 = 0
    seg_ticks0 = Fraction(0)

    def abs_ticks(t_ms: int) -> Fraction:
        return seg_ticks0 + Fraction((t_ms - seg_t0) * division * 1000, tempo_us)

    body = bytearray()
    prev_ticks = 0
    for ev in events:
        exact = abs_ticks(ev.t)
        ticks = int(exact) + (1 if exact - int(exact) >= Fraction(1, 2) else 0)
        body += _vlq(ticks - prev_ticks)
        prev_ticks = ticks
        if ev.kind == NOTE_ON:
            body += bytes((0x90 | ev.channel, ev.data1, ev.data2))
        elif ev.kind == NOTE_OFF:
            body += bytes((0x80 | ev.channel, ev.data1, ev.data2))
        elif ev.kind == CONTROL_CHANGE:
            body += bytes((0xB0 | ev.channel, ev.data1, ev.data2))
        else:  # tempo
            body += b"\xff\x51\x03" + ev.tempo_us_per_beat.to_bytes(3, "big")
            seg_ticks0 = exact
            seg_t0 = ev.t
            tempo_us = ev.tempo_us_per_beat
    body += b"\x00\xff\x2f\x00"  # end of track

    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, division)
    return header + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)
