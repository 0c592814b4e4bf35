"""Body-motion instrument: a camera view split into a note grid.

Incoming frames are row-major luminance matrices in [0, 1]. Per-cell
motion energy (mean absolute luminance change) drives note triggering
with hysteresis, so a performer literally plays the air in front of the
camera. On top of that sit three performance controls: an energy burst
advances the chord progression, the spatial spread of a whole verse
picks the next chord sequence, and a radial expansion or contraction
gesture transposes the key by a semitone.

Chord tones are tiled over the grid in row-major order, rising
left-to-right then top-to-bottom, so screen position maps to pitch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .events import clamp, round_half_away
from .music import (
    Harmony,
    MidiEvent,
    NOTE_OFF,
    NOTE_ON,
    builtin_harmony,
    scale_degree_note,
)

IAMASCOPE_CHANNEL = 2

ON_THRESH = 0.20
OFF_THRESH = 0.10
PROGRESSION_THRESHOLD = 0.5   # mean grid energy that counts as a burst
PROGRESSION_REFRACTORY_MS = 1000
KEY_WINDOW_MS = 500
KEY_RATIO = 1.3               # radial growth/shrink that reads as a key gesture
KEY_REFRACTORY_MS = 2000
TRIAD_DEGREES = (1, 3, 5)
DEFAULT_BASE_OCTAVE = 4
DEFAULT_GRID = (8, 8)

# Three four-chord cycles over the built-in harmonies.
DEFAULT_SEQUENCES = (
    ("Eb_major", "F_minor", "G_minor", "Ab_major"),
    ("Eb_major", "Ab_major", "F_minor", "G_minor"),
    ("G_minor", "F_minor", "Ab_major", "Eb_major"),
)


@dataclass(frozen=True)
class FrameGrid:
    """Per-cell motion energy, all values in [0, 1]."""

    rows: int
    cols: int
    energy: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0:
            raise ValueError("grid dimensions must be positive")
        if len(self.energy) != self.rows or any(len(r) != self.cols for r in self.energy):
            raise ValueError("energy matrix does not match grid dimensions")
        for row in self.energy:
            for v in row:
                if not 0.0 <= v <= 1.0:
                    raise ValueError(f"cell energy {v} outside [0, 1]")

    def mean_energy(self) -> float:
        return sum(sum(row) for row in self.energy) / (self.rows * self.cols)


def motion_energy(prev_frame, cur_frame, rows: int, cols: int) -> FrameGrid:
    """Mean absolute luminance change per grid cell, clamped to [0, 1].

    Frame dimensions must be whole multiples of the grid dimensions so
    each cell owns an equal pixel block.
    """
    fr = len(prev_frame)
    fc = len(prev_frame[0]) if fr else 0
    if len(cur_frame) != fr or any(len(r) != fc for r in prev_frame) or any(
        len(r) != fc for r in cur_frame
    ):
        raise ValueError("frames differ in shape")
    if fr == 0 or fc == 0 or fr % rows != 0 or fc % cols != 0:
        raise ValueError(f"frame {fr}x{fc} does not tile a {rows}x{cols} grid")
    br, bc = fr // rows, fc // cols
    area = br * bc
    cells = []
    for gr in range(rows):
        row_vals = []
        for gc in range(cols):
            acc = 0.0
            for pr in range(gr * br, (gr + 1) * br):
                prow = prev_frame[pr]
                crow = cur_frame[pr]
                for pc in range(gc * bc, (gc + 1) * bc):
                    acc += abs(crow[pc] - prow[pc])
            row_vals.append(min(1.0, acc / area))
        cells.append(tuple(row_vals))
    return FrameGrid(rows, cols, tuple(cells))


def assign_notes(chord: Harmony, key_offset: int, rows: int, cols: int,
                 base_octave: int = DEFAULT_BASE_OCTAVE) -> dict:
    """Chord tones (degrees 1, 3, 5 across rising octaves) tiled over the
    cells row-major, transposed by key_offset, clamped to MIDI range."""
    notes = {}
    for i in range(rows * cols):
        cell = divmod(i, cols)
        degree = TRIAD_DEGREES[i % 3] + 7 * (i // 3)
        notes[cell] = clamp(scale_degree_note(chord, base_octave, degree) + key_offset, 0, 127)
    return notes


def _zero_histogram(rows: int, cols: int):
    return tuple((0.0,) * cols for _ in range(rows))


@dataclass(frozen=True)
class ProgressionState:
    """Where the performance sits in its chord sequences, plus the note
    table, sounding cells and per-verse energy bookkeeping."""

    sequences: tuple = DEFAULT_SEQUENCES
    sequence_id: int = 0
    position: int = 0
    key_offset: int = 0
    rows: int = DEFAULT_GRID[0]
    cols: int = DEFAULT_GRID[1]
    base_octave: int = DEFAULT_BASE_OCTAVE
    cell_notes: dict = field(default_factory=dict)
    active_cells: frozenset = frozenset()
    verse_energy_histogram: tuple = ()
    prev_total: float = 0.0
    last_advance_at: int | None = None
    last_key_change_at: int | None = None
    radius_history: tuple = ()  # (t, radius-or-None) per processed tick

    def __post_init__(self):
        if not self.sequences:
            raise ValueError("at least one chord sequence is required")
        if not 0 <= self.position < len(self.sequences[self.sequence_id]):
            raise ValueError("position outside the current sequence")
        if not -11 <= self.key_offset <= 11:
            raise ValueError(f"key_offset {self.key_offset} outside -11..11")

    def chord(self) -> Harmony:
        return builtin_harmony(self.sequences[self.sequence_id][self.position])


def initial_grid_state(rows: int = DEFAULT_GRID[0], cols: int = DEFAULT_GRID[1],
                       sequences=DEFAULT_SEQUENCES,
                       base_octave: int = DEFAULT_BASE_OCTAVE) -> ProgressionState:
    state = ProgressionState(
        sequences=tuple(tuple(s) for s in sequences),
        rows=rows,
        cols=cols,
        base_octave=base_octave,
        verse_energy_histogram=_zero_histogram(rows, cols),
    )
    return replace(state, cell_notes=assign_notes(state.chord(), 0, rows, cols, base_octave))


def _close_all(state: ProgressionState, t: int) -> tuple[list[MidiEvent], ProgressionState]:
    events = [
        MidiEvent(t=t, kind=NOTE_OFF, channel=IAMASCOPE_CHANNEL,
                  data1=state.cell_notes[cell], data2=0)
        for cell in sorted(state.active_cells)
    ]
    return events, replace(state, active_cells=frozenset())


def _rechord(state: ProgressionState, t: int) -> tuple[list[MidiEvent], ProgressionState]:
    """Force-close sounding cells and rebuild the note table; called on
    every chord or key change so no note outlives its assignment."""
    events, state = _close_all(state, t)
    notes = assign_notes(state.chord(), state.key_offset, state.rows, state.cols,
                         state.base_octave)
    return events, replace(state, cell_notes=notes)


def select_sequence(histogram, num_sequences: int) -> int:
    """Pick the next sequence from where the verse's energy lived:
    left, center or right third of the grid; ties go low."""
    if num_sequences < 1:
        raise ValueError("num_sequences must be >= 1")
    cols = len(histogram[0]) if histogram else 0
    if cols == 0:
        return 0
    bands = [0.0, 0.0, 0.0]
    for row in histogram:
        for c, v in enumerate(row):
            bands[min(2, c * 3 // cols)] += v
    best = max(range(3), key=lambda i: (bands[i], -i))
    return best % num_sequences


def progression_step(state: ProgressionState, total_energy: float,
                     t: int) -> tuple[list[MidiEvent], ProgressionState]:
    """Advance the chord on an upward burst through the energy threshold,
    at most once a second; wrapping around the sequence ends the verse
    and picks the next sequence from the verse's energy histogram."""
    crossed = state.prev_total < PROGRESSION_THRESHOLD <= total_energy
    ready = state.last_advance_at is None or t - state.last_advance_at >= PROGRESSION_REFRACTORY_MS
    if not (crossed and ready):
        return [], replace(state, prev_total=total_energy)
    seq_len = len(state.sequences[state.sequence_id])
    position = state.position + 1
    if position >= seq_len:
        seq_id = select_sequence(state.verse_energy_histogram, len(state.sequences))
        state = replace(
            state,
            position=0,
            sequence_id=seq_id,
            verse_energy_histogram=_zero_histogram(state.rows, state.cols),
        )
    else:
        state = replace(state, position=position)
    state = replace(state, prev_total=total_energy, last_advance_at=t)
    return _rechord(state, t)


def cell_triggers(grid: FrameGrid, state: ProgressionState, t: int,
                  on_thresh: float = ON_THRESH,
                  off_thresh: float = OFF_THRESH) -> tuple[list[MidiEvent], ProgressionState]:
    """Hysteresis note triggering: a cell starts sounding at on_thresh
    with velocity proportional to its energy and stops at off_thresh."""
    if on_thresh <= off_thresh:
        raise ValueError("on_thresh must exceed off_thresh")
    events = []
    active = set(state.active_cells)
    histogram = [list(row) for row in state.verse_energy_histogram]
    for r in range(grid.rows):
        for c in range(grid.cols):
            cell = (r, c)
            e = grid.energy[r][c]
            histogram[r][c] += e
            if cell not in active and e >= on_thresh:
                active.add(cell)
                velocity = max(1, round_half_away(127.0 * e))
                events.append(MidiEvent(t=t, kind=NOTE_ON, channel=IAMASCOPE_CHANNEL,
                                        data1=state.cell_notes[cell], data2=velocity))
            elif cell in active and e <= off_thresh:
                active.remove(cell)
                events.append(MidiEvent(t=t, kind=NOTE_OFF, channel=IAMASCOPE_CHANNEL,
                                        data1=state.cell_notes[cell], data2=0))
    state = replace(
        state,
        active_cells=frozenset(active),
        verse_energy_histogram=tuple(tuple(row) for row in histogram),
    )
    return events, state


def active_radius(grid: FrameGrid, state: ProgressionState) -> float | None:
    """Energy-weighted mean distance of sounding cells from grid center,
    or None while nothing sounds."""
    if not state.active_cells:
        return None
    cr = (grid.rows - 1) / 2.0
    cc = (grid.cols - 1) / 2.0
    wsum = 0.0
    rsum = 0.0
    for (r, c) in state.active_cells:
        w = grid.energy[r][c]
        wsum += w
        rsum += w * math.hypot(r - cr, c - cc)
    if wsum <= 0.0:
        return None
    return rsum / wsum


def key_change_gesture(radii: list) -> int | None:
    """+1 for a monotone radial expansion of at least 30% over the
    window, -1 for the mirror contraction, None otherwise. Any None in
    the window (a tick with no sounding cells) vetoes detection."""
    if len(radii) < 2 or any(r is None for r in radii):
        return None
    first, last = radii[0], radii[-1]
    if all(b >= a for a, b in zip(radii, radii[1:])):
        if (first > 0 and last / first >= KEY_RATIO) or (first == 0 and last > 0):
            return 1
    if all(b <= a for a, b in zip(radii, radii[1:])):
        if (last > 0 and first / last >= KEY_RATIO) or (last == 0 and first > 0):
            return -1
    return None


def _wrap_offset(offset: int) -> int:
    return (offset + 11) % 23 - 11


class GridInstrument:
    """Tick-by-tick driver around the pure pieces.

    Feed it one frame per tick when available; ticks without a fresh
    frame are skipped entirely, so a slow camera just plays sparser.
    The first frame only primes the differencer.
    """

    def __init__(self, rows: int = DEFAULT_GRID[0], cols: int = DEFAULT_GRID[1],
                 sequences=DEFAULT_SEQUENCES, base_octave: int = DEFAULT_BASE_OCTAVE,
                 on_thresh: float = ON_THRESH, off_thresh: float = OFF_THRESH):
        self.state = initial_grid_state(rows, cols, sequences, base_octave)
        self.on_thresh = on_thresh
        self.off_thresh = off_thresh
        self._prev_frame = None

    def tick(self, frame, t: int) -> list[MidiEvent]:
        if frame is None:
            return []
        prev = self._prev_frame if self._prev_frame is not None else frame
        self._prev_frame = frame
        grid = motion_energy(prev, frame, self.state.rows, self.state.cols)

        events, state = progression_step(self.state, grid.mean_energy(), t)
        trig, state = cell_triggers(grid, state, t, self.on_thresh, self.off_thresh)
        events.extend(trig)

        radius = active_radius(grid, state)
        window_start = t - KEY_WINDOW_MS
        history = tuple(
            (ht, hr) for ht, hr in state.radius_history if ht > window_start
        ) + ((t, radius),)
        state = replace(state, radius_history=history)

        ticks_in_window = KEY_WINDOW_MS // 20
        ready = (
            state.last_key_change_at is None
            or t - state.last_key_change_at >= KEY_REFRACTORY_MS
        )
        if ready and len(history) == ticks_in_window:
            direction = key_change_gesture([hr for _, hr in history])
            if direction is not None:
                state = replace(
                    state,
                    key_offset=_wrap_offset(state.key_offset + direction),
                    last_key_change_at=t,
                    radius_history=(),
                )
                closed, state = _rechord(state, t)
                events.extend(closed)
        self.state = state
        return events

    def flush(self, t: int) -> list[MidiEvent]:
        """Close anything still sounding (end of session)."""
        events, self.state = _close_all(self.state, t)
        return events
