"""The sensor doll's mind: gestures, interaction levels, music mappings.

The doll watches a one-second window of sensor snapshots, recognizes
gestures (with a reliability weight that drops while the doll is being
shaken), and feeds them through a five-level interaction automaton:

  0 idle, 1 noticed, 2 engaged, 3 musical communication, 4 overstimulated.

Level 3 is reached by tapping a steady rhythm at level 2; the captured
tempo becomes the beat grid for melody output. The same gesture maps to
different musical controls depending on the current level, via a
config-loadable mapping table keyed by (input kind, level). Input kinds
cover both recognized gestures and raw sensor channels, mirroring the
three information sources the interpreter combines: internal state,
gestures, and raw sensor data.

All behavior constants that are not forced by the recognizer rules
themselves are named here so they can be tuned in one place.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field, replace

from .events import TICK_MS, clamp, round_half_away
from .music import CONTROL_CHANGE, MidiEvent, NOTE_OFF, NOTE_ON

DOLL_CHANNEL = 1

WINDOW_MS = 1000          # recognition window
SITTING_FRACTION = 0.8    # share of window with hip proximity
BEND_CROSSING = 0.5       # arm bend level counted as a shake swing
BEND_GESTURE_MIN = 0.2    # minimum left-arm bend that reads as a gesture
TAP_THRESHOLD = 0.3       # g-force rising edge that reads as a tap
SHAKE_PENALTY = 0.5       # posture confidence lost per unit g-force
SUSTAIN_MS = 2000         # continuous gesturing that lifts level 1 to 2
CALM_MS = 3000            # quiet needed to leave level 4
DECAY_MS = 10_000         # quiet that drops the level one step
FLOOD_WINDOW_MS = 1000    # tap-flood lookback
FLOOD_LIMIT = 3           # taps per window beyond which the doll is overstimulated
RHYTHM_WINDOW_MS = 4000
RHYTHM_MIN_ONSETS = 4
RHYTHM_IOI_MS = (250, 2000)
RHYTHM_SPREAD = 0.3
FALLBACK_TEMPO_BPM = 120.0
DEFAULT_NOTE_MS = 200     # melody note length outside the tempo grid

GESTURE_KINDS = (
    "sitting",
    "hand_shake",
    "held",
    "hold_hands",
    "bend_left_hand",
    "rhythmic_input",
    "tap",
)
POSTURE_GESTURES = ("sitting", "held", "hold_hands", "bend_left_hand")

# Raw channels that may key mapping-table entries directly.
DOLL_INPUT_CHANNELS = (
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

CONTROL_FAMILIES = {
    "global": ("loudness", "harmony", "key", "tempo"),
    "breath": ("interval", "loudness", "resonance_intensity", "harmony_structure"),
    "voice": ("loudness", "filter_frequency", "speed", "delay_time"),
    "melody": ("note", "length", "loudness"),
    "rhythm": ("loudness", "pattern"),
}

# Fixed controller numbers; melody.note renders as note events instead.
CC_MAP = {
    ("global", "loudness"): 7,
    ("global", "tempo"): 3,
    ("global", "key"): 9,
    ("global", "harmony"): 14,
    ("breath", "interval"): 20,
    ("breath", "loudness"): 21,
    ("breath", "resonance_intensity"): 22,
    ("breath", "harmony_structure"): 23,
    ("voice", "loudness"): 24,
    ("voice", "filter_frequency"): 25,
    ("voice", "speed"): 26,
    ("voice", "delay_time"): 27,
    ("melody", "length"): 28,
    ("melody", "loudness"): 29,
    ("rhythm", "loudness"): 30,
    ("rhythm", "pattern"): 31,
}
LEVEL_MARKER_CC = 102


def bpm_to_cc(bpm: float) -> int:
    """Tempo controller encoding: value v means 30 + 2v BPM."""
    return clamp(round_half_away((bpm - 30.0) / 2.0), 0, 127)


def cc_to_bpm(value: int) -> float:
    return 30.0 + 2.0 * value


@dataclass(frozen=True)
class DollSnapshot:
    """Latest reading per doll sensor at one tick; absent channels are
    zero / false."""

    t: int
    touch_head: bool = False
    touch_belly: bool = False
    touch_back: bool = False
    touch_left_hand: bool = False
    touch_right_hand: bool = False
    bend: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    prox_hip: bool = False
    prox_nose: bool = False
    gforce: float = 0.0
    heat_in: float = 0.0
    heat_out: float = 0.0
    mic_level: float = 0.0


def snapshot_from_values(values: dict, t: int) -> DollSnapshot:
    def b(name):
        return values.get(name, 0.0) >= 0.5

    def f(name):
        return float(values.get(name, 0.0))

    return DollSnapshot(
        t=t,
        touch_head=b("touch_head"),
        touch_belly=b("touch_belly"),
        touch_back=b("touch_back"),
        touch_left_hand=b("touch_left_hand"),
        touch_right_hand=b("touch_right_hand"),
        bend=(f("bend_left_arm"), f("bend_right_arm"), f("bend_left_leg"), f("bend_right_leg")),
        prox_hip=b("prox_hip"),
        prox_nose=b("prox_nose"),
        gforce=f("gforce"),
        heat_in=f("heat_in"),
        heat_out=f("heat_out"),
        mic_level=f("mic_level"),
    )


@dataclass(frozen=True)
class Gesture:
    kind: str
    confidence: float = 1.0

    def __post_init__(self):
        if self.kind not in GESTURE_KINDS:
            raise ValueError(f"unknown gesture kind {self.kind!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


def _shake_crossings(window, bend_index: int, touch_attr: str) -> int:
    count = 0
    for prev, cur in zip(window, window[1:]):
        if not getattr(cur, touch_attr):
            continue
        if (prev.bend[bend_index] < BEND_CROSSING) != (cur.bend[bend_index] < BEND_CROSSING):
            count += 1
    return count


def recognize(window: list[DollSnapshot]) -> list[Gesture]:
    """Recognize gestures over the last second of snapshots.

    Hip proximity held through most of the window reads as sitting; a
    gripped hand whose arm swings across the bend midpoint twice reads
    as hand shaking; back touch plus nose proximity reads as being held.
    Posture readings lose confidence while the g-force sensor rattles.
    """
    if not window:
        raise ValueError("recognition window is empty")
    latest = window[-1]
    posture_conf = max(0.0, 1.0 - SHAKE_PENALTY * latest.gforce)
    gestures: list[Gesture] = []

    sitting = sum(1 for s in window if s.prox_hip) >= SITTING_FRACTION * len(window)
    if sitting:
        gestures.append(Gesture("sitting", posture_conf))
    if latest.touch_back and latest.prox_nose:
        gestures.append(Gesture("held", posture_conf))
    if latest.touch_left_hand and latest.touch_right_hand:
        gestures.append(Gesture("hold_hands", posture_conf))
    if (
        _shake_crossings(window, 0, "touch_left_hand") >= 2
        or _shake_crossings(window, 1, "touch_right_hand") >= 2
    ):
        gestures.append(Gesture("hand_shake", 1.0))
    if latest.bend[0] > BEND_GESTURE_MIN:
        gestures.append(Gesture("bend_left_hand", posture_conf))
    if len(window) >= 2 and window[-2].gforce <= TAP_THRESHOLD < latest.gforce:
        gestures.append(Gesture("tap", 1.0))
    return gestures


def rhythm_detect(onsets: list[int]) -> float | None:
    """Tempo from evenly spaced taps, or None.

    Needs at least four onsets within four seconds of the newest one;
    the inter-onset intervals must sit in the playable range and agree
    to within 30% of their median, which then sets the tempo.
    """
    if not onsets:
        return None
    last = onsets[-1]
    window = [x for x in onsets if x > last - RHYTHM_WINDOW_MS]
    if len(window) < RHYTHM_MIN_ONSETS:
        return None
    iois = [b - a for a, b in zip(window, window[1:])]
    lo, hi = RHYTHM_IOI_MS
    if any(ioi < lo or ioi > hi for ioi in iois):
        return None
    med = statistics.median(iois)
    if (max(iois) - min(iois)) / med >= RHYTHM_SPREAD:
        return None
    return 60000.0 / med


@dataclass(frozen=True)
class InteractionState:
    """Interaction level plus the dwell and decay bookkeeping around it."""

    level: int = 0
    entered_at: int = 0
    tempo_bpm: float | None = None
    onset_buffer: tuple[int, ...] = ()
    last_gesture_at: int | None = None
    sustain_since: int | None = None


def step_automaton(state: InteractionState, gestures: list[Gesture], t: int) -> InteractionState:
    """Advance the interaction automaton one tick; first matching rule wins.

    Rules, in order: a level-2 rhythm lifts to 3 (capturing tempo); a
    flood of taps overstimulates to 4 from anywhere; three calm seconds
    settle 4 back to 2; any gesture wakes 0 to 1; held hands or two
    seconds of sustained gesturing lift 1 to 2; ten silent seconds decay
    the level one step.
    """
    if t < state.entered_at:
        raise ValueError(f"t={t} precedes entered_at={state.entered_at}")
    kinds = {g.kind for g in gestures}
    taps = sum(1 for g in gestures if g.kind == "tap")
    buffer = tuple(x for x in state.onset_buffer if x > t - RHYTHM_WINDOW_MS) + (t,) * taps

    any_gesture = bool(gestures)
    last_gesture_at = t if any_gesture else state.last_gesture_at
    if any_gesture:
        sustain_since = state.sustain_since if state.sustain_since is not None else t
    else:
        sustain_since = None
    quiet_from = state.entered_at if last_gesture_at is None else max(last_gesture_at, state.entered_at)
    quiet_ms = t - quiet_from
    flood = sum(1 for x in buffer if x > t - FLOOD_WINDOW_MS) > FLOOD_LIMIT

    level = state.level
    tempo = state.tempo_bpm
    new_level = None
    if level == 2 and ("rhythmic_input" in kinds or rhythm_detect(list(buffer)) is not None):
        new_level = 3
        detected = rhythm_detect(list(buffer))
        tempo = detected if detected is not None else FALLBACK_TEMPO_BPM
    elif flood and level != 4:
        new_level = 4
    elif level == 4 and quiet_ms >= CALM_MS:
        new_level = 2
    elif level == 0 and any_gesture:
        new_level = 1
    elif level == 1 and (
        "held" in kinds
        or "hold_hands" in kinds
        or (sustain_since is not None and t - sustain_since >= SUSTAIN_MS)
    ):
        new_level = 2
    elif level >= 1 and quiet_ms >= DECAY_MS:
        new_level = level - 1

    if new_level is None:
        new_level = level
        entered_at = state.entered_at
    else:
        entered_at = t
    if new_level != 3:
        tempo = None
    return InteractionState(
        level=new_level,
        entered_at=entered_at,
        tempo_bpm=tempo,
        onset_buffer=buffer,
        last_gesture_at=last_gesture_at,
        sustain_since=sustain_since,
    )


@dataclass(frozen=True)
class ControlTarget:
    family: str
    parameter: str

    def __post_init__(self):
        params = CONTROL_FAMILIES.get(self.family)
        if params is None:
            raise ValueError(f"unknown control family {self.family!r}")
        if self.parameter not in params:
            raise ValueError(f"{self.parameter!r} is not a {self.family} parameter")

    def controller(self) -> int | None:
        return CC_MAP.get((self.family, self.parameter))


@dataclass(frozen=True)
class MappingEntry:
    kind: str  # gesture kind or raw doll channel
    level: int
    target: ControlTarget
    gain: float = 127.0
    offset: float = 0.0
    clamp_lo: int = 0
    clamp_hi: int = 127

    def __post_init__(self):
        if self.kind not in GESTURE_KINDS and self.kind not in DOLL_INPUT_CHANNELS:
            raise ValueError(f"unknown mapping input kind {self.kind!r}")
        if not 0 <= self.level <= 4:
            raise ValueError(f"level {self.level} outside 0-4")

    def apply(self, x: float) -> int:
        v = round_half_away(self.gain * x + self.offset)
        return clamp(clamp(v, self.clamp_lo, self.clamp_hi), 0, 127)


@dataclass(frozen=True)
class MappingTable:
    entries: tuple[MappingEntry, ...]
    lookup: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lookup = {}
        for e in self.entries:
            key = (e.kind, e.level)
            if key in lookup:
                raise ValueError(f"duplicate mapping for {key}")
            lookup[key] = e
        object.__setattr__(self, "lookup", lookup)


def map_gesture(state: InteractionState, gesture: Gesture, raw_value: float,
                table: MappingTable) -> list[tuple[ControlTarget, int]]:
    """Resolve one gesture against the table at the current level."""
    return map_input(state, gesture.kind, raw_value, gesture.confidence, table)


def map_input(state: InteractionState, kind: str, raw_value: float, confidence: float,
              table: MappingTable) -> list[tuple[ControlTarget, int]]:
    entry = table.lookup.get((kind, state.level))
    if entry is None:
        return []
    return [(entry.target, entry.apply(raw_value * confidence))]


def _t(family: str, parameter: str) -> ControlTarget:
    return ControlTarget(family, parameter)


def default_mapping_table() -> MappingTable:
    """Thirty mappings; the five fixed rows first, the rest shaped so most
    of the doll's musical vocabulary opens up at level 3."""
    e = MappingEntry
    entries = (
        # Fixed rows.
        e("hold_hands", 2, _t("breath", "harmony_structure")),
        e("hold_hands", 3, _t("melody", "loudness")),
        e("bend_left_hand", 1, _t("voice", "filter_frequency")),
        e("bend_left_hand", 2, _t("global", "harmony"), gain=3.0),
        e("bend_left_hand", 3, _t("melody", "note"), gain=48.0, offset=48.0),
        # Level 3: the doll as a playable controller.
        e("sitting", 3, _t("global", "tempo"), gain=30.0, offset=30.0),
        e("hand_shake", 3, _t("rhythm", "pattern"), gain=7.0),
        e("held", 3, _t("breath", "resonance_intensity")),
        e("tap", 3, _t("rhythm", "loudness")),
        e("rhythmic_input", 3, _t("melody", "length")),
        e("touch_head", 3, _t("voice", "loudness")),
        e("touch_belly", 3, _t("breath", "loudness")),
        e("touch_back", 3, _t("breath", "interval"), gain=-96.0, offset=127.0),
        e("bend_right_arm", 3, _t("voice", "speed")),
        e("bend_left_leg", 3, _t("voice", "delay_time")),
        e("bend_right_leg", 3, _t("global", "loudness"), gain=64.0, offset=63.0),
        e("mic_level", 3, _t("global", "key"), gain=24.0, offset=52.0),
        e("heat_out", 3, _t("breath", "harmony_structure"), gain=64.0),
        e("prox_nose", 3, _t("global", "harmony"), gain=3.0),
        # Earlier levels: sparser, gentler responses.
        e("hold_hands", 1, _t("breath", "interval")),
        e("sitting", 1, _t("global", "loudness"), gain=-64.0, offset=127.0),
        e("sitting", 2, _t("breath", "interval")),
        e("held", 1, _t("global", "loudness")),
        e("held", 2, _t("breath", "harmony_structure"), gain=64.0, offset=32.0),
        e("hand_shake", 1, _t("rhythm", "loudness")),
        e("hand_shake", 2, _t("global", "tempo"), gain=30.0, offset=30.0),
        e("tap", 1, _t("melody", "length")),
        e("tap", 2, _t("rhythm", "pattern"), gain=7.0),
        e("touch_head", 1, _t("voice", "filter_frequency")),
        e("touch_belly", 2, _t("breath", "resonance_intensity")),
    )
    return MappingTable(entries)


def load_mapping_table(path: str) -> MappingTable:
    """Load a mapping table from JSON: a list of objects with kind, level,
    family, parameter and optional gain/offset/clamp_lo/clamp_hi."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise ValueError("mapping table file must hold a JSON array")
    entries = []
    for item in raw:
        entries.append(
            MappingEntry(
                kind=item["kind"],
                level=item["level"],
                target=ControlTarget(item["family"], item["parameter"]),
                gain=float(item.get("gain", 127.0)),
                offset=float(item.get("offset", 0.0)),
                clamp_lo=int(item.get("clamp_lo", 0)),
                clamp_hi=int(item.get("clamp_hi", 127)),
            )
        )
    return MappingTable(tuple(entries))


def _gesture_raw_value(gesture: Gesture, snapshot: DollSnapshot) -> float:
    if gesture.kind == "bend_left_hand":
        return snapshot.bend[0]
    if gesture.kind in ("hand_shake", "tap"):
        return snapshot.gforce
    return 1.0


def _channel_raw_value(kind: str, snapshot: DollSnapshot) -> float:
    if kind.startswith("touch_") or kind.startswith("prox_"):
        return 1.0 if getattr(snapshot, kind) else 0.0
    if kind == "bend_left_arm":
        return snapshot.bend[0]
    if kind == "bend_right_arm":
        return snapshot.bend[1]
    if kind == "bend_left_leg":
        return snapshot.bend[2]
    if kind == "bend_right_leg":
        return snapshot.bend[3]
    return getattr(snapshot, kind)


@dataclass(frozen=True)
class DollState:
    """Everything the doll carries between ticks."""

    interaction: InteractionState = InteractionState()
    window: tuple[DollSnapshot, ...] = ()
    cc_sent: tuple[tuple[int, int], ...] = ()  # (controller, value) latches
    last_melody_note: int | None = None


def _quantized_note_time(t: int, inter: InteractionState) -> int:
    if inter.level == 3 and inter.tempo_bpm:
        beat = 60000.0 / inter.tempo_bpm
        steps = math.ceil((t - inter.entered_at) / beat - 1e-9)
        grid = inter.entered_at + steps * beat
        aligned = round_half_away(grid / TICK_MS) * TICK_MS
        return max(t, aligned)
    return t


def doll_tick(state: DollState, snapshot: DollSnapshot, table: MappingTable,
              t: int) -> tuple[DollState, list[MidiEvent]]:
    """One 20 ms tick: recognize, step the automaton, map to MIDI.

    Controller values are latched and re-sent only on change; melody
    notes fire on a change of mapped note value, snapped up to the
    captured tempo grid while at level 3. Level changes additionally
    emit a state marker controller.
    """
    if t % TICK_MS != 0:
        raise ValueError(f"t={t} is not on the {TICK_MS} ms tick grid")
    window = tuple(s for s in state.window if s.t > t - WINDOW_MS) + (snapshot,)
    gestures = recognize(list(window))
    before = state.interaction
    inter = step_automaton(before, gestures, t)

    events: list[MidiEvent] = []
    if inter.level != before.level:
        events.append(
            MidiEvent(t=t, kind=CONTROL_CHANGE, channel=DOLL_CHANNEL,
                      data1=LEVEL_MARKER_CC, data2=inter.level)
        )
        if inter.level == 3 and inter.tempo_bpm is not None:
            events.append(
                MidiEvent(t=t, kind=CONTROL_CHANGE, channel=DOLL_CHANNEL,
                          data1=CC_MAP[("global", "tempo")], data2=bpm_to_cc(inter.tempo_bpm))
            )

    outputs: list[tuple[ControlTarget, int]] = []
    for g in gestures:
        outputs.extend(map_gesture(inter, g, _gesture_raw_value(g, snapshot), table))
    for kind in DOLL_INPUT_CHANNELS:
        if (kind, inter.level) in table.lookup:
            outputs.extend(map_input(inter, kind, _channel_raw_value(kind, snapshot), 1.0, table))

    latches = dict(state.cc_sent)
    melody_note = state.last_melody_note
    for target, value in outputs:
        if target.family == "melody" and target.parameter == "note":
            if value != melody_note:
                melody_note = value
                t_on = _quantized_note_time(t, inter)
                if inter.level == 3 and inter.tempo_bpm:
                    length = max(TICK_MS, round_half_away(30000.0 / inter.tempo_bpm))
                else:
                    length = DEFAULT_NOTE_MS
                events.append(MidiEvent(t=t_on, kind=NOTE_ON, channel=DOLL_CHANNEL,
                                        data1=value, data2=100))
                events.append(MidiEvent(t=t_on + length, kind=NOTE_OFF, channel=DOLL_CHANNEL,
                                        data1=value, data2=0))
            continue
        cc = target.controller()
        if cc is None:
            continue
        if latches.get(cc) != value:
            latches[cc] = value
            events.append(MidiEvent(t=t, kind=CONTROL_CHANGE, channel=DOLL_CHANNEL,
                                    data1=cc, data2=value))

    new_state = DollState(
        interaction=inter,
        window=window,
        cc_sent=tuple(sorted(latches.items())),
        last_melody_note=melody_note,
    )
    return new_state, events
