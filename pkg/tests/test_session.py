"""Session engine, batch replay, demo traces, and the CLI."""

import json
from pathlib import Path

import pytest

from houseband.cli import main
from houseband.events import SensorEvent, Trace, TraceHeader, parse_trace, serialize_trace
from houseband.music import CONTROL_CHANGE, NOTE_ON
from houseband.session import (
    ALL_INSTRUMENTS,
    DEMO_NAMES,
    Engine,
    SessionConfig,
    default_port,
    demo_trace,
    run_batch,
    tick_of,
)

EMPTY_SMF = bytes.fromhex("4d546864000000060000000101e0"
                          "4d54726b0000000400ff2f00")


def make_trace(events, seed=0, config=None, rows=8, cols=8):
    header = TraceHeader(seed=seed, grid_rows=rows, grid_cols=cols,
                         instrument_config=config or {})
    return Trace(header=header, events=tuple(events))


class TestConfig:
    def test_instruments_validated(self):
        with pytest.raises(ValueError, match="at least one"):
            SessionConfig(instruments=())
        with pytest.raises(ValueError, match="unknown instrument"):
            SessionConfig(instruments=("theremin",))

    def test_default_port_env_override(self, monkeypatch):
        monkeypatch.delenv("HB_PORT", raising=False)
        assert default_port() == 7788
        monkeypatch.setenv("HB_PORT", "9100")
        assert default_port() == 9100

    def test_all_instruments(self):
        assert ALL_INSTRUMENTS == ("tangible_note", "tangible_sonic", "doll", "iamascope")


class TestTickOf:
    def test_rounds_up_to_grid(self):
        assert tick_of(0) == 0
        assert tick_of(1) == 20
        assert tick_of(20) == 20
        assert tick_of(21) == 40
        assert tick_of(999) == 1000


class TestEngine:
    def test_grid_mismatch_rejected(self):
        config = SessionConfig(grid_rows=4, grid_cols=4)
        with pytest.raises(ValueError, match="grid"):
            Engine(config, TraceHeader(grid_rows=8, grid_cols=8))

    def test_unknown_config_key_warns(self):
        engine = Engine(SessionConfig(), TraceHeader(instrument_config={"reverb": 1}))
        assert any("reverb" in w for w in engine.report.warnings)

    def test_unsupported_sample_rate_rejected(self):
        with pytest.raises(ValueError, match="sample rate"):
            Engine(SessionConfig(sample_rate=1234), TraceHeader())
        with pytest.raises(ValueError, match="sample rate"):
            Engine(SessionConfig(), TraceHeader(instrument_config={"sample_rate": 96_000}))

    def test_seed_precedence(self):
        header = TraceHeader(seed=1)
        assert Engine(SessionConfig(), header).seed == 1
        assert Engine(SessionConfig(seed=99), header).seed == 99

    def test_funnel_ranks_from_header(self):
        header = TraceHeader(instrument_config={"funnel_ranks": [0, 1, 2, 3]})
        engine = Engine(SessionConfig(), header)
        assert [f.harmony.name for f in engine.funnel_cfg] == [
            "Ab_major", "G_minor", "F_minor", "Eb_major",
        ]
        with pytest.raises(ValueError, match="permutation"):
            Engine(SessionConfig(), TraceHeader(instrument_config={"funnel_ranks": [0, 0, 2, 3]}))

    def test_bad_sequences_rejected(self):
        header = TraceHeader(instrument_config={"sequences": [["Eb_major"], []]})
        with pytest.raises(ValueError, match="sequences"):
            Engine(SessionConfig(), header)
        header = TraceHeader(instrument_config={"sequences": [["H_major"]]})
        with pytest.raises(ValueError, match="unknown harmony"):
            Engine(SessionConfig(), header)

    def test_state_view_shape(self):
        engine = Engine(SessionConfig(), TraceHeader())
        view = engine.state_view()
        assert view["type"] == "state"
        assert set(view) == {"type", "level", "harmony", "progression", "q", "track_freqs"}
        assert view["harmony"] == "Eb_major"
        assert len(view["track_freqs"]) == 5


class TestRunBatch:
    def test_empty_trace_notes_only(self):
        result = run_batch(SessionConfig(instruments=("tangible_note",)), make_trace([]))
        assert result.smf == EMPTY_SMF
        assert result.wav is None
        assert result.events == []
        assert result.report.event_counts == {"tangible_note": 0}

    def test_wav_only_with_sonic_enabled(self):
        trace = make_trace([SensorEvent(0, "faucet_flow", 1.0)])
        with_sonic = run_batch(SessionConfig(instruments=("tangible_sonic",)), trace)
        assert with_sonic.wav is not None and with_sonic.wav[:4] == b"RIFF"
        without = run_batch(SessionConfig(instruments=("tangible_note",)), trace)
        assert without.wav is None

    def test_counts_cover_all_events(self):
        trace, config = demo_trace("doll")
        result = run_batch(config, trace)
        assert sum(result.report.event_counts.values()) == len(result.events)
        assert len(result.events) > 0

    def test_events_sorted_with_stable_ties(self):
        events = [
            SensorEvent(0, "faucet_flow", 1.0),
            SensorEvent(0, "funnel_level_0", 0.5),
            SensorEvent(0, "touch_left_hand", 1.0),
            SensorEvent(0, "touch_right_hand", 1.0),
            SensorEvent(200, "faucet_flow", 1.0),
        ]
        result = run_batch(SessionConfig(instruments=("tangible_note", "doll")),
                           make_trace(events))
        ts = [e.t for e in result.events]
        assert ts == sorted(ts)
        at_zero = [e for e in result.events if e.t == 0]
        # water notes come ahead of doll controllers on the shared tick
        kinds = [e.kind for e in at_zero]
        assert kinds.index(NOTE_ON) < kinds.index(CONTROL_CHANGE)

    def test_off_grid_events_apply_at_next_tick(self):
        events = [SensorEvent(15, "faucet_flow", 1.0),
                  SensorEvent(15, "funnel_level_0", 0.5)]
        result = run_batch(SessionConfig(instruments=("tangible_note",)),
                           make_trace(events))
        first_on = next(e for e in result.events if e.kind == NOTE_ON)
        assert first_on.t == 20

    def test_batch_is_deterministic(self):
        trace, config = demo_trace("water")
        a = run_batch(config, trace)
        b = run_batch(config, trace)
        assert a.smf == b.smf
        assert a.events == b.events
        assert a.report.as_dict() == b.report.as_dict()

    def test_seed_changes_notes(self):
        trace, _ = demo_trace("water")
        config = SessionConfig(instruments=("tangible_note",))
        reseeded = SessionConfig(instruments=("tangible_note",), seed=12345)
        a = run_batch(config, trace)
        b = run_batch(reseeded, trace)
        assert [e.data1 for e in a.events] != [e.data1 for e in b.events]


class TestDemos:
    def test_names(self):
        assert DEMO_NAMES == ("water", "sonic", "doll", "grid")
        with pytest.raises(ValueError, match="unknown demo"):
            demo_trace("kazoo")

    def test_traces_serialize_and_parse(self):
        for name in DEMO_NAMES:
            trace, _ = demo_trace(name)
            assert parse_trace(serialize_trace(trace)) == trace

    def test_water_demo_produces_notes(self):
        trace, config = demo_trace("water")
        result = run_batch(config, trace)
        ons = [e for e in result.events if e.kind == NOTE_ON]
        assert len(ons) > 50
        assert all(e.t % 20 == 0 for e in ons)

    def test_doll_demo_walks_to_level_three(self):
        trace, config = demo_trace("doll")
        result = run_batch(config, trace)
        levels = [(tr["before"], tr["after"]) for tr in result.report.level_transitions]
        assert levels == [(0, 1), (1, 2), (2, 3)]
        assert result.report.rhythm_outcomes == [{"t": 2500, "tempo_bpm": 120.0}]

    def test_grid_demo_advances_progression(self):
        trace, config = demo_trace("grid")
        result = run_batch(config, trace)
        assert result.report.progression_log != []
        ons = [e for e in result.events if e.kind == NOTE_ON]
        assert len(ons) >= 50  # the sweeping cell keeps firing

    def test_sonic_demo_renders_audio(self):
        trace, config = demo_trace("sonic")
        result = run_batch(config, trace)
        assert result.wav is not None
        assert len(result.wav) > 44100  # comfortably past the header


def write_demo(tmp_path, name="water"):
    trace, _ = demo_trace(name)
    path = tmp_path / f"{name}.ndjson"
    path.write_bytes(serialize_trace(trace))
    return path


class TestCli:
    def test_play_writes_outputs(self, tmp_path, capsys):
        trace_path = write_demo(tmp_path)
        report = tmp_path / "report.json"
        code = main(["play", str(trace_path), "--report", str(report)])
        assert code == 0
        assert (tmp_path / "water.mid").exists()
        assert "wrote" in capsys.readouterr().out
        loaded = json.loads(report.read_text())
        assert set(loaded) == {"event_counts", "level_transitions",
                               "progression_log", "rhythm_outcomes", "warnings"}

    def test_play_wav_flag_enables_audio(self, tmp_path):
        trace_path = write_demo(tmp_path, "sonic")
        wav = tmp_path / "out.wav"
        assert main(["play", str(trace_path), "--out-wav", str(wav)]) == 0
        assert wav.read_bytes()[:4] == b"RIFF"

    def test_play_missing_file(self, tmp_path, capsys):
        assert main(["play", str(tmp_path / "nope.ndjson")]) == 1
        assert "cannot read" in capsys.readouterr().err

    def test_play_invalid_trace(self, tmp_path, capsys):
        bad = tmp_path / "bad.ndjson"
        bad.write_text("not json\n")
        assert main(["play", str(bad)]) == 1
        assert "invalid trace" in capsys.readouterr().err

    def test_validate_ok(self, tmp_path, capsys):
        trace_path = write_demo(tmp_path, "doll")
        assert main(["validate", str(trace_path)]) == 0
        out = capsys.readouterr().out
        assert out.startswith("ok:")
        assert "seed 3" in out

    def test_validate_warns_on_unknown_config(self, tmp_path, capsys):
        trace = make_trace([], config={"chorus": True})
        path = tmp_path / "t.ndjson"
        path.write_bytes(serialize_trace(trace))
        assert main(["validate", str(path)]) == 0
        assert "chorus" in capsys.readouterr().out

    def test_validate_bad_trace(self, tmp_path, capsys):
        bad = tmp_path / "bad.ndjson"
        bad.write_text('{"format_version":9}\n')
        assert main(["validate", str(bad)]) == 1
        assert "line 1" in capsys.readouterr().err

    def test_demo_writes_bundle(self, tmp_path):
        assert main(["demo", "doll", "--out-dir", str(tmp_path)]) == 0
        assert (tmp_path / "demo_doll.ndjson").exists()
        assert (tmp_path / "demo_doll.mid").exists()
        assert (tmp_path / "demo_doll.report.json").exists()
        assert not (tmp_path / "demo_doll.wav").exists()  # no sonic instrument

    def test_demo_sonic_includes_wav(self, tmp_path):
        assert main(["demo", "sonic", "--out-dir", str(tmp_path)]) == 0
        assert (tmp_path / "demo_sonic.wav").exists()

    def test_unknown_subcommand_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            main(["conduct"])
        assert exc.value.code == 2
