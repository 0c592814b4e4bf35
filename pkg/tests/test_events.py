"""Trace parsing, serialization, and the deterministic RNG."""

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from houseband.events import (
    FRAME_CHANNEL,
    SCALAR_CHANNELS,
    RngStream,
    SensorEvent,
    Trace,
    TraceError,
    TraceHeader,
    clamp,
    coerce_value,
    latest_values,
    parse_trace,
    round_half_away,
    serialize_trace,
)

HEADER_LINE = b'{"format_version":1,"seed":7,"grid_rows":8,"grid_cols":8,"instrument_config":{}}'


def reference_splitmix64(seed):
    """Independent SplitMix64, straight from the published algorithm."""
    mask = (1 << 64) - 1
    state = seed & mask

    def step():
        nonlocal state
        state = (state + 0x9E3779B97F4A7C15) & mask
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        return z ^ (z >> 31)

    return step


class TestRounding:
    def test_half_away_examples(self):
        assert round_half_away(0.5) == 1
        assert round_half_away(1.5) == 2
        assert round_half_away(2.5) == 3
        assert round_half_away(-0.5) == -1
        assert round_half_away(-1.5) == -2
        assert round_half_away(0.49) == 0
        assert round_half_away(-0.49) == 0
        assert round_half_away(31.5) == 32

    def test_clamp(self):
        assert clamp(5, 0, 3) == 3
        assert clamp(-1, 0, 3) == 0
        assert clamp(2, 0, 3) == 2


class TestRngStream:
    def test_seed_zero_known_vector(self):
        rng = RngStream(0)
        assert rng.next_u64() == 0xE220A8397B1DCDAF

    def test_matches_reference_for_many_seeds(self):
        for seed in (0, 1, 42, 2**63, 2**64 - 1, 0xDEADBEEF):
            rng = RngStream(seed)
            ref = reference_splitmix64(seed)
            for _ in range(64):
                assert rng.next_u64() == ref()

    def test_seed_wraps_to_64_bits(self):
        assert RngStream(2**64 + 5).next_u64() == RngStream(5).next_u64()

    def test_below_range_and_determinism(self):
        a = RngStream(99)
        b = RngStream(99)
        seq_a = [a.below(13) for _ in range(200)]
        seq_b = [b.below(13) for _ in range(200)]
        assert seq_a == seq_b
        assert all(0 <= v < 13 for v in seq_a)

    def test_below_one_is_always_zero(self):
        rng = RngStream(1)
        assert [rng.below(1) for _ in range(10)] == [0] * 10

    def test_below_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            RngStream(0).below(0)
        with pytest.raises(ValueError):
            RngStream(0).below(-3)

    def test_below_matches_rejection_oracle(self):
        # Replay the documented rejection rule on the reference stream.
        n = 6
        limit = (1 << 64) - ((1 << 64) % n)
        ref = reference_splitmix64(7)
        expected = []
        while len(expected) < 100:
            z = ref()
            if z < limit:
                expected.append(z % n)
        rng = RngStream(7)
        assert [rng.below(n) for _ in range(100)] == expected

    def test_below_roughly_uniform(self):
        rng = RngStream(2024)
        counts = [0] * 6
        draws = 60_000
        for _ in range(draws):
            counts[rng.below(6)] += 1
        for c in counts:
            assert abs(c - draws / 6) < draws * 0.01

    def test_clone_diverges_independently(self):
        rng = RngStream(5)
        rng.next_u64()
        twin = rng.clone()
        assert rng.next_u64() == twin.next_u64()
        rng.next_u64()  # advancing one side leaves the other alone
        assert twin.clone().next_u64() == RngStream(twin.state).next_u64()


class TestParseTrace:
    def test_header_round_trip(self):
        trace = parse_trace(HEADER_LINE + b"\n")
        assert trace.header == TraceHeader(seed=7)
        assert trace.events == ()
        assert serialize_trace(trace) == HEADER_LINE + b"\n"

    def test_events_round_trip_bytes(self):
        body = (
            HEADER_LINE + b"\n"
            b'{"t":0,"channel":"faucet_flow","value":0.5}\n'
            b'{"t":40,"channel":"touch_head","value":1}\n'
        )
        trace = parse_trace(body)
        assert [e.channel for e in trace.events] == ["faucet_flow", "touch_head"]
        reparsed = parse_trace(serialize_trace(trace))
        assert reparsed == trace

    def test_frame_round_trip(self):
        frame = [[0.0] * 8 for _ in range(8)]
        frame[2][3] = 1.0
        line = json.dumps({"t": 20, "channel": "frame", "value": frame},
                          separators=(",", ":"))
        trace = parse_trace(HEADER_LINE + b"\n" + line.encode() + b"\n")
        ev = trace.events[0]
        assert isinstance(ev.value, tuple)
        assert ev.value[2][3] == 1.0
        assert parse_trace(serialize_trace(trace)) == trace

    def test_empty_input_rejected(self):
        with pytest.raises(TraceError) as exc:
            parse_trace(b"")
        assert exc.value.line_no == 1

    def test_bad_format_version(self):
        bad = HEADER_LINE.replace(b'"format_version":1', b'"format_version":2')
        with pytest.raises(TraceError, match="format_version"):
            parse_trace(bad + b"\n")

    def test_missing_header_field(self):
        head = json.loads(HEADER_LINE)
        del head["seed"]
        with pytest.raises(TraceError, match="seed"):
            parse_trace(json.dumps(head).encode() + b"\n")

    def test_error_carries_line_number(self):
        body = HEADER_LINE + b"\n" + b'{"t":0,"channel":"faucet_flow","value":2.0}\n'
        with pytest.raises(TraceError) as exc:
            parse_trace(body)
        assert exc.value.line_no == 2
        assert "line 2" in str(exc.value)

    def test_unknown_channel_rejected(self):
        body = HEADER_LINE + b"\n" + b'{"t":0,"channel":"bogus","value":0.5}\n'
        with pytest.raises(TraceError, match="unknown channel"):
            parse_trace(body)

    def test_timestamp_regression_rejected(self):
        body = (
            HEADER_LINE + b"\n"
            b'{"t":40,"channel":"faucet_flow","value":0.5}\n'
            b'{"t":20,"channel":"faucet_flow","value":0.5}\n'
        )
        with pytest.raises(TraceError) as exc:
            parse_trace(body)
        assert exc.value.line_no == 3

    def test_boolean_value_rejected(self):
        body = HEADER_LINE + b"\n" + b'{"t":0,"channel":"touch_head","value":true}\n'
        with pytest.raises(TraceError, match="number"):
            parse_trace(body)

    def test_frame_must_tile_grid(self):
        frame = [[0.0] * 9 for _ in range(8)]  # 9 columns cannot tile 8
        line = json.dumps({"t": 0, "channel": "frame", "value": frame})
        with pytest.raises(TraceError, match="tile"):
            parse_trace(HEADER_LINE + b"\n" + line.encode() + b"\n")

    def test_ragged_frame_rejected(self):
        line = json.dumps({"t": 0, "channel": "frame",
                           "value": [[0.0] * 8, [0.0] * 7] + [[0.0] * 8] * 6})
        with pytest.raises(TraceError, match="equal length"):
            parse_trace(HEADER_LINE + b"\n" + line.encode() + b"\n")

    def test_extra_event_key_rejected(self):
        body = HEADER_LINE + b"\n" + b'{"t":0,"channel":"gforce","value":0.5,"x":1}\n'
        with pytest.raises(TraceError, match="keys"):
            parse_trace(body)

    def test_invalid_json_line(self):
        with pytest.raises(TraceError) as exc:
            parse_trace(HEADER_LINE + b"\n" + b"{nope\n")
        assert exc.value.line_no == 2


@settings(max_examples=60)
@given(
    st.lists(
        st.tuples(
            st.integers(min_value=0, max_value=10_000),
            st.sampled_from(SCALAR_CHANNELS),
            st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
        ),
        max_size=30,
    ),
    st.integers(min_value=0, max_value=2**64 - 1),
)
def test_serialize_parse_identity(rows, seed):
    rows.sort(key=lambda r: r[0])
    events = tuple(SensorEvent(t=t, channel=c, value=v) for t, c, v in rows)
    trace = Trace(header=TraceHeader(seed=seed), events=events)
    data = serialize_trace(trace)
    assert parse_trace(data) == trace
    assert serialize_trace(parse_trace(data)) == data


class TestCoerceValue:
    def test_scalar(self):
        assert coerce_value("gforce", 0.25, TraceHeader()) == 0.25

    def test_scalar_out_of_range(self):
        with pytest.raises(TraceError):
            coerce_value("gforce", 1.5, TraceHeader())

    def test_unknown_channel(self):
        with pytest.raises(TraceError, match="unknown channel"):
            coerce_value("volume", 0.5, TraceHeader())

    def test_frame_accepts_tuples_and_lists(self):
        header = TraceHeader(grid_rows=2, grid_cols=2)
        rows = [[0.0, 1.0], [0.5, 0.5]]
        out = coerce_value(FRAME_CHANNEL, rows, header)
        assert out == ((0.0, 1.0), (0.5, 0.5))
        assert coerce_value(FRAME_CHANNEL, out, header) == out

    def test_wire_error_has_no_line_prefix(self):
        with pytest.raises(TraceError) as exc:
            coerce_value("gforce", 9, TraceHeader())
        assert not str(exc.value).startswith("line")


def test_latest_values_later_wins():
    events = [
        SensorEvent(0, "gforce", 0.1),
        SensorEvent(20, "gforce", 0.9),
        SensorEvent(20, "mic_level", 0.3),
    ]
    assert latest_values(events) == {"gforce": 0.9, "mic_level": 0.3}
