"""Live session server: raw NDJSON sockets, WebSocket clients, recording."""

import asyncio
import base64
import hashlib
import json
import os

from houseband.events import parse_trace
from houseband.live import LiveServer
from houseband.session import SessionConfig, run_batch


def run(coro):
    return asyncio.run(asyncio.wait_for(coro, timeout=30.0))


async def start_server(record_path=None, instruments=("tangible_note", "doll"),
                       seed=14):
    config = SessionConfig(instruments=instruments, seed=seed, port=0,
                           record_path=record_path)
    server = LiveServer(config)
    await server.start()
    return server


async def wait_until_tick(server, tick):
    while server.t < tick:
        await asyncio.sleep(0.01)


async def connect_raw(server):
    reader, writer = await asyncio.open_connection("127.0.0.1", server.port)
    # the first line decides raw-vs-websocket; a blank line is a no-op
    # message that still elicits the state snapshot
    writer.write(b"\n")
    await writer.drain()
    return reader, writer


async def read_json_lines(reader, count, want=None):
    """Read NDJSON messages until `count` of the wanted types arrive."""
    out = []
    while len(out) < count:
        line = await reader.readline()
        if not line:
            raise AssertionError("connection closed early")
        msg = json.loads(line)
        if want is None or msg.get("type") in want:
            out.append(msg)
    return out


def send_json(writer, msg):
    writer.write((json.dumps(msg) + "\n").encode())


async def drain_ticks_past(server, tick, margin=3):
    """Wait until the tick loop has consumed everything through `tick`."""
    while server.t < tick + margin * 20 or server._queue:
        await asyncio.sleep(0.01)


class TestRawProtocol:
    def test_connect_receives_state(self):
        async def body():
            server = await start_server()
            try:
                reader, writer = await connect_raw(server)
                (state,) = await read_json_lines(reader, 1)
                assert state["type"] == "state"
                assert state["level"] == 0
                assert state["harmony"] == "Eb_major"
                assert state["progression"] == 0
                assert state["q"] == 0.0
                writer.close()
            finally:
                await server.stop()

        run(body())

    def test_sensor_events_produce_midi_broadcasts(self):
        async def body():
            server = await start_server()
            try:
                reader, writer = await connect_raw(server)
                await read_json_lines(reader, 1)  # state snapshot
                target = server.t + 100
                send_json(writer, {"type": "sensor", "t": target,
                                   "channel": "faucet_flow", "value": 1.0})
                send_json(writer, {"type": "sensor", "t": target,
                                   "channel": "funnel_level_0", "value": 0.5})
                await writer.drain()
                msgs = await read_json_lines(reader, 2, want={"midi"})
                assert msgs[0]["kind"] == "note_on"
                assert msgs[1]["kind"] == "note_off"
                assert msgs[0]["channel"] == 0
                assert msgs[0]["t"] == target
                writer.close()
            finally:
                await server.stop()

        run(body())

    def test_final_events_match_batch_replay(self, tmp_path):
        record = tmp_path / "session.ndjson"

        async def body():
            server = await start_server(record_path=str(record))
            try:
                reader, writer = await connect_raw(server)
                await read_json_lines(reader, 1)
                base = server.t + 60
                script = [
                    (base, "faucet_flow", 1.0),
                    (base, "funnel_level_1", 0.4),
                    (base + 200, "funnel_level_1", 0.8),
                    (base + 400, "faucet_flow", 0.0),
                ]
                for t, channel, value in script:
                    send_json(writer, {"type": "sensor", "t": t,
                                       "channel": channel, "value": value})
                await writer.drain()
                await drain_ticks_past(server, base + 400)
                writer.close()
            finally:
                live_events = await server.stop()
            return live_events

        live_events = run(body())
        trace = parse_trace(record.read_bytes())
        batch = run_batch(
            SessionConfig(instruments=("tangible_note", "doll"), seed=14), trace
        )
        assert len(live_events) > 0
        assert live_events == batch.events

    def test_past_timestamps_are_restamped(self, tmp_path):
        record = tmp_path / "restamp.ndjson"

        async def body():
            server = await start_server(record_path=str(record))
            try:
                reader, writer = await connect_raw(server)
                await read_json_lines(reader, 1)
                await wait_until_tick(server, 120)
                stamped_at = server.t
                send_json(writer, {"type": "sensor", "t": 0,
                                   "channel": "faucet_flow", "value": 0.5})
                await writer.drain()
                await drain_ticks_past(server, stamped_at)
                writer.close()
            finally:
                await server.stop()
            return stamped_at

        stamped_at = run(body())
        trace = parse_trace(record.read_bytes())
        assert len(trace.events) == 1
        assert trace.events[0].t >= stamped_at  # never behind the engine

    def test_null_timestamp_means_now(self):
        async def body():
            server = await start_server()
            try:
                reader, writer = await connect_raw(server)
                await read_json_lines(reader, 1)
                # a tap is a rising g-force edge, so the doll needs a few
                # quiet snapshots on record before the jolt arrives
                await wait_until_tick(server, 60)
                send_json(writer, {"type": "sensor", "t": None,
                                   "channel": "gforce", "value": 0.9})
                await writer.drain()
                # the jolt wakes the doll; the first event out is the
                # level marker controller
                (msg,) = await read_json_lines(reader, 1, want={"midi"})
                assert msg["kind"] == "control_change"
                assert msg["channel"] == 1
                assert msg["data1"] == 102 and msg["data2"] == 1
                writer.close()
            finally:
                await server.stop()

        run(body())


class TestErrors:
    @staticmethod
    def assert_error(msg, needle):
        assert msg["type"] == "error"
        assert needle in msg["message"]

    def test_error_replies_keep_connection(self):
        async def body():
            server = await start_server()
            try:
                reader, writer = await connect_raw(server)
                await read_json_lines(reader, 1)

                writer.write(b"{broken\n")
                send_json(writer, [1, 2, 3])
                send_json(writer, {"type": "dance"})
                send_json(writer, {"type": "sensor", "channel": "volume",
                                   "value": 1})
                send_json(writer, {"type": "sensor", "channel": "gforce",
                                   "value": 7})
                send_json(writer, {"type": "sensor", "channel": "gforce",
                                   "value": 0.2, "t": "soon"})
                await writer.drain()
                errors = await read_json_lines(reader, 6, want={"error"})
                self.assert_error(errors[0], "malformed JSON")
                self.assert_error(errors[1], "JSON object")
                self.assert_error(errors[2], "unknown message type")
                self.assert_error(errors[3], "unknown channel")
                self.assert_error(errors[4], "outside [0, 1]")
                self.assert_error(errors[5], "integer or null")

                # still alive: a valid event flows through afterwards
                await wait_until_tick(server, 60)
                send_json(writer, {"type": "sensor", "t": None,
                                   "channel": "gforce", "value": 0.9})
                await writer.drain()
                await read_json_lines(reader, 1, want={"midi"})
                writer.close()
            finally:
                await server.stop()

        run(body())

    def test_config_rejected_after_first_sensor(self):
        async def body():
            server = await start_server()
            try:
                reader, writer = await connect_raw(server)
                await read_json_lines(reader, 1)
                send_json(writer, {"type": "sensor", "t": None,
                                   "channel": "gforce", "value": 0.5})
                send_json(writer, {"type": "config", "seed": 5})
                await writer.drain()
                (err,) = await read_json_lines(reader, 1, want={"error"})
                assert "before the first sensor" in err["message"]
                assert server.engine.seed == 14
                writer.close()
            finally:
                await server.stop()

        run(body())


class TestConfigMessage:
    def test_config_before_events_rebuilds_engine(self):
        async def body():
            # no operator seed, so the wire config's seed decides
            server = await start_server(seed=None)
            try:
                assert server.engine.seed == 0
                reader, writer = await connect_raw(server)
                await read_json_lines(reader, 1)
                send_json(writer, {"type": "config", "seed": 77,
                                   "instruments": ["tangible_note"]})
                await writer.drain()
                while server.engine.seed != 77:
                    await asyncio.sleep(0.01)
                assert server.config.instruments == ("tangible_note",)
                # the rebuilt state is re-announced on a tick
                await read_json_lines(reader, 1, want={"state"})
                writer.close()
            finally:
                await server.stop()

        run(body())

    def test_operator_seed_outranks_wire_config(self):
        async def body():
            server = await start_server(seed=14)
            try:
                reader, writer = await connect_raw(server)
                await read_json_lines(reader, 1)
                send_json(writer, {"type": "config", "seed": 77})
                await writer.drain()
                while server.header.seed != 77:
                    await asyncio.sleep(0.01)
                assert server.engine.seed == 14
                writer.close()
            finally:
                await server.stop()

        run(body())

    def test_bad_config_leaves_engine_untouched(self):
        async def body():
            server = await start_server()
            try:
                reader, writer = await connect_raw(server)
                await read_json_lines(reader, 1)
                send_json(writer, {"type": "config",
                                   "instruments": ["theremin"]})
                await writer.drain()
                (err,) = await read_json_lines(reader, 1, want={"error"})
                assert "unknown instrument" in err["message"]
                assert server.engine.seed == 14
                assert server.config.instruments == ("tangible_note", "doll")
                writer.close()
            finally:
                await server.stop()

        run(body())


# -- minimal WebSocket client -------------------------------------------------

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


def ws_encode(payload: bytes, opcode: int = 1) -> bytes:
    """Client-to-server frame; client frames must carry a mask."""
    mask = os.urandom(4)
    header = bytes((0x80 | opcode,))
    n = len(payload)
    if n < 126:
        header += bytes((0x80 | n,))
    elif n < 1 << 16:
        header += bytes((0x80 | 126,)) + n.to_bytes(2, "big")
    else:
        header += bytes((0x80 | 127,)) + n.to_bytes(8, "big")
    masked = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    return header + mask + masked


async def ws_read(reader):
    b1, b2 = await reader.readexactly(2)
    opcode = b1 & 0x0F
    assert not b2 & 0x80, "server frames must not be masked"
    n = b2 & 0x7F
    if n == 126:
        n = int.from_bytes(await reader.readexactly(2), "big")
    elif n == 127:
        n = int.from_bytes(await reader.readexactly(8), "big")
    return opcode, await reader.readexactly(n)


async def ws_connect(server):
    reader, writer = await asyncio.open_connection("127.0.0.1", server.port)
    key = base64.b64encode(os.urandom(16)).decode()
    writer.write(
        (
            f"GET / HTTP/1.1\r\nHost: localhost\r\nUpgrade: websocket\r\n"
            f"Connection: Upgrade\r\nSec-WebSocket-Key: {key}\r\n"
            f"Sec-WebSocket-Version: 13\r\n\r\n"
        ).encode()
    )
    await writer.drain()
    status = await reader.readline()
    assert b"101" in status
    accept = None
    while True:
        line = await reader.readline()
        if line in (b"\r\n", b""):
            break
        if line.lower().startswith(b"sec-websocket-accept:"):
            accept = line.split(b":", 1)[1].strip().decode()
    want = base64.b64encode(hashlib.sha1((key + WS_GUID).encode()).digest()).decode()
    assert accept == want, "handshake accept key mismatch"
    return reader, writer


async def ws_read_json(reader, want):
    while True:
        opcode, payload = await ws_read(reader)
        assert opcode == 1
        msg = json.loads(payload)
        if msg.get("type") in want:
            return msg


class TestWebSocket:
    def test_handshake_state_and_midi(self):
        async def body():
            server = await start_server()
            try:
                reader, writer = await ws_connect(server)
                opcode, payload = await ws_read(reader)
                assert opcode == 1
                assert json.loads(payload)["type"] == "state"

                await wait_until_tick(server, 60)
                msg = json.dumps({"type": "sensor", "t": None,
                                  "channel": "gforce", "value": 0.9})
                writer.write(ws_encode(msg.encode()))
                await writer.drain()
                midi = await ws_read_json(reader, {"midi"})
                assert midi["data1"] == 102 and midi["data2"] == 1
                writer.close()
            finally:
                await server.stop()

        run(body())

    def test_ping_pong_and_close(self):
        async def body():
            server = await start_server()
            try:
                reader, writer = await ws_connect(server)
                await ws_read(reader)  # state snapshot
                writer.write(ws_encode(b"hello", opcode=9))
                await writer.drain()
                while True:
                    opcode, payload = await ws_read(reader)
                    if opcode == 10:
                        assert payload == b"hello"
                        break
                writer.write(ws_encode(b"", opcode=8))
                await writer.drain()
                while True:
                    opcode, _ = await ws_read(reader)
                    if opcode == 8:
                        break
                writer.close()
            finally:
                await server.stop()

        run(body())

    def test_error_frames_for_bad_messages(self):
        async def body():
            server = await start_server()
            try:
                reader, writer = await ws_connect(server)
                await ws_read(reader)
                writer.write(ws_encode(b"{nope"))
                await writer.drain()
                err = await ws_read_json(reader, {"error"})
                assert "malformed JSON" in err["message"]
                writer.close()
            finally:
                await server.stop()

        run(body())


class TestStop:
    def test_stop_without_input_yields_nothing(self):
        async def body():
            server = await start_server()
            events = await server.stop()
            assert events == []
            assert server.final_events == []

        run(body())

    def test_no_recording_without_events(self, tmp_path):
        record = tmp_path / "empty.ndjson"

        async def body():
            server = await start_server(record_path=str(record))
            await server.stop()

        run(body())
        assert not record.exists()
