"""Live session server: NDJSON over raw TCP or WebSocket, one tick loop.

Clients connect on a single port; a request line starting with ``GET``
gets the WebSocket handshake, anything else is treated as newline-
delimited JSON over plain TCP. Both carry the same messages:

  client -> server  {"type":"sensor","t":<int|null>,"channel":...,"value":...}
                    {"type":"config", ...}   (only before the first sensor)
  server -> client  {"type":"midi","t":...,"kind":...,"channel":...,"data1":...,"data2":...}
                    {"type":"state","level":...,"harmony":...,"progression":...,
                     "q":...,"track_freqs":[...]}
                    {"type":"error","message":...}

A null or stale timestamp is re-stamped to the next tick; future
timestamps are honored. All inbound events are queued and applied at
tick boundaries only, and logical time advances by exactly 20 ms per
tick no matter how late the wall clock runs. The canonical event list
(what a replay of the recording must reproduce) covers ticks up to the
last recorded input; anything the idle engine does after that is
broadcast but not part of it.
"""

from __future__ import annotations

import asyncio
import base64
import hashlib
import heapq
import json
from dataclasses import replace

from .events import (
    SensorEvent,
    TICK_MS,
    Trace,
    TraceError,
    TraceHeader,
    coerce_value,
    serialize_trace,
)
from .session import Engine, SessionConfig, default_port, tick_of

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


def _ws_frame(payload: bytes, opcode: int = 1) -> bytes:
    head = bytes([0x80 | opcode])
    n = len(payload)
    if n < 126:
        head += bytes([n])
    elif n < 1 << 16:
        head += bytes([126]) + n.to_bytes(2, "big")
    else:
        head += bytes([127]) + n.to_bytes(8, "big")
    return head + payload


async def _read_ws_frame(reader) -> tuple[int, bytes]:
    head = await reader.readexactly(2)
    opcode = head[0] & 0x0F
    masked = head[1] & 0x80
    length = head[1] & 0x7F
    if length == 126:
        length = int.from_bytes(await reader.readexactly(2), "big")
    elif length == 127:
        length = int.from_bytes(await reader.readexactly(8), "big")
    mask = await reader.readexactly(4) if masked else b""
    payload = await reader.readexactly(length)
    if masked:
        payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    return opcode, payload


class _Client:
    def __init__(self, writer, ws: bool):
        self.writer = writer
        self.ws = ws

    def send(self, msg: dict):
        line = json.dumps(msg, separators=(",", ":"))
        if self.ws:
            self.writer.write(_ws_frame(line.encode()))
        else:
            self.writer.write(line.encode() + b"\n")


class LiveServer:
    """One performance session shared by every connected client."""

    def __init__(self, config: SessionConfig, header: TraceHeader | None = None):
        self.config = config
        self.header = header if header is not None else TraceHeader()
        self.engine = Engine(config, self.header)
        self.t = 0  # logical time of the next tick
        self._queue: list = []  # (tick, seq, channel, value)
        self._seq = 0
        self._clients: set[_Client] = set()
        self._recorded: list[SensorEvent] = []
        self._collected: list = []  # (emit_tick, MidiEvent)
        self._last_input_tick: int | None = None
        self._last_state = None
        self._server = None
        self._tick_task = None
        self.port: int | None = None
        self.final_events: list = []

    # -- lifecycle ----------------------------------------------------------

    async def start(self, host: str = "127.0.0.1"):
        port = self.config.port if self.config.port is not None else default_port()
        self._server = await asyncio.start_server(self._handle_client, host, port)
        self.port = self._server.sockets[0].getsockname()[1]
        self._tick_task = asyncio.create_task(self._tick_loop())

    async def stop(self) -> list:
        """Shut down, fix the canonical event list, write the recording."""
        if self._tick_task is not None:
            self._tick_task.cancel()
            try:
                await self._tick_task
            except asyncio.CancelledError:
                pass
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        for client in list(self._clients):
            client.writer.close()
        self._clients.clear()

        cutoff = self._last_input_tick
        events = [ev for tick, ev in self._collected if cutoff is not None and tick <= cutoff]
        if cutoff is not None:
            events.extend(self.engine.flush(cutoff))
        self.final_events = sorted(events, key=lambda e: e.t)

        if self.config.record_path and self._recorded:
            header = TraceHeader(
                seed=self.engine.seed,
                grid_rows=self.header.grid_rows,
                grid_cols=self.header.grid_cols,
                instrument_config=dict(self.header.instrument_config),
            )
            trace = Trace(header=header, events=tuple(sorted(self._recorded, key=lambda e: e.t)))
            with open(self.config.record_path, "wb") as fh:
                fh.write(serialize_trace(trace))
        return self.final_events

    # -- tick loop ----------------------------------------------------------

    async def _tick_loop(self):
        loop = asyncio.get_running_loop()
        next_at = loop.time()
        while True:
            next_at += TICK_MS / 1000.0
            delay = next_at - loop.time()
            if delay > 0:
                await asyncio.sleep(delay)
            else:
                next_at = loop.time()  # fell behind; don't try to catch up
            self._run_tick()

    def _run_tick(self):
        t = self.t
        pairs = []
        while self._queue and self._queue[0][0] <= t:
            _, _, channel, value = heapq.heappop(self._queue)
            pairs.append((channel, value))
        for ev in self.engine.tick(t, pairs):
            self._collected.append((t, ev))
            self._broadcast(
                {"type": "midi", "t": ev.t, "kind": ev.kind, "channel": ev.channel,
                 "data1": ev.data1, "data2": ev.data2}
            )
        state = self.engine.state_view()
        if state != self._last_state:
            self._last_state = state
            self._broadcast(state)
        self.t = t + TICK_MS

    def _broadcast(self, msg: dict):
        for client in list(self._clients):
            try:
                client.send(msg)
            except (ConnectionError, RuntimeError):
                self._drop(client)

    def _drop(self, client: _Client):
        self._clients.discard(client)
        try:
            client.writer.close()
        except RuntimeError:
            pass

    # -- inbound ------------------------------------------------------------

    def _ingest_sensor(self, msg: dict):
        channel = msg.get("channel")
        if not isinstance(channel, str):
            raise TraceError(0, "sensor message needs a string channel")
        value = coerce_value(channel, msg.get("value"), self.header)
        t_raw = msg.get("t")
        if t_raw is None:
            resolved = self.t
        elif isinstance(t_raw, int) and not isinstance(t_raw, bool):
            resolved = max(t_raw, self.t)  # no time travel into applied ticks
        else:
            raise TraceError(0, "sensor t must be an integer or null")
        event = SensorEvent(t=resolved, channel=channel, value=value)
        self._recorded.append(event)
        tick = tick_of(resolved)
        self._last_input_tick = tick if self._last_input_tick is None else max(
            self._last_input_tick, tick
        )
        self._seq += 1
        heapq.heappush(self._queue, (tick, self._seq, channel, value))

    def _apply_config(self, msg: dict):
        if self._recorded:
            raise TraceError(0, "config changes are only accepted before the first sensor event")
        header = TraceHeader(
            seed=msg.get("seed", self.header.seed),
            grid_rows=msg.get("grid_rows", self.header.grid_rows),
            grid_cols=msg.get("grid_cols", self.header.grid_cols),
            instrument_config={
                **self.header.instrument_config,
                **msg.get("instrument_config", {}),
            },
        )
        config = self.config
        if "instruments" in msg:
            config = replace(config, instruments=tuple(msg["instruments"]))
        engine = Engine(config, header)  # validates before we commit
        self.config = config
        self.header = header
        self.engine = engine
        self._last_state = None  # re-announce state on the next tick

    def _handle_line(self, client: _Client, line: str):
        line = line.strip()
        if not line:
            return
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            client.send({"type": "error", "message": "malformed JSON line"})
            return
        if not isinstance(msg, dict):
            client.send({"type": "error", "message": "message must be a JSON object"})
            return
        kind = msg.get("type")
        try:
            if kind == "sensor":
                self._ingest_sensor(msg)
            elif kind == "config":
                self._apply_config(msg)
            else:
                raise TraceError(0, f"unknown message type {kind!r}")
        except (TraceError, ValueError, TypeError) as exc:
            client.send({"type": "error", "message": str(exc)})

    # -- connections --------------------------------------------------------

    async def _handle_client(self, reader, writer):
        try:
            first = await reader.readline()
        except ConnectionError:
            writer.close()
            return
        if not first:
            writer.close()
            return
        if first.startswith(b"GET "):
            await self._serve_websocket(reader, writer)
        else:
            await self._serve_raw(reader, writer, first)

    async def _serve_raw(self, reader, writer, first_line: bytes):
        client = _Client(writer, ws=False)
        self._clients.add(client)
        client.send(self.engine.state_view())
        try:
            self._handle_line(client, first_line.decode("utf-8", "replace"))
            while True:
                line = await reader.readline()
                if not line:
                    break
                self._handle_line(client, line.decode("utf-8", "replace"))
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            self._drop(client)

    async def _serve_websocket(self, reader, writer):
        headers = {}
        while True:
            line = await reader.readline()
            if line in (b"\r\n", b"\n", b""):
                break
            name, _, value = line.decode("latin1").partition(":")
            headers[name.strip().lower()] = value.strip()
        key = headers.get("sec-websocket-key")
        if key is None:
            writer.write(b"HTTP/1.1 400 Bad Request\r\n\r\n")
            writer.close()
            return
        accept = base64.b64encode(hashlib.sha1((key + WS_GUID).encode()).digest()).decode()
        writer.write(
            b"HTTP/1.1 101 Switching Protocols\r\n"
            b"Upgrade: websocket\r\nConnection: Upgrade\r\n"
            b"Sec-WebSocket-Accept: " + accept.encode() + b"\r\n\r\n"
        )
        client = _Client(writer, ws=True)
        self._clients.add(client)
        client.send(self.engine.state_view())
        try:
            while True:
                opcode, payload = await _read_ws_frame(reader)
                if opcode == 8:  # close
                    writer.write(_ws_frame(b"", opcode=8))
                    break
                if opcode == 9:  # ping
                    writer.write(_ws_frame(payload, opcode=10))
                    continue
                if opcode in (1, 2, 0):
                    for line in payload.decode("utf-8", "replace").split("\n"):
                        self._handle_line(client, line)
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            self._drop(client)


async def _serve_forever(server: LiveServer):
    await server.start(host="0.0.0.0")
    try:
        await asyncio.Event().wait()
    finally:
        await server.stop()


def run_live(config: SessionConfig):
    """Serve until interrupted; returns after writing any recording."""
    server = LiveServer(config)
    try:
        asyncio.run(_serve_forever(server))
    except KeyboardInterrupt:
        pass
