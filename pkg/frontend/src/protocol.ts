/**
 * Wire protocol for the live session server: newline-delimited JSON,
 * the same messages over WebSocket or raw TCP.
 *
 *   console -> server   {"type":"sensor","t":<int|null>,"channel":...,"value":...}
 *                       {"type":"config",...}        (only before the first sensor)
 *   server  -> console  {"type":"midi",...} {"type":"state",...} {"type":"error",...}
 *
 * Everything here is transport-free so the node test runner can fuzz it
 * without a browser.
 */

export const TICK_MS = 20;
export const DEFAULT_PORT = 7788;

export const SCALAR_CHANNELS = [
  "faucet_flow",
  "main_drain_flow",
  "funnel_level_0",
  "funnel_level_1",
  "funnel_level_2",
  "funnel_level_3",
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
] as const;

export type ScalarChannel = (typeof SCALAR_CHANNELS)[number];
export const FRAME_CHANNEL = "frame";

export interface SensorMsg {
  type: "sensor";
  /** Logical ms, multiple-friendly but not required; null means "stamp me now". */
  t: number | null;
  channel: string;
  value: number | number[][];
}

export interface ConfigMsg {
  type: "config";
  seed?: number;
  grid_rows?: number;
  grid_cols?: number;
  instruments?: string[];
  instrument_config?: Record<string, unknown>;
}

export type ClientMsg = SensorMsg | ConfigMsg;

export interface MidiMsg {
  type: "midi";
  t: number;
  kind: "note_on" | "note_off" | "control_change";
  channel: number;
  data1: number;
  data2: number;
}

export interface StateMsg {
  type: "state";
  level: number;
  harmony: string;
  progression: number;
  q: number;
  track_freqs: number[];
}

export interface ErrorMsg {
  type: "error";
  message: string;
}

export type ServerMsg = MidiMsg | StateMsg | ErrorMsg;

const MIDI_KINDS = ["note_on", "note_off", "control_change"] as const;

function isUnit(x: unknown): x is number {
  return typeof x === "number" && Number.isFinite(x) && x >= 0 && x <= 1;
}

function isInt(x: unknown): x is number {
  return typeof x === "number" && Number.isInteger(x);
}

/**
 * Validate an outbound message. Returns null when the server is
 * guaranteed to accept it, otherwise a human-readable reason. The UI
 * refuses to send anything this flags; the fuzz suite holds it to that.
 */
export function checkClientMsg(msg: unknown): string | null {
  if (typeof msg !== "object" || msg === null || Array.isArray(msg)) {
    return "message must be a JSON object";
  }
  const m = msg as Record<string, unknown>;
  if (m.type === "sensor") return checkSensor(m);
  if (m.type === "config") return checkConfig(m);
  return `unknown message type ${JSON.stringify(m.type)}`;
}

function checkSensor(m: Record<string, unknown>): string | null {
  if (!(m.t === null || (isInt(m.t) && m.t >= 0))) {
    return "sensor t must be a non-negative integer or null";
  }
  if (typeof m.channel !== "string") return "sensor channel must be a string";
  if (m.channel === FRAME_CHANNEL) {
    return checkFrame(m.value);
  }
  if (!(SCALAR_CHANNELS as readonly string[]).includes(m.channel)) {
    return `unknown channel ${JSON.stringify(m.channel)}`;
  }
  if (!isUnit(m.value)) return `value ${JSON.stringify(m.value)} outside [0, 1]`;
  return null;
}

function checkFrame(value: unknown): string | null {
  if (!Array.isArray(value) || value.length === 0) {
    return "frame value must be a non-empty array of arrays";
  }
  const width = Array.isArray(value[0]) ? value[0].length : -1;
  if (width <= 0) return "frame rows must be non-empty and equal length";
  for (const row of value) {
    if (!Array.isArray(row) || row.length !== width) {
      return "frame rows must be non-empty and equal length";
    }
    for (const px of row) {
      if (!isUnit(px)) return `frame luminance ${JSON.stringify(px)} outside [0, 1]`;
    }
  }
  return null;
}

function checkConfig(m: Record<string, unknown>): string | null {
  if ("seed" in m && !(isInt(m.seed) && (m.seed as number) >= 0)) {
    return "config seed must be a non-negative integer";
  }
  for (const key of ["grid_rows", "grid_cols"] as const) {
    if (key in m && !(isInt(m[key]) && (m[key] as number) >= 1)) {
      return `config ${key} must be a positive integer`;
    }
  }
  if ("instruments" in m) {
    const ins = m.instruments;
    if (!Array.isArray(ins) || !ins.every((x) => typeof x === "string")) {
      return "config instruments must be an array of names";
    }
  }
  if ("instrument_config" in m) {
    const ic = m.instrument_config;
    if (typeof ic !== "object" || ic === null || Array.isArray(ic)) {
      return "config instrument_config must be an object";
    }
  }
  return null;
}

/** Serialize for the wire; throws on anything checkClientMsg rejects. */
export function encodeClient(msg: ClientMsg): string {
  const why = checkClientMsg(msg);
  if (why !== null) throw new Error(`refusing to send invalid message: ${why}`);
  return JSON.stringify(msg) + "\n";
}

/**
 * Parse one inbound line. Unknown or malformed server messages come
 * back as ErrorMsg rather than throwing so one bad line cannot take
 * down the console.
 */
export function parseServerLine(line: string): ServerMsg | null {
  const trimmed = line.trim();
  if (trimmed === "") return null;
  let raw: unknown;
  try {
    raw = JSON.parse(trimmed);
  } catch {
    return { type: "error", message: `unparseable server line: ${trimmed.slice(0, 80)}` };
  }
  const why = checkServerMsg(raw);
  if (why !== null) {
    return { type: "error", message: `bad server message (${why}): ${trimmed.slice(0, 80)}` };
  }
  return raw as ServerMsg;
}

/** Schema check for inbound traffic; null means the message is well-formed. */
export function checkServerMsg(raw: unknown): string | null {
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    return "not an object";
  }
  const m = raw as Record<string, unknown>;
  switch (m.type) {
    case "midi": {
      if (!isInt(m.t) || (m.t as number) < 0) return "midi t";
      if (!MIDI_KINDS.includes(m.kind as never)) return "midi kind";
      if (!isInt(m.channel) || (m.channel as number) < 0 || (m.channel as number) > 15) {
        return "midi channel";
      }
      for (const k of ["data1", "data2"] as const) {
        if (!isInt(m[k]) || (m[k] as number) < 0 || (m[k] as number) > 127) return `midi ${k}`;
      }
      return null;
    }
    case "state": {
      if (!isInt(m.level) || (m.level as number) < 0) return "state level";
      if (typeof m.harmony !== "string") return "state harmony";
      if (!isInt(m.progression)) return "state progression";
      if (typeof m.q !== "number" || !Number.isFinite(m.q)) return "state q";
      const tf = m.track_freqs;
      if (!Array.isArray(tf) || !tf.every((f) => typeof f === "number" && f > 0)) {
        return "state track_freqs";
      }
      return null;
    }
    case "error":
      return typeof m.message === "string" ? null : "error message";
    default:
      return `unknown type ${JSON.stringify(m.type)}`;
  }
}

/** Reassembles NDJSON lines from arbitrary stream chunks. */
export class LineSplitter {
  private buf = "";

  push(chunk: string): string[] {
    this.buf += chunk;
    const parts = this.buf.split("\n");
    this.buf = parts.pop() ?? "";
    return parts;
  }

  /** Anything left without a trailing newline (normally empty at close). */
  residue(): string {
    return this.buf;
  }
}
