import { MidiMsg, ServerMsg, StateMsg } from "./protocol.js";

/**
 * What the console shows. The session fields mirror the most recent
 * state message verbatim; until one arrives they stay null and render
 * as placeholders. The view never computes level/harmony/progression/q
 * on its own, so it can never drift from the server.
 */
export interface SessionView {
  connection: "connecting" | "open" | "closed";
  state: StateMsg | null;
  midiLog: MidiMsg[];
  midiSeen: number;
  errors: string[];
}

export const MIDI_LOG_CAP = 64;
const ERROR_CAP = 16;

export function emptyView(): SessionView {
  return { connection: "connecting", state: null, midiLog: [], midiSeen: 0, errors: [] };
}

export function applyServerMsg(view: SessionView, msg: ServerMsg): SessionView {
  switch (msg.type) {
    case "state":
      return { ...view, state: msg };
    case "midi": {
      const midiLog = [...view.midiLog, msg];
      if (midiLog.length > MIDI_LOG_CAP) midiLog.splice(0, midiLog.length - MIDI_LOG_CAP);
      return { ...view, midiLog, midiSeen: view.midiSeen + 1 };
    }
    case "error": {
      const errors = [...view.errors, msg.message];
      if (errors.length > ERROR_CAP) errors.splice(0, errors.length - ERROR_CAP);
      return { ...view, errors };
    }
  }
}

export function setConnection(view: SessionView, connection: SessionView["connection"]): SessionView {
  return { ...view, connection };
}

const KIND_SHORT = { note_on: "on ", note_off: "off", control_change: "cc " } as const;

export function formatMidi(m: MidiMsg): string {
  return `${String(m.t).padStart(6)} ch${m.channel} ${KIND_SHORT[m.kind]} ${m.data1} ${m.data2}`;
}
