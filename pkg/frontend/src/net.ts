import { ClientMsg, ServerMsg, checkClientMsg, encodeClient, parseServerLine } from "./protocol.js";

export interface ConnectionHandlers {
  onMessage: (msg: ServerMsg) => void;
  onStatus: (status: "connecting" | "open" | "closed") => void;
}

const RECONNECT_MS = 1500;

/**
 * WebSocket lane to the session server. Outbound messages are schema
 * checked before they hit the wire; anything invalid is dropped and
 * reported locally, so the server never sees a malformed line from us.
 * Reconnects on its own until close() is called.
 */
export class Connection {
  private ws: WebSocket | null = null;
  private timer: number | undefined;
  private closed = false;
  dropped = 0;

  constructor(private url: string, private handlers: ConnectionHandlers) {
    this.dial();
  }

  private dial(): void {
    if (this.closed) return;
    this.handlers.onStatus("connecting");
    const ws = new WebSocket(this.url);
    this.ws = ws;
    ws.onopen = () => this.handlers.onStatus("open");
    ws.onmessage = (ev) => {
      for (const line of String(ev.data).split("\n")) {
        const msg = parseServerLine(line);
        if (msg !== null) this.handlers.onMessage(msg);
      }
    };
    ws.onclose = () => {
      if (this.ws !== ws) return;
      this.ws = null;
      this.handlers.onStatus("closed");
      if (!this.closed) {
        this.timer = window.setTimeout(() => this.dial(), RECONNECT_MS);
      }
    };
    ws.onerror = () => ws.close();
  }

  /** True if the message was actually written to an open socket. */
  send(msg: ClientMsg): boolean {
    if (checkClientMsg(msg) !== null) {
      this.dropped += 1;
      return false;
    }
    if (!this.ws || this.ws.readyState !== WebSocket.OPEN) return false;
    this.ws.send(encodeClient(msg).trimEnd());
    return true;
  }

  close(): void {
    this.closed = true;
    if (this.timer !== undefined) window.clearTimeout(this.timer);
    this.ws?.close();
  }
}

/** ws:// URL for a session server, honoring ?host= and ?port= overrides. */
export function serverUrl(search: string): string {
  const params = new URLSearchParams(search);
  const host = params.get("host") ?? "127.0.0.1";
  const port = params.get("port") ?? "7788";
  return `ws://${host}:${port}/`;
}
