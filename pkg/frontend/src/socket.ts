// WebSocket client with reconnect and exponential backoff.
//
// The service speaks NDJSON payloads over WebSocket text frames; each
// frame is one JSON message. All inbound messages are forwarded to a
// single listener (the reducer), so the socket layer holds no view state.

import { ClientMessage } from "./protocol.js";

export type MessageListener = (msg: { type: string }) => void;

const BACKOFF_INITIAL_MS = 500;
const BACKOFF_MAX_MS = 15_000;

export class StreamSocket {
  private ws: WebSocket | null = null;
  private backoffMs = BACKOFF_INITIAL_MS;
  private closed = false;

  constructor(
    private readonly url: string,
    private readonly onMessage: MessageListener,
    private readonly onStatus: (connected: boolean) => void,
  ) {}

  connect(): void {
    if (this.ws || this.closed) return;
    const ws = new WebSocket(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.backoffMs = BACKOFF_INITIAL_MS;
      this.onStatus(true);
      this.sendRaw({ type: "subscribe" });
    };
    ws.onmessage = (ev) => {
      try {
        this.onMessage(JSON.parse(ev.data));
      } catch {
        this.onMessage({ type: "client_parse_error", raw: String(ev.data) } as {
          type: string;
        });
      }
    };
    ws.onclose = () => {
      this.ws = null;
      this.onStatus(false);
      if (!this.closed) {
        setTimeout(() => this.connect(), this.backoffMs);
        this.backoffMs = Math.min(this.backoffMs * 2, BACKOFF_MAX_MS);
      }
    };
    ws.onerror = () => ws.close();
  }

  send(msg: ClientMessage): boolean {
    return this.sendRaw(msg);
  }

  private sendRaw(msg: object): boolean {
    if (!this.ws || this.ws.readyState !== WebSocket.OPEN) return false;
    this.ws.send(JSON.stringify(msg));
    return true;
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }
}
