// One WebSocket session to the local node: request/response matching by id,
// event fan-out, and a reconnect loop that keeps trying while the node is
// down. The WebSocket constructor is injectable so tests can supply a
// Node.js implementation.

import { NodeEvent, isNodeEvent } from "./protocol.js";

// structural view of both the browser WebSocket and the ws package's;
// handler params are `any` because the two libraries' event types differ
/* eslint-disable @typescript-eslint/no-explicit-any */
type WebSocketLike = {
  onopen: ((ev: any) => void) | null;
  onmessage: ((ev: any) => void) | null;
  onclose: ((ev: any) => void) | null;
  onerror: ((ev: any) => void) | null;
  send(data: string): void;
  close(): void;
};
/* eslint-enable @typescript-eslint/no-explicit-any */

export type WebSocketFactory = (url: string) => WebSocketLike;

export type ConnectionState = "connecting" | "connected" | "disconnected";

interface Pending {
  resolve: (value: Record<string, unknown>) => void;
  reject: (err: Error) => void;
}

export class ApiSession {
  onEvent: ((event: NodeEvent) => void) | null = null;
  onState: ((state: ConnectionState) => void) | null = null;

  private ws: WebSocketLike | null = null;
  private nextId = 1;
  private pending = new Map<number, Pending>();
  private closed = false;
  private retryMs: number;

  constructor(
    private url: string,
    private makeSocket: WebSocketFactory,
    private retryBaseMs = 1000,
  ) {
    this.retryMs = retryBaseMs;
  }

  start(): void {
    this.closed = false;
    this.connect();
  }

  stop(): void {
    this.closed = true;
    if (this.ws) this.ws.close();
    this.failAll(new Error("session stopped"));
  }

  private connect(): void {
    this.setState("connecting");
    let ws: WebSocketLike;
    try {
      ws = this.makeSocket(this.url);
    } catch {
      this.scheduleRetry();
      return;
    }
    this.ws = ws;
    ws.onopen = () => {
      this.retryMs = this.retryBaseMs;
      this.setState("connected");
      // the server detects the framing from the first client bytes,
      // so the session announces itself immediately
      void this.request({ op: "status" }).catch(() => undefined);
    };
    ws.onmessage = (ev) => {
      let obj: unknown;
      try {
        obj = JSON.parse(String(ev.data));
      } catch {
        return;
      }
      this.dispatch(obj);
    };
    ws.onerror = () => undefined;
    ws.onclose = () => {
      this.ws = null;
      this.failAll(new Error("connection lost"));
      if (!this.closed) {
        this.setState("disconnected");
        this.scheduleRetry();
      }
    };
  }

  private scheduleRetry(): void {
    if (this.closed) return;
    const delay = this.retryMs;
    this.retryMs = Math.min(this.retryMs * 2, 10_000);
    setTimeout(() => {
      if (!this.closed && this.ws === null) this.connect();
    }, delay);
  }

  private dispatch(obj: unknown): void {
    if (typeof obj !== "object" || obj === null) return;
    const record = obj as Record<string, unknown>;
    if (typeof record.id === "number" && this.pending.has(record.id)) {
      const waiter = this.pending.get(record.id)!;
      this.pending.delete(record.id);
      waiter.resolve(record);
      // send responses double as status events for the optimistic bubble
    }
    if (isNodeEvent(record) && this.onEvent) this.onEvent(record);
  }

  private failAll(err: Error): void {
    for (const waiter of this.pending.values()) waiter.reject(err);
    this.pending.clear();
  }

  private setState(state: ConnectionState): void {
    if (this.onState) this.onState(state);
  }

  get connected(): boolean {
    return this.ws !== null;
  }

  request(command: Record<string, unknown>, timeoutMs = 30_000): Promise<Record<string, unknown>> {
    return new Promise((resolve, reject) => {
      if (!this.ws) {
        reject(new Error("not connected"));
        return;
      }
      const id = this.nextId++;
      this.pending.set(id, { resolve, reject });
      const timer = setTimeout(() => {
        if (this.pending.delete(id)) reject(new Error("request timed out"));
      }, timeoutMs);
      const settle =
        (fn: (v: never) => void) =>
        (value: never): void => {
          clearTimeout(timer);
          fn(value);
        };
      this.pending.set(id, {
        resolve: settle(resolve) as Pending["resolve"],
        reject: settle(reject) as Pending["reject"],
      });
      this.ws.send(JSON.stringify({ ...command, id }));
    });
  }
}
