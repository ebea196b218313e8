// Wire protocol layer for the realtime handling service.
//
// Speaks the server's JSON message protocol over any WebSocket-like
// transport (browser WebSocket or `ws` in tests). All numbers survive the
// wire bit-exactly: both ends serialize doubles with shortest round-trip
// text.

export type Segments = number[][]; // 6 x 6 gesture features

export type OpenConfig = {
  context_clip_ids?: string[];
  seed?: number;
  clamp_translation?: number;
  clamp_rotation?: number;
  window?: number;
};

export type OpenedMsg = {
  type: "opened";
  session_id: string;
  n_context_frames: number;
  n_context_clips: number;
  context_boundaries: number[][];
};

export type RawMsg = {
  type: "raw";
  t: number;
  mean: number[];
  var: number[];
  attention: number[];
  latency_ms: number;
};

export type PoseMsg = { position: number[]; quaternion: number[] };

export type CommandMsg = {
  type: "command";
  t: number;
  velocity: number[];
  pose: PoseMsg;
};

export type PausedMsg = { type: "paused" };
export type ResumedMsg = {
  type: "resumed";
  z_resampled: boolean;
  warning: string | null;
};
export type ErrorMsg = { type: "error"; code: string; detail: string };

export type ServerMsg =
  | OpenedMsg
  | RawMsg
  | CommandMsg
  | PausedMsg
  | ResumedMsg
  | ErrorMsg;

// Minimal transport surface shared by browser WebSocket and `ws`.
export interface SocketLike {
  send(data: string): void;
  close(): void;
  addEventListener(type: "open", fn: () => void): void;
  addEventListener(type: "close", fn: () => void): void;
  addEventListener(type: "message", fn: (ev: { data: unknown }) => void): void;
  addEventListener(type: "error", fn: (ev: unknown) => void): void;
}

export type ProtocolHandlers = {
  onOpened?: (msg: OpenedMsg) => void;
  onRaw?: (msg: RawMsg) => void;
  onCommand?: (msg: CommandMsg) => void;
  onPaused?: () => void;
  onResumed?: (msg: ResumedMsg) => void;
  onError?: (msg: ErrorMsg) => void;
  onClose?: () => void;
};

export type ProtocolOptions = {
  // client-side throttle: frames are never sent faster than this
  minFrameIntervalMs?: number;
  // frames queued while the socket is connecting are dropped after this
  bufferTtlMs?: number;
  now?: () => number;
};

const DEFAULT_MIN_INTERVAL = 100; // 10 Hz
const DEFAULT_BUFFER_TTL = 1000;

export class ConsoleProtocol {
  private socket: SocketLike;
  private handlers: ProtocolHandlers;
  private now: () => number;
  private minInterval: number;
  private bufferTtl: number;
  private socketOpen = false;
  private lastSent = -Infinity;
  private pending: { at: number; text: string }[] = [];
  private frameCounter = 0;

  paused = false;
  sessionOpen = false;

  constructor(socket: SocketLike, handlers: ProtocolHandlers = {},
              options: ProtocolOptions = {}) {
    this.socket = socket;
    this.handlers = handlers;
    this.now = options.now ?? (() => Date.now());
    this.minInterval = options.minFrameIntervalMs ?? DEFAULT_MIN_INTERVAL;
    this.bufferTtl = options.bufferTtlMs ?? DEFAULT_BUFFER_TTL;
    socket.addEventListener("open", () => {
      this.socketOpen = true;
      this.flushPending();
    });
    socket.addEventListener("close", () => {
      this.socketOpen = false;
      this.sessionOpen = false;
      this.handlers.onClose?.();
    });
    socket.addEventListener("message", (ev) => {
      this.dispatch(String(ev.data));
    });
  }

  open(config: OpenConfig = {}): void {
    this.sendText(JSON.stringify({ type: "open", config }));
  }

  // Returns true when the frame was sent (or buffered); false when gated
  // by pause or the rate throttle.
  sendFrame(segments: Segments): boolean {
    if (this.paused) return false;
    const t = this.now();
    if (t - this.lastSent < this.minInterval) return false;
    this.lastSent = t;
    this.frameCounter += 1;
    this.sendText(JSON.stringify({
      type: "frame",
      t: this.frameCounter,
      segments,
    }));
    return true;
  }

  pause(): void {
    this.sendText(JSON.stringify({ type: "pause" }));
  }

  resume(): void {
    this.sendText(JSON.stringify({ type: "resume" }));
  }

  closeSession(): void {
    this.sendText(JSON.stringify({ type: "close" }));
    this.socket.close();
  }

  private sendText(text: string): void {
    if (this.socketOpen) {
      this.socket.send(text);
      return;
    }
    // connecting: buffer briefly, drop stale entries
    const at = this.now();
    this.pending = this.pending.filter((p) => at - p.at <= this.bufferTtl);
    this.pending.push({ at, text });
  }

  private flushPending(): void {
    const at = this.now();
    for (const p of this.pending) {
      if (at - p.at <= this.bufferTtl) this.socket.send(p.text);
    }
    this.pending = [];
  }

  private dispatch(data: string): void {
    let msg: ServerMsg;
    try {
      msg = JSON.parse(data) as ServerMsg;
    } catch {
      this.handlers.onError?.({
        type: "error", code: "bad_json", detail: "unparseable server message",
      });
      return;
    }
    switch (msg.type) {
      case "opened":
        this.sessionOpen = true;
        this.handlers.onOpened?.(msg);
        break;
      case "raw":
        this.handlers.onRaw?.(msg);
        break;
      case "command":
        this.handlers.onCommand?.(msg);
        break;
      case "paused":
        this.paused = true;
        this.handlers.onPaused?.();
        break;
      case "resumed":
        this.paused = false;
        this.handlers.onResumed?.(msg);
        break;
      case "error":
        this.handlers.onError?.(msg);
        break;
    }
  }
}
