// DOM wiring for the steering console.

import { ConsoleProtocol } from "./protocol.js";
import { ConsoleState } from "./state.js";
import { drawHeatmap, hoverInfo } from "./heatmap.js";
import { drawPose } from "./posepane.js";
import {
  AXES,
  AxisName,
  ClipRecord,
  UserStyle,
  gestureFromSliders,
} from "./styles.js";

const $ = <T extends HTMLElement>(id: string): T =>
  document.getElementById(id) as T;

const state = new ConsoleState();
let protocol: ConsoleProtocol | null = null;
let styles: Record<string, UserStyle> = {};
let replayClip: ClipRecord | null = null;
let replayIndex = 0;
let mode: "sliders" | "replay" = "sliders";
let ticker: ReturnType<typeof setInterval> | null = null;

function setBanner(text: string, error = false): void {
  const el = $("banner");
  el.textContent = text;
  el.className = error ? "banner error" : "banner";
}

function redraw(): void {
  drawHeatmap($("heatmap") as HTMLCanvasElement, state.rows,
              state.nContextFrames, state.boundaries);
  drawPose($("pose") as HTMLCanvasElement,
           state.lastCommand?.pose ?? null,
           state.lastCommand?.velocity ?? null);
  $("latency").textContent =
    state.latencyMs == null ? "-" : `${state.latencyMs.toFixed(1)} ms`;
  $("status").textContent = state.connected
    ? `session ${state.sessionId?.slice(0, 8)} | ${state.nContextFrames} context frames`
    : "disconnected";
  const cmd = state.lastCommand;
  $("command").textContent = cmd
    ? cmd.velocity.map((v) => v.toFixed(3)).join("  ")
    : "-";
  ($("pauseBtn") as HTMLButtonElement).disabled = !state.connected || state.paused;
  ($("resumeBtn") as HTMLButtonElement).disabled = !state.connected || !state.paused;
  for (const axis of AXES) {
    ($(`slider-${axis}`) as HTMLInputElement).disabled = state.paused;
  }
}

async function loadServerInfo(base: string): Promise<void> {
  try {
    const res = await fetch(`${base}/styles`);
    if (res.ok) {
      styles = await res.json();
      const sel = $("styleSelect") as HTMLSelectElement;
      sel.innerHTML = "";
      for (const uid of Object.keys(styles)) {
        const opt = document.createElement("option");
        opt.value = uid;
        opt.textContent = uid;
        sel.appendChild(opt);
      }
    }
  } catch {
    /* styles are optional */
  }
  try {
    const res = await fetch(`${base}/context-clips`);
    if (res.ok) {
      const clips = (await res.json()).clips as { clip_id: string }[];
      const sel = $("clipSelect") as HTMLSelectElement;
      sel.innerHTML = "";
      for (const c of clips) {
        const opt = document.createElement("option");
        opt.value = c.clip_id;
        opt.textContent = c.clip_id;
        sel.appendChild(opt);
      }
    }
  } catch {
    /* replay stays empty */
  }
}

function currentFrame(): number[][] | null {
  if (mode === "replay") {
    if (!replayClip) return null;
    if (replayIndex >= replayClip.frames_x.length) {
      replayIndex = 0; // loop the recording
    }
    return replayClip.frames_x[replayIndex++];
  }
  const uid = ($("styleSelect") as HTMLSelectElement).value;
  const style = styles[uid];
  if (!style) return null;
  const velocities = {} as Record<AxisName, number>;
  for (const axis of AXES) {
    const el = $(`slider-${axis}`) as HTMLInputElement;
    velocities[axis] = parseFloat(el.value);
  }
  return gestureFromSliders(style, velocities);
}

function startTicking(): void {
  if (ticker) clearInterval(ticker);
  // 10 Hz command stream; the protocol layer enforces the throttle too
  ticker = setInterval(() => {
    if (!protocol || !state.connected || state.paused) return;
    const frame = currentFrame();
    if (frame) protocol.sendFrame(frame);
  }, 100);
}

function connect(): void {
  const base = ($("serverUrl") as HTMLInputElement).value.replace(/\/$/, "");
  const wsUrl = base.replace(/^http/, "ws") + "/ws";
  setBanner("connecting...");
  let socket: WebSocket;
  try {
    socket = new WebSocket(wsUrl);
  } catch (e) {
    setBanner(`connection failed: ${e}`, true);
    return;
  }
  protocol = new ConsoleProtocol(socket, {
    onOpened: (msg) => {
      state.onOpened(msg);
      setBanner(`opened: ${msg.n_context_clips} context clips, ` +
                `${msg.n_context_frames} frames`);
      startTicking();
      redraw();
    },
    onRaw: (msg) => {
      state.onRaw(msg);
      redraw();
    },
    onCommand: (msg) => {
      state.onCommand(msg);
      redraw();
    },
    onPaused: () => {
      state.onPaused();
      setBanner("paused");
      redraw();
    },
    onResumed: (msg) => {
      state.onResumed(msg.z_resampled);
      setBanner(msg.z_resampled ? "resumed (fresh latent)" : "resumed");
      redraw();
    },
    onError: (msg) => setBanner(`${msg.code}: ${msg.detail}`, true),
    onClose: () => {
      state.onClose();
      if (ticker) clearInterval(ticker);
      setBanner("connection closed; reconnect for a fresh session", true);
      redraw();
    },
  });
  socket.addEventListener("open", () => {
    const seedText = ($("seed") as HTMLInputElement).value;
    protocol!.open(seedText ? { seed: parseInt(seedText, 10) } : {});
  });
  socket.addEventListener("error", () =>
    setBanner("connection failed: server unreachable", true));
  void loadServerInfo(base);
}

async function selectReplayClip(): Promise<void> {
  const base = ($("serverUrl") as HTMLInputElement).value.replace(/\/$/, "");
  const id = ($("clipSelect") as HTMLSelectElement).value;
  if (!id) return;
  const res = await fetch(`${base}/context-clips/${id}`);
  if (res.ok) {
    replayClip = (await res.json()) as ClipRecord;
    replayIndex = 0;
    setBanner(`replaying ${id} (${replayClip.frames_x.length} frames)`);
  }
}

export function init(): void {
  $("connectBtn").addEventListener("click", connect);
  $("pauseBtn").addEventListener("click", () => protocol?.pause());
  $("resumeBtn").addEventListener("click", () => protocol?.resume());
  $("modeSliders").addEventListener("click", () => { mode = "sliders"; });
  $("modeReplay").addEventListener("click", () => {
    mode = "replay";
    void selectReplayClip();
  });
  $("clipSelect").addEventListener("change", () => void selectReplayClip());
  const heatmap = $("heatmap") as HTMLCanvasElement;
  heatmap.addEventListener("mousemove", (ev) => {
    const rect = heatmap.getBoundingClientRect();
    const info = hoverInfo(heatmap, state.rows, state.nContextFrames,
                           ev.clientX - rect.left, ev.clientY - rect.top);
    $("hover").textContent = info
      ? `t=${info.t} u=${info.u} w=${info.weight.toFixed(4)}`
      : "";
  });
  redraw();
}

if (typeof document !== "undefined" && document.getElementById("connectBtn")) {
  init();
}
