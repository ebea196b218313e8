// Console session state: rolling attention heatmap, latency, pose, and
// validation of incoming rows.

import type { CommandMsg, OpenedMsg, RawMsg } from "./protocol.js";

export const HEATMAP_ROWS = 200;
export const ROW_SUM_TOLERANCE = 1e-4;

export type HeatmapRow = {
  t: number;
  weights: number[];
  resumeMarker: boolean;
};

export class ConsoleState {
  connected = false;
  sessionId: string | null = null;
  nContextFrames = 0;
  boundaries: number[][] = [];
  paused = false;
  latencyMs: number | null = null;
  lastCommand: CommandMsg | null = null;
  lastRaw: RawMsg | null = null;
  rows: HeatmapRow[] = [];
  invalidRows = 0;
  private markNextRow = false;

  onOpened(msg: OpenedMsg): void {
    this.connected = true;
    this.sessionId = msg.session_id;
    this.nContextFrames = msg.n_context_frames;
    this.boundaries = msg.context_boundaries;
    this.rows = [];
    this.invalidRows = 0;
  }

  // Validates that the attention row is a distribution; invalid rows are
  // counted and dropped rather than rendered.
  onRaw(msg: RawMsg): boolean {
    this.lastRaw = msg;
    this.latencyMs = msg.latency_ms;
    const sum = msg.attention.reduce((a, b) => a + b, 0);
    if (!Number.isFinite(sum) || Math.abs(sum - 1) > ROW_SUM_TOLERANCE) {
      this.invalidRows += 1;
      return false;
    }
    this.rows.push({
      t: msg.t,
      weights: msg.attention,
      resumeMarker: this.markNextRow,
    });
    this.markNextRow = false;
    if (this.rows.length > HEATMAP_ROWS) {
      this.rows.splice(0, this.rows.length - HEATMAP_ROWS);
    }
    return true;
  }

  onCommand(msg: CommandMsg): void {
    this.lastCommand = msg;
  }

  onPaused(): void {
    this.paused = true;
  }

  onResumed(zResampled: boolean): void {
    this.paused = false;
    // annotate the next heatmap row with the latent redraw
    if (zResampled) this.markNextRow = true;
  }

  onClose(): void {
    this.connected = false;
    this.sessionId = null;
  }
}
