// Virtual workpiece view: an orthographic projection of the body axes at
// the current pose, with the latest emitted velocity drawn as arrows.

import type { PoseMsg } from "./protocol.js";

type Vec3 = [number, number, number];

function rotate(q: number[], v: Vec3): Vec3 {
  // quaternion (w, x, y, z) acting on v
  const [w, x, y, z] = q;
  const uv: Vec3 = [
    2 * (y * v[2] - z * v[1]),
    2 * (z * v[0] - x * v[2]),
    2 * (x * v[1] - y * v[0]),
  ];
  return [
    v[0] + w * uv[0] + y * uv[2] - z * uv[1],
    v[1] + w * uv[1] + z * uv[0] - x * uv[2],
    v[2] + w * uv[2] + x * uv[1] - y * uv[0],
  ];
}

// isometric-ish projection: x right, y into the screen, z up
function project(v: Vec3, scale: number, cx: number, cy: number,
                 ): [number, number] {
  const px = v[0] + 0.5 * v[1];
  const py = v[2] + 0.35 * v[1];
  return [cx + px * scale, cy - py * scale];
}

const AXIS_COLORS = ["#ff5252", "#69f0ae", "#40c4ff"]; // x red, y green, z blue

export function drawPose(canvas: HTMLCanvasElement, pose: PoseMsg | null,
                         velocity: number[] | null): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const w = canvas.width;
  const h = canvas.height;
  ctx.fillStyle = "#10141c";
  ctx.fillRect(0, 0, w, h);
  const cx = w / 2;
  const cy = h / 2;
  const scale = Math.min(w, h) / 4;

  // world frame (faint)
  ctx.lineWidth = 1;
  for (let a = 0; a < 3; a++) {
    const axis: Vec3 = [0, 0, 0];
    axis[a] = 1.2;
    const [px, py] = project(axis, scale, cx, cy);
    ctx.strokeStyle = "rgba(255,255,255,0.15)";
    ctx.beginPath();
    ctx.moveTo(cx, cy);
    ctx.lineTo(px, py);
    ctx.stroke();
  }
  if (!pose) return;

  // translate within a +-0.5 m viewport box
  const p = pose.position;
  const offset = project([p[0], p[1], p[2]], scale, cx, cy);

  ctx.lineWidth = 3;
  for (let a = 0; a < 3; a++) {
    const axis: Vec3 = [0, 0, 0];
    axis[a] = 1;
    const world = rotate(pose.quaternion, axis);
    const [px, py] = project(world, scale * 0.8, offset[0], offset[1]);
    ctx.strokeStyle = AXIS_COLORS[a];
    ctx.beginPath();
    ctx.moveTo(offset[0], offset[1]);
    ctx.lineTo(px, py);
    ctx.stroke();
  }
  ctx.fillStyle = "#e8eaf0";
  ctx.beginPath();
  ctx.arc(offset[0], offset[1], 4, 0, 2 * Math.PI);
  ctx.fill();

  if (velocity) {
    // translation command arrow (scaled up for visibility)
    const vel: Vec3 = [velocity[0], velocity[1], velocity[2]];
    const tip = project(
      [vel[0] * 4, vel[1] * 4, vel[2] * 4], scale, offset[0], offset[1]);
    ctx.strokeStyle = "#ffd740";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.moveTo(offset[0], offset[1]);
    ctx.lineTo(tip[0], tip[1]);
    ctx.stroke();
  }
}
