// Gesture synthesis from style templates.
//
// A human cannot author 36 coordinated features live; the console maps six
// per-axis sliders through a user's style template (fetched from the
// service) into gesture frames, mirroring how the synthetic users render
// their commands.

export const AXES = ["TX", "TY", "TZ", "RX", "RY", "RZ"] as const;
export type AxisName = (typeof AXES)[number];

export type AxisTemplate = {
  weights: number[]; // 36
  segments: number[];
  amplitude: number;
  lag: number;
};

export type UserStyle = {
  user_id: string;
  motion_scale: number;
  style_noise: number;
  resting_bias: number[]; // 36
  templates: Record<string, AxisTemplate>;
};

// slider values are per-axis velocities; returns a 6x6 segment matrix
export function gestureFromSliders(style: UserStyle,
                                   velocities: Record<AxisName, number>,
                                   ): number[][] {
  const flat = style.resting_bias.slice();
  for (const axis of AXES) {
    const v = velocities[axis] ?? 0;
    if (v === 0) continue;
    const tpl = style.templates[axis];
    if (!tpl) throw new Error(`style has no template for axis ${axis}`);
    for (let i = 0; i < 36; i++) {
      flat[i] += style.motion_scale * tpl.weights[i] * v;
    }
  }
  const segments: number[][] = [];
  for (let s = 0; s < 6; s++) {
    segments.push(flat.slice(s * 6, s * 6 + 6));
  }
  return segments;
}

// a recorded clip fetched from the service's context endpoint
export type ClipRecord = {
  user_id: string;
  clip_id: string;
  rate_hz: number;
  active_dims: string[];
  frames_x: number[][][]; // N x 6 x 6
  frames_y: number[][];   // N x 6
};

export function clipFrameCount(clip: ClipRecord): number {
  return clip.frames_x.length;
}
