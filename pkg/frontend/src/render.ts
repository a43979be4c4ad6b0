// Canvas rendering for the three views: first-person panel, top-down
// fog-of-war map, and replay playback. The geometry/color helpers are pure
// and exported so the projection math is testable without a canvas.

import {
  EgoView,
  Heading,
  Phase,
  Pose,
  ReplayCommand,
  TopdownMap,
} from "./protocol.js";
import { ReplayModel } from "./replay.js";

// ---- pure helpers ----

// canvas frame: +x right, +y down; N points up the screen
export function headingAngle(h: Heading): number {
  switch (h) {
    case "N": return -Math.PI / 2;
    case "E": return 0;
    case "S": return Math.PI / 2;
    case "W": return Math.PI;
  }
}

const FOG = "#101218";
const WALL = "#4b3641";
const FLOOR = "#b9c0ae";

function lerpChannel(a: number, b: number, t: number): number {
  return Math.round(a + (b - a) * t);
}

function hexToRgb(hex: string): [number, number, number] {
  return [
    parseInt(hex.slice(1, 3), 16),
    parseInt(hex.slice(3, 5), 16),
    parseInt(hex.slice(5, 7), 16),
  ];
}

// fog for unseen cells; seen cells fade wall-dark -> floor-light with the
// server's free-space belief
export function beliefColor(belief: number, covered: boolean): string {
  if (!covered) return FOG;
  const t = Math.max(0, Math.min(1, belief));
  const lo = hexToRgb(WALL);
  const hi = hexToRgb(FLOOR);
  const rgb = [0, 1, 2].map((i) => lerpChannel(lo[i], hi[i], t));
  return `rgb(${rgb[0]},${rgb[1]},${rgb[2]})`;
}

const CLASS_COLORS: Record<string, string> = {
  apple: "#e0493e",
  book: "#4e7cc9",
  bread: "#c8a052",
  cup: "#4fb6b0",
  fork: "#9aa2ad",
  lettuce: "#63b04e",
  cabinet: "#8a6642",
  countertop: "#7d8a99",
  drawer: "#a2794f",
  fridge: "#b9c9d6",
  microwave: "#5d6570",
  table: "#986f54",
};

export function classColor(name: string): string {
  return CLASS_COLORS[name] ?? "#d080c0";
}

export function classGlyph(name: string): string {
  return name.charAt(0).toUpperCase();
}

export function phaseColor(phase: Phase | string): string {
  if (phase === "planner") return "#9a6bff"; // decision points
  if (phase === "controller") return "#f0a048";
  return "#7d828c";
}

// first-person projection: the cell at forward f, lateral l becomes a
// trapezoid slice; depth d is projected as 0.5/d so the nearest visible row
// (d = 0.5) touches the bottom edge and far rows squeeze toward the horizon
const HORIZON = 0.2; // fraction of panel height
const LATERAL = 0.62; // fraction of panel width per lateral unit at d = 0.5

export function egoProject(
  f: number,
  l: number,
  w: number,
  h: number,
): { x: number; y: number } {
  const horizon = h * HORIZON;
  const scale = 0.5 / Math.max(f, 0.5);
  return {
    x: w / 2 + l * LATERAL * w * scale,
    y: horizon + (h - horizon) * scale,
  };
}

// corner order: near-left, near-right, far-right, far-left
export function egoQuad(
  f: number,
  l: number,
  w: number,
  h: number,
): { x: number; y: number }[] {
  return [
    egoProject(f - 0.5, l - 0.5, w, h),
    egoProject(f - 0.5, l + 0.5, w, h),
    egoProject(f + 0.5, l + 0.5, w, h),
    egoProject(f + 0.5, l - 0.5, w, h),
  ];
}

// reward-strip click position -> command index
export function stripHit(x: number, width: number, nCommands: number): number {
  if (nCommands <= 0) return 0;
  const k = Math.floor((x / width) * nCommands);
  return Math.max(0, Math.min(nCommands - 1, k));
}

// ---- first-person panel ----

const PITCH_NAMES = ["down", "level", "up"];

export function drawEgo(
  ctx: CanvasRenderingContext2D,
  view: EgoView,
  w: number,
  h: number,
): void {
  ctx.fillStyle = "#191c24";
  ctx.fillRect(0, 0, w, h);
  ctx.fillStyle = "#23262f";
  ctx.fillRect(0, 0, w, h * HORIZON);

  const quad = (f: number, l: number) => {
    const pts = egoQuad(f, l, w, h);
    ctx.beginPath();
    ctx.moveTo(pts[0].x, pts[0].y);
    for (let i = 1; i < 4; i++) ctx.lineTo(pts[i].x, pts[i].y);
    ctx.closePath();
  };

  // far rows first so near cells overdraw them
  const cells = [...view.cells].sort((a, b) => b.ego[0] - a.ego[0]);
  for (const c of cells) {
    quad(c.ego[0], c.ego[1]);
    ctx.fillStyle = c.free ? FLOOR : WALL;
    ctx.fill();
    ctx.strokeStyle = "rgba(0,0,0,0.25)";
    ctx.lineWidth = 1;
    ctx.stroke();
  }

  for (const r of [...view.receptacles].sort((a, b) => b.ego[0] - a.ego[0])) {
    const [f, l] = r.ego;
    quad(f, l);
    ctx.fillStyle = classColor(r.class_id);
    ctx.fill();
    ctx.strokeStyle = "#14161c";
    ctx.lineWidth = 2;
    ctx.stroke();
    const c = egoProject(f, l, w, h);
    const size = Math.max(10, 26 * (0.5 / f));
    if (r.openable) {
      // open: hollow ring; closed: solid lid
      ctx.beginPath();
      ctx.arc(c.x, c.y, size * 0.45, 0, Math.PI * 2);
      if (r.open) {
        ctx.strokeStyle = "#f5f5ef";
        ctx.lineWidth = 2;
        ctx.stroke();
      } else {
        ctx.fillStyle = "#14161c";
        ctx.fill();
      }
    }
    ctx.fillStyle = "#f5f5ef";
    ctx.font = `bold ${Math.round(size)}px monospace`;
    ctx.textAlign = "center";
    ctx.textBaseline = "middle";
    ctx.fillText(classGlyph(r.class_id), c.x, c.y - size * 0.7);
  }

  for (const o of [...view.objects].sort((a, b) => b.ego[0] - a.ego[0])) {
    const [f, l] = o.ego;
    const c = egoProject(f, l, w, h);
    const rad = Math.max(5, 16 * (0.5 / f));
    ctx.beginPath();
    ctx.arc(c.x, c.y, rad, 0, Math.PI * 2);
    ctx.fillStyle = classColor(o.class_id);
    ctx.fill();
    ctx.strokeStyle = "#14161c";
    ctx.lineWidth = 1.5;
    ctx.stroke();
    ctx.fillStyle = "#14161c";
    ctx.font = `bold ${Math.round(rad * 1.2)}px monospace`;
    ctx.textAlign = "center";
    ctx.textBaseline = "middle";
    ctx.fillText(classGlyph(o.class_id), c.x, c.y);
  }

  // nose marker + pitch readout
  ctx.fillStyle = "#e8e4d8";
  ctx.beginPath();
  ctx.moveTo(w / 2, h - 14);
  ctx.lineTo(w / 2 - 8, h - 2);
  ctx.lineTo(w / 2 + 8, h - 2);
  ctx.closePath();
  ctx.fill();
  ctx.font = "12px monospace";
  ctx.textAlign = "left";
  ctx.textBaseline = "top";
  ctx.fillStyle = "#9aa0ab";
  const pitch = PITCH_NAMES[view.pose[2]] ?? `${view.pose[2]}`;
  ctx.fillText(`facing ${view.pose[1]}, looking ${pitch}`, 6, 4);
}

// ---- top-down map ----

export function drawTopdown(
  ctx: CanvasRenderingContext2D,
  map: TopdownMap,
  pose: Pose,
  px: number,
): void {
  for (let y = 0; y < map.height; y++) {
    for (let x = 0; x < map.width; x++) {
      ctx.fillStyle = beliefColor(map.free_belief[y][x], map.covered[y][x] === 1);
      ctx.fillRect(x * px, y * px, px, px);
    }
  }
  ctx.strokeStyle = "rgba(0,0,0,0.18)";
  ctx.lineWidth = 1;
  for (let x = 0; x <= map.width; x++) {
    ctx.beginPath();
    ctx.moveTo(x * px + 0.5, 0);
    ctx.lineTo(x * px + 0.5, map.height * px);
    ctx.stroke();
  }
  for (let y = 0; y <= map.height; y++) {
    ctx.beginPath();
    ctx.moveTo(0, y * px + 0.5);
    ctx.lineTo(map.width * px, y * px + 0.5);
    ctx.stroke();
  }

  ctx.font = `bold ${Math.round(px * 0.6)}px monospace`;
  ctx.textAlign = "center";
  ctx.textBaseline = "middle";
  for (const m of map.markers) {
    const [x, y] = m.cell;
    ctx.fillStyle = classColor(m.class_id);
    ctx.fillRect(x * px + 2, y * px + 2, px - 4, px - 4);
    ctx.fillStyle = "#14161c";
    ctx.fillText(classGlyph(m.class_id), (x + 0.5) * px, (y + 0.5) * px);
  }

  drawAgent(ctx, pose, px, "#f5f0e0");
}

export function drawAgent(
  ctx: CanvasRenderingContext2D,
  pose: Pose,
  px: number,
  color: string,
): void {
  const [cell, heading] = pose;
  const cx = (cell[0] + 0.5) * px;
  const cy = (cell[1] + 0.5) * px;
  ctx.save();
  ctx.translate(cx, cy);
  ctx.rotate(headingAngle(heading));
  ctx.fillStyle = color;
  ctx.beginPath();
  ctx.moveTo(px * 0.42, 0);
  ctx.lineTo(-px * 0.26, px * 0.26);
  ctx.lineTo(-px * 0.26, -px * 0.26);
  ctx.closePath();
  ctx.fill();
  ctx.strokeStyle = "#14161c";
  ctx.lineWidth = 1.5;
  ctx.stroke();
  ctx.restore();
}

// ---- replay playback ----

export function drawReplayMap(
  ctx: CanvasRenderingContext2D,
  model: ReplayModel,
  px: number,
): void {
  const w = model.header.width;
  const h = model.header.height;
  ctx.fillStyle = FOG;
  ctx.fillRect(0, 0, w * px, h * px);

  // coverage overlay: cells the agent has stood in so far
  ctx.fillStyle = "rgba(185,192,174,0.28)";
  for (const key of model.visitedCells(model.index)) {
    const [x, y] = key.split(",").map(Number);
    ctx.fillRect(x * px, y * px, px, px);
  }

  ctx.strokeStyle = "rgba(255,255,255,0.07)";
  ctx.lineWidth = 1;
  for (let x = 0; x <= w; x++) {
    ctx.beginPath();
    ctx.moveTo(x * px + 0.5, 0);
    ctx.lineTo(x * px + 0.5, h * px);
    ctx.stroke();
  }
  for (let y = 0; y <= h; y++) {
    ctx.beginPath();
    ctx.moveTo(0, y * px + 0.5);
    ctx.lineTo(w * px, y * px + 0.5);
    ctx.stroke();
  }

  // trail, one segment per frame, colored by the phase that produced it
  const trail = model.trail(model.index);
  ctx.lineWidth = Math.max(2, px * 0.18);
  ctx.lineCap = "round";
  for (let i = 1; i < trail.length; i++) {
    const a = trail[i - 1].pose[0];
    const b = trail[i].pose[0];
    ctx.strokeStyle = phaseColor(trail[i].phase);
    ctx.beginPath();
    ctx.moveTo((a[0] + 0.5) * px, (a[1] + 0.5) * px);
    ctx.lineTo((b[0] + 0.5) * px, (b[1] + 0.5) * px);
    ctx.stroke();
  }

  if (trail.length > 0) {
    const start = trail[0].pose[0];
    ctx.fillStyle = "#5bc46a";
    ctx.beginPath();
    ctx.arc((start[0] + 0.5) * px, (start[1] + 0.5) * px, px * 0.2, 0, Math.PI * 2);
    ctx.fill();
    drawAgent(ctx, trail[trail.length - 1].pose, px, "#f5f0e0");
  }
}

export function drawRewardStrip(
  ctx: CanvasRenderingContext2D,
  commands: ReplayCommand[],
  currentCommand: number,
  w: number,
  h: number,
): void {
  ctx.fillStyle = "#191c24";
  ctx.fillRect(0, 0, w, h);
  if (commands.length === 0) return;
  const mid = h / 2;
  const peak = Math.max(...commands.map((c) => Math.abs(c.reward)), 1e-9);
  const bar = w / commands.length;
  for (let k = 0; k < commands.length; k++) {
    const r = commands[k].reward;
    const len = (Math.abs(r) / peak) * (mid - 3);
    ctx.fillStyle = r >= 0 ? "#5bc46a" : "#d86a5a";
    if (!commands[k].was_valid) ctx.fillStyle = "#a23b4e";
    ctx.fillRect(k * bar, r >= 0 ? mid - len : mid, Math.max(1, bar - 1), Math.max(1, len));
  }
  ctx.strokeStyle = "rgba(255,255,255,0.25)";
  ctx.beginPath();
  ctx.moveTo(0, mid + 0.5);
  ctx.lineTo(w, mid + 0.5);
  ctx.stroke();
  if (currentCommand >= 0 && currentCommand < commands.length) {
    ctx.strokeStyle = phaseColor("planner");
    ctx.lineWidth = 2;
    ctx.strokeRect(currentCommand * bar + 0.5, 0.5, Math.max(2, bar - 1), h - 1);
  }
}
