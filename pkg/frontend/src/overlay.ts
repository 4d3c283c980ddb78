/**
 * Canvas drawing of track overlays. Pure screen-space rendering: positions
 * come from the service as normalized coordinates; depth is shown through
 * point size and brightness (nearer points are larger and brighter).
 */

import type { TracksPayload } from "./api.js";

export interface OverlayOptions {
  stride: number;
  showSource: boolean;
  showEdited: boolean;
  trailFrames: number;
}

export const OBJECT_COLORS = [
  "#9aa0a6", // background
  "#ff5252",
  "#4caf50",
  "#42a5f5",
  "#ffca28",
  "#ab47bc",
  "#26c6da",
  "#ff7043",
];

export function objectColor(objectId: number): string {
  return OBJECT_COLORS[objectId % OBJECT_COLORS.length];
}

export interface SelectionRect {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export function drawOverlay(
  ctx: CanvasRenderingContext2D,
  tracks: TracksPayload,
  edited: TracksPayload | null,
  frame: number,
  options: OverlayOptions,
  selectedIndices: Set<number>,
  dragRect: SelectionRect | null,
): void {
  const { width, height } = ctx.canvas;
  const sx = width / tracks.width;
  const sy = height / tracks.height;

  const drawBranch = (payload: TracksPayload, branch: "source" | "target", edits: boolean) => {
    const coords = payload[branch].coords;
    const existence = payload[branch].existence;
    if (frame >= coords.length) return;
    for (let j = 0; j < payload.N; j += options.stride) {
      if (!existence[frame][j]) continue;
      const [x, y, z] = coords[frame][j];
      const px = x * payload.width * sx;
      const py = y * payload.height * sy;
      if (px < -width || px > 2 * width || py < -height || py > 2 * height) continue;
      const radius = 1.5 + 2.5 * z; // nearer (larger z) drawn bigger
      const globalIndex = payload.track_indices[j];
      const color = objectColor(payload.object_id[j]);
      ctx.globalAlpha = 0.45 + 0.55 * z;
      if (edits) {
        ctx.fillStyle = color;
        ctx.beginPath();
        ctx.arc(px, py, radius, 0, 2 * Math.PI);
        ctx.fill();
      } else {
        ctx.strokeStyle = color;
        ctx.lineWidth = 1;
        ctx.beginPath();
        ctx.arc(px, py, radius, 0, 2 * Math.PI);
        ctx.stroke();
      }
      if (selectedIndices.has(globalIndex)) {
        ctx.globalAlpha = 1.0;
        ctx.strokeStyle = "#ffffff";
        ctx.lineWidth = 1.5;
        ctx.beginPath();
        ctx.arc(px, py, radius + 2, 0, 2 * Math.PI);
        ctx.stroke();
      }
      // short motion trail toward earlier frames
      if (options.trailFrames > 0) {
        ctx.globalAlpha = 0.3;
        ctx.strokeStyle = color;
        ctx.beginPath();
        ctx.moveTo(px, py);
        for (let back = 1; back <= options.trailFrames && frame - back >= 0; back++) {
          const [bx, by] = coords[frame - back][j];
          ctx.lineTo(bx * payload.width * sx, by * payload.height * sy);
        }
        ctx.stroke();
      }
    }
    ctx.globalAlpha = 1.0;
  };

  if (options.showSource) drawBranch(tracks, "source", false);
  if (options.showEdited) drawBranch(edited ?? tracks, "target", true);

  if (dragRect) {
    ctx.strokeStyle = "#ffffff";
    ctx.setLineDash([4, 3]);
    ctx.lineWidth = 1;
    ctx.strokeRect(
      Math.min(dragRect.x0, dragRect.x1),
      Math.min(dragRect.y0, dragRect.y1),
      Math.abs(dragRect.x1 - dragRect.x0),
      Math.abs(dragRect.y1 - dragRect.y0),
    );
    ctx.setLineDash([]);
  }
}

/**
 * Resolve a canvas-space drag rectangle to track indices using the
 * server-provided projections at one frame (no client-side geometry
 * beyond this screen-space containment test).
 */
export function boxSelect(
  tracks: TracksPayload,
  frame: number,
  rect: SelectionRect,
  canvasWidth: number,
  canvasHeight: number,
): { indices: number[]; box: { frame: number; x0: number; y0: number; x1: number; y1: number } } {
  const sx = tracks.width / canvasWidth;
  const sy = tracks.height / canvasHeight;
  const x0 = Math.max(0, Math.min(rect.x0, rect.x1) * sx);
  const x1 = Math.min(tracks.width, Math.max(rect.x0, rect.x1) * sx);
  const y0 = Math.max(0, Math.min(rect.y0, rect.y1) * sy);
  const y1 = Math.min(tracks.height, Math.max(rect.y0, rect.y1) * sy);
  const indices: number[] = [];
  const coords = tracks.source.coords[frame];
  for (let j = 0; j < tracks.N; j++) {
    const [x, y] = coords[j];
    const px = x * tracks.width;
    const py = y * tracks.height;
    if (px >= x0 && px < x1 && py >= y0 && py < y1) {
      indices.push(tracks.track_indices[j]);
    }
  }
  return { indices, box: { frame, x0, y0, x1, y1 } };
}
