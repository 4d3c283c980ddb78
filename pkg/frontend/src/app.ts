/**
 * Browser editor: scrub frames, overlay tracks, box-select, compose
 * keyframed edits, preview the warp side by side, and export the canonical
 * editspec. All track math comes from the service; every visible state is
 * reconstructible from (project, editspec).
 */

import { ApiClient, ProjectInfo, TracksPayload } from "./api.js";
import {
  EditSpecStack,
  Keyframe,
  Selection,
  canonicalEditspecJson,
  cameraOp,
  dropOp,
  freezeBackgroundOp,
  removeOp,
  rigidOp,
} from "./editspec.js";
import { SelectionRect, boxSelect, drawOverlay, objectColor } from "./overlay.js";

const api = new ApiClient();
const stack = new EditSpecStack();

interface UiState {
  info: ProjectInfo | null;
  frame: number;
  tracks: TracksPayload | null;
  edited: TracksPayload | null;
  selection: { kind: "box" | "object"; payload: Selection; indices: number[] } | null;
  previewHash: string | null;
  playing: boolean;
  dragRect: SelectionRect | null;
  stride: number;
  showSource: boolean;
  showEdited: boolean;
}

const state: UiState = {
  info: null,
  frame: 0,
  tracks: null,
  edited: null,
  selection: null,
  previewHash: null,
  playing: false,
  dragRect: null,
  stride: 1,
  showSource: true,
  showEdited: true,
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const frameCanvas = el<HTMLCanvasElement>("frame-canvas");
const overlayCanvas = el<HTMLCanvasElement>("overlay-canvas");
const previewImg = el<HTMLImageElement>("preview-img");
const scrubber = el<HTMLInputElement>("scrubber");
const statusLine = el<HTMLDivElement>("status");

function setStatus(text: string, isError = false) {
  statusLine.textContent = text;
  statusLine.className = isError ? "status error" : "status";
}

async function refreshTracks() {
  state.tracks = await api.tracks(state.stride, 1);
  state.edited = stack.doc.ops.length
    ? (await api.edit(stack.doc)).tracks
    : null;
}

function redraw() {
  if (!state.info || !state.tracks) return;
  const ctx = overlayCanvas.getContext("2d")!;
  ctx.clearRect(0, 0, overlayCanvas.width, overlayCanvas.height);
  drawOverlay(
    ctx,
    state.tracks,
    state.edited,
    Math.min(state.frame, state.tracks.F - 1),
    {
      stride: 1,
      showSource: state.showSource,
      showEdited: state.showEdited,
      trailFrames: 4,
    },
    new Set(state.selection?.indices ?? []),
    state.dragRect,
  );
  const fctx = frameCanvas.getContext("2d")!;
  const img = new Image();
  img.onload = () => {
    fctx.imageSmoothingEnabled = false;
    fctx.drawImage(img, 0, 0, frameCanvas.width, frameCanvas.height);
  };
  img.src = api.frameUrl(state.frame);
  if (state.previewHash) {
    previewImg.src = api.previewFrameUrl(state.previewHash, state.frame);
  }
  renderOps();
  renderSelection();
}

function renderSelection() {
  const box = el<HTMLDivElement>("selection-info");
  if (!state.selection) {
    box.textContent = "no selection";
    return;
  }
  const n = state.selection.indices.length;
  box.textContent =
    state.selection.kind === "box"
      ? `box selection: ${n} tracks at frame ${state.frame}`
      : `object selection: ${n} tracks`;
}

function renderOps() {
  const list = el<HTMLUListElement>("ops-list");
  list.innerHTML = "";
  stack.doc.ops.forEach((op, i) => {
    const item = document.createElement("li");
    const label = document.createElement("span");
    label.textContent = `${i}: ${op.kind}` + (op.selection ? ` ${JSON.stringify(op.selection).slice(0, 40)}` : "");
    const remove = document.createElement("button");
    remove.textContent = "x";
    remove.onclick = () => {
      stack.removeOpAt(i);
      void onSpecChanged();
    };
    item.append(label, remove);
    list.append(item);
  });
  el<HTMLButtonElement>("undo-btn").disabled = !stack.canUndo();
  el<HTMLButtonElement>("redo-btn").disabled = !stack.canRedo();
}

async function onSpecChanged() {
  state.previewHash = null;
  previewImg.removeAttribute("src");
  try {
    state.edited = stack.doc.ops.length ? (await api.edit(stack.doc)).tracks : null;
    setStatus(`editspec: ${stack.doc.ops.length} ops`);
  } catch (err) {
    setStatus(String(err), true);
  }
  redraw();
}

// ---------------------------------------------------------------------------
// interactions

function wireScrubber(info: ProjectInfo) {
  scrubber.max = String(info.F - 1);
  scrubber.oninput = () => {
    state.frame = Number(scrubber.value);
    el<HTMLSpanElement>("frame-label").textContent = `${state.frame}/${info.F - 1}`;
    redraw();
  };
  el<HTMLButtonElement>("play-btn").onclick = () => {
    state.playing = !state.playing;
    el<HTMLButtonElement>("play-btn").textContent = state.playing ? "pause" : "play";
  };
  setInterval(() => {
    if (state.playing && state.info) {
      state.frame = (state.frame + 1) % state.info.F;
      scrubber.value = String(state.frame);
      el<HTMLSpanElement>("frame-label").textContent = `${state.frame}/${state.info.F - 1}`;
      redraw();
    }
  }, 160);
}

function wireBoxSelect() {
  let dragging = false;
  overlayCanvas.onmousedown = (ev) => {
    const rect = overlayCanvas.getBoundingClientRect();
    dragging = true;
    state.dragRect = {
      x0: ev.clientX - rect.left,
      y0: ev.clientY - rect.top,
      x1: ev.clientX - rect.left,
      y1: ev.clientY - rect.top,
    };
  };
  overlayCanvas.onmousemove = (ev) => {
    if (!dragging || !state.dragRect) return;
    const rect = overlayCanvas.getBoundingClientRect();
    state.dragRect.x1 = ev.clientX - rect.left;
    state.dragRect.y1 = ev.clientY - rect.top;
    redraw();
  };
  overlayCanvas.onmouseup = () => {
    if (!dragging || !state.dragRect || !state.tracks) return;
    dragging = false;
    const frame = Math.min(state.frame, state.tracks.F - 1);
    const { indices, box } = boxSelect(
      state.tracks,
      frame,
      state.dragRect,
      overlayCanvas.width,
      overlayCanvas.height,
    );
    state.dragRect = null;
    if (indices.length === 0) {
      setStatus("empty box selection", true);
    } else {
      state.selection = { kind: "box", payload: { box }, indices };
      setStatus(`selected ${indices.length} tracks`);
    }
    redraw();
  };
}

function currentSelection(): Selection | null {
  return state.selection?.payload ?? null;
}

function readTriple(prefix: string): [number, number, number] {
  return [
    Number(el<HTMLInputElement>(`${prefix}-x`).value || 0),
    Number(el<HTMLInputElement>(`${prefix}-y`).value || 0),
    Number(el<HTMLInputElement>(`${prefix}-z`).value || 0),
  ];
}

function yawQuat(degrees: number): [number, number, number, number] {
  const half = ((degrees * Math.PI) / 180) / 2;
  return [round6(Math.cos(half)), 0, 0, round6(Math.sin(half))];
}

function round6(v: number): number {
  return Math.round(v * 1e6) / 1e6;
}

function wireForms(info: ProjectInfo) {
  el<HTMLButtonElement>("apply-rigid").onclick = () => {
    const selection = currentSelection();
    if (!selection) {
      setStatus("make a selection first", true);
      return;
    }
    const t = readTriple("rigid-t");
    const yaw = Number(el<HTMLInputElement>("rigid-yaw").value || 0);
    const scale = Number(el<HTMLInputElement>("rigid-scale").value || 1);
    const end: Keyframe = { frame: info.F - 1, t };
    if (yaw !== 0) end.quat = yawQuat(yaw);
    if (scale !== 1) end.scale = scale;
    const keyframes: Keyframe[] = [{ frame: 0 }, end];
    try {
      stack.apply(rigidOp(selection, keyframes));
      void onSpecChanged();
    } catch (err) {
      setStatus(String(err), true);
    }
  };

  el<HTMLButtonElement>("apply-camera").onclick = () => {
    const t = readTriple("camera-t");
    stack.apply(cameraOp([{ frame: 0 }, { frame: info.F - 1, t }]));
    void onSpecChanged();
  };

  const objectInput = el<HTMLInputElement>("object-id");
  el<HTMLButtonElement>("select-object").onclick = () => {
    const oid = Number(objectInput.value);
    if (!state.tracks) return;
    const indices = state.tracks.track_indices.filter(
      (_, j) => state.tracks!.object_id[j] === oid,
    );
    if (!indices.length) {
      setStatus(`no tracks with object_id ${oid}`, true);
      return;
    }
    state.selection = { kind: "object", payload: { object_id: oid }, indices };
    redraw();
  };
  el<HTMLButtonElement>("apply-remove").onclick = () => {
    stack.apply(removeOp(Number(objectInput.value)));
    void onSpecChanged();
  };
  el<HTMLButtonElement>("apply-drop").onclick = () => {
    const selection = currentSelection();
    if (!selection) {
      setStatus("make a selection first", true);
      return;
    }
    stack.apply(dropOp(selection));
    void onSpecChanged();
  };
  el<HTMLButtonElement>("apply-freeze").onclick = () => {
    stack.apply(freezeBackgroundOp(0));
    void onSpecChanged();
  };

  el<HTMLButtonElement>("undo-btn").onclick = () => {
    stack.undo();
    void onSpecChanged();
  };
  el<HTMLButtonElement>("redo-btn").onclick = () => {
    stack.redo();
    void onSpecChanged();
  };

  el<HTMLButtonElement>("preview-btn").onclick = async () => {
    setStatus("rendering preview...");
    try {
      state.previewHash = await api.waitForPreview(stack.doc);
      setStatus(`preview ready (${state.previewHash.slice(0, 12)})`);
      redraw();
    } catch (err) {
      setStatus(String(err), true);
    }
  };

  el<HTMLButtonElement>("metrics-btn").onclick = async () => {
    if (!state.previewHash) {
      setStatus("render a preview first", true);
      return;
    }
    const report = await api.metrics(state.previewHash, "source");
    const rows = Object.entries(report.scalars)
      .map(([k, v]) => `${k} = ${typeof v === "number" ? v.toFixed(4) : v}`)
      .join("\n");
    el<HTMLPreElement>("metrics-out").textContent = rows;
  };

  el<HTMLButtonElement>("export-btn").onclick = () => {
    const canonical = canonicalEditspecJson(stack.doc);
    const blob = new Blob([canonical], { type: "application/json" });
    const link = document.createElement("a");
    link.href = URL.createObjectURL(blob);
    link.download = "editspec.json";
    link.click();
    URL.revokeObjectURL(link.href);
  };

  el<HTMLInputElement>("show-source").onchange = (ev) => {
    state.showSource = (ev.target as HTMLInputElement).checked;
    redraw();
  };
  el<HTMLInputElement>("show-edited").onchange = (ev) => {
    state.showEdited = (ev.target as HTMLInputElement).checked;
    redraw();
  };
  el<HTMLInputElement>("overlay-stride").onchange = async (ev) => {
    state.stride = Math.max(1, Number((ev.target as HTMLInputElement).value));
    await refreshTracks();
    redraw();
  };
}

function renderLegend(info: ProjectInfo) {
  const legend = el<HTMLDivElement>("legend");
  legend.innerHTML = "";
  for (const oid of info.objects) {
    const chip = document.createElement("span");
    chip.className = "chip";
    chip.style.background = objectColor(oid);
    chip.textContent = oid === 0 ? "bg" : `obj ${oid}`;
    legend.append(chip);
  }
}

async function boot() {
  try {
    const info = await api.projectInfo();
    state.info = info;
    const scale = Math.max(1, Math.floor(480 / Math.max(info.W, info.H)));
    for (const canvas of [frameCanvas, overlayCanvas]) {
      canvas.width = info.W * scale;
      canvas.height = info.H * scale;
    }
    previewImg.width = info.W * scale;
    previewImg.height = info.H * scale;
    el<HTMLDivElement>("project-info").textContent =
      `${info.F} frames, ${info.W}x${info.H}, ${info.N} tracks` +
      (info.has_depth ? ", depth available" : ", no depth");
    renderLegend(info);
    wireScrubber(info);
    wireBoxSelect();
    wireForms(info);
    await refreshTracks();
    setStatus("ready");
    redraw();
  } catch (err) {
    setStatus(`failed to load project: ${err}`, true);
  }
}

void boot();
