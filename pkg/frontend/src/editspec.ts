/**
 * Editspec document model: typed op builders, an undo/redo stack, and the
 * canonical serialization shared with the server and CLI.
 *
 * Canonical form: object keys sorted recursively, compact separators, and
 * integral numbers printed without a decimal point. Numbers must stay in
 * plain decimal notation range (no exponent formatting) for byte parity
 * with the Python side; every form input in the UI satisfies that.
 */

export interface Keyframe {
  frame: number;
  scale?: number;
  quat?: [number, number, number, number];
  t?: [number, number, number];
}

export type Selection =
  | { object_id: number }
  | { indices: number[] }
  | { box: { frame: number; x0: number; y0: number; x1: number; y1: number } };

export interface EditOp {
  kind: string;
  selection?: Selection;
  keyframes?: Keyframe[];
  params?: Record<string, unknown>;
}

export interface EditSpecDoc {
  ops: EditOp[];
}

export function canonicalValue(v: unknown): unknown {
  if (Array.isArray(v)) return v.map(canonicalValue);
  if (v !== null && typeof v === "object") {
    const out: Record<string, unknown> = {};
    for (const key of Object.keys(v as object).sort()) {
      out[key] = canonicalValue((v as Record<string, unknown>)[key]);
    }
    return out;
  }
  return v;
}

function stringify(v: unknown): string {
  if (v === null) return "null";
  if (typeof v === "number") {
    if (!Number.isFinite(v)) throw new Error("editspec numbers must be finite");
    if (Number.isInteger(v) && Math.abs(v) < 2 ** 53) return String(v);
    const s = String(v);
    if (s.includes("e") || s.includes("E")) {
      throw new Error(`number ${v} needs exponent notation; out of canonical range`);
    }
    return s;
  }
  if (typeof v === "boolean") return v ? "true" : "false";
  if (typeof v === "string") return JSON.stringify(v);
  if (Array.isArray(v)) return "[" + v.map(stringify).join(",") + "]";
  const entries = Object.entries(v as Record<string, unknown>).map(
    ([k, x]) => JSON.stringify(k) + ":" + stringify(x),
  );
  return "{" + entries.join(",") + "}";
}

/** Byte-identical to the Python canonical_editspec_json for in-range numbers. */
export function canonicalEditspecJson(doc: EditSpecDoc): string {
  return stringify(canonicalValue(doc));
}

export async function editspecHash(doc: EditSpecDoc): Promise<string> {
  const bytes = new TextEncoder().encode(canonicalEditspecJson(doc));
  const digest = await crypto.subtle.digest("SHA-256", bytes);
  return Array.from(new Uint8Array(digest))
    .map((b) => b.toString(16).padStart(2, "0"))
    .join("");
}

// ---------------------------------------------------------------------------
// op builders (forms construct ops only through these, keeping specs valid)

export function rigidOp(
  selection: Selection,
  keyframes: Keyframe[],
  pivot?: [number, number, number],
): EditOp {
  if (keyframes.length === 0) throw new Error("rigid edit needs at least one keyframe");
  sortKeyframes(keyframes);
  const op: EditOp = { kind: "rigid", selection, keyframes };
  if (pivot) op.params = { pivot };
  return op;
}

export function cameraOp(keyframes: Keyframe[], mode: "relative" | "absolute" = "relative"): EditOp {
  sortKeyframes(keyframes);
  return { kind: "camera", keyframes, params: { mode } };
}

export function removeOp(objectId: number): EditOp {
  return { kind: "remove", selection: { object_id: objectId } };
}

export function duplicateOp(objectId: number, keyframes: Keyframe[]): EditOp {
  sortKeyframes(keyframes);
  return { kind: "duplicate", selection: { object_id: objectId }, keyframes };
}

export function dropOp(selection: Selection): EditOp {
  return { kind: "drop", selection };
}

export function freezeBackgroundOp(anchorFrame: number): EditOp {
  return { kind: "freeze_background", params: { anchor_frame: anchorFrame } };
}

function sortKeyframes(keyframes: Keyframe[]): void {
  keyframes.sort((a, b) => a.frame - b.frame);
  for (let i = 1; i < keyframes.length; i++) {
    if (keyframes[i].frame === keyframes[i - 1].frame) {
      throw new Error(`duplicate keyframe at frame ${keyframes[i].frame}`);
    }
  }
}

// ---------------------------------------------------------------------------
// undo/redo document stack

export class EditSpecStack {
  private undoStack: EditSpecDoc[] = [];
  private redoStack: EditSpecDoc[] = [];
  private current: EditSpecDoc = { ops: [] };

  get doc(): EditSpecDoc {
    return this.current;
  }

  private snapshot(): EditSpecDoc {
    return JSON.parse(JSON.stringify(this.current)) as EditSpecDoc;
  }

  apply(op: EditOp): void {
    this.undoStack.push(this.snapshot());
    this.redoStack = [];
    this.current = { ops: [...this.current.ops, op] };
  }

  removeOpAt(index: number): void {
    if (index < 0 || index >= this.current.ops.length) return;
    this.undoStack.push(this.snapshot());
    this.redoStack = [];
    this.current = { ops: this.current.ops.filter((_, i) => i !== index) };
  }

  undo(): boolean {
    const prev = this.undoStack.pop();
    if (!prev) return false;
    this.redoStack.push(this.snapshot());
    this.current = prev;
    return true;
  }

  redo(): boolean {
    const next = this.redoStack.pop();
    if (!next) return false;
    this.undoStack.push(this.snapshot());
    this.current = next;
    return true;
  }

  canUndo(): boolean {
    return this.undoStack.length > 0;
  }

  canRedo(): boolean {
    return this.redoStack.length > 0;
  }
}
