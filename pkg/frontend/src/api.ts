/**
 * Typed client for the trackedit service. The UI computes no geometry:
 * projected tracks, edited tracks, previews, and metrics all come from
 * these endpoints. Preview images are passed through as raw PNG bytes.
 */

import type { EditSpecDoc } from "./editspec.js";

export interface ProjectInfo {
  F: number;
  H: number;
  W: number;
  N: number;
  objects: number[];
  has_depth: boolean;
}

export interface BranchTracks {
  coords: number[][][]; // [frame][track][x, y, z] normalized
  existence: number[][];
}

export interface TracksPayload {
  F: number;
  N: number;
  width: number;
  height: number;
  frame_stride: number;
  stride: number;
  object_id: number[];
  track_indices: number[];
  source: BranchTracks;
  target: BranchTracks;
}

export interface EditResponse {
  hash: string;
  tracks: TracksPayload;
}

export interface PreviewResponse {
  hash: string;
  frames: number;
  cached: boolean;
}

export interface MetricReportDoc {
  scalars: Record<string, number | string>;
  per_frame: Record<string, Array<number | string>>;
  metadata: Record<string, unknown>;
}

export class ServiceError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function asJson<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = (await resp.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      /* non-JSON error body */
    }
    throw new ServiceError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export class ApiClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: typeof fetch = fetch.bind(globalThis),
  ) {}

  projectInfo(): Promise<ProjectInfo> {
    return this.fetchFn(`${this.base}/api/project`).then((r) => asJson<ProjectInfo>(r));
  }

  frameUrl(index: number): string {
    return `${this.base}/api/frame/${index}`;
  }

  tracks(stride = 1, frameStride = 1): Promise<TracksPayload> {
    const q = `stride=${stride}&frame_stride=${frameStride}`;
    return this.fetchFn(`${this.base}/api/tracks?${q}`).then((r) => asJson<TracksPayload>(r));
  }

  edit(doc: EditSpecDoc): Promise<EditResponse> {
    return this.fetchFn(`${this.base}/api/edit`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(doc),
    }).then((r) => asJson<EditResponse>(r));
  }

  requestPreview(doc: EditSpecDoc): Promise<PreviewResponse> {
    return this.fetchFn(`${this.base}/api/preview`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(doc),
    }).then((r) => asJson<PreviewResponse>(r));
  }

  /** Raw PNG bytes of a preview frame, byte-identical to the HTTP body. */
  async previewFrameBytes(hash: string, index: number): Promise<Uint8Array> {
    const resp = await this.fetchFn(`${this.base}/api/preview/${hash}/${index}`);
    if (!resp.ok) throw new ServiceError(resp.status, `preview frame ${index}`);
    return new Uint8Array(await resp.arrayBuffer());
  }

  previewFrameUrl(hash: string, index: number): string {
    return `${this.base}/api/preview/${hash}/${index}`;
  }

  /** Poll until a preview frame is servable (the post is idempotent). */
  async waitForPreview(doc: EditSpecDoc, pollMs = 250, maxTries = 240): Promise<string> {
    const { hash } = await this.requestPreview(doc);
    for (let i = 0; i < maxTries; i++) {
      const resp = await this.fetchFn(`${this.base}/api/preview/${hash}/0`);
      if (resp.ok) return hash;
      await new Promise((r) => setTimeout(r, pollMs));
    }
    throw new ServiceError(408, "preview rendering timed out");
  }

  metrics(hash: string, against: "source" | "target"): Promise<MetricReportDoc> {
    return this.fetchFn(`${this.base}/api/metrics`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ hash, against }),
    }).then((r) => asJson<MetricReportDoc>(r));
  }
}
