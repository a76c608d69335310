import { BundleDoc } from "./bundle.js";

export interface GuidanceOptions {
  w_c?: number;
  tau2?: number;
  k_iters?: number;
}

export interface MotionPayload {
  n: number;
  d: number;
  fps: number;
  features: number[][];
  positions: number[][][];
}

export interface GenerateResponse {
  clip_id: string;
  motion: MotionPayload;
  keypose_frame: number;
  projected_trajectory: Record<string, number[][]>;
  trajectory3d: Record<string, number[][]>;
}

export interface EditResponse {
  clip_id: string;
  motion: MotionPayload;
  trajectory3d: Record<string, number[][]>;
}

export interface SessionDoc {
  id: string;
  frames: Array<{ clip_id: string; action: string } | null>;
  blend_id: string | null;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public fieldPath?: string,
  ) {
    super(message);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = (...args) => globalThis.fetch(...args),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const res = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers: { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const doc = await res.json().catch(() => ({}));
    if (!res.ok) {
      throw new ApiError(
        res.status,
        doc.error ?? "unknown",
        doc.message ?? `request failed with ${res.status}`,
        doc.field_path,
      );
    }
    return doc as T;
  }

  health() {
    return this.request<{ status: string; queue_depth: number }>("GET", "/v1/health");
  }

  createSession() {
    return this.request<{ id: string }>("POST", "/v1/sessions");
  }

  getSession(id: string) {
    return this.request<SessionDoc>("GET", `/v1/sessions/${id}`);
  }

  getClip(id: string) {
    return this.request<MotionPayload>("GET", `/v1/clips/${id}`);
  }

  generateFrame(
    sessionId: string,
    k: number,
    bundle: BundleDoc,
    action: string,
    seed = 0,
    guidance?: GuidanceOptions,
  ) {
    return this.request<GenerateResponse>(
      "POST",
      `/v1/sessions/${sessionId}/frames/${k}/generate`,
      { bundle, action, seed, guidance },
    );
  }

  editClip(clipId: string, bundle: BundleDoc, action: string, seed = 0, guidance?: GuidanceOptions) {
    return this.request<EditResponse>("POST", `/v1/clips/${clipId}/edit`, {
      bundle,
      action,
      seed,
      guidance,
    });
  }

  blendSession(sessionId: string, ladder = 20) {
    return this.request<{ clip_id: string }>("POST", `/v1/sessions/${sessionId}/blend`, { ladder });
  }
}
