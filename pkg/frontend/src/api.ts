/** Typed HTTP client for the segmentation service, plus the scheduler that
 * keeps at most one refine request in flight. */

import type {
  HealthResponse,
  RefineRequest,
  SegmentRequest,
  SegmentationResponse,
} from "./types.js";

/** Structural subset of fetch so tests can substitute a stub transport. */
export interface HttpResponseLike {
  status: number;
  text(): Promise<string>;
}

export type Transport = (
  url: string,
  init: { method: string; headers?: Record<string, string>; body?: string },
) => Promise<HttpResponseLike>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function parseJson<T>(res: HttpResponseLike): Promise<T> {
  const text = await res.text();
  if (res.status < 200 || res.status >= 300) {
    let message = `HTTP ${res.status}`;
    try {
      const body = JSON.parse(text) as { error?: string };
      if (body.error) message = `${message}: ${body.error}`;
    } catch {
      // non-JSON error body; keep the status-only message
    }
    throw new ApiError(res.status, message);
  }
  return JSON.parse(text) as T;
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly transport: Transport = (url, init) => fetch(url, init),
  ) {}

  async health(): Promise<HealthResponse> {
    const res = await this.transport(`${this.baseUrl}/health`, { method: "GET" });
    return parseJson<HealthResponse>(res);
  }

  async segment(req: SegmentRequest): Promise<SegmentationResponse> {
    return this.post<SegmentationResponse>("/segment", req);
  }

  async refine(req: RefineRequest): Promise<SegmentationResponse> {
    return this.post<SegmentationResponse>("/refine", req);
  }

  private async post<T>(path: string, payload: unknown): Promise<T> {
    const res = await this.transport(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    return parseJson<T>(res);
  }
}

/** Serializes refine traffic: at most one request on the wire; a request
 * submitted while one is in flight replaces any queued one (newest wins),
 * and a response that arrives with a newer request queued is discarded so
 * the screen only ever shows the latest state. */
export class RefineScheduler {
  private inflight = false;
  private queued: RefineRequest | null = null;

  constructor(
    private readonly send: (req: RefineRequest) => Promise<SegmentationResponse>,
    private readonly onResult: (res: SegmentationResponse, req: RefineRequest) => void,
    private readonly onError: (err: unknown, req: RefineRequest) => void,
  ) {}

  get busy(): boolean {
    return this.inflight;
  }

  submit(req: RefineRequest): void {
    if (this.inflight) {
      this.queued = req;
      return;
    }
    void this.run(req);
  }

  private async run(req: RefineRequest): Promise<void> {
    this.inflight = true;
    try {
      const res = await this.send(req);
      if (this.queued === null) {
        this.onResult(res, req);
      }
    } catch (err) {
      if (this.queued === null) {
        this.onError(err, req);
      }
    } finally {
      this.inflight = false;
      if (this.queued !== null) {
        const next = this.queued;
        this.queued = null;
        void this.run(next);
      }
    }
  }
}
