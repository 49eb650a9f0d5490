/**
 * Typed client for the conceptforge HTTP service.
 *
 * Every method maps to one endpoint and returns the parsed canonical-JSON
 * payload. `save` returns the raw response text instead, so callers can
 * compare saved documents byte for byte. Failures raise `ApiError` carrying
 * the HTTP status and the service's error message.
 */

export interface ParamSpec {
  name: string;
  lower: number;
  upper: number;
  default: number;
  unit: string;
}

export interface DiscreteSpec {
  name: string;
  min: number;
  max: number;
  default: number;
}

export interface TemplateDescriptor {
  id: string;
  kind: "geometry" | "concept";
  tags: string[];
  params: ParamSpec[];
  discrete: DiscreteSpec[];
  regions: string[];
  frames: string[];
  members?: { name: string; template_id: string }[];
}

export interface MeshPayload {
  vertices: number[][];
  faces: number[][];
}

export interface PoseRecord {
  quaternion: number[];
  translation: number[];
}

export interface InstanceRecord {
  template_id: string;
  continuous: number[];
  discrete: number[];
  pose: PoseRecord;
  point_indices?: number[];
}

export interface SessionDocument {
  object_id: string;
  category: string;
  parts: Record<string, InstanceRecord>;
  dirty: boolean;
}

export interface OptimizeStatus {
  status: "running" | "done" | "error";
  part: string;
  trace: number[];
  final_loss?: number;
  converged?: boolean;
  iterations_used?: number;
  result?: InstanceRecord;
  error?: string;
}

export interface FitConfigPayload {
  max_iters?: number;
  step_size?: number;
  convergence_tol?: number;
  mesh_samples?: number;
  resolution?: number;
  seed?: number;
  multi_start?: number;
  max_corr_points?: number;
}

export interface CreateSessionRequest {
  mesh?: MeshPayload;
  mesh_path?: string;
  object_id?: string;
  category?: string;
  cloud_points?: number;
  seed?: number;
}

export interface InstantiateRequest {
  template_id: string;
  continuous?: number[];
  discrete?: number[];
  pose?: PoseRecord;
  resolution?: number;
}

export interface AnnotateResponse {
  regions: [number, string[]][];
  poses: Record<string, unknown>[];
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
    readonly field?: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** The subset of the service the UI talks to; `ApiClient` is the live
 *  implementation, tests may substitute an in-memory fake. */
export interface ConceptService {
  templates(): Promise<TemplateDescriptor[]>;
  instantiate(req: InstantiateRequest): Promise<MeshPayload>;
  createSession(req: CreateSessionRequest): Promise<{ session_id: string; cloud_points: number }>;
  getSession(sid: string): Promise<SessionDocument>;
  getPart(sid: string, name: string): Promise<InstanceRecord>;
  putPart(sid: string, name: string, record: InstanceRecord): Promise<void>;
  startOptimize(sid: string, part: string, config: FitConfigPayload): Promise<{ status: string; part: string }>;
  pollOptimize(sid: string): Promise<OptimizeStatus>;
  annotate(body: Record<string, unknown>): Promise<AnnotateResponse>;
  save(sid: string): Promise<string>;
}

export class ApiClient implements ConceptService {
  constructor(readonly baseUrl: string) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const text = await this.requestText(method, path, body);
    return JSON.parse(text) as T;
  }

  private async requestText(method: string, path: string, body?: unknown): Promise<string> {
    let res: Response;
    try {
      res = await fetch(this.baseUrl + path, {
        method,
        headers: body === undefined ? undefined : { "content-type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new ApiError(0, `service unreachable: ${String(err)}`);
    }
    const text = await res.text();
    if (!res.ok) {
      let message = `HTTP ${res.status}`;
      let field: string | undefined;
      try {
        const payload = JSON.parse(text) as { error?: string; field?: string };
        if (payload.error) message = payload.error;
        field = payload.field;
      } catch {
        // non-JSON error body; keep the status line
      }
      throw new ApiError(res.status, message, field);
    }
    return text;
  }

  templates(): Promise<TemplateDescriptor[]> {
    return this.request("GET", "/templates");
  }

  instantiate(req: InstantiateRequest): Promise<MeshPayload> {
    return this.request("POST", "/instantiate", req);
  }

  createSession(req: CreateSessionRequest): Promise<{ session_id: string; cloud_points: number }> {
    return this.request("POST", "/sessions", req);
  }

  getSession(sid: string): Promise<SessionDocument> {
    return this.request("GET", `/sessions/${sid}`);
  }

  getPart(sid: string, name: string): Promise<InstanceRecord> {
    return this.request("GET", `/sessions/${sid}/parts/${name}`);
  }

  async putPart(sid: string, name: string, record: InstanceRecord): Promise<void> {
    await this.request("PUT", `/sessions/${sid}/parts/${name}`, record);
  }

  startOptimize(sid: string, part: string, config: FitConfigPayload): Promise<{ status: string; part: string }> {
    return this.request("POST", `/sessions/${sid}/optimize`, { part, config });
  }

  pollOptimize(sid: string): Promise<OptimizeStatus> {
    return this.request("GET", `/sessions/${sid}/optimize`);
  }

  annotate(body: Record<string, unknown>): Promise<AnnotateResponse> {
    return this.request("POST", "/annotate", body);
  }

  save(sid: string): Promise<string> {
    return this.requestText("POST", `/sessions/${sid}/save`);
  }
}
