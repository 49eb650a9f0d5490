/**
 * Session controller: the glue between the view state and the service.
 *
 * One controller owns one service session. Parameter edits update the
 * working document immediately (the inspector never lags the slider) and
 * are pushed to the service on a debounce timer: the part is re-uploaded
 * and re-instantiated once per burst of edits, not once per tick.
 * Optimize runs as a background job that is polled for its live loss
 * trace; the pre-optimize record is kept so the result can be reverted.
 */

import {
  ApiError,
  type ConceptService,
  type FitConfigPayload,
  type InstanceRecord,
  type MeshPayload,
  type OptimizeStatus,
  type TemplateDescriptor,
} from "./api.js";
import { clampParam, stepDiscrete, validateParam, ViewState } from "./state.js";

export interface ControllerOptions {
  resolution?: number;
  debounceMs?: number;
  pollMs?: number;
}

export class OptimizeInProgressError extends Error {
  constructor() {
    super("an optimize job is already running");
    this.name = "OptimizeInProgressError";
  }
}

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

const cloneRecord = (rec: InstanceRecord): InstanceRecord =>
  JSON.parse(JSON.stringify(rec)) as InstanceRecord;

export class SessionController {
  readonly state: ViewState;
  sessionId: string | null = null;

  private readonly api: ConceptService;
  private readonly resolution: number;
  private readonly debounceMs: number;
  private readonly pollMs: number;
  private pending = new Map<string, ReturnType<typeof setTimeout>>();
  private inFlight = new Map<string, Promise<void>>();
  private optimizing = false;
  private preOptimize: { part: string; record: InstanceRecord } | null = null;

  constructor(api: ConceptService, state?: ViewState, options: ControllerOptions = {}) {
    this.api = api;
    this.state = state ?? new ViewState();
    this.resolution = options.resolution ?? 12;
    this.debounceMs = options.debounceMs ?? 120;
    this.pollMs = options.pollMs ?? 150;
  }

  /** Fetch the template palette; call once before anything else. */
  async init(): Promise<TemplateDescriptor[]> {
    this.state.descriptors = await this.surface(this.api.templates());
    this.state.notify();
    return this.state.descriptors;
  }

  /** Start a fresh session around a target mesh. */
  async loadObject(
    mesh: MeshPayload,
    opts: { objectId?: string; category?: string; cloudPoints?: number; seed?: number } = {},
  ): Promise<string> {
    const created = await this.surface(
      this.api.createSession({
        mesh,
        object_id: opts.objectId ?? "object",
        category: opts.category ?? "Unknown",
        cloud_points: opts.cloudPoints ?? 1024,
        seed: opts.seed ?? 0,
      }),
    );
    this.sessionId = created.session_id;
    this.state.targetMesh = mesh;
    this.state.document = await this.surface(this.api.getSession(created.session_id));
    this.state.notify();
    return created.session_id;
  }

  /** Re-open an existing session and re-render every saved part. */
  async attach(sessionId: string): Promise<void> {
    const doc = await this.surface(this.api.getSession(sessionId));
    this.sessionId = sessionId;
    this.state.document = doc;
    this.state.partMeshes.clear();
    for (const [name, record] of Object.entries(doc.parts)) {
      this.state.partMeshes.set(name, await this.instantiate(record));
    }
    this.state.notify();
  }

  /** Drop a template from the palette into the workspace. */
  async addPart(name: string, templateId: string): Promise<void> {
    const desc = this.state.descriptor(templateId);
    const record: InstanceRecord = {
      template_id: templateId,
      continuous: desc.params.map((s) => s.default),
      discrete: desc.discrete.map((s) => s.default),
      pose: { quaternion: [1, 0, 0, 0], translation: [0, 0, 0] },
    };
    await this.surface(this.api.putPart(this.requireSession(), name, record));
    this.state.setPartRecord(name, record);
    this.state.partMeshes.set(name, await this.instantiate(record));
    this.state.activePart = name;
    this.state.notify();
  }

  /** Slider edit: out-of-rail values stick to the bound. */
  setContinuousClamped(part: string, paramName: string, value: number): number {
    const { record, index, spec } = this.continuousSlot(part, paramName);
    const clamped = clampParam(spec, value);
    record.continuous[index] = clamped;
    this.state.notify();
    this.scheduleSync(part);
    return clamped;
  }

  /** Typed edit: values the schema cannot hold are rejected untouched. */
  setContinuousTyped(part: string, paramName: string, value: number): boolean {
    const { record, index, spec } = this.continuousSlot(part, paramName);
    const check = validateParam(spec, value);
    if (!check.ok) {
      this.state.setError(check.reason);
      return false;
    }
    record.continuous[index] = check.value;
    this.state.setError(null);
    this.scheduleSync(part);
    return true;
  }

  /** Stepper edit for discrete counts (+1 / -1), clamped to the schema. */
  stepDiscreteParam(part: string, paramName: string, delta: number): number {
    const record = this.state.partRecord(part);
    const desc = this.state.descriptor(record.template_id);
    const index = desc.discrete.findIndex((s) => s.name === paramName);
    if (index < 0) throw new Error(`unknown discrete param ${JSON.stringify(paramName)}`);
    const spec = desc.discrete[index]!;
    const next = stepDiscrete(spec, record.discrete[index]!, delta);
    record.discrete[index] = next;
    this.state.notify();
    this.scheduleSync(part);
    return next;
  }

  /** Push any debounced edits now and wait for the re-render. */
  async flush(): Promise<void> {
    const parts = [...this.pending.keys()];
    for (const part of parts) {
      const timer = this.pending.get(part);
      if (timer !== undefined) clearTimeout(timer);
      this.pending.delete(part);
      await this.syncPart(part);
    }
    await Promise.all([...this.inFlight.values()]);
  }

  /**
   * Fit the part to the session cloud. Resolves with the terminal job
   * status; the live trace lands in `state.lossTrace` as polling sees it
   * and the service's final loss in `state.finalLoss`.
   */
  async optimize(
    part: string,
    config: FitConfigPayload,
    onTrace?: (trace: number[]) => void,
  ): Promise<OptimizeStatus> {
    if (this.optimizing) throw new OptimizeInProgressError();
    const sid = this.requireSession();
    this.optimizing = true;
    try {
      await this.flush();
      this.preOptimize = { part, record: cloneRecord(this.state.partRecord(part)) };
      this.state.lossTrace = [];
      this.state.finalLoss = null;
      this.state.notify();
      await this.surface(this.api.startOptimize(sid, part, config));
      let status: OptimizeStatus;
      for (;;) {
        status = await this.surface(this.api.pollOptimize(sid));
        this.state.lossTrace = status.trace;
        this.state.notify();
        onTrace?.(status.trace);
        if (status.status !== "running") break;
        await sleep(this.pollMs);
      }
      if (status.status === "done" && status.result) {
        this.state.finalLoss = status.final_loss ?? null;
        this.state.setPartRecord(part, status.result);
        this.state.partMeshes.set(part, await this.instantiate(status.result));
        this.state.notify();
      } else if (status.status === "error") {
        this.state.setError(status.error ?? "optimize failed");
      }
      return status;
    } finally {
      this.optimizing = false;
    }
  }

  /** Put the part back the way it was before the last optimize. */
  async revertOptimize(): Promise<void> {
    if (!this.preOptimize) throw new Error("nothing to revert");
    const { part, record } = this.preOptimize;
    this.preOptimize = null;
    this.state.setPartRecord(part, cloneRecord(record));
    this.state.finalLoss = null;
    await this.syncPart(part);
  }

  /** Persist the document; returns the exact bytes the service wrote. */
  async save(): Promise<string> {
    const sid = this.requireSession();
    await this.flush();
    return this.surface(this.api.save(sid));
  }

  // ------------------------------------------------------------------

  private requireSession(): string {
    if (!this.sessionId) throw new Error("no session loaded");
    return this.sessionId;
  }

  private continuousSlot(part: string, paramName: string) {
    const record = this.state.partRecord(part);
    const desc = this.state.descriptor(record.template_id);
    const index = desc.params.findIndex((s) => s.name === paramName);
    if (index < 0) throw new Error(`unknown param ${JSON.stringify(paramName)}`);
    return { record, index, spec: desc.params[index]! };
  }

  private scheduleSync(part: string): void {
    const timer = this.pending.get(part);
    if (timer !== undefined) clearTimeout(timer);
    this.pending.set(
      part,
      setTimeout(() => {
        this.pending.delete(part);
        void this.syncPart(part);
      }, this.debounceMs),
    );
  }

  private async syncPart(part: string): Promise<void> {
    const sid = this.requireSession();
    const record = cloneRecord(this.state.partRecord(part));
    const task = (async () => {
      await this.api.putPart(sid, part, record);
      const mesh = await this.instantiate(record);
      this.state.partMeshes.set(part, mesh);
      this.state.notify();
    })();
    const tracked = this.surface(task).finally(() => {
      if (this.inFlight.get(part) === tracked) this.inFlight.delete(part);
    });
    this.inFlight.set(part, tracked);
    await tracked;
  }

  private instantiate(record: InstanceRecord): Promise<MeshPayload> {
    return this.api.instantiate({
      template_id: record.template_id,
      continuous: record.continuous,
      discrete: record.discrete,
      pose: record.pose,
      resolution: this.resolution,
    });
  }

  /** Surface any service failure in the error banner before rethrowing. */
  private async surface<T>(task: Promise<T>): Promise<T> {
    try {
      return await task;
    } catch (err) {
      if (err instanceof ApiError) this.state.setError(err.message);
      throw err;
    }
  }
}
