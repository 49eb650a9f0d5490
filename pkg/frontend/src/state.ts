/**
 * View state for the conceptualization workspace.
 *
 * The UI is four panes over one store: a template palette, the target
 * view (the scanned object), a mixed view overlaying the target with the
 * rendered concept parts, and a parameter inspector for the active part.
 * All 3D panes share a single camera pose, so orbiting one pane orbits
 * them all. Mutations go through the store methods, which notify
 * subscribers; rendering is a pure function of the store (see render.ts).
 */

import type {
  DiscreteSpec,
  InstanceRecord,
  MeshPayload,
  ParamSpec,
  SessionDocument,
  TemplateDescriptor,
} from "./api.js";

export interface Camera {
  position: [number, number, number];
  lookAt: [number, number, number];
  up: [number, number, number];
}

export const DEFAULT_CAMERA: Camera = {
  position: [2.5, 2.0, 2.5],
  lookAt: [0, 0, 0],
  up: [0, 0, 1],
};

export type Listener = () => void;

export class ViewState {
  camera: Camera = { ...DEFAULT_CAMERA };
  descriptors: TemplateDescriptor[] = [];
  targetMesh: MeshPayload | null = null;
  partMeshes = new Map<string, MeshPayload>();
  document: SessionDocument | null = null;
  activePart: string | null = null;
  lossTrace: number[] = [];
  finalLoss: number | null = null;
  errorBanner: string | null = null;

  private listeners = new Set<Listener>();

  subscribe(fn: Listener): () => void {
    this.listeners.add(fn);
    return () => this.listeners.delete(fn);
  }

  notify(): void {
    for (const fn of this.listeners) fn();
  }

  setCamera(camera: Camera): void {
    this.camera = camera;
    this.notify();
  }

  setError(message: string | null): void {
    this.errorBanner = message;
    this.notify();
  }

  selectPart(name: string | null): void {
    if (name !== null && (!this.document || !(name in this.document.parts))) {
      throw new Error(`unknown part ${JSON.stringify(name)}`);
    }
    this.activePart = name;
    this.notify();
  }

  setPartRecord(name: string, record: InstanceRecord): void {
    if (!this.document) throw new Error("no session loaded");
    this.document.parts[name] = record;
    this.notify();
  }

  partRecord(name: string): InstanceRecord {
    const rec = this.document?.parts[name];
    if (!rec) throw new Error(`unknown part ${JSON.stringify(name)}`);
    return rec;
  }

  descriptor(templateId: string): TemplateDescriptor {
    const d = this.descriptors.find((t) => t.id === templateId);
    if (!d) throw new Error(`unknown template ${JSON.stringify(templateId)}`);
    return d;
  }
}

/** Slider semantics: drags past the end of the rail stick to the bound. */
export function clampParam(spec: ParamSpec, value: number): number {
  return Math.min(spec.upper, Math.max(spec.lower, value));
}

/** Typed-entry semantics: a value the schema cannot hold is rejected with
 *  a reason instead of being silently altered. */
export function validateParam(
  spec: ParamSpec,
  value: number,
): { ok: true; value: number } | { ok: false; reason: string } {
  if (!Number.isFinite(value)) {
    return { ok: false, reason: `${spec.name}: not a finite number` };
  }
  if (value < spec.lower || value > spec.upper) {
    return {
      ok: false,
      reason: `${spec.name}: ${value} outside [${spec.lower}, ${spec.upper}]`,
    };
  }
  return { ok: true, value };
}

/** Stepper semantics for discrete counts: integer steps, clamped. */
export function stepDiscrete(spec: DiscreteSpec, value: number, delta: number): number {
  const next = Math.round(value) + Math.round(delta);
  return Math.min(spec.max, Math.max(spec.min, next));
}
