/** Pure view-state behavior: clamping, validation, scene derivation,
 *  and edit debouncing against a recording fake of the service. */
import { describe, expect, it } from "vitest";

import type {
  ConceptService,
  InstanceRecord,
  MeshPayload,
  ParamSpec,
  TemplateDescriptor,
} from "../src/api.js";
import { meshStats, renderScene } from "../src/render.js";
import { SessionController } from "../src/session.js";
import {
  clampParam,
  DEFAULT_CAMERA,
  stepDiscrete,
  validateParam,
  ViewState,
} from "../src/state.js";

const radius: ParamSpec = { name: "radius", lower: 0.1, upper: 1.0, default: 0.5, unit: "m" };

describe("parameter controls", () => {
  it("clamps slider values to the schema bounds", () => {
    expect(clampParam(radius, 0.4)).toBe(0.4);
    expect(clampParam(radius, -3)).toBe(0.1);
    expect(clampParam(radius, 99)).toBe(1.0);
  });

  it("rejects typed values the schema cannot hold", () => {
    expect(validateParam(radius, 0.5)).toEqual({ ok: true, value: 0.5 });
    expect(validateParam(radius, 0.1).ok).toBe(true); // bounds are inclusive
    expect(validateParam(radius, 1.0).ok).toBe(true);
    const low = validateParam(radius, 0.05);
    expect(low.ok).toBe(false);
    if (!low.ok) expect(low.reason).toContain("radius");
    expect(validateParam(radius, Number.NaN).ok).toBe(false);
    expect(validateParam(radius, Number.POSITIVE_INFINITY).ok).toBe(false);
  });

  it("steps discrete counts with clamping", () => {
    const legs = { name: "leg_count", min: 3, max: 8, default: 4 };
    expect(stepDiscrete(legs, 4, 1)).toBe(5);
    expect(stepDiscrete(legs, 3, -1)).toBe(3);
    expect(stepDiscrete(legs, 8, 1)).toBe(8);
  });
});

describe("mesh stats", () => {
  it("counts connected components as rendered members", () => {
    const disjoint: MeshPayload = {
      vertices: [
        [0, 0, 0], [1, 0, 0], [0, 1, 0],
        [5, 0, 0], [6, 0, 0], [5, 1, 0],
      ],
      faces: [[0, 1, 2], [3, 4, 5]],
    };
    expect(meshStats(disjoint)).toEqual({ vertexCount: 6, faceCount: 2, componentCount: 2 });

    const fan: MeshPayload = {
      vertices: [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]],
      faces: [[0, 1, 2], [0, 2, 3]],
    };
    expect(meshStats(fan).componentCount).toBe(1);
  });
});

describe("view state", () => {
  it("notifies subscribers and shares one camera across panes", () => {
    const state = new ViewState();
    let ticks = 0;
    const unsubscribe = state.subscribe(() => {
      ticks += 1;
    });
    state.setCamera({ ...DEFAULT_CAMERA, position: [0, 0, 9] });
    expect(ticks).toBe(1);
    const scene = renderScene(state);
    expect(scene.camera.position).toEqual([0, 0, 9]);
    expect(scene.camera).toBe(state.camera); // all 3D panes read this one pose
    unsubscribe();
    state.setError("x");
    expect(ticks).toBe(1);
  });

  it("derives an empty scene before anything loads", () => {
    const scene = renderScene(new ViewState());
    expect(scene.target).toBeNull();
    expect(scene.mixed.parts).toEqual({});
    expect(scene.inspector).toBeNull();
    expect(scene.palette).toEqual([]);
  });
});

// ----------------------------------------------------------------------
// debounce behavior against a recording fake
// ----------------------------------------------------------------------

const TINY_MESH: MeshPayload = {
  vertices: [[0, 0, 0], [1, 0, 0], [0, 1, 0]],
  faces: [[0, 1, 2]],
};

const CYLINDER: TemplateDescriptor = {
  id: "cylinder",
  kind: "geometry",
  tags: [],
  params: [radius, { name: "height", lower: 0.1, upper: 2.0, default: 1.0, unit: "m" }],
  discrete: [],
  regions: [],
  frames: [],
};

class FakeService implements ConceptService {
  putCalls: { name: string; record: InstanceRecord }[] = [];
  instantiateCalls = 0;

  async templates() {
    return [CYLINDER];
  }
  async instantiate() {
    this.instantiateCalls += 1;
    return TINY_MESH;
  }
  async createSession() {
    return { session_id: "s1", cloud_points: 0 };
  }
  async getSession() {
    return { object_id: "o", category: "Unknown", parts: {}, dirty: false };
  }
  async getPart(): Promise<InstanceRecord> {
    throw new Error("unused");
  }
  async putPart(_sid: string, name: string, record: InstanceRecord) {
    this.putCalls.push({ name, record });
  }
  async startOptimize(): Promise<{ status: string; part: string }> {
    throw new Error("unused");
  }
  async pollOptimize(): Promise<never> {
    throw new Error("unused");
  }
  async annotate(): Promise<never> {
    throw new Error("unused");
  }
  async save() {
    return "{}";
  }
}

describe("edit debouncing", () => {
  it("collapses a burst of slider edits into one upload", async () => {
    const fake = new FakeService();
    const controller = new SessionController(fake, undefined, { debounceMs: 20 });
    await controller.init();
    await controller.loadObject(TINY_MESH);
    await controller.addPart("body", "cylinder");
    expect(fake.putCalls.length).toBe(1);
    const baseInstantiates = fake.instantiateCalls;

    for (const v of [0.2, 0.3, 0.4, 0.5, 0.6]) {
      controller.setContinuousClamped("body", "radius", v);
    }
    // the working document tracks the slider immediately
    expect(controller.state.partRecord("body").continuous[0]).toBe(0.6);
    await new Promise((resolve) => setTimeout(resolve, 120));
    await controller.flush();
    expect(fake.putCalls.length).toBe(2); // one upload for the whole burst
    expect(fake.putCalls[1]!.record.continuous).toEqual([0.6, 1.0]);
    expect(fake.instantiateCalls).toBe(baseInstantiates + 1);
  });
});
