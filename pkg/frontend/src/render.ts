/**
 * Pure scene description derived from the view state.
 *
 * `renderScene` computes exactly what each pane would draw; the browser
 * entry point feeds it to WebGL, tests assert on it directly. Mesh
 * payloads are summarized as counts, including the number of connected
 * components — concept meshes concatenate one component per expanded
 * member, so the component count is the on-screen member count.
 */

import type { MeshPayload } from "./api.js";
import type { Camera, ViewState } from "./state.js";

export interface MeshStats {
  vertexCount: number;
  faceCount: number;
  componentCount: number;
}

export interface InspectorRow {
  name: string;
  value: number;
  lower: number;
  upper: number;
  kind: "continuous" | "discrete";
}

export interface SceneDescription {
  palette: string[];
  target: MeshStats | null;
  mixed: { target: MeshStats | null; parts: Record<string, MeshStats> };
  inspector: { part: string; rows: InspectorRow[] } | null;
  camera: Camera;
  lossTrace: number[];
  finalLoss: number | null;
  banner: string | null;
}

/** Union-find over vertex indices; faces union their corners. */
export function meshStats(mesh: MeshPayload): MeshStats {
  const parent = new Int32Array(mesh.vertices.length);
  for (let i = 0; i < parent.length; i++) parent[i] = i;
  const find = (i: number): number => {
    let root = i;
    while (parent[root] !== root) root = parent[root]!;
    while (parent[i] !== root) {
      const next = parent[i]!;
      parent[i] = root;
      i = next;
    }
    return root;
  };
  const used = new Uint8Array(mesh.vertices.length);
  for (const face of mesh.faces) {
    const a = face[0]!;
    for (const v of face) {
      used[v] = 1;
      parent[find(v)] = find(a);
    }
  }
  const roots = new Set<number>();
  for (let i = 0; i < used.length; i++) {
    if (used[i]) roots.add(find(i));
  }
  return {
    vertexCount: mesh.vertices.length,
    faceCount: mesh.faces.length,
    componentCount: roots.size,
  };
}

export function renderScene(state: ViewState): SceneDescription {
  const parts: Record<string, MeshStats> = {};
  for (const [name, mesh] of state.partMeshes) {
    parts[name] = meshStats(mesh);
  }
  const target = state.targetMesh ? meshStats(state.targetMesh) : null;

  let inspector: SceneDescription["inspector"] = null;
  if (state.activePart !== null && state.document) {
    const record = state.document.parts[state.activePart];
    if (record) {
      const desc = state.descriptor(record.template_id);
      const rows: InspectorRow[] = desc.params.map((spec, i) => ({
        name: spec.name,
        value: record.continuous[i]!,
        lower: spec.lower,
        upper: spec.upper,
        kind: "continuous",
      }));
      desc.discrete.forEach((spec, i) => {
        rows.push({
          name: spec.name,
          value: record.discrete[i]!,
          lower: spec.min,
          upper: spec.max,
          kind: "discrete",
        });
      });
      inspector = { part: state.activePart, rows };
    }
  }

  return {
    palette: state.descriptors.map((d) => d.id),
    target,
    mixed: { target, parts },
    inspector,
    camera: state.camera,
    lossTrace: [...state.lossTrace],
    finalLoss: state.finalLoss,
    banner: state.errorBanner,
  };
}
