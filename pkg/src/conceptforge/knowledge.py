"""Procedural knowledge propagation.

Templates declare region discriminators (label + predicate on template-local
points) and frame emitters (label + local poses, optionally with box
extents). Because every object point corresponds to a concept surface
point, region labels propagate to the object automatically, and frames
compose out to world coordinates through the instance hierarchy.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .correspondence import Conceptualization, CorrespondenceMap
from .geometry import RigidTransform
from .templates import TemplateRegistry, instantiate_concept

SEMANTIC = "semantic"
AFFORDANCE = "affordance"
PART_OBB = "part_obb"
GRASP = "grasp"


class UnknownKnowledgeError(ValueError):
    """A requested knowledge id is not registered."""


@dataclass(frozen=True)
class KnowledgeDef:
    id: str
    kind: str          # "region" or "pose"
    description: str


class KnowledgeRegistry:
    """Lookup of knowledge ids to their kind and description."""

    def __init__(self, defs):
        self._defs = {}
        for d in defs:
            if d.id in self._defs:
                raise ValueError(f"duplicate knowledge id {d.id!r}")
            self._defs[d.id] = d

    def ids(self) -> list:
        return sorted(self._defs)

    def get(self, kid: str) -> KnowledgeDef:
        try:
            return self._defs[kid]
        except KeyError:
            raise UnknownKnowledgeError(f"unknown knowledge id {kid!r}") from None

    def check(self, kids):
        missing = sorted(set(kids) - set(self._defs))
        if missing:
            raise UnknownKnowledgeError(
                "unknown knowledge ids: " + ", ".join(repr(m) for m in missing))

    def region_ids(self, kids) -> list:
        return [k for k in kids if self._defs[k].kind == "region"]

    def pose_ids(self, kids) -> list:
        return [k for k in kids if self._defs[k].kind == "pose"]


def builtin_knowledge() -> KnowledgeRegistry:
    """The knowledge kinds shipped with the built-in template library."""
    return KnowledgeRegistry([
        KnowledgeDef(SEMANTIC, "region",
                     "part-of-origin label from the owning member name"),
        KnowledgeDef(AFFORDANCE, "region",
                     "interaction regions (push/pull) on handles, lids, knobs"),
        KnowledgeDef(PART_OBB, "pose",
                     "oriented bounding box of each geometry instance"),
        KnowledgeDef(GRASP, "pose",
                     "grasp frames on handle and knob templates"),
    ])


@dataclass(frozen=True)
class PoseAnnotation:
    label: str
    knowledge_id: str
    part_path: str                # part path + member path of the emitting level
    transform: RigidTransform     # world frame
    extents: np.ndarray = None    # half-sizes, or None for bare frames


@dataclass(frozen=True)
class AnnotationSet:
    """Region labels per point plus world-frame pose records."""
    object_id: str
    knowledge_ids: tuple
    point_labels: tuple = ()      # ((point index, (label, ...)), ...) sorted
    poses: tuple = ()             # PoseAnnotation records in document order


def _leaf_face_ranges(expanded):
    """(start, end) face range of each leaf inside the part's merged mesh."""
    ranges = []
    off = 0
    for leaf in expanded.leaves:
        nf = leaf.mesh.n_faces
        ranges.append((off, off + nf))
        off += nf
    return ranges


def _semantic_label(leaf) -> str:
    return leaf.path.split("/", 1)[0]


def annotate_regions(registry: TemplateRegistry, c: Conceptualization,
                     cmap: CorrespondenceMap, knowledge_ids,
                     knowledge: KnowledgeRegistry = None) -> AnnotationSet:
    """Propagate region knowledge to object points through their y points.

    Each point is evaluated on the templates along its own leaf's lineage
    only, with y expressed in that level's local frame. Points whose part
    defines none of the queried region knowledge get an empty label set.
    """
    knowledge = knowledge or builtin_knowledge()
    knowledge.check(knowledge_ids)
    region_ids = knowledge.region_ids(list(knowledge_ids))
    c.validate(registry)
    flat = c.flat_parts()
    if tuple(p for p, _ in flat) != cmap.part_paths:
        raise ValueError("correspondence map does not match this conceptualization")

    labels = [[] for _ in range(len(cmap))]
    for pi, (_, part) in enumerate(flat):
        sel = np.flatnonzero(cmap.part_index == pi)
        if sel.size == 0:
            continue
        expanded = instantiate_concept(registry, part.instance, cmap.resolution)
        ranges = _leaf_face_ranges(expanded)
        faces = cmap.face_index[sel]
        # y recomputed on the merged mesh from stored barycentric hits
        tri = expanded.merged.vertices[expanded.merged.faces[faces]]
        y = np.einsum("mi,mij->mj", cmap.barycentric[sel], tri)
        for leaf, (lo, hi) in zip(expanded.leaves, ranges):
            inside = (faces >= lo) & (faces < hi)
            if not np.any(inside):
                continue
            idx = sel[inside]
            yl = y[inside]
            if SEMANTIC in region_ids:
                lab = _semantic_label(leaf)
                for i in idx:
                    labels[i].append(lab)
            for _, tid, params, rot, trans in leaf.lineage:
                tdef = registry.get(tid)
                for spec in tdef.regions:
                    if spec.knowledge_id not in region_ids:
                        continue
                    local = (yl - trans) @ rot
                    member = np.asarray(spec.predicate(params, local), dtype=bool)
                    for i in idx[member]:
                        labels[i].append(spec.label)
    point_labels = tuple((i, tuple(sorted(set(ls))))
                         for i, ls in enumerate(labels))
    return AnnotationSet(object_id=c.object_id,
                         knowledge_ids=tuple(knowledge_ids),
                         point_labels=point_labels)


def annotate_poses(registry: TemplateRegistry, c: Conceptualization,
                   knowledge_ids, knowledge: KnowledgeRegistry = None,
                   resolution: int = 8) -> AnnotationSet:
    """Emit world-frame pose knowledge for every level of every part.

    A frame defined in template-local coordinates is composed with the
    level's accumulated transform (parent poses x member placements), so
    the emitted record is directly usable in world space.
    """
    knowledge = knowledge or builtin_knowledge()
    knowledge.check(knowledge_ids)
    pose_ids = knowledge.pose_ids(list(knowledge_ids))
    c.validate(registry)

    records = []
    for part_path, part in c.flat_parts():
        expanded = instantiate_concept(registry, part.instance, resolution)
        seen = set()
        for leaf in expanded.leaves:
            for level_path, tid, params, rot, trans in leaf.lineage:
                if level_path in seen:
                    continue
                seen.add(level_path)
                tdef = registry.get(tid)
                level_world = RigidTransform.from_matrix(rot, trans)
                for spec in tdef.frames:
                    if spec.knowledge_id not in pose_ids:
                        continue
                    for local, extents in spec.emitter(params):
                        full = f"{part_path}/{level_path}" if level_path else part_path
                        records.append(PoseAnnotation(
                            label=spec.label,
                            knowledge_id=spec.knowledge_id,
                            part_path=full,
                            transform=level_world.compose(local),
                            extents=None if extents is None
                            else np.asarray(extents, dtype=np.float64),
                        ))
    return AnnotationSet(object_id=c.object_id,
                         knowledge_ids=tuple(knowledge_ids),
                         poses=tuple(records))


def obb_corners(pose: RigidTransform, extents: np.ndarray) -> np.ndarray:
    """World corners of an oriented box given its frame and half-sizes."""
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1)
                      for sz in (-1, 1)], dtype=np.float64)
    return pose.apply_points(signs * extents)
