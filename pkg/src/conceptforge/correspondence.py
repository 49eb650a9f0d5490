"""Point-wise correspondence between objects and their conceptualizations.

Every object point x is linked to the globally nearest point y on any part
of the conceptualization; the residual x - y restores geometric detail on
top of the clean parametric surface, and the stored (face, barycentric)
hit re-derives y after parameter edits.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import PointCloud, SurfaceHit, closest_points_batch
from .templates import ConceptInstance, TemplateRegistry, instantiate_concept


class EmptyConceptualizationError(ValueError):
    """Conceptualization has no parts to correspond against."""


class ResolutionMismatchError(ValueError):
    """Map was built at a different tessellation resolution."""


class StructureMismatchError(ValueError):
    """Edited conceptualization does not share the map's part structure."""


@dataclass(frozen=True)
class ConceptPart:
    """A named concept instance in a conceptualization, possibly nested."""
    name: str
    instance: ConceptInstance
    children: tuple = ()

    def __post_init__(self):
        if not self.name or "/" in self.name:
            raise ValueError(f"invalid part name {self.name!r}")
        names = [c.name for c in self.children]
        if len(names) != len(set(names)):
            raise ValueError(f"duplicate child part names under {self.name!r}")


@dataclass(frozen=True)
class Conceptualization:
    """An object described as an arrangement of concept instances."""
    object_id: str
    category: str
    parts: tuple
    source_mesh: str = ""

    def __post_init__(self):
        names = [p.name for p in self.parts]
        if len(names) != len(set(names)):
            raise ValueError("duplicate top-level part names")

    def flat_parts(self) -> list:
        """All (path, ConceptPart) pairs in document order, depth first."""
        out = []

        def walk(parts, prefix):
            for p in parts:
                path = f"{prefix}/{p.name}" if prefix else p.name
                out.append((path, p))
                walk(p.children, path)

        walk(self.parts, "")
        return out

    def validate(self, registry: TemplateRegistry):
        if not self.parts:
            raise EmptyConceptualizationError(
                f"conceptualization {self.object_id!r} has no parts")
        for _, p in self.flat_parts():
            registry.validate_instance(p.instance)


@dataclass(frozen=True)
class CorrespondenceMap:
    """Per object point: owning part, surface hit, and residual offset."""
    resolution: int
    part_paths: tuple             # ordered part paths, indexed by part_index
    part_index: np.ndarray        # (N,) int
    face_index: np.ndarray        # (N,) int, into the part's merged mesh
    barycentric: np.ndarray       # (N, 3)
    offset: np.ndarray            # (N, 3), x - y

    def __post_init__(self):
        n = len(self.part_index)
        if not (len(self.face_index) == n and len(self.barycentric) == n
                and len(self.offset) == n):
            raise ValueError("correspondence arrays disagree in length")
        if n and not (0 <= self.part_index.min()
                      and self.part_index.max() < len(self.part_paths)):
            raise ValueError("part index out of range")

    def __len__(self) -> int:
        return len(self.part_index)


def _part_meshes(registry, c: Conceptualization, resolution: int):
    c.validate(registry)
    flat = c.flat_parts()
    meshes = [instantiate_concept(registry, p.instance, resolution).merged
              for _, p in flat]
    return [path for path, _ in flat], meshes


def build_correspondence(registry: TemplateRegistry, object_points: PointCloud,
                         c: Conceptualization, resolution: int) -> CorrespondenceMap:
    """Map each object point to its globally nearest concept surface point.

    All parts compete; ties go to the lowest part index, then (within a
    part) to the lowest face index.
    """
    if len(object_points) == 0:
        raise ValueError("empty object point cloud")
    paths, meshes = _part_meshes(registry, c, resolution)
    pts = object_points.points
    n = len(pts)
    best_d2 = np.full(n, np.inf)
    part_idx = np.zeros(n, dtype=np.int64)
    face_idx = np.zeros(n, dtype=np.int64)
    bary = np.zeros((n, 3))
    closest = np.zeros((n, 3))
    for pi, mesh in enumerate(meshes):
        f, b, cl, d2 = closest_points_batch(pts, mesh)
        win = d2 < best_d2   # strict: earlier part keeps exact ties
        best_d2[win] = d2[win]
        part_idx[win] = pi
        face_idx[win] = f[win]
        bary[win] = b[win]
        closest[win] = cl[win]
    return CorrespondenceMap(
        resolution=int(resolution),
        part_paths=tuple(paths),
        part_index=part_idx,
        face_index=face_idx,
        barycentric=bary,
        offset=pts - closest,
    )


def _reproject(cmap: CorrespondenceMap, paths, meshes) -> np.ndarray:
    """Recompute y for every entry from stored (face, barycentric) hits."""
    y = np.zeros((len(cmap), 3))
    for pi, mesh in enumerate(meshes):
        sel = cmap.part_index == pi
        if not np.any(sel):
            continue
        faces = cmap.face_index[sel]
        if faces.size and faces.max() >= mesh.n_faces:
            raise ResolutionMismatchError(
                f"face index {faces.max()} out of range for part "
                f"{paths[pi]!r} ({mesh.n_faces} faces); map resolution is "
                f"{cmap.resolution}")
        tri = mesh.vertices[mesh.faces[faces]]          # (M, 3, 3)
        y[sel] = np.einsum("mi,mij->mj", cmap.barycentric[sel], tri)
    return y


def restore_details(registry: TemplateRegistry, cmap: CorrespondenceMap,
                    c: Conceptualization, resolution: int) -> PointCloud:
    """Rebuild the object cloud: y + (x - y) per correspondence entry."""
    if int(resolution) != cmap.resolution:
        raise ResolutionMismatchError(
            f"map built at resolution {cmap.resolution}, asked for {resolution}")
    paths, meshes = _part_meshes(registry, c, resolution)
    if tuple(paths) != cmap.part_paths:
        raise StructureMismatchError(
            f"part paths differ: map has {list(cmap.part_paths)}, "
            f"conceptualization has {paths}")
    y = _reproject(cmap, paths, meshes)
    return PointCloud(y + cmap.offset)


def transfer_details(registry: TemplateRegistry, cmap: CorrespondenceMap,
                     c_edited: Conceptualization, resolution: int) -> PointCloud:
    """Re-apply stored hits and offsets to a re-parameterized conceptualization.

    The edited conceptualization must keep the source's part structure:
    same part paths, template ids, and discrete parameters. Continuous
    parameters and poses may differ; each y is re-derived on the edited
    meshes through its stored face and barycentric coordinates.
    """
    if int(resolution) != cmap.resolution:
        raise ResolutionMismatchError(
            f"map built at resolution {cmap.resolution}, asked for {resolution}")
    paths, meshes = _part_meshes(registry, c_edited, resolution)
    if tuple(paths) != cmap.part_paths:
        raise StructureMismatchError(
            f"part paths differ: map has {list(cmap.part_paths)}, "
            f"edited conceptualization has {paths}")
    y = _reproject(cmap, paths, meshes)
    return PointCloud(y + cmap.offset)


def surface_hits(registry: TemplateRegistry, cmap: CorrespondenceMap,
                 c: Conceptualization, resolution: int) -> list:
    """Materialize per-entry (part path, SurfaceHit) pairs."""
    paths, meshes = _part_meshes(registry, c, resolution)
    y = _reproject(cmap, paths, meshes)
    d = np.linalg.norm(cmap.offset, axis=1)
    return [(cmap.part_paths[cmap.part_index[i]],
             SurfaceHit(y[i], int(cmap.face_index[i]), cmap.barycentric[i],
                        float(d[i])))
            for i in range(len(cmap))]
