"""Persistence and asset statistics.

ASCII OBJ/PLY meshes in and out, canonical JSON conceptualization
documents (sorted keys, shortest round-trip floats, byte-reproducible),
binary correspondence sidecars, annotation exports, and Table-style
corpus statistics.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .correspondence import Conceptualization, ConceptPart, CorrespondenceMap
from .geometry import RigidTransform, TriMesh
from .knowledge import AnnotationSet
from .templates import ConceptInstance, TemplateRegistry

SCHEMA_VERSION = 1

# 3-character category codes; unknown categories fall back to the first
# three letters of the name.
CATEGORY_CODES = {
    "Bottle": "Bot",
    "Bucket": "Buc",
    "Chair": "Cha",
    "Door": "Dor",
    "Drawer": "Dra",
    "Kettle": "Ket",
    "KitchenPot": "Pot",
    "Mug": "Mug",
    "Table": "Tab",
}


class DocumentError(ValueError):
    """Schema violation in a conceptualization document."""


def category_code(name: str) -> str:
    if name in CATEGORY_CODES:
        return CATEGORY_CODES[name]
    return (name[:3] or "Unk").title()


# ---------------------------------------------------------------------------
# canonical JSON
# ---------------------------------------------------------------------------

def canonical_bytes(obj) -> bytes:
    """Deterministic JSON encoding: sorted keys, no spaces, repr floats."""
    return (json.dumps(obj, sort_keys=True, separators=(",", ":"),
                       allow_nan=False) + "\n").encode("utf-8")


def _atomic_write(path: str, data: bytes):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# conceptualization documents
# ---------------------------------------------------------------------------

def _part_record(part: ConceptPart) -> dict:
    inst = part.instance
    return {
        "part_name": part.name,
        "template_id": inst.template_id,
        "continuous_params": [float(v) for v in inst.continuous],
        "discrete_params": [int(v) for v in inst.discrete],
        "pose": {
            "quaternion": [float(v) for v in inst.pose.quaternion],
            "translation": [float(v) for v in inst.pose.translation],
        },
        "children": [_part_record(ch) for ch in part.children],
    }


def document_from_conceptualization(c: Conceptualization) -> dict:
    if not c.parts:
        raise DocumentError("conceptualization document requires >= 1 part")
    return {
        "schema_version": SCHEMA_VERSION,
        "object_id": c.object_id,
        "category": {"code": category_code(c.category), "name": c.category},
        "source_mesh": c.source_mesh,
        "parts": [_part_record(p) for p in c.parts],
    }


def _expect_keys(record: dict, keys, where: str):
    if not isinstance(record, dict):
        raise DocumentError(f"{where}: expected an object")
    unknown = sorted(set(record) - set(keys))
    if unknown:
        raise DocumentError(f"{where}: unknown fields {unknown}")
    missing = sorted(set(keys) - set(record))
    if missing:
        raise DocumentError(f"{where}: missing fields {missing}")


def _parse_part(record: dict, registry: TemplateRegistry, where: str) -> ConceptPart:
    _expect_keys(record, ["part_name", "template_id", "continuous_params",
                          "discrete_params", "pose", "children"], where)
    _expect_keys(record["pose"], ["quaternion", "translation"], f"{where}.pose")
    tid = record["template_id"]
    if tid not in registry:
        raise DocumentError(f"{where}: unknown template id {tid!r}")
    quat = np.asarray(record["pose"]["quaternion"], dtype=np.float64)
    trans = np.asarray(record["pose"]["translation"], dtype=np.float64)
    inst = ConceptInstance(
        tid,
        np.asarray(record["continuous_params"], dtype=np.float64),
        np.asarray(record["discrete_params"], dtype=np.int64),
        RigidTransform(quat, trans),
    )
    try:
        registry.validate_instance(inst)
    except ValueError as exc:
        raise DocumentError(f"{where}: {exc}") from exc
    children = tuple(_parse_part(ch, registry, f"{where}.children[{i}]")
                     for i, ch in enumerate(record["children"]))
    return ConceptPart(record["part_name"], inst, children)


def conceptualization_from_document(doc: dict,
                                    registry: TemplateRegistry) -> Conceptualization:
    _expect_keys(doc, ["schema_version", "object_id", "category",
                       "source_mesh", "parts"], "document")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise DocumentError(f"unsupported schema_version {doc['schema_version']!r}")
    _expect_keys(doc["category"], ["code", "name"], "document.category")
    if not doc["parts"]:
        raise DocumentError("document.parts: >= 1 part required")
    parts = tuple(_parse_part(p, registry, f"parts[{i}]")
                  for i, p in enumerate(doc["parts"]))
    return Conceptualization(
        object_id=doc["object_id"],
        category=doc["category"]["name"],
        parts=parts,
        source_mesh=doc["source_mesh"],
    )


def save_document(path: str, c: Conceptualization):
    _atomic_write(path, canonical_bytes(document_from_conceptualization(c)))


def load_document(path: str, registry: TemplateRegistry) -> Conceptualization:
    with open(path, "rb") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DocumentError(f"{path}: invalid JSON ({exc})") from exc
    return conceptualization_from_document(doc, registry)


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------

def _fan(indices, where):
    if len(indices) < 3:
        raise ValueError(f"{where}: face needs >= 3 vertices")
    return [(indices[0], indices[i], indices[i + 1])
            for i in range(1, len(indices) - 1)]


def _load_obj(lines):
    verts, faces = [], []
    for ln, raw in enumerate(lines, start=1):
        tok = raw.split("#", 1)[0].split()
        if not tok:
            continue
        if tok[0] == "v":
            if len(tok) < 4:
                raise ValueError(f"line {ln}: vertex needs 3 coordinates")
            verts.append([float(v) for v in tok[1:4]])
        elif tok[0] == "f":
            try:
                idx = [int(t.split("/", 1)[0]) for t in tok[1:]]
            except ValueError:
                raise ValueError(f"line {ln}: bad face index") from None
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            faces.extend(_fan(idx, f"line {ln}"))
        # other directives (vn, vt, o, g, s, mtl...) are ignored
    return verts, faces


def _load_ply(lines):
    if not lines or lines[0].strip() != "ply":
        raise ValueError("line 1: not a PLY file")
    n_vert = n_face = None
    order = []          # elements in declared order
    ln = 1
    for ln, raw in enumerate(lines[1:], start=2):
        tok = raw.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise ValueError(f"line {ln}: only ascii PLY is supported")
        elif tok[0] == "element":
            if tok[1] == "vertex":
                n_vert = int(tok[2])
                order.append(("vertex", n_vert))
            elif tok[1] == "face":
                n_face = int(tok[2])
                order.append(("face", n_face))
            else:
                order.append((tok[1], int(tok[2])))
        elif tok[0] == "end_header":
            break
    else:
        raise ValueError("missing end_header")
    if n_vert is None:
        raise ValueError("PLY header lacks a vertex element")
    body = [b for b in lines[ln:]]
    verts, faces = [], []
    cursor = 0
    for elem, count in order:
        for k in range(count):
            while cursor < len(body) and not body[cursor].split():
                cursor += 1
            if cursor >= len(body):
                raise ValueError(f"unexpected end of file in element {elem!r}")
            tok = body[cursor].split()
            cursor += 1
            lineno = ln + cursor
            if elem == "vertex":
                if len(tok) < 3:
                    raise ValueError(f"line {lineno}: vertex needs 3 coordinates")
                verts.append([float(v) for v in tok[:3]])
            elif elem == "face":
                n = int(tok[0])
                if len(tok) < n + 1:
                    raise ValueError(f"line {lineno}: short face list")
                faces.extend(_fan([int(t) for t in tok[1:n + 1]],
                                  f"line {lineno}"))
    return verts, faces


def load_mesh(path: str) -> TriMesh:
    """Read an ASCII OBJ or PLY mesh; polygons fan-triangulate."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    ext = os.path.splitext(path)[1].lower()
    try:
        if ext == ".ply":
            verts, faces = _load_ply(lines)
        else:
            verts, faces = _load_obj(lines)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    if not verts or not faces:
        raise ValueError(f"{path}: no triangles found")
    return TriMesh(np.asarray(verts, dtype=np.float64),
                   np.asarray(faces, dtype=np.int64))


def load_point_cloud(path: str):
    """Read only the vertex positions of an OBJ or PLY file."""
    from .geometry import PointCloud
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    ext = os.path.splitext(path)[1].lower()
    try:
        if ext == ".ply":
            verts, _ = _load_ply(lines)
        else:
            verts = _load_obj(lines)[0]
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    if not verts:
        raise ValueError(f"{path}: no points found")
    return PointCloud(np.asarray(verts, dtype=np.float64))


def save_point_cloud(path: str, points: np.ndarray):
    """Write bare vertex positions as an OBJ or PLY point file."""
    ext = os.path.splitext(path)[1].lower()
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = []
    if ext == ".ply":
        out.append("ply\nformat ascii 1.0\n")
        out.append(f"element vertex {len(pts)}\n")
        out.append("property double x\nproperty double y\nproperty double z\n")
        out.append("element face 0\n")
        out.append("property list uchar int vertex_indices\nend_header\n")
    for v in pts:
        prefix = "" if ext == ".ply" else "v "
        out.append(prefix + "%.9g %.9g %.9g\n" % (v[0], v[1], v[2]))
    _atomic_write(path, "".join(out).encode("utf-8"))


def save_mesh(path: str, mesh: TriMesh):
    """Write an ASCII OBJ or PLY mesh with 9-significant-digit coordinates."""
    ext = os.path.splitext(path)[1].lower()
    out = []
    if ext == ".ply":
        out.append("ply\nformat ascii 1.0\n")
        out.append(f"element vertex {mesh.n_vertices}\n")
        out.append("property double x\nproperty double y\nproperty double z\n")
        out.append(f"element face {mesh.n_faces}\n")
        out.append("property list uchar int vertex_indices\nend_header\n")
        for v in mesh.vertices:
            out.append("%.9g %.9g %.9g\n" % (v[0], v[1], v[2]))
        for f in mesh.faces:
            out.append("3 %d %d %d\n" % (f[0], f[1], f[2]))
    else:
        for v in mesh.vertices:
            out.append("v %.9g %.9g %.9g\n" % (v[0], v[1], v[2]))
        for f in mesh.faces:
            out.append("f %d %d %d\n" % (f[0] + 1, f[1] + 1, f[2] + 1))
    _atomic_write(path, "".join(out).encode("utf-8"))


# ---------------------------------------------------------------------------
# correspondence sidecars
# ---------------------------------------------------------------------------

_CORR_MAGIC = b"CFCM"
_CORR_VERSION = 1
_CORR_DTYPE = np.dtype([
    ("part", "<i4"),
    ("face", "<i8"),
    ("bary", "<f8", (3,)),
    ("offset", "<f8", (3,)),
])


def save_correspondence(path: str, cmap: CorrespondenceMap):
    """Binary little-endian sidecar: header, part-path table, records."""
    head = _CORR_MAGIC + struct.pack("<HHiqi", _CORR_VERSION, 0,
                                     cmap.resolution, len(cmap),
                                     len(cmap.part_paths))
    table = b""
    for p in cmap.part_paths:
        enc = p.encode("utf-8")
        table += struct.pack("<H", len(enc)) + enc
    rec = np.zeros(len(cmap), dtype=_CORR_DTYPE)
    rec["part"] = cmap.part_index
    rec["face"] = cmap.face_index
    rec["bary"] = cmap.barycentric
    rec["offset"] = cmap.offset
    _atomic_write(path, head + table + rec.tobytes())


def load_correspondence(path: str) -> CorrespondenceMap:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _CORR_MAGIC:
        raise ValueError(f"{path}: not a correspondence sidecar")
    version, _, resolution, n, n_parts = struct.unpack_from("<HHiqi", data, 4)
    if version != _CORR_VERSION:
        raise ValueError(f"{path}: unsupported sidecar version {version}")
    off = 4 + struct.calcsize("<HHiqi")
    paths = []
    for _ in range(n_parts):
        (ln,) = struct.unpack_from("<H", data, off)
        off += 2
        paths.append(data[off:off + ln].decode("utf-8"))
        off += ln
    rec = np.frombuffer(data[off:], dtype=_CORR_DTYPE, count=n)
    return CorrespondenceMap(
        resolution=resolution,
        part_paths=tuple(paths),
        part_index=rec["part"].astype(np.int64),
        face_index=rec["face"].copy(),
        barycentric=rec["bary"].copy(),
        offset=rec["offset"].copy(),
    )


# ---------------------------------------------------------------------------
# annotation exports
# ---------------------------------------------------------------------------

def region_table_text(ann: AnnotationSet) -> str:
    """Indexed text table: one `index<TAB>label,label` line per point."""
    lines = [f"{i}\t{','.join(labels)}" for i, labels in ann.point_labels]
    return "\n".join(lines) + "\n"


def pose_records(ann: AnnotationSet) -> list:
    """Pose annotations as canonical-serializable records."""
    out = []
    for p in ann.poses:
        rec = {
            "label": p.label,
            "knowledge_id": p.knowledge_id,
            "part_path": p.part_path,
            "quaternion": [float(v) for v in p.transform.quaternion],
            "translation": [float(v) for v in p.transform.translation],
            "extents": None if p.extents is None else [float(v) for v in p.extents],
        }
        out.append(rec)
    return out


# ---------------------------------------------------------------------------
# corpus statistics
# ---------------------------------------------------------------------------

STAT_COLUMNS = ("N", "I_ttl", "I_med", "I_max", "P_ttl", "P_med", "P_max")


@dataclass(frozen=True)
class AssetStats:
    """Per-category instance and parameter counts over a document corpus."""
    categories: tuple     # ((code, row dict), ...) sorted by code
    total: dict           # aggregate row over all objects
    skipped: tuple        # ((filename, reason), ...) unparseable files

    def row(self, code: str) -> dict:
        for c, r in self.categories:
            if c == code:
                return r
        raise KeyError(code)


def _lower_median(values) -> int:
    s = sorted(values)
    return s[(len(s) - 1) // 2]


def object_counts(registry: TemplateRegistry, c: Conceptualization,
                  resolution: int = 4):
    """(geometry instance count, parameter count) for one conceptualization.

    Instances are leaf geometry instances after full expansion, so
    repeated members count individually. Each instance contributes its
    continuous parameter count plus 7 pose numbers (quaternion +
    translation); discrete parameters count once per authored part.
    """
    from .templates import instantiate_concept
    n_inst = 0
    n_par = 0
    for _, part in c.flat_parts():
        expanded = instantiate_concept(registry, part.instance, resolution,
                                       strict=False)
        n_inst += len(expanded.leaves)
        n_par += sum(len(lf.params) + 7 for lf in expanded.leaves)
        n_par += len(part.instance.discrete)
    return n_inst, n_par


def _stats_row(instances, params) -> dict:
    return {
        "N": len(instances),
        "I_ttl": int(sum(instances)),
        "I_med": int(_lower_median(instances)),
        "I_max": int(max(instances)),
        "P_ttl": int(sum(params)),
        "P_med": int(_lower_median(params)),
        "P_max": int(max(params)),
    }


def compute_stats(directory: str, registry: TemplateRegistry) -> AssetStats:
    """Scan a directory of conceptualization documents and tabulate counts."""
    by_cat: dict = {}
    all_i, all_p = [], []
    skipped = []
    for name in sorted(os.listdir(directory)):
        if not name.endswith(".json"):
            continue
        path = os.path.join(directory, name)
        try:
            c = load_document(path, registry)
            ni, np_ = object_counts(registry, c)
        except (DocumentError, ValueError, OSError) as exc:
            skipped.append((name, str(exc)))
            continue
        code = category_code(c.category)
        by_cat.setdefault(code, ([], []))
        by_cat[code][0].append(ni)
        by_cat[code][1].append(np_)
        all_i.append(ni)
        all_p.append(np_)
    cats = tuple((code, _stats_row(*by_cat[code])) for code in sorted(by_cat))
    total = (_stats_row(all_i, all_p) if all_i
             else dict.fromkeys(STAT_COLUMNS, 0))
    return AssetStats(categories=cats, total=total, skipped=tuple(skipped))


def stats_table(stats: AssetStats) -> str:
    """Fixed-width table with one row per category plus a TTL row."""
    header = ["Cat"] + list(STAT_COLUMNS)
    rows = [[code] + [str(r[c]) for c in STAT_COLUMNS]
            for code, r in stats.categories]
    rows.append(["TTL"] + [str(stats.total[c]) for c in STAT_COLUMNS])
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(h.rjust(w) for h, w in zip(r, widths))
             for r in [header] + rows]
    return "\n".join(lines) + "\n"


def stats_machine(stats: AssetStats) -> bytes:
    """Canonical machine-readable statistics payload."""
    return canonical_bytes({
        "categories": {code: row for code, row in stats.categories},
        "total": stats.total,
        "skipped": [{"file": f, "reason": r} for f, r in stats.skipped],
    })
