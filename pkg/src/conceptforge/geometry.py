"""Core geometry: meshes, point clouds, rigid transforms, closest-point
queries, surface sampling and the bidirectional point-to-mesh loss.

All coordinates are float64 numpy arrays. Meshes and clouds are immutable
after construction; queries are read-only and safe to run in parallel.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


class EmptyMeshError(ValueError):
    """Raised when a query needs a surface but the mesh has none."""


class ZeroAreaMeshError(ValueError):
    """Raised when surface sampling is requested on a mesh with no area."""


# ---------------------------------------------------------------------------
# rigid transforms (quaternion w,x,y,z + translation)
# ---------------------------------------------------------------------------

def _quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion")
    return q / n


def _quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def _quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _matrix_to_quat(m):
    # Shepperd's method: pick the largest diagonal combination for stability.
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array([0.25 * s,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array([(m[2, 1] - m[1, 2]) / s,
                      0.25 * s,
                      (m[0, 1] + m[1, 0]) / s,
                      (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array([(m[0, 2] - m[2, 0]) / s,
                      (m[0, 1] + m[1, 0]) / s,
                      0.25 * s,
                      (m[1, 2] + m[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array([(m[1, 0] - m[0, 1]) / s,
                      (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s,
                      0.25 * s])
    if q[0] < 0:
        q = -q
    return _quat_normalize(q)


def rotvec_to_matrix(w):
    """Rodrigues rotation from an axis-angle 3-vector."""
    w = np.asarray(w, dtype=np.float64)
    th2 = float(w @ w)
    th = np.sqrt(th2)
    K = np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])
    if th < 1e-8:
        a = 1.0 - th2 / 6.0
        b = 0.5 - th2 / 24.0
    else:
        a = np.sin(th) / th
        b = (1.0 - np.cos(th)) / th2
    return np.eye(3) + a * K + b * (K @ K)


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (unit quaternion, scalar-first) plus translation."""

    quaternion: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = _quat_normalize(self.quaternion)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise ValueError("non-finite transform")
        object.__setattr__(self, "quaternion", q)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @staticmethod
    def from_matrix(rot: np.ndarray, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return RigidTransform(_matrix_to_quat(np.asarray(rot, dtype=np.float64)),
                              np.asarray(translation, dtype=np.float64))

    @staticmethod
    def from_rotvec(w, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return RigidTransform.from_matrix(rotvec_to_matrix(w), translation)

    def matrix(self) -> np.ndarray:
        return _quat_to_matrix(self.quaternion)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self applied after other: (self ∘ other)(p) = self(other(p))."""
        return RigidTransform(
            _quat_mul(self.quaternion, other.quaternion),
            self.matrix() @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        q = self.quaternion * np.array([1.0, -1.0, -1.0, -1.0])
        return RigidTransform(q, -(_quat_to_matrix(q) @ self.translation))

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        return points @ self.matrix().T + self.translation


# ---------------------------------------------------------------------------
# meshes and clouds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray  # (N, 3) float64
    faces: np.ndarray     # (M, 3) int64
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64).reshape(-1, 3))
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite vertex coordinates")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        if f.size and np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise ValueError("face repeats a vertex index")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_corners(self):
        v, f = self.vertices, self.faces
        return v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]

    def face_areas(self) -> np.ndarray:
        a, b, c = self.face_corners()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def transformed(self, t: RigidTransform) -> "TriMesh":
        return TriMesh(t.apply_points(self.vertices), self.faces)

    def _bvh(self) -> "_AabbTree":
        tree = self._cache.get("bvh")
        if tree is None:
            tree = _AabbTree(self)
            self._cache["bvh"] = tree
        return tree


def merge_meshes(meshes) -> TriMesh:
    """Concatenate meshes into one, rebasing face indices."""
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += m.n_vertices
    if not verts:
        raise EmptyMeshError("no meshes to merge")
    return TriMesh(np.vstack(verts), np.vstack(faces))


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (N, 3) float64
    tags: tuple = ()    # optional per-point source tags

    def __post_init__(self):
        p = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64).reshape(-1, 3))
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite point coordinates")
        object.__setattr__(self, "points", p)
        if self.tags and len(self.tags) != len(p):
            raise ValueError("tag count mismatch")

    def __len__(self) -> int:
        return len(self.points)

    def transformed(self, t: RigidTransform) -> "PointCloud":
        return PointCloud(t.apply_points(self.points), self.tags)

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def extents(self) -> np.ndarray:
        return self.points.max(axis=0) - self.points.min(axis=0)

    def _kdtree(self) -> cKDTree:
        return cKDTree(self.points)


@dataclass(frozen=True)
class SurfaceHit:
    point: np.ndarray
    face_index: int
    barycentric: np.ndarray
    distance: float


def apply_transform(g, t: RigidTransform):
    """Rigidly transform a TriMesh or PointCloud."""
    return g.transformed(t)


# ---------------------------------------------------------------------------
# exact point-triangle closest points (Ericson, vectorized)
# ---------------------------------------------------------------------------

def _closest_on_triangles(p, a, b, c):
    """Closest points of query points on triangles, with barycentrics.

    Shapes broadcast: p is (..., 3), a/b/c are (F, 3) triangle corners.
    Returns (closest (..., F, 3), bary (..., F, 3)).
    """
    p = p[..., None, :]
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.sum(ab * ap, axis=-1)
    d2 = np.sum(ac * ap, axis=-1)
    bp = p - b
    d3 = np.sum(ab * bp, axis=-1)
    d4 = np.sum(ac * bp, axis=-1)
    cp = p - c
    d5 = np.sum(ab * cp, axis=-1)
    d6 = np.sum(ac * cp, axis=-1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    def safe_div(num, den):
        return num / np.where(den == 0.0, 1.0, den)

    v_ab = safe_div(d1, d1 - d3)
    w_ac = safe_div(d2, d2 - d6)
    w_bc = safe_div(d4 - d3, (d4 - d3) + (d5 - d6))
    denom = safe_div(1.0, va + vb + vc)
    v_in = vb * denom
    w_in = vc * denom

    conds = [
        (d1 <= 0) & (d2 <= 0),                    # vertex a
        (d3 >= 0) & (d4 <= d3),                   # vertex b
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),        # edge ab
        (d6 >= 0) & (d5 <= d6),                   # vertex c
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),        # edge ac
        (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),  # edge bc
    ]
    zeros = np.zeros_like(d1)
    ones = np.ones_like(d1)
    u = np.select(conds, [ones, zeros, 1 - v_ab, zeros, 1 - w_ac, zeros],
                  default=1 - v_in - w_in)
    v = np.select(conds, [zeros, ones, v_ab, zeros, zeros, 1 - w_bc],
                  default=v_in)
    w = np.select(conds, [zeros, zeros, zeros, ones, w_ac, w_bc],
                  default=w_in)
    bary = np.stack([u, v, w], axis=-1)
    closest = u[..., None] * a + v[..., None] * b + w[..., None] * c
    return closest, bary


def _require_surface(mesh: TriMesh):
    if mesh.n_faces == 0:
        raise EmptyMeshError("mesh has no surface")


def brute_force_closest_point(p, mesh: TriMesh) -> SurfaceHit:
    """Reference query: exact minimum over every face, ties to lowest index."""
    _require_surface(mesh)
    p = np.asarray(p, dtype=np.float64).reshape(3)
    a, b, c = mesh.face_corners()
    closest, bary = _closest_on_triangles(p, a, b, c)
    d2 = np.sum((closest - p) ** 2, axis=-1)
    i = int(np.argmin(d2))  # argmin returns the first (lowest-index) minimum
    return SurfaceHit(closest[i].copy(), i, bary[i].copy(), float(np.sqrt(d2[i])))


class _AabbTree:
    """Median-split AABB tree over mesh faces for closest-point queries."""

    LEAF_SIZE = 8

    def __init__(self, mesh: TriMesh):
        _require_surface(mesh)
        self.mesh = mesh
        a, b, c = mesh.face_corners()
        self.corners = (a, b, c)
        tri = np.stack([a, b, c], axis=1)
        self.fmin = tri.min(axis=1)
        self.fmax = tri.max(axis=1)
        cent = tri.mean(axis=1)
        self.order = np.arange(mesh.n_faces)
        self.nodes = []  # (lo, hi, left, right, bmin, bmax); leaf when left < 0
        self._build(0, mesh.n_faces, cent)

    def _build(self, lo, hi, cent) -> int:
        idx = self.order[lo:hi]
        bmin = self.fmin[idx].min(axis=0)
        bmax = self.fmax[idx].max(axis=0)
        node = len(self.nodes)
        self.nodes.append([lo, hi, -1, -1, bmin, bmax])
        if hi - lo > self.LEAF_SIZE:
            axis = int(np.argmax(bmax - bmin))
            mid = (lo + hi) // 2
            part = np.argsort(cent[idx, axis], kind="stable")
            self.order[lo:hi] = idx[part]
            left = self._build(lo, mid, cent)
            right = self._build(mid, hi, cent)
            self.nodes[node][2] = left
            self.nodes[node][3] = right
        return node

    def _box_dist2(self, p, bmin, bmax) -> float:
        d = np.maximum(bmin - p, 0.0) + np.maximum(p - bmax, 0.0)
        return float(d @ d)

    def query(self, p) -> SurfaceHit:
        p = np.asarray(p, dtype=np.float64).reshape(3)
        a, b, c = self.corners
        best_d2 = np.inf
        best_face = -1
        best_point = None
        best_bary = None
        stack = [0]
        while stack:
            ni = stack.pop()
            lo, hi, left, right, bmin, bmax = self.nodes[ni]
            # keep equal lower bounds so the lowest-index tie can still win
            if self._box_dist2(p, bmin, bmax) > best_d2:
                continue
            if left < 0:
                idx = self.order[lo:hi]
                closest, bary = _closest_on_triangles(p, a[idx], b[idx], c[idx])
                d2 = np.sum((closest - p) ** 2, axis=-1)
                dmin = d2.min()
                if dmin < best_d2 or (dmin == best_d2 and idx[d2 == dmin].min() < best_face):
                    cand = np.flatnonzero(d2 == dmin)
                    k = cand[np.argmin(idx[cand])]
                    best_d2 = float(dmin)
                    best_face = int(idx[k])
                    best_point = closest[k].copy()
                    best_bary = bary[k].copy()
            else:
                stack.append(right)
                stack.append(left)
        return SurfaceHit(best_point, best_face, best_bary, float(np.sqrt(best_d2)))


def closest_point_on_mesh(p, mesh: TriMesh) -> SurfaceHit:
    """Exact closest surface point via the AABB tree; ties to lowest face."""
    return mesh._bvh().query(p)


def _brute_batch(points, a, b, c, chunk=2048):
    faces = np.empty(len(points), dtype=np.int64)
    bary = np.empty((len(points), 3))
    closest = np.empty((len(points), 3))
    dist2 = np.empty(len(points))
    for s in range(0, len(points), chunk):
        pc = points[s:s + chunk]
        cl, ba = _closest_on_triangles(pc, a, b, c)
        d2 = np.sum((cl - pc[:, None, :]) ** 2, axis=-1)
        i = np.argmin(d2, axis=1)
        r = np.arange(len(pc))
        faces[s:s + chunk] = i
        bary[s:s + chunk] = ba[r, i]
        closest[s:s + chunk] = cl[r, i]
        dist2[s:s + chunk] = d2[r, i]
    return faces, bary, closest, dist2


def _cover_radii(tri):
    cent = tri.mean(axis=1)
    return cent, np.sqrt(np.max(np.sum((tri - cent[:, None, :]) ** 2, axis=2), axis=1))


def _face_prune_index(mesh: TriMesh):
    """KD-tree of cover points for fast candidate-face pruning.

    Faces larger than the target radius are subdivided (index-side only)
    so that every cover sphere has radius <= rho; a query certified
    against the (k+1)-th cover point then bounds all unexamined faces.
    """
    cached = mesh._cache.get("face_prune")
    if cached is None:
        a, b, c = mesh.face_corners()
        tri = np.stack([a, b, c], axis=1)
        face_ids = np.arange(mesh.n_faces)
        _, rad = _cover_radii(tri)
        diag = float(np.linalg.norm(mesh.vertices.max(0) - mesh.vertices.min(0)))
        rho = max(0.5 * float(np.median(rad)), diag / 20.0, 1e-9)
        for _ in range(4):
            cent, rad = _cover_radii(tri)
            big = rad > rho
            if not np.any(big):
                break
            keep_tri, keep_ids = tri[~big], face_ids[~big]
            t = tri[big]
            ids = face_ids[big]
            ab = (t[:, 0] + t[:, 1]) / 2
            bc = (t[:, 1] + t[:, 2]) / 2
            ca = (t[:, 2] + t[:, 0]) / 2
            sub = np.concatenate([
                np.stack([t[:, 0], ab, ca], axis=1),
                np.stack([ab, t[:, 1], bc], axis=1),
                np.stack([ca, bc, t[:, 2]], axis=1),
                np.stack([ab, bc, ca], axis=1),
            ])
            tri = np.concatenate([keep_tri, sub])
            face_ids = np.concatenate([keep_ids, np.tile(ids, 4)])
        cent, rad = _cover_radii(tri)
        cached = (cKDTree(cent), face_ids, float(rad.max()))
        mesh._cache["face_prune"] = cached
    return cached


def closest_points_batch(points: np.ndarray, mesh: TriMesh, k: int = 12):
    """Vectorized exact closest points for many queries at once.

    Candidate faces come from a ball query against the cover-point index:
    the 1-NN cover distance upper-bounds the true distance (cover centers
    lie on the surface), and any face that could beat it has a cover point
    within that bound plus the cover radius. The result therefore always
    equals the brute-force minimum, lowest face index on exact ties.

    Returns (faces (P,), bary (P, 3), closest (P, 3), dist2 (P,)).
    """
    _require_surface(mesh)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    a, b, c = mesh.face_corners()
    n_faces = len(a)
    n_pts = len(points)
    if n_faces <= k + 4 or n_pts == 0:
        return _brute_batch(points, a, b, c)

    tree, cover_ids, rho = _face_prune_index(mesh)
    ub, _ = tree.query(points)
    balls = tree.query_ball_point(points, ub + rho * (1.0 + 1e-12))
    counts = np.fromiter((len(ix) for ix in balls), dtype=np.int64, count=n_pts)
    # distant outliers see very wide balls; a plain scan is cheaper there
    wide = counts > max(24 * k, 256)
    if np.any(wide):
        for row in np.flatnonzero(wide):
            balls[row] = []
        counts[wide] = 0
    rows = np.repeat(np.arange(n_pts), counts)
    covers = (np.concatenate(balls).astype(np.int64)
              if rows.size else np.zeros(0, dtype=np.int64))
    key = np.unique(rows * n_faces + cover_ids[covers])
    prow = key // n_faces
    pface = key % n_faces

    cl, ba = _closest_on_triangles(points[prow], a[pface][:, None, :],
                                   b[pface][:, None, :], c[pface][:, None, :])
    cl = cl[:, 0]
    ba = ba[:, 0]
    d2 = np.sum((cl - points[prow]) ** 2, axis=1)
    # per row: smallest distance, exact ties to the lowest face index
    order = np.lexsort((pface, d2, prow))
    sel = order[np.unique(prow[order], return_index=True)[1]]

    faces = np.zeros(n_pts, dtype=np.int64)
    bary = np.zeros((n_pts, 3))
    closest = np.zeros((n_pts, 3))
    dist2 = np.zeros(n_pts)
    hit = prow[sel]
    faces[hit] = pface[sel]
    bary[hit] = ba[sel]
    closest[hit] = cl[sel]
    dist2[hit] = d2[sel]
    if np.any(wide):
        fb = _brute_batch(points[wide], a, b, c)
        faces[wide], bary[wide], closest[wide], dist2[wide] = fb
    return faces, bary, closest, dist2


# ---------------------------------------------------------------------------
# sampling and loss
# ---------------------------------------------------------------------------

def sample_surface_faces(mesh: TriMesh, n: int, seed: int):
    """Area-weighted face picks plus uniform barycentrics (deterministic)."""
    if n < 1:
        raise ValueError("need at least one sample")
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise ZeroAreaMeshError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    faces = rng.choice(mesh.n_faces, size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    bary = np.stack([1 - r1, r1 * (1 - r2), r1 * r2], axis=1)
    return faces, bary


def points_from_face_samples(mesh: TriMesh, faces, bary) -> np.ndarray:
    a, b, c = mesh.face_corners()
    return (bary[:, 0:1] * a[faces] + bary[:, 1:2] * b[faces] + bary[:, 2:3] * c[faces])


def sample_surface(mesh: TriMesh, n: int, seed: int) -> PointCloud:
    """Sample n points uniformly by area on the mesh surface."""
    faces, bary = sample_surface_faces(mesh, n, seed)
    return PointCloud(points_from_face_samples(mesh, faces, bary))


def point2mesh_loss(target: PointCloud, mesh: TriMesh, mesh_samples: int, seed: int) -> float:
    """Symmetric mean-squared distance between a cloud and a mesh surface.

    Forward term: exact squared point-to-surface distance per target point.
    Reverse term: squared distance from area-weighted surface samples to
    their nearest target point.
    """
    if len(target) == 0:
        raise ValueError("empty target cloud")
    _require_surface(mesh)
    _, _, _, d2 = closest_points_batch(target.points, mesh)
    forward = float(d2.mean())
    samples = sample_surface(mesh, mesh_samples, seed)
    dist, _ = target._kdtree().query(samples.points)
    reverse = float(np.mean(dist ** 2))
    return forward + reverse
