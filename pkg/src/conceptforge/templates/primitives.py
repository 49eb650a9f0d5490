"""The ten built-in geometry templates.

Every template deforms a fixed-topology base mesh through a vertex map
written against the autodiff helpers, so the map runs identically with
plain floats and with Jets. Axis convention: z is up.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .. import autodiff as ad
from ..geometry import RigidTransform
from .base import FrameSpec, GeometryTemplateDef, ParamSpec


def _spec(name, default, lower, upper, role=None):
    return ParamSpec(name=name, lower=lower, upper=upper, default=default, role=role)


# ---------------------------------------------------------------------------
# base mesh builders (cached per resolution)
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _box_base(_resolution: int):
    v = np.array([[x, y, z]
                  for z in (-0.5, 0.5) for y in (-0.5, 0.5) for x in (-0.5, 0.5)],
                 dtype=np.float64)
    f = np.array([
        [0, 2, 1], [1, 2, 3],      # bottom
        [4, 5, 6], [5, 7, 6],      # top
        [0, 1, 5], [0, 5, 4],      # front (y-)
        [2, 6, 7], [2, 7, 3],      # back (y+)
        [0, 4, 6], [0, 6, 2],      # left (x-)
        [1, 3, 7], [1, 7, 5],      # right (x+)
    ], dtype=np.int64)
    return {"v": v}, f


@lru_cache(maxsize=None)
def _wedge_base(_resolution: int):
    # rectangular footprint, ridge along y at the top
    v = np.array([
        [-0.5, -0.5, -0.5], [0.5, -0.5, -0.5],
        [-0.5, 0.5, -0.5], [0.5, 0.5, -0.5],
        [0.0, -0.5, 0.5], [0.0, 0.5, 0.5],
    ], dtype=np.float64)
    f = np.array([
        [0, 1, 2], [1, 3, 2],          # bottom
        [0, 4, 1],                     # front triangle
        [2, 3, 5],                     # back triangle
        [0, 2, 5], [0, 5, 4],          # left slope
        [1, 4, 5], [1, 5, 3],          # right slope
    ], dtype=np.int64)
    return {"v": v}, f


@lru_cache(maxsize=None)
def _cylinder_base(resolution: int):
    n = max(3, resolution)
    ang = 2 * np.pi * np.arange(n) / n
    ring = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    bottom = np.column_stack([ring, np.full(n, -0.5)])
    top = np.column_stack([ring, np.full(n, 0.5)])
    centers = np.array([[0, 0, -0.5], [0, 0, 0.5]], dtype=np.float64)
    v = np.vstack([bottom, top, centers])
    cb, ct = 2 * n, 2 * n + 1
    faces = []
    for i in range(n):
        j = (i + 1) % n
        faces.append([i, j, n + i])
        faces.append([j, n + j, n + i])
        faces.append([cb, j, i])
        faces.append([ct, n + i, n + j])
    return {"v": v}, np.array(faces, dtype=np.int64)


@lru_cache(maxsize=None)
def _sphere_base(resolution: int):
    n = max(3, resolution)
    stacks, slices = n, n
    verts = [[0.0, 0.0, 1.0]]
    for i in range(1, stacks):
        th = np.pi * i / stacks
        for j in range(slices):
            ph = 2 * np.pi * j / slices
            verts.append([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])
    verts.append([0.0, 0.0, -1.0])
    south = len(verts) - 1
    faces = []
    for j in range(slices):
        faces.append([0, 1 + j, 1 + (j + 1) % slices])
    for i in range(stacks - 2):
        a = 1 + i * slices
        b = 1 + (i + 1) * slices
        for j in range(slices):
            j2 = (j + 1) % slices
            faces.append([a + j, b + j, b + j2])
            faces.append([a + j, b + j2, a + j2])
    a = 1 + (stacks - 2) * slices
    for j in range(slices):
        faces.append([south, a + (j + 1) % slices, a + j])
    return {"v": np.array(verts)}, np.array(faces, dtype=np.int64)


@lru_cache(maxsize=None)
def _hemisphere_base(resolution: int):
    n = max(3, resolution)
    stacks = max(2, n // 2)
    slices = n
    verts = [[0.0, 0.0, 1.0]]
    for i in range(1, stacks + 1):
        th = 0.5 * np.pi * i / stacks
        for j in range(slices):
            ph = 2 * np.pi * j / slices
            verts.append([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])
    verts.append([0.0, 0.0, 0.0])
    center = len(verts) - 1
    faces = []
    for j in range(slices):
        faces.append([0, 1 + j, 1 + (j + 1) % slices])
    for i in range(stacks - 1):
        a = 1 + i * slices
        b = 1 + (i + 1) * slices
        for j in range(slices):
            j2 = (j + 1) % slices
            faces.append([a + j, b + j, b + j2])
            faces.append([a + j, b + j2, a + j2])
    a = 1 + (stacks - 1) * slices
    for j in range(slices):
        faces.append([center, a + (j + 1) % slices, a + j])
    return {"v": np.array(verts)}, np.array(faces, dtype=np.int64)


@lru_cache(maxsize=None)
def _torus_base(resolution: int):
    n = max(3, resolution)
    rings = n + 1
    t = []
    phi = []
    body = []  # 1 for tube vertices, 0 for cap centers
    for i in range(rings):
        for j in range(n):
            t.append(i / n)
            phi.append(2 * np.pi * j / n)
            body.append(1.0)
    # cap centers at both ends of the arc
    t += [0.0, 1.0]
    phi += [0.0, 0.0]
    body += [0.0, 0.0]
    c0, c1 = rings * n, rings * n + 1
    faces = []
    for i in range(rings - 1):
        a = i * n
        b = (i + 1) * n
        for j in range(n):
            j2 = (j + 1) % n
            faces.append([a + j, b + j, b + j2])
            faces.append([a + j, b + j2, a + j2])
    for j in range(n):
        j2 = (j + 1) % n
        faces.append([c0, j2, j])
        faces.append([c1, (rings - 1) * n + j, (rings - 1) * n + j2])
    return ({"t": np.array(t), "phi": np.array(phi), "body": np.array(body)},
            np.array(faces, dtype=np.int64))


@lru_cache(maxsize=None)
def _tube_base(resolution: int):
    n = max(3, resolution)
    ang = np.tile(2 * np.pi * np.arange(n) / n, 4)
    zs = np.repeat([-0.5, 0.5, -0.5, 0.5], n)
    ring = np.repeat([0.0, 0.0, 1.0, 1.0], n)  # 0 outer, 1 inner
    ob, ot, ib, it_ = 0, n, 2 * n, 3 * n
    faces = []
    for j in range(n):
        j2 = (j + 1) % n
        faces.append([ob + j, ob + j2, ot + j])
        faces.append([ob + j2, ot + j2, ot + j])
        faces.append([ib + j, it_ + j, ib + j2])
        faces.append([ib + j2, it_ + j, it_ + j2])
        faces.append([ot + j, ot + j2, it_ + j])      # top annulus
        faces.append([ot + j2, it_ + j2, it_ + j])
        faces.append([ob + j, ib + j, ob + j2])       # bottom annulus
        faces.append([ob + j2, ib + j, ib + j2])
    return ({"ang": ang, "zs": zs, "ring": ring}, np.array(faces, dtype=np.int64))


# ---------------------------------------------------------------------------
# vertex maps
# ---------------------------------------------------------------------------

def _scale_xyz(base, params, kx, ky, kz):
    v = base["v"]
    return ad.stack3(params[kx] * v[:, 0], params[ky] * v[:, 1], params[kz] * v[:, 2])


def _cuboid_map(base, p):
    return _scale_xyz(base, p, "width", "depth", "height")


def _quad_prism_map(base, p):
    v = base["v"]
    top = v[:, 2] > 0
    x = p["width"] * v[:, 0]
    y = p["depth"] * v[:, 1]
    x = ad.where(top, p["top_scale_x"] * x + p["top_shift_x"], x)
    y = ad.where(top, p["top_scale_y"] * y + p["top_shift_y"], y)
    return ad.stack3(x, y, p["height"] * v[:, 2])


def _wedge_map(base, p):
    return _scale_xyz(base, p, "width", "depth", "height")


def _cylinder_map(base, p):
    v = base["v"]
    return ad.stack3(p["radius"] * v[:, 0], p["radius"] * v[:, 1],
                     p["height"] * v[:, 2])


def _frustum_map(base, p):
    v = base["v"]
    t = v[:, 2] + 0.5
    s = p["bottom_radius"] * (1.0 - t) + p["top_radius"] * t
    return ad.stack3(s * v[:, 0], s * v[:, 1], p["height"] * v[:, 2])


def _ellipsoid_map(base, p):
    v = base["v"]
    zc = p["cut"] + ad.relu(v[:, 2] - p["cut"])
    return ad.stack3(p["radius_x"] * v[:, 0], p["radius_y"] * v[:, 1],
                     p["radius_z"] * zc)


def _hemisphere_map(base, p):
    v = base["v"]
    return ad.stack3(p["radius"] * v[:, 0], p["radius"] * v[:, 1],
                     p["radius"] * (p["height_scale"] * v[:, 2]))


def _torus_map(base, p):
    th = p["arc_angle"] * base["t"]
    rho = p["minor_radius"] * base["body"]
    radial = p["major_radius"] + rho * np.cos(base["phi"])
    return ad.stack3(radial * ad.cos(th), radial * ad.sin(th),
                     rho * np.sin(base["phi"]))


def _tube_map(base, p):
    rv = p["radius"] * (1.0 - p["wall_fraction"] * base["ring"])
    return ad.stack3(rv * np.cos(base["ang"]), rv * np.sin(base["ang"]),
                     p["height"] * base["zs"])


def _ngon_map(base, p):
    v = base["v"]
    return ad.stack3(p["radius"] * v[:, 0], p["radius"] * v[:, 1],
                     p["height"] * v[:, 2])


# ---------------------------------------------------------------------------
# analytic part boxes (for pose knowledge)
# ---------------------------------------------------------------------------

def _centered_obb(extents_of, center_of=None):
    def emit(p):
        t = RigidTransform.identity()
        if center_of is not None:
            t = RigidTransform(np.array([1.0, 0.0, 0.0, 0.0]),
                               np.asarray(center_of(p), dtype=np.float64))
        return [(t, np.asarray(extents_of(p), dtype=np.float64))]
    return emit


_OBB_CENTERS = {
    "hemisphere": lambda p: (0.0, 0.0, p["radius"] * p["height_scale"] / 2),
}


_OBB_EXTENTS = {
    "cuboid": lambda p: (p["width"] / 2, p["depth"] / 2, p["height"] / 2),
    "quad_prism": lambda p: ((p["width"] * max(1.0, p["top_scale_x"]) + abs(p["top_shift_x"])) / 2,
                             (p["depth"] * max(1.0, p["top_scale_y"]) + abs(p["top_shift_y"])) / 2,
                             p["height"] / 2),
    "wedge": lambda p: (p["width"] / 2, p["depth"] / 2, p["height"] / 2),
    "cylinder": lambda p: (p["radius"], p["radius"], p["height"] / 2),
    "frustum": lambda p: (max(p["bottom_radius"], p["top_radius"]),
                          max(p["bottom_radius"], p["top_radius"]), p["height"] / 2),
    "ellipsoid": lambda p: (p["radius_x"], p["radius_y"], p["radius_z"]),
    "hemisphere": lambda p: (p["radius"], p["radius"], p["radius"] * p["height_scale"] / 2),
    "torus_arc": lambda p: (p["major_radius"] + p["minor_radius"],
                            p["major_radius"] + p["minor_radius"], p["minor_radius"]),
    "tube": lambda p: (p["radius"], p["radius"], p["height"] / 2),
    "ngon_prism": lambda p: (p["radius"], p["radius"], p["height"] / 2),
}


def _obb_frames(tid):
    return (FrameSpec("part_box", "part_obb",
                      _centered_obb(_OBB_EXTENTS[tid], _OBB_CENTERS.get(tid))),)


# ---------------------------------------------------------------------------
# definitions
# ---------------------------------------------------------------------------

def geometry_templates() -> list:
    defs = [
        GeometryTemplateDef(
            id="cuboid",
            param_specs=(
                _spec("width", 1.0, 0.005, 20.0, role="size_x"),
                _spec("depth", 1.0, 0.005, 20.0, role="size_y"),
                _spec("height", 1.0, 0.005, 20.0, role="size_z"),
            ),
            build_base=_box_base, vertex_map=_cuboid_map, tags=("block",),
        ),
        GeometryTemplateDef(
            id="quad_prism",
            param_specs=(
                _spec("width", 1.0, 0.005, 20.0, role="size_x"),
                _spec("depth", 1.0, 0.005, 20.0, role="size_y"),
                _spec("height", 1.0, 0.005, 20.0, role="size_z"),
                _spec("top_shift_x", 0.0, -5.0, 5.0),
                _spec("top_shift_y", 0.0, -5.0, 5.0),
                _spec("top_scale_x", 1.0, 0.01, 5.0),
                _spec("top_scale_y", 1.0, 0.01, 5.0),
            ),
            build_base=_box_base, vertex_map=_quad_prism_map, tags=("block",),
        ),
        GeometryTemplateDef(
            id="wedge",
            param_specs=(
                _spec("width", 1.0, 0.005, 20.0, role="size_x"),
                _spec("depth", 1.0, 0.005, 20.0, role="size_y"),
                _spec("height", 1.0, 0.005, 20.0, role="size_z"),
            ),
            build_base=_wedge_base, vertex_map=_wedge_map, tags=("block",),
        ),
        GeometryTemplateDef(
            id="cylinder",
            param_specs=(
                _spec("radius", 0.5, 0.005, 10.0, role="radius_xy"),
                _spec("height", 1.0, 0.005, 20.0, role="size_z"),
            ),
            build_base=_cylinder_base, vertex_map=_cylinder_map, tags=("round",),
        ),
        GeometryTemplateDef(
            id="frustum",
            param_specs=(
                _spec("bottom_radius", 0.5, 0.005, 10.0, role="radius_xy"),
                _spec("top_radius", 0.5, 0.005, 10.0, role="radius_xy"),
                _spec("height", 1.0, 0.005, 20.0, role="size_z"),
            ),
            build_base=_cylinder_base, vertex_map=_frustum_map, tags=("round",),
        ),
        GeometryTemplateDef(
            id="ellipsoid",
            param_specs=(
                _spec("radius_x", 1.0, 0.005, 10.0, role="radius_x"),
                _spec("radius_y", 1.0, 0.005, 10.0, role="radius_y"),
                _spec("radius_z", 1.0, 0.005, 10.0, role="radius_z"),
                # rectifier clip plane on the unit sphere; -1 leaves it whole
                _spec("cut", -1.0, -1.0, 0.9),
            ),
            build_base=_sphere_base, vertex_map=_ellipsoid_map, tags=("round",),
        ),
        GeometryTemplateDef(
            id="hemisphere",
            param_specs=(
                _spec("radius", 0.5, 0.005, 10.0, role="radius_xy"),
                _spec("height_scale", 1.0, 0.05, 4.0),
            ),
            build_base=_hemisphere_base, vertex_map=_hemisphere_map, tags=("round",),
        ),
        GeometryTemplateDef(
            id="torus_arc",
            param_specs=(
                _spec("major_radius", 0.5, 0.005, 10.0, role="radius_xy"),
                _spec("minor_radius", 0.1, 0.002, 2.0),
                _spec("arc_angle", np.pi, 0.2, 2 * np.pi),
            ),
            build_base=_torus_base, vertex_map=_torus_map, tags=("round", "handle"),
        ),
        GeometryTemplateDef(
            id="tube",
            param_specs=(
                _spec("radius", 0.5, 0.005, 10.0, role="radius_xy"),
                _spec("wall_fraction", 0.2, 0.02, 0.98),
                _spec("height", 1.0, 0.005, 20.0, role="size_z"),
            ),
            build_base=_tube_base, vertex_map=_tube_map, tags=("round", "hollow"),
        ),
        GeometryTemplateDef(
            id="ngon_prism",
            param_specs=(
                _spec("radius", 0.5, 0.005, 10.0, role="radius_xy"),
                _spec("height", 1.0, 0.005, 20.0, role="size_z"),
            ),
            build_base=_cylinder_base, vertex_map=_ngon_map, tags=("block", "round"),
        ),
    ]
    return [GeometryTemplateDef(
        id=d.id, param_specs=d.param_specs, build_base=d.build_base,
        vertex_map=d.vertex_map, tags=d.tags, regions=d.regions,
        frames=_obb_frames(d.id)) for d in defs]
