"""Built-in concept templates.

Each concept assembles geometry templates (or other concepts) through a
constraint rule. Rules are written with autodiff-friendly scalar math so
concept parameters differentiate through member parameters and local
placements. Region predicates and frame emitters always operate in the
concept's local coordinates with plain float parameters.
"""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..geometry import RigidTransform
from .base import (ConceptTemplateDef, DiscreteParamSpec, FrameSpec,
                   MemberPlacement, ParamSpec, RegionSpec)

_EPS = 1e-9
_MUG_HANDLE_ARC = 3.8
_POT_HANDLE_ARC = np.pi


def _spec(name, default, lower, upper, role=None):
    return ParamSpec(name=name, lower=lower, upper=upper, default=default, role=role)


def _ident():
    return ad.identity_rotation()


def _place(name, tid, params, translation, rotation=None, discrete=None):
    return MemberPlacement(name=name, template_id=tid, params=params,
                           rotation=rotation or _ident(),
                           translation=list(translation),
                           discrete=discrete or {})


def _frame(translation, rotvec=(0.0, 0.0, 0.0), extents=None):
    return (RigidTransform.from_rotvec(np.asarray(rotvec, dtype=np.float64),
                                       np.asarray(translation, dtype=np.float64)),
            None if extents is None else np.asarray(extents, dtype=np.float64))


# ---------------------------------------------------------------------------
# handles
# ---------------------------------------------------------------------------

def _u_handle_constrain(p, _d):
    w, h, t, d = p["width"], p["height"], p["thickness"], p["depth"]
    post = {"width": t, "depth": d, "height": h}
    return [
        _place("post_left", "cuboid", dict(post), [w * -0.5, 0.0, h * 0.5]),
        _place("post_right", "cuboid", dict(post), [w * 0.5, 0.0, h * 0.5]),
        _place("bar", "cuboid",
               {"width": w + t, "depth": d, "height": t},
               [0.0, 0.0, h + t * 0.5]),
    ]


def _u_handle_pull(params, pts):
    return pts[:, 2] >= params["height"] - _EPS


U_HANDLE = ConceptTemplateDef(
    id="u_handle",
    tags=("handle",),
    param_specs=(
        _spec("width", 0.5, 0.02, 5.0, role="size_x"),
        _spec("height", 0.3, 0.02, 5.0, role="size_z"),
        _spec("thickness", 0.08, 0.01, 1.0),
        _spec("depth", 0.08, 0.01, 1.0, role="size_y"),
    ),
    members=(("post_left", "cuboid"), ("post_right", "cuboid"), ("bar", "cuboid")),
    constrain=_u_handle_constrain,
    regions=(RegionSpec("pull", "affordance", _u_handle_pull),),
    frames=(FrameSpec("grasp", "grasp", lambda p: [_frame(
        (0.0, 0.0, p["height"] + p["thickness"] * 0.5),
        extents=((p["width"] + p["thickness"]) / 2, p["depth"] / 2,
                 p["thickness"] / 2))]),),
)


def _arc_handle_constrain(p, _d):
    return [_place("arc", "torus_arc",
                   {"major_radius": p["radius"], "minor_radius": p["thickness"],
                    "arc_angle": p["arc"]},
                   [0.0, 0.0, 0.0])]


def _arc_handle_pull(params, pts):
    ang = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2 * np.pi)
    return (ang >= params["arc"] / 3) & (ang <= 2 * params["arc"] / 3)


def _arc_handle_grasp(p):
    mid = p["arc"] / 2
    return [_frame((p["radius"] * np.cos(mid), p["radius"] * np.sin(mid), 0.0),
                   rotvec=(0.0, 0.0, mid),
                   extents=(p["thickness"], p["thickness"], p["thickness"]))]


ARC_HANDLE = ConceptTemplateDef(
    id="arc_handle",
    tags=("handle",),
    param_specs=(
        _spec("radius", 0.3, 0.02, 5.0, role="radius_xy"),
        _spec("thickness", 0.05, 0.005, 1.0),
        _spec("arc", np.pi, 0.3, 2 * np.pi),
    ),
    members=(("arc", "torus_arc"),),
    constrain=_arc_handle_constrain,
    regions=(RegionSpec("pull", "affordance", _arc_handle_pull),),
    frames=(FrameSpec("grasp", "grasp", _arc_handle_grasp),),
)


# ---------------------------------------------------------------------------
# vessels
# ---------------------------------------------------------------------------

def _mug_constrain(p, _d):
    r, h = p["radius"], p["height"]
    hr, ht = p["handle_radius"], p["handle_thickness"]
    handle_rot = ad.mat_mul(ad.rot_x(np.pi / 2), ad.rot_z(-_MUG_HANDLE_ARC / 2))
    dx = float(-np.cos(_MUG_HANDLE_ARC / 2))
    return [
        _place("body", "tube",
               {"radius": r, "wall_fraction": 0.15, "height": h},
               [0.0, 0.0, 0.0]),
        _place("handle", "torus_arc",
               {"major_radius": hr, "minor_radius": ht,
                "arc_angle": _MUG_HANDLE_ARC},
               [r + hr * dx, 0.0, 0.0], rotation=handle_rot),
    ]


MUG = ConceptTemplateDef(
    id="mug",
    tags=("vessel", "Mug"),
    param_specs=(
        _spec("radius", 0.4, 0.02, 5.0, role="radius_xy"),
        _spec("height", 0.8, 0.02, 5.0, role="size_z"),
        _spec("handle_radius", 0.25, 0.02, 2.0),
        _spec("handle_thickness", 0.06, 0.005, 0.5),
    ),
    members=(("body", "tube"), ("handle", "torus_arc")),
    constrain=_mug_constrain,
    frames=(FrameSpec("grasp", "grasp", lambda p: [_frame(
        (p["radius"] + p["handle_radius"] * (1 - np.cos(_MUG_HANDLE_ARC / 2)),
         0.0, 0.0),
        extents=(p["handle_thickness"],) * 3)]),),
)


def _bottle_constrain(p, _d):
    r, bh, nr, nh = p["radius"], p["body_height"], p["neck_radius"], p["neck_height"]
    return [
        _place("body", "cylinder", {"radius": r, "height": bh},
               [0.0, 0.0, bh * 0.5]),
        _place("neck", "frustum",
               {"bottom_radius": r, "top_radius": nr, "height": nh},
               [0.0, 0.0, bh + nh * 0.5]),
    ]


BOTTLE = ConceptTemplateDef(
    id="bottle",
    tags=("vessel", "Bot"),
    param_specs=(
        _spec("radius", 0.3, 0.02, 5.0, role="radius_xy"),
        _spec("body_height", 0.8, 0.02, 5.0),
        _spec("neck_radius", 0.12, 0.01, 2.0),
        _spec("neck_height", 0.3, 0.01, 2.0),
    ),
    members=(("body", "cylinder"), ("neck", "frustum")),
    constrain=_bottle_constrain,
)


def _lid_constrain(p, _d):
    r, t = p["radius"], p["thickness"]
    kr, kh = p["knob_radius"], p["knob_height"]
    return [
        _place("plate", "cylinder", {"radius": r, "height": t},
               [0.0, 0.0, t * 0.5]),
        _place("knob", "cylinder", {"radius": kr, "height": kh},
               [0.0, 0.0, t + kh * 0.5]),
    ]


def _lid_pull(params, pts):
    rxy = np.hypot(pts[:, 0], pts[:, 1])
    return (rxy <= params["knob_radius"] + 1e-6) & (pts[:, 2] >= params["thickness"] - _EPS)


LID_WITH_KNOB = ConceptTemplateDef(
    id="lid_with_knob",
    tags=("lid",),
    param_specs=(
        _spec("radius", 0.4, 0.02, 5.0, role="radius_xy"),
        _spec("thickness", 0.06, 0.01, 1.0),
        _spec("knob_radius", 0.08, 0.01, 1.0),
        _spec("knob_height", 0.1, 0.01, 1.0),
    ),
    members=(("plate", "cylinder"), ("knob", "cylinder")),
    constrain=_lid_constrain,
    regions=(RegionSpec("pull", "affordance", _lid_pull),),
    frames=(FrameSpec("grasp", "grasp", lambda p: [_frame(
        (0.0, 0.0, p["thickness"] + p["knob_height"] * 0.5),
        extents=(p["knob_radius"], p["knob_radius"], p["knob_height"] / 2))]),),
)


def _kitchen_pot_constrain(p, _d):
    r, h, hs = p["radius"], p["height"], p["handle_size"]
    handle = {"radius": hs, "thickness": hs * 0.25, "arc": _POT_HANDLE_ARC}
    rot_r = ad.rot_x(np.pi / 2)
    rot_l = ad.mat_mul(ad.rot_z(np.pi), ad.rot_x(np.pi / 2))
    return [
        _place("body", "tube",
               {"radius": r, "wall_fraction": 0.12, "height": h},
               [0.0, 0.0, h * 0.5]),
        _place("handle_right", "arc_handle", dict(handle),
               [r, 0.0, h * 0.8], rotation=rot_r),
        _place("handle_left", "arc_handle", dict(handle),
               [r * -1.0, 0.0, h * 0.8], rotation=rot_l),
        _place("lid", "lid_with_knob",
               {"radius": r * 1.05, "thickness": h * 0.08,
                "knob_radius": r * 0.15, "knob_height": h * 0.15},
               [0.0, 0.0, h]),
    ]


KITCHEN_POT = ConceptTemplateDef(
    id="kitchen_pot",
    tags=("vessel", "Ktp"),
    param_specs=(
        _spec("radius", 0.5, 0.02, 5.0, role="radius_xy"),
        _spec("height", 0.5, 0.02, 5.0, role="size_z"),
        _spec("handle_size", 0.15, 0.02, 1.0),
    ),
    members=(("body", "tube"), ("handle_right", "arc_handle"),
             ("handle_left", "arc_handle"), ("lid", "lid_with_knob")),
    constrain=_kitchen_pot_constrain,
)


# ---------------------------------------------------------------------------
# furniture
# ---------------------------------------------------------------------------

def _legged_base_constrain(p, d):
    n = d["leg_count"]
    r, h, t = p["radius"], p["leg_height"], p["leg_thickness"]
    leg = {"width": t, "depth": t, "height": h}
    out = []
    for i in range(n):
        th = 2 * np.pi * i / n
        out.append(_place(f"leg_{i}", "cuboid", dict(leg),
                          [r * np.cos(th), r * np.sin(th), h * 0.5],
                          rotation=ad.rot_z(th)))
    return out


LEGGED_BASE = ConceptTemplateDef(
    id="legged_base",
    tags=("support",),
    param_specs=(
        _spec("radius", 0.4, 0.02, 5.0, role="radius_xy"),
        _spec("leg_height", 0.5, 0.02, 5.0, role="size_z"),
        _spec("leg_thickness", 0.06, 0.01, 1.0),
    ),
    discrete_specs=(DiscreteParamSpec("leg_count", 3, 8, 4),),
    members=(("leg", "cuboid"),),
    constrain=_legged_base_constrain,
)


def _table_constrain(p, d):
    w, dep, tt = p["width"], p["depth"], p["top_thickness"]
    lh, lt = p["leg_height"], p["leg_thickness"]
    return [
        _place("top", "cuboid", {"width": w, "depth": dep, "height": tt},
               [0.0, 0.0, lh + tt * 0.5]),
        _place("base", "legged_base",
               {"radius": (w + dep) * 0.2, "leg_height": lh, "leg_thickness": lt},
               [0.0, 0.0, 0.0], discrete={"leg_count": d["leg_count"]}),
    ]


TABLE = ConceptTemplateDef(
    id="table",
    tags=("furniture", "Tab"),
    param_specs=(
        _spec("width", 1.2, 0.05, 10.0, role="size_x"),
        _spec("depth", 0.8, 0.05, 10.0, role="size_y"),
        _spec("top_thickness", 0.06, 0.01, 0.5),
        _spec("leg_height", 0.7, 0.05, 3.0),
        _spec("leg_thickness", 0.06, 0.01, 0.5),
    ),
    discrete_specs=(DiscreteParamSpec("leg_count", 3, 8, 4),),
    members=(("top", "cuboid"), ("base", "legged_base")),
    constrain=_table_constrain,
)


def _chair_constrain(p, _d):
    w, dep, st = p["seat_width"], p["seat_depth"], p["seat_thickness"]
    lh, bh, bt = p["leg_height"], p["back_height"], p["back_thickness"]
    return [
        _place("seat", "cuboid", {"width": w, "depth": dep, "height": st},
               [0.0, 0.0, lh + st * 0.5]),
        _place("back", "cuboid", {"width": w, "depth": bt, "height": bh},
               [0.0, dep * -0.5 + bt * 0.5, lh + st + bh * 0.5]),
        _place("base", "legged_base",
               {"radius": (w + dep) * 0.3, "leg_height": lh,
                "leg_thickness": bt * 1.2},
               [0.0, 0.0, 0.0], discrete={"leg_count": 4}),
    ]


CHAIR = ConceptTemplateDef(
    id="chair",
    tags=("furniture", "Chr"),
    param_specs=(
        _spec("seat_width", 0.45, 0.05, 5.0, role="size_x"),
        _spec("seat_depth", 0.45, 0.05, 5.0, role="size_y"),
        _spec("seat_thickness", 0.05, 0.01, 0.5),
        _spec("leg_height", 0.45, 0.05, 3.0),
        _spec("back_height", 0.5, 0.05, 3.0),
        _spec("back_thickness", 0.04, 0.01, 0.5),
    ),
    members=(("seat", "cuboid"), ("back", "cuboid"), ("base", "legged_base")),
    constrain=_chair_constrain,
)


# ---------------------------------------------------------------------------
# articulated-part shapes
# ---------------------------------------------------------------------------

def _door_constrain(p, _d):
    w, h, t, fw = p["width"], p["height"], p["thickness"], p["frame_width"]
    return [
        _place("panel", "cuboid", {"width": w, "depth": t, "height": h},
               [0.0, 0.0, 0.0]),
        _place("frame", "cuboid",
               {"width": fw, "depth": t * 1.4, "height": h},
               [(w + fw) * -0.5, 0.0, 0.0]),
    ]


def _door_push(params, pts):
    # pushable area sits on the panel far from the hinge side
    return pts[:, 0] >= params["width"] * 0.25


DOOR_PANEL = ConceptTemplateDef(
    id="door_panel",
    tags=("articulated", "Dor"),
    param_specs=(
        _spec("width", 0.9, 0.05, 5.0, role="size_x"),
        _spec("height", 2.0, 0.05, 5.0, role="size_z"),
        _spec("thickness", 0.05, 0.01, 0.5),
        _spec("frame_width", 0.08, 0.01, 0.5),
    ),
    members=(("panel", "cuboid"), ("frame", "cuboid")),
    constrain=_door_constrain,
    regions=(RegionSpec("push", "affordance", _door_push),),
)


def _drawer_constrain(p, _d):
    w, dep, h = p["width"], p["depth"], p["height"]
    hw, hs = p["handle_width"], p["handle_size"]
    return [
        _place("box", "cuboid", {"width": w, "depth": dep, "height": h},
               [0.0, 0.0, 0.0]),
        _place("handle", "u_handle",
               {"width": hw, "height": hs, "thickness": hs * 0.6,
                "depth": hs * 0.6},
               [0.0, dep * -0.5, 0.0], rotation=ad.rot_x(np.pi / 2)),
    ]


DRAWER = ConceptTemplateDef(
    id="drawer",
    tags=("articulated", "Drh"),
    param_specs=(
        _spec("width", 0.6, 0.05, 5.0, role="size_x"),
        _spec("depth", 0.5, 0.05, 5.0, role="size_y"),
        _spec("height", 0.2, 0.02, 2.0, role="size_z"),
        _spec("handle_width", 0.2, 0.02, 2.0),
        _spec("handle_size", 0.05, 0.01, 0.5),
    ),
    members=(("box", "cuboid"), ("handle", "u_handle")),
    constrain=_drawer_constrain,
)


def _knob_constrain(p, _d):
    pw, ph, pt = p["plate_width"], p["plate_height"], p["plate_thickness"]
    kr, kl = p["knob_radius"], p["knob_length"]
    return [
        _place("plate", "cuboid", {"width": pw, "depth": ph, "height": pt},
               [0.0, 0.0, 0.0]),
        _place("knob", "cylinder", {"radius": kr, "height": kl},
               [0.0, 0.0, (pt + kl) * 0.5]),
    ]


def _knob_pull(params, pts):
    rxy = np.hypot(pts[:, 0], pts[:, 1])
    return (rxy <= params["knob_radius"] + 1e-6) & \
        (pts[:, 2] >= params["plate_thickness"] * 0.5 - _EPS)


KNOB_ON_PLATE = ConceptTemplateDef(
    id="knob_on_plate",
    tags=("articulated", "Knf"),
    param_specs=(
        _spec("plate_width", 0.3, 0.02, 2.0, role="size_x"),
        _spec("plate_height", 0.3, 0.02, 2.0, role="size_y"),
        _spec("plate_thickness", 0.03, 0.005, 0.5),
        _spec("knob_radius", 0.04, 0.005, 0.5),
        _spec("knob_length", 0.06, 0.005, 0.5),
    ),
    members=(("plate", "cuboid"), ("knob", "cylinder")),
    constrain=_knob_constrain,
    regions=(RegionSpec("pull", "affordance", _knob_pull),),
    frames=(FrameSpec("grasp", "grasp", lambda p: [_frame(
        (0.0, 0.0, (p["plate_thickness"] + p["knob_length"]) * 0.5),
        extents=(p["knob_radius"], p["knob_radius"], p["knob_length"] / 2))]),),
)


def concept_templates() -> list:
    # registration order respects member dependencies
    return [U_HANDLE, ARC_HANDLE, MUG, BOTTLE, LID_WITH_KNOB, KITCHEN_POT,
            LEGGED_BASE, TABLE, CHAIR, DOOR_PANEL, DRAWER, KNOB_ON_PLATE]
