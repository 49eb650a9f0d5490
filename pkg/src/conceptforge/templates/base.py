"""Template definitions, the registry, and the instancing engine.

Geometry templates map a fixed-topology base mesh through a differentiable
vertex map. Concept templates assemble member templates (geometry or other
concepts) through a constraint rule that derives member parameters and
local placements from the concept's own parameters. Instancing runs the
same code path with plain floats or with Jets, which yields the vertex
Jacobian with respect to all continuous parameters plus the 6 pose
degrees of freedom.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .. import autodiff as ad
from ..geometry import RigidTransform, TriMesh, merge_meshes


class UnknownTemplateError(KeyError):
    pass


class TemplateRegistrationError(ValueError):
    pass


class ConstraintViolationError(ValueError):
    """A constraint rule produced out-of-bounds member parameters."""

    def __init__(self, violations):
        self.violations = violations
        detail = "; ".join(f"{m}.{p}={v:.6g} outside [{lo:.6g}, {hi:.6g}]"
                           for m, p, v, lo, hi in violations)
        super().__init__(f"constraint rule left bounds: {detail}")


@dataclass(frozen=True)
class ParamSpec:
    name: str
    lower: float
    upper: float
    default: float
    unit: str = "m"
    # role drives data-driven initialization: size_x/size_y/size_z take the
    # matching bounding-box extent, radius_xy half the mean lateral extent,
    # None leaves the default untouched.
    role: Optional[str] = None

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower must be < upper")
        if not self.lower <= self.default <= self.upper:
            raise ValueError(f"{self.name}: default outside bounds")


@dataclass(frozen=True)
class DiscreteParamSpec:
    name: str
    min: int
    max: int
    default: int

    def __post_init__(self):
        if not self.min <= self.default <= self.max:
            raise ValueError(f"{self.name}: default outside range")
        if self.max - self.min > 16:
            raise ValueError(f"{self.name}: range too large")


@dataclass(frozen=True)
class RegionSpec:
    """Labeled region on a template, tested in template-local coordinates."""
    label: str
    knowledge_id: str
    predicate: Callable  # (params: dict, points (N, 3)) -> bool array


@dataclass(frozen=True)
class FrameSpec:
    """Named local frame emitter, e.g. a grasp frame or a part box."""
    label: str
    knowledge_id: str
    emitter: Callable  # (params: dict) -> list of (RigidTransform, extents | None)


@dataclass(frozen=True)
class GeometryTemplateDef:
    id: str
    param_specs: tuple
    build_base: Callable  # resolution -> (base: dict of arrays, faces (M, 3))
    vertex_map: Callable  # (base, params: dict of scalars) -> (N, 3) positions
    tags: tuple = ()
    regions: tuple = ()
    frames: tuple = ()

    @property
    def is_concept(self) -> bool:
        return False

    def default_params(self) -> dict:
        return {s.name: s.default for s in self.param_specs}

    def default_mesh(self, resolution: int) -> TriMesh:
        base, faces = self.build_base(resolution)
        return TriMesh(self.vertex_map(base, self.default_params()), faces)


@dataclass(frozen=True)
class MemberPlacement:
    """One member instance produced by a constraint rule."""
    name: str
    template_id: str
    params: dict
    rotation: list          # 3x3 scalar entries (floats or Jets)
    translation: list       # 3 scalar entries
    discrete: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ConceptTemplateDef:
    id: str
    param_specs: tuple
    constrain: Callable  # (params: dict, discrete: dict) -> list[MemberPlacement]
    members: tuple       # static (name, template_id) pairs for validation
    discrete_specs: tuple = ()
    tags: tuple = ()
    regions: tuple = ()
    frames: tuple = ()

    @property
    def is_concept(self) -> bool:
        return True

    def default_params(self) -> dict:
        return {s.name: s.default for s in self.param_specs}

    def default_discrete(self) -> dict:
        return {s.name: s.default for s in self.discrete_specs}


@dataclass(frozen=True)
class ConceptInstance:
    """A template bound to parameter values and a world pose."""
    template_id: str
    continuous: np.ndarray
    discrete: np.ndarray
    pose: RigidTransform

    def __post_init__(self):
        object.__setattr__(self, "continuous",
                           np.asarray(self.continuous, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "discrete",
                           np.asarray(self.discrete, dtype=np.int64).reshape(-1))

    def with_params(self, continuous=None, pose=None) -> "ConceptInstance":
        return ConceptInstance(
            self.template_id,
            self.continuous if continuous is None else continuous,
            self.discrete,
            self.pose if pose is None else pose,
        )


class TemplateRegistry:
    """Immutable-after-build lookup of geometry and concept templates."""

    def __init__(self):
        self._defs: dict = {}

    def ids(self) -> list:
        return sorted(self._defs)

    def geometry_ids(self) -> list:
        return sorted(k for k, d in self._defs.items() if not d.is_concept)

    def concept_ids(self) -> list:
        return sorted(k for k, d in self._defs.items() if d.is_concept)

    def get(self, template_id: str):
        try:
            return self._defs[template_id]
        except KeyError:
            raise UnknownTemplateError(f"unknown template {template_id!r}") from None

    def __contains__(self, template_id: str) -> bool:
        return template_id in self._defs

    def register(self, tdef) -> "TemplateRegistry":
        if tdef.id in self._defs:
            raise TemplateRegistrationError(f"duplicate template id {tdef.id!r}")
        if tdef.is_concept:
            for name, member_id in tdef.members:
                if member_id != tdef.id and member_id not in self._defs:
                    raise TemplateRegistrationError(
                        f"{tdef.id}: unknown member template {member_id!r}")
            if self._would_cycle(tdef):
                raise TemplateRegistrationError(f"{tdef.id}: member cycle detected")
        self._defs[tdef.id] = tdef
        return self

    def _would_cycle(self, tdef) -> bool:
        # Members must already be registered, so a cycle can only pass
        # through the new id itself.
        seen = set()
        stack = [m for _, m in tdef.members]
        while stack:
            tid = stack.pop()
            if tid == tdef.id:
                return True
            if tid in seen or tid not in self._defs:
                continue
            seen.add(tid)
            d = self._defs[tid]
            if d.is_concept:
                stack.extend(m for _, m in d.members)
        return False

    # ------------------------------------------------------------------
    # validation
    # ------------------------------------------------------------------

    def validate_instance(self, inst: ConceptInstance):
        tdef = self.get(inst.template_id)
        specs = tdef.param_specs
        if len(inst.continuous) != len(specs):
            raise ValueError(f"{tdef.id}: expected {len(specs)} continuous params, "
                             f"got {len(inst.continuous)}")
        for s, v in zip(specs, inst.continuous):
            if not s.lower - 1e-12 <= v <= s.upper + 1e-12:
                raise ValueError(f"{tdef.id}.{s.name}={v:.6g} outside "
                                 f"[{s.lower:.6g}, {s.upper:.6g}]")
        dspecs = tdef.discrete_specs if tdef.is_concept else ()
        if len(inst.discrete) != len(dspecs):
            raise ValueError(f"{tdef.id}: expected {len(dspecs)} discrete params, "
                             f"got {len(inst.discrete)}")
        for s, v in zip(dspecs, inst.discrete):
            if not s.min <= v <= s.max:
                raise ValueError(f"{tdef.id}.{s.name}={v} outside [{s.min}, {s.max}]")

    def default_instance(self, template_id: str,
                         pose: Optional[RigidTransform] = None) -> ConceptInstance:
        tdef = self.get(template_id)
        cont = np.array([s.default for s in tdef.param_specs], dtype=np.float64)
        disc = (np.array([s.default for s in tdef.discrete_specs], dtype=np.int64)
                if tdef.is_concept else np.zeros(0, dtype=np.int64))
        return ConceptInstance(template_id, cont, disc,
                               pose or RigidTransform.identity())

    # ------------------------------------------------------------------
    # descriptors for the service / persistence layer
    # ------------------------------------------------------------------

    def descriptor(self, template_id: str) -> dict:
        d = self.get(template_id)
        out = {
            "id": d.id,
            "kind": "concept" if d.is_concept else "geometry",
            "tags": list(d.tags),
            "params": [{"name": s.name, "lower": s.lower, "upper": s.upper,
                        "default": s.default, "unit": s.unit} for s in d.param_specs],
            "discrete": [],
            "regions": sorted({r.label for r in d.regions}),
            "frames": sorted({f.label for f in d.frames}),
        }
        if d.is_concept:
            out["discrete"] = [{"name": s.name, "min": s.min, "max": s.max,
                                "default": s.default} for s in d.discrete_specs]
            out["members"] = [{"name": n, "template_id": t} for n, t in d.members]
        return out

    def descriptors(self) -> list:
        return [self.descriptor(t) for t in self.ids()]


# ---------------------------------------------------------------------------
# instancing engine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LeafMember:
    """One expanded geometry instance with its full ancestry."""
    path: str
    template_id: str
    mesh: TriMesh                 # vertices already in world frame
    world_transform: RigidTransform
    params: dict                  # plain float member params
    lineage: tuple                # ((path, template_id, params, rot, trans), ...) root-first


@dataclass(frozen=True)
class ExpandedConcept:
    leaves: tuple
    merged: TriMesh
    violations: tuple             # (member_path, param, value, lower, upper)


def _clamped_params(tdef, raw: dict, path: str, violations: list) -> dict:
    out = {}
    for spec in tdef.param_specs:
        if spec.name not in raw:
            raise ValueError(f"{path}: constraint omitted param {spec.name!r} "
                             f"of {tdef.id}")
        x = raw[spec.name]
        v = float(ad.value(x))
        if not spec.lower - 1e-9 <= v <= spec.upper + 1e-9:
            violations.append((path, spec.name, v, spec.lower, spec.upper))
        out[spec.name] = ad.clamp(x, spec.lower, spec.upper)
    return out


def _expand(registry, template_id, params, discrete, rot, trans, path,
            resolution, leaves, violations, lineage):
    tdef = registry.get(template_id)
    plain_params = {k: float(ad.value(v)) for k, v in params.items()}
    rot_v = np.array([[float(ad.value(rot[i][j])) for j in range(3)] for i in range(3)])
    trans_v = np.array([float(ad.value(trans[i])) for i in range(3)])
    level = (path, template_id, plain_params, rot_v, trans_v)
    lineage = lineage + (level,)
    if not tdef.is_concept:
        base, faces = tdef.build_base(resolution)
        local = tdef.vertex_map(base, params)
        world = ad.apply_rt(rot, trans, local)
        leaves.append((path, template_id, world, faces, plain_params, lineage))
        return
    placements = tdef.constrain(params, discrete)
    names = [p.name for p in placements]
    if len(set(names)) != len(names):
        raise ValueError(f"{path}: duplicate member names in constraint output")
    for p in placements:
        child_path = f"{path}/{p.name}" if path else p.name
        member_def = registry.get(p.template_id)
        child_params = _clamped_params(member_def, p.params, child_path, violations)
        child_rot = ad.mat_mul(rot, p.rotation)
        child_trans = [ad.sum_scalars([rot[i][k] * p.translation[k] for k in range(3)])
                       + trans[i] for i in range(3)]
        _expand(registry, p.template_id, child_params, p.discrete, child_rot,
                child_trans, child_path, resolution, leaves, violations, lineage)


def _pose_rt(pose: RigidTransform):
    m = pose.matrix()
    rot = [[float(m[i, j]) for j in range(3)] for i in range(3)]
    trans = [float(pose.translation[i]) for i in range(3)]
    return rot, trans


def instantiate_concept(registry: TemplateRegistry, inst: ConceptInstance,
                        resolution: int, strict: bool = True) -> ExpandedConcept:
    """Expand an instance into posed leaf meshes plus the merged mesh."""
    registry.validate_instance(inst)
    tdef = registry.get(inst.template_id)
    params = {s.name: float(v) for s, v in zip(tdef.param_specs, inst.continuous)}
    discrete = ({s.name: int(v) for s, v in zip(tdef.discrete_specs, inst.discrete)}
                if tdef.is_concept else {})
    rot, trans = _pose_rt(inst.pose)
    raw_leaves: list = []
    violations: list = []
    _expand(registry, inst.template_id, params, discrete, rot, trans, "",
            resolution, raw_leaves, violations, ())
    if strict and violations:
        raise ConstraintViolationError(violations)
    leaves = []
    for path, tid, world, faces, plain_params, lineage in raw_leaves:
        _, _, _, rv, tv = lineage[-1]
        leaves.append(LeafMember(
            path=path or tid,
            template_id=tid,
            mesh=TriMesh(np.asarray(world, dtype=np.float64), faces),
            world_transform=RigidTransform.from_matrix(rv, tv),
            params=plain_params,
            lineage=lineage,
        ))
    merged = merge_meshes([lf.mesh for lf in leaves])
    return ExpandedConcept(tuple(leaves), merged, tuple(violations))


def instantiate_geometry(registry: TemplateRegistry, template_id: str,
                         params, resolution: int) -> TriMesh:
    """Instantiate a geometry template directly from a parameter vector."""
    tdef = registry.get(template_id)
    if tdef.is_concept:
        raise ValueError(f"{template_id} is a concept template")
    inst = ConceptInstance(template_id, np.asarray(params, dtype=np.float64),
                           np.zeros(0, dtype=np.int64), RigidTransform.identity())
    registry.validate_instance(inst)
    pmap = {s.name: float(v) for s, v in zip(tdef.param_specs, inst.continuous)}
    base, faces = tdef.build_base(resolution)
    return TriMesh(tdef.vertex_map(base, pmap), faces)


@dataclass(frozen=True)
class ParamJacobian:
    """Per-vertex partials of merged mesh positions.

    Columns are the template's continuous parameters in schema order,
    followed by pose translation (x, y, z) and the rotation tangent
    (exponential-map 3-vector about the current rotation).
    """
    matrix: np.ndarray  # (N, 3, K)
    param_names: tuple

    @property
    def n_params(self) -> int:
        return self.matrix.shape[2]


def instantiate_with_jacobian(registry: TemplateRegistry, inst: ConceptInstance,
                              resolution: int, strict: bool = False):
    """Merged mesh plus the analytic vertex Jacobian (forward mode)."""
    registry.validate_instance(inst)
    tdef = registry.get(inst.template_id)
    n_shape = len(inst.continuous)
    seed = ad.Jet.seed_vector(np.concatenate([inst.continuous, np.zeros(6)]))
    shape_jets = seed[:n_shape]
    t_jets = seed[n_shape:n_shape + 3]
    w_jets = seed[n_shape + 3:]

    params = {s.name: j for s, j in zip(tdef.param_specs, shape_jets)}
    discrete = ({s.name: int(v) for s, v in zip(tdef.discrete_specs, inst.discrete)}
                if tdef.is_concept else {})
    rot0, trans0 = _pose_rt(inst.pose)
    rot = ad.mat_mul(ad.rotvec_matrix_smooth(*w_jets), rot0)
    trans = [t_jets[i] + trans0[i] for i in range(3)]

    raw_leaves: list = []
    violations: list = []
    _expand(registry, inst.template_id, params, discrete, rot, trans, "",
            resolution, raw_leaves, violations, ())
    if strict and violations:
        raise ConstraintViolationError(violations)

    vert_vals, vert_dots, faces_all, off = [], [], [], 0
    for _, _, world, faces, _, _ in raw_leaves:
        jet = world if isinstance(world, ad.Jet) else ad.Jet.constant(world, n_shape + 6)
        vert_vals.append(jet.val)
        vert_dots.append(jet.dot)
        faces_all.append(faces + off)
        off += len(jet.val)
    merged = TriMesh(np.vstack(vert_vals), np.vstack(faces_all))
    jac = ParamJacobian(
        np.vstack(vert_dots),
        tuple(s.name for s in tdef.param_specs) + ("pose_tx", "pose_ty", "pose_tz",
                                                   "pose_wx", "pose_wy", "pose_wz"),
    )
    return merged, jac
