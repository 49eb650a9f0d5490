"""Template registry, instancing, and Jacobian correctness."""
import numpy as np
import pytest

from conceptforge.geometry import RigidTransform, apply_transform
from conceptforge.templates import (builtin_registry, ConceptInstance,
                                    ConceptTemplateDef, MemberPlacement,
                                    ParamSpec, TemplateRegistry,
                                    TemplateRegistrationError,
                                    UnknownTemplateError, geometry_templates,
                                    instantiate_concept, instantiate_geometry,
                                    instantiate_with_jacobian)
from conceptforge import autodiff as ad


@pytest.fixture(scope="module")
def reg():
    return builtin_registry()


# ---------------------------------------------------------------------------
# registry structure
# ---------------------------------------------------------------------------

class TestRegistry:
    def test_ten_geometry_templates(self, reg):
        assert len(reg.geometry_ids()) == 10

    def test_at_least_twelve_concepts(self, reg):
        assert len(reg.concept_ids()) >= 12

    def test_unknown_id_raises(self, reg):
        with pytest.raises(UnknownTemplateError):
            reg.get("no_such_template")

    def test_every_template_instantiates_at_defaults(self, reg):
        for tid in reg.ids():
            expanded = instantiate_concept(reg, reg.default_instance(tid), 8)
            assert expanded.merged.n_faces > 0

    def test_default_instancing_is_deterministic(self, reg):
        for tid in reg.ids():
            a = instantiate_concept(reg, reg.default_instance(tid), 8).merged
            b = instantiate_concept(reg, reg.default_instance(tid), 8).merged
            assert np.array_equal(a.vertices, b.vertices)
            assert np.array_equal(a.faces, b.faces)

    def test_duplicate_registration_rejected(self):
        r = TemplateRegistry()
        tdef = geometry_templates()[0]
        r.register(tdef)
        with pytest.raises(TemplateRegistrationError):
            r.register(tdef)

    def test_unknown_member_rejected(self):
        r = TemplateRegistry()
        bad = ConceptTemplateDef(
            id="bad", param_specs=(),
            members=(("m", "missing"),), constrain=lambda p, d: [])
        with pytest.raises(TemplateRegistrationError):
            r.register(bad)

    def test_custom_concept_reusing_cuboid_twice(self, reg):
        r = TemplateRegistry()
        for d in geometry_templates():
            r.register(d)
        size = ParamSpec("size", 0.01, 2.0, 0.1)
        two = ConceptTemplateDef(
            id="two_boxes",
            param_specs=(size,),
            members=(("a", "cuboid"), ("b", "cuboid")),
            constrain=lambda p, d: [
                MemberPlacement("a", "cuboid",
                                {"width": p["size"], "depth": p["size"],
                                 "height": p["size"]},
                                ad.identity_rotation(), [0.0, 0.0, 0.0]),
                MemberPlacement("b", "cuboid",
                                {"width": p["size"], "depth": p["size"],
                                 "height": p["size"]},
                                ad.identity_rotation(), [p["size"] * 2, 0.0, 0.0]),
            ])
        r.register(two)
        inst = r.default_instance("two_boxes")
        expanded = instantiate_concept(r, inst, 4)
        assert len(expanded.leaves) == 2

    def test_descriptor_defaults_within_bounds(self, reg):
        for d in reg.descriptors():
            for p in d["params"]:
                assert p["lower"] <= p["default"] <= p["upper"]
            for p in d["discrete"]:
                assert p["min"] <= p["default"] <= p["max"]

    def test_validate_rejects_out_of_bounds(self, reg):
        inst = reg.default_instance("cylinder")
        bad = inst.with_params(continuous=np.array([99.0, 0.5]))
        with pytest.raises(ValueError):
            reg.validate_instance(bad)


# ---------------------------------------------------------------------------
# geometry template deformations
# ---------------------------------------------------------------------------

class TestGeometryDeformations:
    def test_cuboid_dimensions(self, reg):
        mesh = instantiate_geometry(reg, "cuboid", [2.0, 1.0, 0.5], 4)
        ext = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
        assert np.allclose(ext, [2.0, 1.0, 0.5], atol=1e-9)

    def test_ellipsoid_axis_scaling(self, reg):
        tdef = reg.get("ellipsoid")
        defaults = {s.name: s.default for s in tdef.param_specs}
        base = instantiate_geometry(
            reg, "ellipsoid",
            [defaults[s.name] for s in tdef.param_specs], 12)
        halved = dict(defaults)
        halved["radius_y"] = defaults["radius_y"] * 0.5
        squashed = instantiate_geometry(
            reg, "ellipsoid", [halved[s.name] for s in tdef.param_specs], 12)
        assert np.allclose(squashed.vertices[:, 1], base.vertices[:, 1] * 0.5,
                           atol=1e-9)
        assert np.allclose(squashed.vertices[:, [0, 2]],
                           base.vertices[:, [0, 2]], atol=1e-9)

    def test_ellipsoid_truncation_clips_bottom(self, reg):
        tdef = reg.get("ellipsoid")
        vals = {s.name: s.default for s in tdef.param_specs}
        vals["cut"] = -0.5
        mesh = instantiate_geometry(reg, "ellipsoid",
                                    [vals[s.name] for s in tdef.param_specs], 16)
        zmin = mesh.vertices[:, 2].min()
        assert zmin >= -0.5 * vals["radius_z"] - 1e-9

    def test_quad_prism_top_translation(self, reg):
        tdef = reg.get("quad_prism")
        vals = {s.name: s.default for s in tdef.param_specs}
        base = instantiate_geometry(reg, "quad_prism",
                                    [vals[s.name] for s in tdef.param_specs], 4)
        vals["top_shift_x"] = 0.3
        moved = instantiate_geometry(reg, "quad_prism",
                                     [vals[s.name] for s in tdef.param_specs], 4)
        top = base.vertices[:, 2] > 0
        delta = moved.vertices - base.vertices
        assert np.allclose(delta[top, 0], 0.3, atol=1e-9)
        assert np.allclose(delta[~top], 0.0, atol=1e-9)

    def test_vertex_count_independent_of_params(self, reg):
        rng = np.random.default_rng(0)
        for tid in reg.geometry_ids():
            tdef = reg.get(tid)
            counts = set()
            for _ in range(3):
                vals = [s.lower + (s.upper - s.lower) * rng.uniform(0.2, 0.8)
                        for s in tdef.param_specs]
                mesh = instantiate_geometry(reg, tid, vals, 8)
                counts.add((mesh.n_vertices, mesh.n_faces))
            assert len(counts) == 1

    def test_vertex_map_reproduces_default_instance(self, reg):
        for tid in reg.geometry_ids():
            tdef = reg.get(tid)
            defaults = [s.default for s in tdef.param_specs]
            a = instantiate_geometry(reg, tid, defaults, 10)
            b = instantiate_geometry(reg, tid, defaults, 10)
            assert np.allclose(a.vertices, b.vertices, atol=1e-9)


# ---------------------------------------------------------------------------
# concept expansion
# ---------------------------------------------------------------------------

class TestConceptExpansion:
    def test_legged_base_replication(self, reg):
        for legs in (3, 4, 5, 8):
            inst = reg.default_instance("legged_base")
            inst = ConceptInstance(inst.template_id, inst.continuous,
                                   np.array([legs]), inst.pose)
            expanded = instantiate_concept(reg, inst, 6)
            leg_leaves = [lf for lf in expanded.leaves if "leg" in lf.path]
            assert len(leg_leaves) == legs

    def test_pose_rigidly_transforms_members(self, reg):
        t = RigidTransform.from_rotvec(np.array([0.2, -0.4, 0.8]),
                                       np.array([1.0, -2.0, 0.5]))
        base = instantiate_concept(reg, reg.default_instance("mug"), 10)
        posed = instantiate_concept(
            reg, reg.default_instance("mug", pose=t), 10)
        expect = apply_transform(base.merged, t)
        assert np.allclose(posed.merged.vertices, expect.vertices, atol=1e-9)

    def test_member_paths_unique(self, reg):
        for tid in reg.concept_ids():
            expanded = instantiate_concept(reg, reg.default_instance(tid), 6)
            paths = [lf.path for lf in expanded.leaves]
            assert len(paths) == len(set(paths))

    def test_nested_concept_two_levels(self, reg):
        expanded = instantiate_concept(reg, reg.default_instance("table"), 6)
        nested = [lf for lf in expanded.leaves if lf.path.count("/") >= 1]
        assert nested, "table should expand through its nested legged base"

    def test_out_of_bounds_member_params_reported(self):
        # a constraint rule that drives its member below the member's bounds
        r = TemplateRegistry()
        for d in geometry_templates():
            r.register(d)
        r.register(ConceptTemplateDef(
            id="shrunk_box",
            param_specs=(ParamSpec("size", 0.01, 1.0, 0.5),),
            members=(("box", "cuboid"),),
            constrain=lambda p, d: [MemberPlacement(
                "box", "cuboid",
                {"width": p["size"] - 2.0, "depth": p["size"],
                 "height": p["size"]},
                ad.identity_rotation(), [0.0, 0.0, 0.0])]))
        inst = r.default_instance("shrunk_box")
        expanded = instantiate_concept(r, inst, 4, strict=False)
        assert expanded.violations
        assert expanded.violations[0][0] == "box"
        assert expanded.violations[0][1] == "width"
        with pytest.raises(ValueError):
            instantiate_concept(r, inst, 4)


# ---------------------------------------------------------------------------
# Jacobians against finite differences
# ---------------------------------------------------------------------------

def fd_jacobian(reg, inst, resolution, h_rel=1e-6):
    """Finite-difference vertex Jacobian; one-sided at parameter bounds."""
    tdef = reg.get(inst.template_id)
    cols = []
    for i, spec in enumerate(tdef.param_specs):
        h = max((spec.upper - spec.lower) * h_rel, 1e-9)
        lo = inst.continuous.copy()
        hi = inst.continuous.copy()
        hi[i] = min(hi[i] + h, spec.upper)
        lo[i] = max(lo[i] - h, spec.lower)
        vp = instantiate_concept(reg, inst.with_params(continuous=hi), resolution,
                                 strict=False).merged.vertices
        vm = instantiate_concept(reg, inst.with_params(continuous=lo), resolution,
                                 strict=False).merged.vertices
        cols.append((vp - vm) / (hi[i] - lo[i]))
    # pose translation
    for k in range(3):
        h = 1e-6
        tp = inst.pose.translation.copy()
        tm = inst.pose.translation.copy()
        tp[k] += h
        tm[k] -= h
        vp = instantiate_concept(
            reg, inst.with_params(pose=RigidTransform(inst.pose.quaternion, tp)),
            resolution, strict=False).merged.vertices
        vm = instantiate_concept(
            reg, inst.with_params(pose=RigidTransform(inst.pose.quaternion, tm)),
            resolution, strict=False).merged.vertices
        cols.append((vp - vm) / (2 * h))
    # rotation tangent about the current pose
    from conceptforge.geometry import rotvec_to_matrix
    for k in range(3):
        h = 1e-6
        w = np.zeros(3)
        w[k] = h
        rp = rotvec_to_matrix(w) @ inst.pose.matrix()
        rm = rotvec_to_matrix(-w) @ inst.pose.matrix()
        vp = instantiate_concept(
            reg, inst.with_params(pose=RigidTransform.from_matrix(
                rp, inst.pose.translation)), resolution, strict=False
        ).merged.vertices
        vm = instantiate_concept(
            reg, inst.with_params(pose=RigidTransform.from_matrix(
                rm, inst.pose.translation)), resolution, strict=False
        ).merged.vertices
        cols.append((vp - vm) / (2 * h))
    return np.stack(cols, axis=-1)


def seeded_instance(reg, tid, rng):
    tdef = reg.get(tid)
    cont = np.array([s.lower + (s.upper - s.lower) * rng.uniform(0.25, 0.75)
                     for s in tdef.param_specs])
    pose = RigidTransform.from_rotvec(rng.standard_normal(3) * 0.5,
                                      rng.standard_normal(3) * 0.3)
    disc = (np.array([s.default for s in tdef.discrete_specs], dtype=np.int64)
            if tdef.is_concept else np.zeros(0, dtype=np.int64))
    return ConceptInstance(tid, cont, disc, pose)


class TestJacobians:
    def test_cuboid_width_derivative(self, reg):
        inst = reg.default_instance("cuboid")
        mesh, jac = instantiate_with_jacobian(reg, inst, 4)
        col = jac.matrix[:, 0, jac.param_names.index("width")]
        signs = np.sign(mesh.vertices[:, 0])
        assert np.allclose(col, signs * 0.5, atol=1e-12)

    def test_translation_columns_are_identity(self, reg):
        inst = reg.default_instance("mug")
        _, jac = instantiate_with_jacobian(reg, inst, 6)
        for k, name in enumerate(("pose_tx", "pose_ty", "pose_tz")):
            col = jac.matrix[:, :, jac.param_names.index(name)]
            expect = np.zeros((len(col), 3))
            expect[:, k] = 1.0
            assert np.allclose(col, expect, atol=1e-12)

    @pytest.mark.parametrize("seed", [0, 1])
    def test_all_templates_match_finite_differences(self, reg, seed):
        rng = np.random.default_rng(seed)
        worst = 0.0
        for tid in reg.ids():
            inst = seeded_instance(reg, tid, rng)
            mesh, jac = instantiate_with_jacobian(reg, inst, 6)
            num = fd_jacobian(reg, inst, 6)
            scale = max(np.abs(num).max(), 1.0)
            err = np.abs(jac.matrix - num).max() / scale
            worst = max(worst, err)
            assert err <= 1e-4, f"{tid}: jacobian error {err:.2e}"
        assert worst <= 1e-4

    def test_one_sided_at_bound(self, reg):
        # the ellipsoid's truncation parameter defaults to its lower bound
        inst = reg.default_instance("ellipsoid")
        tdef = reg.get("ellipsoid")
        at_bound = [s.default == s.lower or s.default == s.upper
                    for s in tdef.param_specs]
        assert any(at_bound)
        _, jac = instantiate_with_jacobian(reg, inst, 8)
        num = fd_jacobian(reg, inst, 8)
        scale = max(np.abs(num).max(), 1.0)
        assert np.abs(jac.matrix - num).max() / scale <= 1e-3

    def test_jacobian_mesh_equals_plain_instantiation(self, reg):
        for tid in ("cylinder", "mug", "table"):
            inst = reg.default_instance(tid)
            plain = instantiate_concept(reg, inst, 8).merged
            mesh, _ = instantiate_with_jacobian(reg, inst, 8)
            assert np.allclose(mesh.vertices, plain.vertices, atol=1e-12)
            assert np.array_equal(mesh.faces, plain.faces)
