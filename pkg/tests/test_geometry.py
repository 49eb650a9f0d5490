"""Geometry core: transforms, closest-point queries, sampling, loss."""
import numpy as np
import pytest

from conceptforge.geometry import (EmptyMeshError, PointCloud, RigidTransform,
                                   TriMesh, ZeroAreaMeshError, _brute_batch,
                                   apply_transform, brute_force_closest_point,
                                   closest_point_on_mesh, closest_points_batch,
                                   merge_meshes, point2mesh_loss,
                                   rotvec_to_matrix, sample_surface)


def unit_cube():
    v = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5)
                  for z in (-0.5, 0.5)], dtype=np.float64)
    f = np.array([
        [0, 1, 3], [0, 3, 2],      # x = -0.5
        [4, 6, 7], [4, 7, 5],      # x = +0.5
        [0, 4, 5], [0, 5, 1],      # y = -0.5
        [2, 3, 7], [2, 7, 6],      # y = +0.5
        [0, 2, 6], [0, 6, 4],      # z = -0.5
        [1, 5, 7], [1, 7, 3],      # z = +0.5
    ])
    return TriMesh(v, f)


def random_mesh(rng, n_faces=60):
    pts = rng.standard_normal((n_faces + 2, 3))
    faces = np.array([[i, i + 1, i + 2] for i in range(n_faces)])
    return TriMesh(pts, faces)


# ---------------------------------------------------------------------------
# rigid transforms
# ---------------------------------------------------------------------------

class TestRigidTransform:
    def test_identity(self):
        t = RigidTransform.identity()
        p = np.array([[1.0, 2.0, 3.0]])
        assert np.allclose(t.apply_points(p), p)

    def test_quaternion_normalized(self):
        t = RigidTransform(np.array([2.0, 0.0, 0.0, 0.0]), np.zeros(3))
        assert abs(np.linalg.norm(t.quaternion) - 1.0) < 1e-9

    def test_inverse_compose_is_identity(self):
        rng = np.random.default_rng(3)
        t = RigidTransform.from_rotvec(rng.standard_normal(3),
                                       rng.standard_normal(3))
        r = t.compose(t.inverse())
        assert np.allclose(r.matrix(), np.eye(3), atol=1e-9)
        assert np.allclose(r.translation, 0.0, atol=1e-9)

    def test_compose_associative(self):
        rng = np.random.default_rng(4)
        a, b, c = (RigidTransform.from_rotvec(rng.standard_normal(3),
                                              rng.standard_normal(3))
                   for _ in range(3))
        p = rng.standard_normal((10, 3))
        left = a.compose(b).compose(c).apply_points(p)
        right = a.compose(b.compose(c)).apply_points(p)
        assert np.allclose(left, right, atol=1e-9)

    def test_ninety_degree_z_rotation(self):
        t = RigidTransform.from_rotvec(np.array([0.0, 0.0, np.pi / 2]))
        out = t.apply_points(np.array([[1.0, 0.0, 0.0]]))
        assert np.allclose(out, [[0.0, 1.0, 0.0]], atol=1e-12)

    def test_apply_preserves_distances(self):
        rng = np.random.default_rng(5)
        t = RigidTransform.from_rotvec(rng.standard_normal(3),
                                       rng.standard_normal(3))
        p = rng.standard_normal((20, 3))
        q = t.apply_points(p)
        d0 = np.linalg.norm(p[:, None] - p[None, :], axis=-1)
        d1 = np.linalg.norm(q[:, None] - q[None, :], axis=-1)
        assert np.allclose(d0, d1, atol=1e-9)

    def test_round_trip_through_matrix(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            t = RigidTransform.from_rotvec(rng.standard_normal(3) * 2)
            back = RigidTransform.from_matrix(t.matrix(), t.translation)
            p = rng.standard_normal((5, 3))
            assert np.allclose(t.apply_points(p), back.apply_points(p),
                               atol=1e-9)

    def test_rotvec_to_matrix_small_angle(self):
        w = np.array([1e-12, 0.0, 0.0])
        assert np.allclose(rotvec_to_matrix(w), np.eye(3), atol=1e-9)


class TestTriMesh:
    def test_face_index_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            TriMesh(np.zeros((3, 3)), np.array([[0, 1, 5]]))

    def test_repeated_vertex_in_face_rejected(self):
        with pytest.raises(ValueError):
            TriMesh(np.eye(3), np.array([[0, 1, 1]]))

    def test_merge_offsets_faces(self):
        cube = unit_cube()
        merged = merge_meshes([cube, cube])
        assert merged.n_vertices == 16
        assert merged.n_faces == 24
        assert merged.faces[12:].min() == 8

    def test_apply_transform_round_trip(self):
        cube = unit_cube()
        t = RigidTransform.from_rotvec(np.array([0.1, 0.4, -0.2]),
                                       np.array([1.0, 2.0, 3.0]))
        back = apply_transform(apply_transform(cube, t), t.inverse())
        assert np.allclose(back.vertices, cube.vertices, atol=1e-9)


# ---------------------------------------------------------------------------
# closest point: brute force is the oracle
# ---------------------------------------------------------------------------

class TestClosestPoint:
    def test_cube_center_distance(self):
        hit = closest_point_on_mesh(np.zeros(3), unit_cube())
        assert abs(hit.distance - 0.5) < 1e-12

    def test_vertex_query_distance_zero(self):
        cube = unit_cube()
        for v in cube.vertices:
            hit = closest_point_on_mesh(v, cube)
            assert hit.distance < 1e-12
            assert np.allclose(hit.point, v, atol=1e-12)

    def test_surface_hit_invariants(self):
        rng = np.random.default_rng(11)
        cube = unit_cube()
        for p in rng.standard_normal((50, 3)):
            hit = closest_point_on_mesh(p, cube)
            assert abs(hit.barycentric.sum() - 1.0) < 1e-9
            assert np.all(hit.barycentric >= -1e-12)
            tri = cube.vertices[cube.faces[hit.face_index]]
            recon = hit.barycentric @ tri
            assert np.allclose(recon, hit.point, atol=1e-9)

    def test_accelerated_matches_brute_force(self):
        rng = np.random.default_rng(12)
        for trial in range(8):
            mesh = random_mesh(rng, 60)
            for p in rng.standard_normal((25, 3)) * 2:
                fast = closest_point_on_mesh(p, mesh)
                slow = brute_force_closest_point(p, mesh)
                assert fast.face_index == slow.face_index
                assert abs(fast.distance - slow.distance) < 1e-12

    def test_tie_breaks_to_lowest_face(self):
        # a point equidistant from two faces sharing an edge
        cube = unit_cube()
        hit = closest_point_on_mesh(np.array([0.0, 0.0, 0.0]), cube)
        slow = brute_force_closest_point(np.array([0.0, 0.0, 0.0]), cube)
        assert hit.face_index == slow.face_index

    def test_empty_mesh_raises(self):
        mesh = TriMesh(np.zeros((3, 3)), np.zeros((0, 3), dtype=np.int64))
        with pytest.raises(EmptyMeshError):
            closest_point_on_mesh(np.zeros(3), mesh)


class TestClosestPointsBatch:
    def test_matches_brute_on_random_meshes(self):
        rng = np.random.default_rng(13)
        for trial in range(6):
            mesh = random_mesh(rng, 80)
            pts = rng.standard_normal((120, 3)) * 1.5
            a, b, c = mesh.face_corners()
            f1, b1, c1, d1 = closest_points_batch(pts, mesh)
            f2, b2, c2, d2 = _brute_batch(pts, a, b, c)
            assert np.array_equal(f1, f2)
            assert np.abs(d1 - d2).max() == 0.0
            assert np.allclose(c1, c2, atol=1e-12)

    def test_matches_scalar_query(self):
        rng = np.random.default_rng(14)
        mesh = random_mesh(rng, 40)
        pts = rng.standard_normal((30, 3))
        faces, _, _, d2 = closest_points_batch(pts, mesh)
        for i, p in enumerate(pts):
            hit = closest_point_on_mesh(p, mesh)
            assert faces[i] == hit.face_index
            assert abs(np.sqrt(d2[i]) - hit.distance) < 1e-12


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

class TestSampleSurface:
    def test_deterministic(self):
        cube = unit_cube()
        a = sample_surface(cube, 500, seed=7)
        b = sample_surface(cube, 500, seed=7)
        assert np.array_equal(a.points, b.points)

    def test_points_lie_on_surface(self):
        cube = unit_cube()
        cloud = sample_surface(cube, 300, seed=1)
        _, _, _, d2 = closest_points_batch(cloud.points, cube)
        assert np.sqrt(d2).max() < 1e-9

    def test_area_weighting_on_cube(self):
        cube = unit_cube()
        cloud = sample_surface(cube, 6000, seed=7)
        # each axis-aligned side should catch about a sixth of the samples
        for axis in range(3):
            for sign in (-0.5, 0.5):
                on_side = np.sum(np.abs(cloud.points[:, axis] - sign) < 1e-9)
                assert abs(on_side - 1000) < 1000 * 0.12

    def test_single_sample(self):
        cloud = sample_surface(unit_cube(), 1, seed=0)
        assert len(cloud) == 1

    def test_zero_area_mesh_raises(self):
        flat = TriMesh(np.zeros((3, 3)), np.array([[0, 1, 2]]))
        with pytest.raises(ZeroAreaMeshError):
            sample_surface(flat, 10, seed=0)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

class TestPoint2MeshLoss:
    def test_self_fit_near_zero(self):
        cube = unit_cube()
        # drawing the reverse samples from the same seed pool makes them
        # coincide with the target points, so both terms vanish
        target = sample_surface(cube, 10000, seed=3)
        loss = point2mesh_loss(target, cube, mesh_samples=10000, seed=3)
        assert loss < 1e-6

    def test_translation_increases_loss(self):
        cube = unit_cube()
        target = sample_surface(cube, 2000, seed=5)
        losses = []
        for t in (0.0, 0.1, 0.2, 0.4):
            shifted = PointCloud(target.points + np.array([t, 0.0, 0.0]))
            losses.append(point2mesh_loss(shifted, cube,
                                          mesh_samples=1024, seed=5))
        assert losses == sorted(losses)

    def test_rigid_invariance(self):
        cube = unit_cube()
        target = PointCloud(sample_surface(cube, 1500, seed=9).points * 1.1)
        t = RigidTransform.from_rotvec(np.array([0.3, -0.1, 0.8]),
                                       np.array([0.5, -2.0, 1.0]))
        base = point2mesh_loss(target, cube, mesh_samples=1024, seed=2)
        moved = point2mesh_loss(target.transformed(t), cube.transformed(t),
                                mesh_samples=1024, seed=2)
        assert abs(base - moved) < 1e-7

    def test_empty_target_raises(self):
        with pytest.raises(ValueError):
            point2mesh_loss(PointCloud(np.zeros((0, 3))), unit_cube(),
                            mesh_samples=16, seed=0)
