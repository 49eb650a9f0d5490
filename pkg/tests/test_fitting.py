"""Optimizer behavior: determinism, descent, edge cases."""
import numpy as np
import pytest

from conceptforge.fitting import (FitConfig, NonFiniteLossError, default_init,
                                  fit_continuous, fit_with_discrete)
from conceptforge.geometry import (PointCloud, RigidTransform, sample_surface)
from conceptforge.templates import ConceptInstance, builtin_registry, \
    instantiate_concept


@pytest.fixture(scope="module")
def reg():
    return builtin_registry()


def cylinder_target(reg, radius=0.3, height=0.8, n=800, seed=0):
    inst = reg.default_instance("cylinder").with_params(
        continuous=np.array([radius, height]))
    mesh = instantiate_concept(reg, inst, 16).merged
    return sample_surface(mesh, n, seed=seed)


def quick_cfg(**kw):
    base = dict(max_iters=10, step_size=0.05, mesh_samples=256,
                resolution=10, seed=0, max_corr_points=500)
    base.update(kw)
    return FitConfig(**base)


class TestFitConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            FitConfig(step_size=0.0)
        with pytest.raises(ValueError):
            FitConfig(max_iters=-1)
        with pytest.raises(ValueError):
            FitConfig(resolution=2)
        with pytest.raises(ValueError):
            FitConfig(convergence_tol=2.0)


class TestDefaultInit:
    def test_cylinder_dimensions_from_extents(self, reg):
        target = cylinder_target(reg)
        init = default_init(reg, "cylinder", target)
        ex = target.extents()
        assert abs(init.continuous[0] - (ex[0] + ex[1]) / 4) < 1e-9
        assert abs(init.continuous[1] - ex[2]) < 1e-9
        assert np.allclose(init.pose.translation, target.centroid(), atol=1e-9)

    def test_values_clipped_to_bounds(self, reg):
        tiny = PointCloud(np.array([[0.0, 0.0, 0.0], [1e-6, 1e-6, 1e-6]]))
        init = default_init(reg, "cylinder", tiny)
        tdef = reg.get("cylinder")
        for spec, v in zip(tdef.param_specs, init.continuous):
            assert spec.lower <= v <= spec.upper

    def test_empty_cloud_raises(self, reg):
        with pytest.raises(ValueError):
            default_init(reg, "cylinder", PointCloud(np.zeros((0, 3))))


class TestFitContinuous:
    def test_zero_iterations_returns_init(self, reg):
        target = cylinder_target(reg)
        init = default_init(reg, "cylinder", target)
        res = fit_continuous(reg, "cylinder", init, target,
                             quick_cfg(max_iters=0))
        assert res.iterations_used == 0
        assert res.final_loss == res.initial_loss
        assert np.array_equal(res.best_instance.continuous, init.continuous)
        assert len(res.loss_trace) == 1

    def test_loss_decreases_from_poor_init(self, reg):
        target = cylinder_target(reg)
        init = default_init(reg, "cylinder", target).with_params(
            continuous=np.array([0.42, 0.55]))
        res = fit_continuous(reg, "cylinder", init, target,
                             quick_cfg(max_iters=40, step_size=0.03))
        assert res.final_loss < res.initial_loss

    def test_best_is_trace_minimum(self, reg):
        target = cylinder_target(reg)
        init = default_init(reg, "cylinder", target)
        res = fit_continuous(reg, "cylinder", init, target,
                             quick_cfg(max_iters=20))
        assert res.final_loss == min(res.loss_trace)

    def test_deterministic(self, reg):
        target = cylinder_target(reg)
        init = default_init(reg, "cylinder", target)
        a = fit_continuous(reg, "cylinder", init, target, quick_cfg())
        b = fit_continuous(reg, "cylinder", init, target, quick_cfg())
        assert a.loss_trace == b.loss_trace
        assert np.array_equal(a.best_instance.continuous,
                              b.best_instance.continuous)
        assert np.array_equal(a.best_instance.pose.quaternion,
                              b.best_instance.pose.quaternion)

    def test_translation_equivariance(self, reg):
        target = cylinder_target(reg)
        init = default_init(reg, "cylinder", target)
        shift = RigidTransform(np.array([1.0, 0.0, 0.0, 0.0]),
                               np.array([2.0, -1.0, 0.5]))
        moved = target.transformed(shift)
        minit = init.with_params(pose=shift.compose(init.pose))
        a = fit_continuous(reg, "cylinder", init, target, quick_cfg())
        b = fit_continuous(reg, "cylinder", minit, moved, quick_cfg())
        assert np.allclose(a.loss_trace, b.loss_trace, atol=1e-7)
        assert np.allclose(a.best_instance.continuous,
                           b.best_instance.continuous, atol=1e-6)

    def test_progress_callback_sees_trace(self, reg):
        target = cylinder_target(reg)
        init = default_init(reg, "cylinder", target)
        seen = []
        res = fit_continuous(reg, "cylinder", init, target,
                             quick_cfg(max_iters=5), progress=seen.append)
        assert tuple(seen) == res.loss_trace

    def test_template_mismatch_raises(self, reg):
        target = cylinder_target(reg)
        init = default_init(reg, "cuboid", target)
        with pytest.raises(ValueError):
            fit_continuous(reg, "cylinder", init, target, quick_cfg())

    def test_empty_target_raises(self, reg):
        init = reg.default_instance("cylinder")
        with pytest.raises(ValueError):
            fit_continuous(reg, "cylinder", init, PointCloud(np.zeros((0, 3))),
                           quick_cfg())

    def test_overflowing_loss_raises(self, reg):
        # squared distances to a cloud this remote overflow to infinity
        far = PointCloud(np.full((4, 3), 1e200))
        init = reg.default_instance("cylinder")
        with pytest.raises(NonFiniteLossError):
            fit_continuous(reg, "cylinder", init, far, quick_cfg())


class TestFitWithDiscrete:
    def test_requires_discrete_params(self, reg):
        target = cylinder_target(reg)
        with pytest.raises(ValueError):
            fit_with_discrete(reg, "cylinder", target, quick_cfg())

    def test_returns_cell_in_range(self, reg):
        inst = reg.default_instance("legged_base")
        inst = ConceptInstance(inst.template_id, inst.continuous,
                               np.array([4]), inst.pose)
        mesh = instantiate_concept(reg, inst, 10).merged
        target = sample_surface(mesh, 1200, seed=1)
        cfg = quick_cfg(max_iters=3, multi_start=1, resolution=8)
        res = fit_with_discrete(reg, "legged_base", target, cfg)
        spec = reg.get("legged_base").discrete_specs[0]
        assert spec.min <= res.best_instance.discrete[0] <= spec.max
        assert res.final_loss <= res.initial_loss
