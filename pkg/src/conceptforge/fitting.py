"""Concept parameter optimizer.

Continuous shape and pose parameters descend a bidirectional point-to-mesh
loss with analytic gradients from the template Jacobian; discrete
repetition parameters are handled by exhaustive enumeration over their
(small) grid. Everything is deterministic given the config seed.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .geometry import (PointCloud, RigidTransform, closest_points_batch,
                       points_from_face_samples, rotvec_to_matrix,
                       sample_surface_faces)
from .templates import (ConceptInstance, TemplateRegistry,
                        instantiate_with_jacobian)


class NonFiniteLossError(ArithmeticError):
    """The loss is not finite at an instance (degenerate geometry)."""


@dataclass(frozen=True)
class FitConfig:
    max_iters: int = 500
    step_size: float = 0.03
    convergence_tol: float = 1e-6
    mesh_samples: int = 2048
    resolution: int = 24
    seed: int = 0
    multi_start: int = 3
    # dense clouds descend on an evenly strided subsample of this size;
    # the reverse term still measures against the full cloud
    max_corr_points: int = 2000

    def __post_init__(self):
        if min(self.step_size, self.convergence_tol) <= 0 or self.max_iters < 0:
            raise ValueError("step_size and convergence_tol must be positive")
        if self.mesh_samples < 1 or self.resolution < 3 or self.multi_start < 1 \
                or self.max_corr_points < 1:
            raise ValueError("mesh_samples, resolution, multi_start must be positive")
        if self.convergence_tol >= 1:
            raise ValueError("convergence_tol must be < 1")


@dataclass(frozen=True)
class FitResult:
    best_instance: ConceptInstance
    final_loss: float
    initial_loss: float
    loss_trace: tuple
    iterations_used: int
    converged: bool


def _loss_and_grad(registry, inst, target_pts, target_tree, cfg):
    """Loss value plus d(loss)/d(shape params, pose translation, pose tangent)."""
    try:
        return _loss_and_grad_inner(registry, inst, target_pts, target_tree, cfg)
    except ValueError as exc:
        # scipy's kd-tree reports squared-distance overflow as a ValueError;
        # the loss is infinite for all practical purposes
        if "overflow" in str(exc).lower():
            return float("inf"), np.zeros(len(inst.continuous) + 6)
        raise


def _loss_and_grad_inner(registry, inst, target_pts, target_tree, cfg):
    mesh, jac = instantiate_with_jacobian(registry, inst, cfg.resolution)
    J = jac.matrix  # (N, 3, K)
    n_t = len(target_pts)

    fidx, bary, closest, d2 = closest_points_batch(target_pts, mesh)
    tri = mesh.faces[fidx]
    Jy = (bary[:, 0, None, None] * J[tri[:, 0]]
          + bary[:, 1, None, None] * J[tri[:, 1]]
          + bary[:, 2, None, None] * J[tri[:, 2]])
    diff = closest - target_pts
    loss_fwd = float(d2.mean())
    grad = (2.0 / n_t) * np.einsum("pi,pik->k", diff, Jy)

    sf, sb = sample_surface_faces(mesh, cfg.mesh_samples, cfg.seed)
    s = points_from_face_samples(mesh, sf, sb)
    dist, nn = target_tree.query(s)
    stri = mesh.faces[sf]
    Js = (sb[:, 0, None, None] * J[stri[:, 0]]
          + sb[:, 1, None, None] * J[stri[:, 1]]
          + sb[:, 2, None, None] * J[stri[:, 2]])
    sdiff = s - target_tree.data[nn]
    loss_rev = float(np.mean(dist ** 2))
    grad += (2.0 / cfg.mesh_samples) * np.einsum("pi,pik->k", sdiff, Js)

    return loss_fwd + loss_rev, grad


def _param_box(tdef, target: PointCloud):
    """Nominal [lower, upper] box used to normalize the step scale."""
    lo = [s.lower for s in tdef.param_specs]
    hi = [s.upper for s in tdef.param_specs]
    center = target.centroid()
    half = max(float(np.linalg.norm(target.extents())), 1e-3)
    lo += list(center - half) + [-np.pi] * 3
    hi += list(center + half) + [np.pi] * 3
    return np.array(lo), np.array(hi)


def fit_continuous(registry: TemplateRegistry, template_id: str,
                   init: ConceptInstance, target: PointCloud,
                   config: FitConfig, progress=None) -> FitResult:
    """Projected first-order descent over shape and pose parameters.

    Parameters are normalized to [0, 1] by their bounds; steps use Adam
    moments; the rotation tangent is folded into the pose quaternion after
    every step. The best instance seen is returned.
    """
    if init.template_id != template_id:
        raise ValueError("init instance does not match template id")
    if len(target) == 0:
        raise ValueError("empty target cloud")
    registry.validate_instance(init)
    tdef = registry.get(template_id)
    n_shape = len(init.continuous)
    k = n_shape + 6
    lo, hi = _param_box(tdef, target)
    span = hi - lo
    target_tree = target._kdtree()
    pts = target.points
    if len(pts) > config.max_corr_points:
        pts = pts[np.linspace(0, len(pts) - 1, config.max_corr_points).astype(int)]

    inst = init
    loss, grad = _loss_and_grad(registry, inst, pts, target_tree, config)
    if not np.isfinite(loss):
        raise NonFiniteLossError(
            f"non-finite loss at init of {template_id} "
            f"(params {np.array2string(init.continuous, precision=4)})")
    trace = [loss]
    best_loss, best_inst = loss, inst
    if progress is not None:
        progress(loss)

    m = np.zeros(k)
    v = np.zeros(k)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    flat_streak = 0
    converged = False
    iters = 0

    for it in range(config.max_iters):
        iters = it + 1
        theta = np.concatenate([inst.continuous, inst.pose.translation, np.zeros(3)])
        x = (theta - lo) / span
        gx = grad * span
        m = beta1 * m + (1 - beta1) * gx
        v = beta2 * v + (1 - beta2) * gx * gx
        mh = m / (1 - beta1 ** (it + 1))
        vh = v / (1 - beta2 ** (it + 1))
        x = np.clip(x - config.step_size * mh / (np.sqrt(vh) + eps), 0.0, 1.0)
        theta = lo + x * span

        omega = theta[n_shape + 3:]
        rot = rotvec_to_matrix(omega) @ inst.pose.matrix()
        pose = RigidTransform.from_matrix(rot, theta[n_shape:n_shape + 3])
        inst = inst.with_params(continuous=theta[:n_shape], pose=pose)

        loss, grad = _loss_and_grad(registry, inst, pts, target_tree, config)
        if not np.isfinite(loss):
            break
        trace.append(loss)
        if progress is not None:
            progress(loss)
        if loss < best_loss:
            best_loss, best_inst = loss, inst
        rel = abs(trace[-2] - trace[-1]) / max(abs(trace[-2]), 1e-300)
        flat_streak = flat_streak + 1 if rel < config.convergence_tol else 0
        if flat_streak >= 8:
            converged = True
            break

    return FitResult(best_inst, best_loss, trace[0], tuple(trace), iters, converged)


_ROLE_INIT = {
    "size_x": lambda e: e[0],
    "size_y": lambda e: e[1],
    "size_z": lambda e: e[2],
    "radius_x": lambda e: e[0] / 2,
    "radius_y": lambda e: e[1] / 2,
    "radius_z": lambda e: e[2] / 2,
    "radius_xy": lambda e: (e[0] + e[1]) / 4,
}


def default_init(registry: TemplateRegistry, template_id: str,
                 target: PointCloud) -> ConceptInstance:
    """Data-driven starting instance: centroid pose, extent-scaled sizes."""
    if len(target) == 0:
        raise ValueError("empty target cloud")
    tdef = registry.get(template_id)
    ext = target.extents()
    cont = []
    for s in tdef.param_specs:
        val = s.default
        if s.role in _ROLE_INIT:
            val = _ROLE_INIT[s.role](ext)
        cont.append(float(np.clip(val, s.lower, s.upper)))
    disc = (np.array([s.default for s in tdef.discrete_specs], dtype=np.int64)
            if tdef.is_concept else np.zeros(0, dtype=np.int64))
    pose = RigidTransform(np.array([1.0, 0.0, 0.0, 0.0]), target.centroid())
    return ConceptInstance(template_id, np.array(cont), disc, pose)


def _jittered(registry, inst, rng) -> ConceptInstance:
    tdef = registry.get(inst.template_id)
    cont = inst.continuous.copy()
    for i, s in enumerate(tdef.param_specs):
        cont[i] = np.clip(cont[i] + 0.08 * (s.upper - s.lower) * (rng.random() - 0.5),
                          s.lower, s.upper)
    rot = rotvec_to_matrix(0.15 * rng.standard_normal(3)) @ inst.pose.matrix()
    pose = RigidTransform.from_matrix(
        rot, inst.pose.translation + 0.02 * rng.standard_normal(3))
    return inst.with_params(continuous=cont, pose=pose)


def fit_with_discrete(registry: TemplateRegistry, template_id: str,
                      target: PointCloud, config: FitConfig) -> FitResult:
    """Enumerate the discrete grid, descend continuously per cell.

    Global best by final loss; exact ties go to the lexicographically
    smallest discrete vector.
    """
    tdef = registry.get(template_id)
    if not tdef.is_concept or not tdef.discrete_specs:
        raise ValueError(f"{template_id} has no discrete parameters")
    ranges = [range(s.min, s.max + 1) for s in tdef.discrete_specs]
    grid = list(itertools.product(*ranges))
    if not grid:
        raise ValueError("discrete grid is empty")

    base = default_init(registry, template_id, target)
    best: FitResult | None = None
    best_key = None
    for ci, cell in enumerate(grid):
        cell_inst = ConceptInstance(template_id, base.continuous,
                                    np.array(cell, dtype=np.int64), base.pose)
        for start in range(config.multi_start):
            if start == 0:
                init = cell_inst
            else:
                rng = np.random.default_rng([config.seed, ci, start])
                init = _jittered(registry, cell_inst, rng)
            res = fit_continuous(registry, template_id, init, target, config)
            key = (res.final_loss, cell)
            if best is None or key < best_key:
                best, best_key = res, key
    return best
