"""Forward-mode derivatives over small parameter vectors.

A Jet carries an array of values plus the partials of every entry with
respect to K seed parameters (trailing axis). Template vertex maps and
constraint rules are written against the helpers here so the same code
path serves both plain instancing (floats in, floats out) and Jacobian
instancing (Jets in, Jets out).
"""
from __future__ import annotations

import numpy as np


class Jet:
    """value array of shape S with partials of shape S + (K,)."""

    __slots__ = ("val", "dot")

    # defer numpy binary ops to the reflected Jet operators
    __array_ufunc__ = None

    def __init__(self, val, dot):
        self.val = np.asarray(val, dtype=np.float64)
        self.dot = np.asarray(dot, dtype=np.float64)

    @property
    def n_params(self) -> int:
        return self.dot.shape[-1]

    @staticmethod
    def constant(val, k: int) -> "Jet":
        val = np.asarray(val, dtype=np.float64)
        return Jet(val, np.zeros(val.shape + (k,)))

    @staticmethod
    def seed_vector(values) -> list:
        """One scalar Jet per entry, with identity seeding."""
        values = np.asarray(values, dtype=np.float64)
        k = len(values)
        eye = np.eye(k)
        return [Jet(values[i], eye[i]) for i in range(k)]

    def _coerce(self, other) -> "Jet":
        if isinstance(other, Jet):
            return other
        return Jet.constant(other, self.n_params)

    def __add__(self, other):
        o = self._coerce(other)
        return Jet(self.val + o.val, self.dot + o.dot)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        return Jet(self.val - o.val, self.dot - o.dot)

    def __rsub__(self, other):
        o = self._coerce(other)
        return Jet(o.val - self.val, o.dot - self.dot)

    def __mul__(self, other):
        o = self._coerce(other)
        return Jet(self.val * o.val,
                   self.dot * o.val[..., None] + o.dot * self.val[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        inv = 1.0 / o.val
        return Jet(self.val * inv,
                   (self.dot * o.val[..., None] - o.dot * self.val[..., None])
                   * (inv * inv)[..., None])

    def __rtruediv__(self, other):
        return self._coerce(other).__truediv__(self)

    def __neg__(self):
        return Jet(-self.val, -self.dot)

    def __getitem__(self, key):
        return Jet(self.val[key], self.dot[key])


def value(x):
    """Plain float/array view of a Jet or passthrough for numbers."""
    return x.val if isinstance(x, Jet) else x


def _unary(x, f, df):
    if isinstance(x, Jet):
        return Jet(f(x.val), df(x.val)[..., None] * x.dot)
    return f(x)


def sin(x):
    return _unary(x, np.sin, np.cos)


def cos(x):
    return _unary(x, np.cos, lambda v: -np.sin(v))


def sqrt(x):
    return _unary(x, np.sqrt, lambda v: 0.5 / np.sqrt(v))


def relu(x):
    """max(x, 0); derivative zero on the inactive side."""
    return _unary(x, lambda v: np.maximum(v, 0.0),
                  lambda v: (v > 0.0).astype(np.float64))


def clamp(x, lo: float, hi: float):
    """Clip to [lo, hi]; derivative zero where the bound is active."""
    if isinstance(x, Jet):
        inside = ((x.val > lo) & (x.val < hi)).astype(np.float64)
        return Jet(np.clip(x.val, lo, hi), inside[..., None] * x.dot)
    return np.clip(x, lo, hi)


def where(mask, a, b):
    """Elementwise select; mask is a plain boolean array."""
    mask = np.asarray(mask)
    if isinstance(a, Jet) or isinstance(b, Jet):
        ref = a if isinstance(a, Jet) else b
        a = ref._coerce(a)
        b = ref._coerce(b)
        return Jet(np.where(mask, a.val, b.val),
                   np.where(mask[..., None], a.dot, b.dot))
    return np.where(mask, a, b)


def stack3(x, y, z):
    """Stack three same-shape components along a new last axis."""
    if any(isinstance(c, Jet) for c in (x, y, z)):
        ref = next(c for c in (x, y, z) if isinstance(c, Jet))
        x, y, z = (ref._coerce(c) for c in (x, y, z))
        shape = np.broadcast_shapes(x.val.shape, y.val.shape, z.val.shape)
        comps_v = [np.broadcast_to(c.val, shape) for c in (x, y, z)]
        comps_d = [np.broadcast_to(c.dot, shape + (ref.n_params,)) for c in (x, y, z)]
        return Jet(np.stack(comps_v, axis=-1), np.stack(comps_d, axis=-2))
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def component(pts, i: int):
    """i-th coordinate of a (..., 3) point array."""
    return pts[..., i] if not isinstance(pts, Jet) else Jet(pts.val[..., i], pts.dot[..., i, :])


# ---------------------------------------------------------------------------
# small rotation/transform algebra over scalar entries (floats or Jets)
# ---------------------------------------------------------------------------

def identity_rotation():
    return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]


def rot_x(angle):
    c, s = cos(angle), sin(angle)
    return [[1.0, 0.0, 0.0], [0.0, c, -1.0 * s], [0.0, s, c]]


def rot_y(angle):
    c, s = cos(angle), sin(angle)
    return [[c, 0.0, s], [0.0, 1.0, 0.0], [-1.0 * s, 0.0, c]]


def rot_z(angle):
    c, s = cos(angle), sin(angle)
    return [[c, -1.0 * s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]


def mat_mul(a, b):
    return [[sum_scalars(a[i][k] * b[k][j] for k in range(3)) for j in range(3)]
            for i in range(3)]


def mat_vec(a, v):
    return [sum_scalars(a[i][k] * v[k] for k in range(3)) for i in range(3)]


def sum_scalars(items):
    total = None
    for it in items:
        total = it if total is None else total + it
    return total


def rotvec_matrix_smooth(wx, wy, wz):
    """Rodrigues matrix from scalar components, smooth through zero.

    Uses series coefficients below a small angle so derivatives exist at
    the identity (where the optimizer evaluates every step).
    """
    th2 = wx * wx + wy * wy + wz * wz
    small = value(th2) < 1e-12
    if small:
        a = 1.0 - th2 * (1.0 / 6.0)
        b = 0.5 - th2 * (1.0 / 24.0)
    else:
        th = sqrt(th2)
        a = sin(th) / th
        b = (1.0 - cos(th)) / th2
    # I + a [w]x + b [w]x^2
    return [
        [1.0 - b * (wy * wy + wz * wz), b * wx * wy - a * wz, b * wx * wz + a * wy],
        [b * wx * wy + a * wz, 1.0 - b * (wx * wx + wz * wz), b * wy * wz - a * wx],
        [b * wx * wz - a * wy, b * wy * wz + a * wx, 1.0 - b * (wx * wx + wy * wy)],
    ]


def apply_rt(rot, trans, pts):
    """rot (3x3 scalar entries) and trans (3 scalars) applied to (..., 3) points."""
    px, py, pz = component(pts, 0), component(pts, 1), component(pts, 2)
    out = []
    for i in range(3):
        out.append(rot[i][0] * px + rot[i][1] * py + rot[i][2] * pz + trans[i])
    return stack3(*out)


def jet_points(values, k: int) -> Jet:
    """Constant (N, 3) point Jet with K zero partials."""
    return Jet.constant(values, k)
