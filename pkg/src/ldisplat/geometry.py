"""Pinhole cameras and disparity-homogeneous forward projection.

Pixel ``(i, j)`` (row, column) sits at continuous coordinate ``(x=j, y=i)``.
Cameras follow the x-right, y-down, z-forward convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

#: Projections whose third homogeneous coordinate falls at or below this are
#: flagged invalid (at or behind the target camera plane).
MIN_DEPTH_COORD = 1e-8


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"intrinsics must be finite, got {vals}")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    @classmethod
    def from_fov(cls, width: int, height: int, focal_scale: float = 1.1) -> "Intrinsics":
        """Square-pixel camera with focal length ``focal_scale * width``, centered."""
        f = focal_scale * width
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0)


@dataclass(frozen=True)
class RigidTransform:
    """Maps points as ``X' = rotation @ X + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("rigid transform must be finite")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9, rtol=0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must have determinant +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return RigidTransform(
            self.rotation @ other.rotation, self.rotation @ other.translation + self.translation
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation


@dataclass(frozen=True)
class ViewTransform:
    source_intrinsics: Intrinsics
    target_intrinsics: Intrinsics
    relative: RigidTransform = field(default_factory=RigidTransform)

    def inverse(self) -> "ViewTransform":
        return ViewTransform(self.target_intrinsics, self.source_intrinsics, self.relative.inverse())

    def with_target_intrinsics(self, k: Intrinsics) -> "ViewTransform":
        return ViewTransform(self.source_intrinsics, k, self.relative)


class ProjectedPoint(NamedTuple):
    x: float
    y: float
    d: float
    valid: bool


class ProjectionJacobian(NamedTuple):
    dx_dd: float
    dy_dd: float
    dd_dd: float


def rotation_from_euler(rx: float, ry: float, rz: float) -> np.ndarray:
    """Rotation ``Rz @ Ry @ Rx`` from angles in radians."""
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    rot_x = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    rot_y = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rot_z = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rot_z @ rot_y @ rot_x


def scale_intrinsics(k: Intrinsics, factor: float) -> Intrinsics:
    """Intrinsics for an image resized by ``factor`` (cell-center convention)."""
    if not factor > 0:
        raise ValueError(f"scale factor must be positive, got {factor}")
    return Intrinsics(
        k.fx * factor,
        k.fy * factor,
        (k.cx + 0.5) * factor - 0.5,
        (k.cy + 0.5) * factor - 0.5,
    )


def project_points(x, y, d, view: ViewTransform, with_jacobian: bool = False):
    """Vectorized forward projection of source pixels with inverse depth ``d``.

    Returns ``(xt, yt, dt, valid)`` arrays, plus ``(dxt_dd, dyt_dd, ddt_dd)``
    when ``with_jacobian`` is set. Invalid entries carry NaN coordinates and
    zero derivatives.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    ks, kt = view.source_intrinsics, view.target_intrinsics
    r = view.relative.rotation
    t = view.relative.translation

    ux = (x - ks.cx) / ks.fx
    uy = (y - ks.cy) / ks.fy
    # rotated ray; its z component is also d(z')/d(d) minus d * t_z
    rx = r[0, 0] * ux + r[0, 1] * uy + r[0, 2]
    ry = r[1, 0] * ux + r[1, 1] * uy + r[1, 2]
    rz = r[2, 0] * ux + r[2, 1] * uy + r[2, 2]
    px = rx + t[0] * d
    py = ry + t[1] * d
    pz = rz + t[2] * d

    valid = pz > MIN_DEPTH_COORD
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(valid, 1.0 / np.where(valid, pz, 1.0), np.nan)
        xt = kt.fx * px * inv + kt.cx
        yt = kt.fy * py * inv + kt.cy
        dt = d * inv
    if not with_jacobian:
        return xt, yt, dt, valid

    inv2 = inv * inv
    dxt = np.where(valid, kt.fx * (t[0] * pz - px * t[2]) * inv2, 0.0)
    dyt = np.where(valid, kt.fy * (t[1] * pz - py * t[2]) * inv2, 0.0)
    ddt = np.where(valid, rz * inv2, 0.0)
    return xt, yt, dt, valid, (dxt, dyt, ddt)


def project(p, d: float, view: ViewTransform) -> ProjectedPoint:
    """Project source pixel ``p = (x, y)`` with inverse depth ``d`` into the target."""
    xt, yt, dt, valid = project_points(p[0], p[1], d, view)
    return ProjectedPoint(float(xt), float(yt), float(dt), bool(valid))


def project_gradient(p, d: float, view: ViewTransform) -> ProjectionJacobian:
    """Derivatives of the projected ``(x, y, d)`` with respect to source inverse depth."""
    _, _, _, valid, jac = project_points(p[0], p[1], d, view, with_jacobian=True)
    if not valid:
        raise ValueError(f"point {tuple(p)} with inverse depth {d} projects behind the target camera")
    return ProjectionJacobian(float(jac[0]), float(jac[1]), float(jac[2]))


def pixel_grid(width: int, height: int):
    """Continuous ``(x, y)`` coordinates of every pixel, each shaped ``(height, width)``."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return xs, ys
