"""Pinhole camera model and rigid-body pose algebra.

Camera frame convention: x right, y down, z forward. Integer pixel
coordinates address pixel centers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveDepth


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform mapping points from a source frame into a target frame."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("pose entries must be finite")
        if orthonormality_error(R) >= 1e-9 or np.linalg.det(R) <= 0:
            raise ValueError("rotation must be orthonormal with determinant +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __call__(self, pts):
        return transform_points(self, pts)

    def __matmul__(self, other):
        return compose(self, other)

    def allclose(self, other, atol=1e-9):
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0, atol=atol)
        )

    def __repr__(self):
        return f"Pose(R={self.rotation.round(6).tolist()}, t={self.translation.round(6).tolist()})"


def rotation_x(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def translation(x, y, z):
    return Pose(np.eye(3), (x, y, z))


def rz(angle):
    return Pose(rotation_z(angle))


def ry(angle):
    return Pose(rotation_y(angle))


def compose(a, b):
    """Return the pose ``a o b`` (apply ``b`` first, then ``a``)."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(a):
    Rt = a.rotation.T
    return Pose(Rt, -Rt @ a.translation)


def transform_points(T, pts):
    """Apply ``R p + t`` to a single point (3,) or a batch (N, 3)."""
    pts = np.asarray(pts, dtype=np.float64)
    return pts @ T.rotation.T + T.translation


def project_unchecked(pts, K):
    """Vectorised projection without the depth check; returns u, v, z arrays."""
    pts = np.asarray(pts, dtype=np.float64)
    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * x / z + K.cx
        v = K.fy * y / z + K.cy
    return u, v, z


def project(p, K):
    """Project camera-frame point(s) to pixel coordinates.

    Returns ``(pixels, depth)`` where ``pixels`` has shape (..., 2). Points
    outside the image are returned as-is; callers check bounds.
    """
    u, v, z = project_unchecked(p, K)
    if np.any(z <= 0):
        raise NonPositiveDepth("point at or behind the camera plane")
    return np.stack([u, v], axis=-1), z


def unproject(px, depth, K):
    """Back-project pixel(s) with metric depth (z) into the camera frame."""
    px = np.asarray(px, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise NonPositiveDepth("depth must be positive")
    x = (px[..., 0] - K.cx) / K.fx * depth
    y = (px[..., 1] - K.cy) / K.fy * depth
    return np.stack([x, y, np.broadcast_to(depth, x.shape)], axis=-1)


def relative_pose(cam_to_world_src, cam_to_world_dst):
    """Pose mapping source-camera coordinates into destination-camera coordinates."""
    return compose(invert(cam_to_world_dst), cam_to_world_src)


def orthonormality_error(R):
    R = np.asarray(R, dtype=np.float64)
    return float(np.abs(R.T @ R - np.eye(3)).max())


def nearest_rotation(R):
    """Project a near-rotation onto SO(3) via SVD."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=np.float64))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt
