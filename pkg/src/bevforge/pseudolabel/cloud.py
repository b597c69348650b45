"""Lifting labelled FV pixels into 3D and accumulating them over a window."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..classes import DYNAMIC_CLASSES, IGNORE
from ..errors import EmptyWindow, ShapeMismatch
from ..geometry import CameraIntrinsics, Pose, project_unchecked, relative_pose, transform_points


@dataclass
class Frame:
    semantic: np.ndarray  # H x W uint8, 255 = ignore
    depth: np.ndarray  # H x W float32 metres (z), <= 0 = invalid
    pose: Pose  # camera-to-world
    frame_id: int = 0


@dataclass
class FrameWindow:
    frames: list
    anchor: int = 0  # position of t0 inside ``frames``
    stride: int = 1

    def __post_init__(self):
        if not self.frames:
            raise EmptyWindow("window holds no frames")
        if not 0 <= self.anchor < len(self.frames):
            raise EmptyWindow("anchor frame not in window")
        shape = self.frames[0].semantic.shape
        for f in self.frames:
            if f.semantic.shape != shape or f.depth.shape != shape:
                raise ShapeMismatch("all frames in a window must share dimensions")

    @property
    def anchor_frame(self):
        return self.frames[self.anchor]


@dataclass
class SemanticPointCloud:
    points: np.ndarray  # N x 3, t0 camera frame
    labels: np.ndarray  # N uint8
    frame_ids: np.ndarray  # N int64

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros(0, np.uint8), np.zeros(0, np.int64))

    def __len__(self):
        return len(self.labels)

    def subset(self, mask):
        return SemanticPointCloud(self.points[mask], self.labels[mask], self.frame_ids[mask])

    @classmethod
    def concat(cls, clouds):
        clouds = list(clouds)
        if not clouds:
            return cls.empty()
        return cls(
            np.concatenate([c.points for c in clouds]),
            np.concatenate([c.labels for c in clouds]),
            np.concatenate([c.frame_ids for c in clouds]),
        )


def lift_semantics(frame: Frame, K: CameraIntrinsics, T_k0: Pose) -> SemanticPointCloud:
    """Back-project every labelled pixel with positive depth, then map it into t0."""
    sem = np.asarray(frame.semantic)
    depth = np.asarray(frame.depth, dtype=np.float64)
    if sem.shape != depth.shape or sem.shape != (K.height, K.width):
        raise ShapeMismatch(f"semantic {sem.shape}, depth {depth.shape}, camera {(K.height, K.width)}")
    valid = (sem != IGNORE) & (depth > 0) & np.isfinite(depth)
    v, u = np.nonzero(valid)
    z = depth[v, u]
    pts = np.stack([(u - K.cx) / K.fx * z, (v - K.cy) / K.fy * z, z], axis=1)
    pts = transform_points(T_k0, pts)
    return SemanticPointCloud(pts, sem[v, u].astype(np.uint8), np.full(len(z), frame.frame_id, np.int64))


def accumulate(window: FrameWindow, K: CameraIntrinsics) -> SemanticPointCloud:
    """Union of all lifted frames in the anchor camera frame, in frame order."""
    anchor_pose = window.anchor_frame.pose
    return SemanticPointCloud.concat(
        lift_semantics(f, K, relative_pose(f.pose, anchor_pose)) for f in window.frames
    )


def filter_dynamic(cloud: SemanticPointCloud, s0, K: CameraIntrinsics,
                   dynamic_classes=DYNAMIC_CLASSES) -> SemanticPointCloud:
    """Drop dynamic points whose t0 projection disagrees with the t0 labels.

    Static points always pass. A dynamic point survives only if it lies in
    front of the t0 camera, lands inside the image (nearest pixel), and the
    t0 label there equals its own class.
    """
    s0 = np.asarray(s0)
    dyn = np.isin(cloud.labels, np.asarray(dynamic_classes, dtype=np.int64))
    keep = ~dyn
    idx = np.flatnonzero(dyn)
    if len(idx):
        u, v, z = project_unchecked(cloud.points[idx], K)
        ui = np.floor(u + 0.5)
        vi = np.floor(v + 0.5)
        ok = (z > 0) & (ui >= 0) & (ui < K.width) & (vi >= 0) & (vi < K.height)
        ok &= np.isfinite(u) & np.isfinite(v)
        hit = np.zeros(len(idx), dtype=bool)
        sel = np.flatnonzero(ok)
        hit[sel] = s0[vi[sel].astype(np.int64), ui[sel].astype(np.int64)] == cloud.labels[idx[sel]]
        keep[idx[hit]] = True
    return cloud.subset(keep)
