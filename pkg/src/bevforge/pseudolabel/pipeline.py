"""End-to-end BEV pseudolabel generation for one anchor frame."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..classes import DYNAMIC_CLASSES, STATIC_PRIORITY
from .bev import BevMap, BevSpec, densify, merge, rasterize_dynamic, rasterize_static
from .cloud import FrameWindow, accumulate, filter_dynamic
from .dbscan import dbscan
from .ellipse import box_coverage, fit_ellipse_ransac, oriented_extent

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PseudolabelConfig:
    bev: BevSpec = BevSpec()
    dbscan_eps: float = 0.8
    dbscan_min_pts: int = 8
    closing_iters: int = 2
    ransac_iters: int = 200
    ransac_tol: float = 0.05
    seed: int = 0
    dynamic_classes: tuple = DYNAMIC_CLASSES
    static_priority: tuple = STATIC_PRIORITY
    thin_fraction: float = 0.2  # dedup sub-cell size, as a fraction of the BEV cell
    min_coverage: float = 0.9  # boxes covering fewer cluster points fall back to the extent box
    max_oversize: float = 1.2  # ... as do boxes this much larger (in area) than the extent box

    @classmethod
    def from_run_config(cls, cfg):
        return cls(cfg.bev_spec, cfg.dbscan_eps, cfg.dbscan_min_pts, cfg.closing_iters,
                   cfg.ransac_iters, cfg.ransac_tol, cfg.seed, tuple(cfg.dynamic_classes))


def window_indices(anchor, n_frames, size=10, stride=2):
    """Frame indices sampled from the window starting at ``anchor``.

    The window spans ``size`` consecutive frames of which every
    ``stride``-th is used. Returns None when the window runs past the end.
    """
    if anchor + size > n_frames:
        return None
    return list(range(anchor, anchor + size, stride))


def valid_anchors(n_frames, size=10, stride=2):
    return [a for a in range(n_frames) if window_indices(a, n_frames, size, stride) is not None]


def thin_bev(xz, cell):
    """First point (in index order) of each occupied ``cell``-sized BEV bin.

    Returns ``(indices, counts)``: sorted indices of the representatives and
    the number of points each one stands for.
    """
    keys = np.floor(xz / cell).astype(np.int64)
    _, first, counts = np.unique(keys, axis=0, return_index=True, return_counts=True)
    order = np.argsort(first)
    return first[order], counts[order]


def instance_seed(seed, cls, cluster_id):
    return (int(seed), int(cls), int(cluster_id))


def fit_instance(points, seed, config: PseudolabelConfig):
    """Ellipse for one cluster, used as an oriented box with half-extents (a, b).

    The RANSAC ellipse is kept when its box encloses the cluster snugly.
    Vehicles are usually seen from two sides only; on such L-shaped
    clusters the conic tends to hug one face or balloon past the far
    corner, and the box then falls back to the cluster's oriented extent.
    """
    min_axis = config.bev.cell_size / 2
    e = fit_ellipse_ransac(points, seed, iters=config.ransac_iters,
                           inlier_tol=config.ransac_tol, min_axis=min_axis)
    ext = oriented_extent(points, min_axis=min_axis)
    if box_coverage(e, points) < config.min_coverage or e.a * e.b > config.max_oversize * ext.a * ext.b:
        return ext
    return e


def dynamic_instances(cloud, config: PseudolabelConfig):
    """Cluster each dynamic class in BEV and fit one ellipse per cluster."""
    instances = []
    for cls in config.dynamic_classes:
        pts = cloud.points[cloud.labels == cls][:, [0, 2]]
        if len(pts) == 0:
            continue
        keep, counts = thin_bev(pts, config.bev.cell_size * config.thin_fraction)
        pts = pts[keep]
        clusters = dbscan(pts, config.dbscan_eps, config.dbscan_min_pts, weights=counts)
        for cid in range(clusters.n_clusters):
            members = pts[clusters.members(cid)]
            if len(members) < 5:
                continue
            instances.append((fit_instance(members, instance_seed(config.seed, cls, cid), config), cls))
        log.debug("class %d: %d points, %d clusters", cls, len(pts), clusters.n_clusters)
    return instances


def generate_pseudolabel(window: FrameWindow, K, config: PseudolabelConfig | None = None) -> BevMap:
    return generate_with_instances(window, K, config)[0]


def generate_with_instances(window: FrameWindow, K, config: PseudolabelConfig | None = None):
    """Like :func:`generate_pseudolabel`, also returning the fitted ``(Ellipse, class)`` list."""
    config = config or PseudolabelConfig()
    cloud = accumulate(window, K)
    cloud = filter_dynamic(cloud, window.anchor_frame.semantic, K, config.dynamic_classes)
    statics = cloud.subset(np.isin(cloud.labels, config.static_priority))
    b_s = densify(rasterize_static(statics, config.bev, config.static_priority),
                  config.closing_iters, config.static_priority)
    instances = dynamic_instances(cloud, config)
    return merge(b_s, rasterize_dynamic(instances, config.bev)), instances
