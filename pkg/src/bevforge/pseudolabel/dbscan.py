"""Deterministic DBSCAN."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


@dataclass
class ClusterSet:
    assignment: np.ndarray  # N cluster ids, -1 = noise
    n_clusters: int

    def members(self, cid):
        return np.flatnonzero(self.assignment == cid)


def dbscan(points, eps, min_pts, weights=None) -> ClusterSet:
    """Density-based clustering with a fixed visiting order.

    A point is core when at least ``min_pts`` points (itself included) lie
    within distance ``eps``. Points are scanned in index order; each new
    core point seeds a cluster that is grown breadth-first with neighbour
    lists sorted by index. A border point within reach of several clusters
    therefore joins the one whose lowest-index core comes first.

    ``weights`` (default all ones) lets one point stand for several
    coincident ones: a point is core when the weights within ``eps`` sum to
    at least ``min_pts``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return ClusterSet(labels, 0)

    neighbours = cKDTree(pts).query_ball_point(pts, eps, return_sorted=True)
    if weights is None:
        core = np.array([len(nb) >= min_pts for nb in neighbours])
    else:
        w = np.asarray(weights, dtype=np.float64)
        core = np.array([w[nb].sum() >= min_pts for nb in neighbours])

    cid = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cid
        queue = deque([i])
        while queue:
            j = queue.popleft()
            for k in neighbours[j]:
                if labels[k] == -1:
                    labels[k] = cid
                    if core[k]:
                        queue.append(k)
        cid += 1
    return ClusterSet(labels, cid)
