"""Robust ellipse fitting for clustered BEV points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import Degenerate


@dataclass(frozen=True)
class Ellipse:
    x_c: float
    z_c: float
    a: float  # semi-major, along theta
    b: float  # semi-minor
    theta: float  # radians in [0, pi), measured from +x towards +z

    @property
    def area(self):
        return np.pi * self.a * self.b


def make_rng(seed):
    """Counter-based generator; ``seed`` may be an int or a tuple of ints."""
    if isinstance(seed, np.random.Generator):
        return seed
    ss = np.random.SeedSequence(list(seed) if isinstance(seed, (tuple, list)) else seed)
    return np.random.Generator(np.random.Philox(ss))


def design_rows(pts):
    x, y = pts[..., 0], pts[..., 1]
    return np.stack([x * x, x * y, y * y, x, y, np.ones_like(x)], axis=-1)


def conic_value(conic, pts):
    """Evaluate a conic (6,) at points (M, 2)."""
    return design_rows(pts) @ np.asarray(conic)


def sampson_residual(conic, pts):
    """First-order geometric distance ``|Q(p)| / |grad Q(p)|`` of points to conics."""
    conic = np.atleast_2d(conic)
    A, B, C, D, E, _ = (conic[:, k:k + 1] for k in range(6))
    x, y = pts[:, 0][None, :], pts[:, 1][None, :]
    q = np.einsum("nk,mk->nm", conic, design_rows(pts))
    gx = 2 * A * x + B * y + D
    gy = B * x + 2 * C * y + E
    g = np.sqrt(gx * gx + gy * gy)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.abs(q) / g
    return np.where(np.isfinite(r), r, np.inf)


def conic_through_points(samples):
    """Null vectors of the 5x6 design systems, batched over (N, 5, 2) samples.

    Returns ``(conics, ok)``; ``ok`` is False where the five points do not
    determine a unique conic.
    """
    M = design_rows(samples)
    _, s, vt = np.linalg.svd(M)
    ok = s[:, -1] > 1e-10 * s[:, 0]
    return vt[:, -1, :], ok


def fit_conic_lsq(pts):
    """Ellipse-specific direct least-squares fit (constraint 4AC - B^2 = 1).

    Uses the numerically stable block decomposition of the scatter matrix.
    Returns None if no ellipse solution exists.
    """
    d1 = np.stack([pts[:, 0] ** 2, pts[:, 0] * pts[:, 1], pts[:, 1] ** 2], axis=1)
    d2 = np.stack([pts[:, 0], pts[:, 1], np.ones(len(pts))], axis=1)
    s1, s2, s3 = d1.T @ d1, d1.T @ d2, d2.T @ d2
    try:
        T = -np.linalg.solve(s3, s2.T)
    except np.linalg.LinAlgError:
        return None
    m = s1 + s2 @ T
    m = np.array([m[2] / 2, -m[1], m[0] / 2])
    w, v = np.linalg.eig(m)
    v = np.real(v)
    cond = 4 * v[0] * v[2] - v[1] ** 2
    cand = np.flatnonzero((cond > 0) & (np.abs(np.imag(w)) < 1e-12))
    if len(cand) == 0:
        return None
    a1 = v[:, cand[np.argmin(np.abs(np.real(w[cand])))]]
    return np.concatenate([a1, T @ a1])


def conic_to_ellipse(conic):
    """Center/axes/orientation of a conic, or None if it is not a real ellipse."""
    A, B, C, D, E, F = conic
    if not np.all(np.isfinite(conic)) or B * B - 4 * A * C >= 0:
        return None
    Q = np.array([[A, B / 2], [B / 2, C]])
    try:
        center = np.linalg.solve(2 * Q, [-D, -E])
    except np.linalg.LinAlgError:
        return None
    f0 = F + 0.5 * (D * center[0] + E * center[1])
    lam, vec = np.linalg.eigh(Q)
    if lam[0] < 0:  # negative definite: flip the conic's sign
        lam, f0 = -lam[::-1], -f0
        vec = vec[:, ::-1]
    if lam[0] <= 0 or f0 >= 0:
        return None
    a = np.sqrt(-f0 / lam[0])
    b = np.sqrt(-f0 / lam[1])
    theta = np.arctan2(vec[1, 0], vec[0, 0]) % np.pi
    if theta >= np.pi:
        theta = 0.0
    return Ellipse(float(center[0]), float(center[1]), float(a), float(b), float(theta))


def pca_ellipse(pts, min_axis):
    """Fallback: mean center, principal-axis orientation, 2-sigma half axes."""
    mean = pts.mean(axis=0)
    centered = pts - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    sigma = s / np.sqrt(len(pts))
    a = max(2 * sigma[0], min_axis)
    b = max(2 * sigma[1] if len(sigma) > 1 else 0.0, min_axis)
    theta = float(np.arctan2(vt[0, 1], vt[0, 0]) % np.pi)
    return Ellipse(float(mean[0]), float(mean[1]), float(max(a, b)), float(min(a, b)), theta)


def _denormalize(e, mean, scale):
    return Ellipse(float(e.x_c * scale + mean[0]), float(e.z_c * scale + mean[1]),
                   float(e.a * scale), float(e.b * scale), e.theta)


def fit_ellipse_ransac(points, rng_seed=0, iters=200, inlier_tol=0.05, min_axis=0.25,
                       max_axis_factor=2.0, refine_rounds=3):
    """RANSAC ellipse fit to (M, 2) points in metres.

    Minimal samples of five points define candidate conics; non-ellipses and
    ellipses larger than ``max_axis_factor`` times the point spread are
    rejected. Candidates are scored by the number of points whose Sampson
    distance is below ``inlier_tol``. The winner is refitted by direct least
    squares on its inliers. When no candidate survives, a PCA ellipse is
    returned (half axes floored at ``min_axis``).
    """
    pts = np.asarray(points, dtype=np.float64)
    m = len(pts)
    if m < 5:
        raise Degenerate(f"need at least 5 points, got {m}")
    rng = make_rng(rng_seed)

    mean = pts.mean(axis=0)
    spread = np.sqrt(((pts - mean) ** 2).sum(axis=1).mean())
    if not spread > 0:
        return pca_ellipse(pts, min_axis)
    scale = spread / np.sqrt(2)
    q = (pts - mean) / scale
    tol = inlier_tol / scale
    max_axis = max_axis_factor * np.sqrt(((q) ** 2).sum(axis=1).max())

    idx = np.argsort(rng.random((iters, m)), axis=1)[:, :5]
    conics, ok = conic_through_points(q[idx])
    valid = np.zeros(iters, dtype=bool)
    for k in np.flatnonzero(ok):
        e = conic_to_ellipse(conics[k])
        valid[k] = e is not None and e.a <= max_axis
    if not valid.any():
        return pca_ellipse(pts, min_axis)

    scores = np.where(valid, (sampson_residual(conics, q) < tol).sum(axis=1), -1)
    best = int(np.argmax(scores))
    conic = conics[best]
    inliers = sampson_residual(conic, q)[0] < tol
    for _ in range(refine_rounds):
        if inliers.sum() < 5:
            break
        refit = fit_conic_lsq(q[inliers])
        e = None if refit is None else conic_to_ellipse(refit)
        if e is None or e.a > max_axis:
            break
        conic = refit
        new = sampson_residual(conic, q)[0] < tol
        if np.array_equal(new, inliers):
            break
        inliers = new
    return _denormalize(conic_to_ellipse(conic), mean, scale)


def oriented_extent(points, min_axis=0.25, angle_step=np.radians(1.0), d0=0.01):
    """Oriented box around an L-shaped (partially observed) cluster.

    The heading is chosen by the closeness criterion: for each candidate
    angle, points are scored by ``1 / max(d, d0)`` where ``d`` is the
    distance to the nearest side of the axis-aligned extent in that frame.
    Returns the box as an :class:`Ellipse` whose (a, b) are half-extents.
    """
    p = np.asarray(points, dtype=np.float64)
    th = np.arange(0.0, np.pi / 2, angle_step)
    e1 = np.stack([np.cos(th), np.sin(th)], axis=1)
    e2 = np.stack([-np.sin(th), np.cos(th)], axis=1)
    c1, c2 = p @ e1.T, p @ e2.T
    d1 = np.minimum(c1.max(axis=0) - c1, c1 - c1.min(axis=0))
    d2 = np.minimum(c2.max(axis=0) - c2, c2 - c2.min(axis=0))
    score = (1.0 / np.maximum(np.minimum(d1, d2), d0)).sum(axis=0)
    k = int(np.argmax(score))
    lo1, hi1 = c1[:, k].min(), c1[:, k].max()
    lo2, hi2 = c2[:, k].min(), c2[:, k].max()
    center = (lo1 + hi1) / 2 * e1[k] + (lo2 + hi2) / 2 * e2[k]
    h1 = max((hi1 - lo1) / 2, min_axis)
    h2 = max((hi2 - lo2) / 2, min_axis)
    theta = float(th[k])
    if h2 > h1:
        h1, h2, theta = h2, h1, (theta + np.pi / 2) % np.pi
    return Ellipse(float(center[0]), float(center[1]), float(h1), float(h2), theta)


def box_coverage(e, points, margin=0.1):
    """Fraction of points inside the box with half-extents (a, b), grown by ``margin``."""
    d = np.asarray(points, dtype=np.float64) - (e.x_c, e.z_c)
    c, s = np.cos(e.theta), np.sin(e.theta)
    lx = c * d[:, 0] + s * d[:, 1]
    lz = -s * d[:, 0] + c * d[:, 1]
    return float(np.mean((np.abs(lx) <= e.a + margin) & (np.abs(lz) <= e.b + margin)))
