"""The latent voxel grid: lifting, rigid warping and the FV/BEV heads.

Grids are dense ``C x X x Y x Z`` arrays (channels, lateral, height, depth)
expressed in a camera frame. Every resampling step here is a gather: one
output cell reads a fixed stencil of input cells, so the operations are
linear, deterministic and free of accumulation races.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ShapeMismatch
from .geometry import CameraIntrinsics, Pose, invert, project_unchecked, transform_points

_SNAP = 1e-9

_TAPS = np.array(
    [[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=np.int64
)


@dataclass(frozen=True)
class GridSpec:
    """Metric layout of a voxel lattice; ``*_min`` are the outer cell faces."""

    nx: int = 96
    ny: int = 8
    nz: int = 96
    cell_size: float = 0.5
    x_min: float = -24.0
    y_min: float = -1.0
    z_min: float = 0.0

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise ValueError("grid dimensions must be >= 1")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")

    @property
    def shape(self):
        return (self.nx, self.ny, self.nz)

    @property
    def origin(self):
        """Center of cell (0, 0, 0)."""
        h = self.cell_size / 2
        return np.array([self.x_min + h, self.y_min + h, self.z_min + h])

    def centers(self):
        """Cell centers as an (X, Y, Z, 3) array."""
        o, c = self.origin, self.cell_size
        xs = o[0] + c * np.arange(self.nx)
        ys = o[1] + c * np.arange(self.ny)
        zs = o[2] + c * np.arange(self.nz)
        return np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1)


@dataclass(frozen=True)
class FvSpec:
    height: int
    width: int
    n_rays: int = 48
    min_depth: float = 1.0
    max_depth: float = 49.0

    @classmethod
    def for_camera(cls, K, **kw):
        return cls(K.height, K.width, **kw)

    def ray_depths(self):
        return np.linspace(self.min_depth, self.max_depth, self.n_rays)


@dataclass
class VoxelGrid:
    data: np.ndarray
    cell_size: float
    origin: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        if self.data.ndim != 4 or min(self.data.shape) < 1:
            raise ShapeMismatch(f"voxel data must be C x X x Y x Z, got {self.data.shape}")

    @classmethod
    def from_spec(cls, data, spec):
        return cls(data, spec.cell_size, spec.origin)

    @property
    def spec(self):
        _, nx, ny, nz = self.data.shape
        h = self.cell_size / 2
        return GridSpec(nx, ny, nz, self.cell_size, *(self.origin - h))

    def like(self, data):
        return VoxelGrid(data, self.cell_size, self.origin.copy())


@dataclass
class DepthDistribution:
    """Per-pixel categorical distribution over depth bins (D x H x W)."""

    data: np.ndarray
    bin_edges: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.bin_edges = np.asarray(self.bin_edges, dtype=np.float64)
        if self.data.ndim != 3 or self.bin_edges.shape != (self.data.shape[0] + 1,):
            raise ShapeMismatch("depth data must be D x H x W with D+1 bin edges")
        if np.any(np.diff(self.bin_edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")

    @property
    def bin_centers(self):
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @classmethod
    def uniform_bins(cls, data, near=1.0, far=49.0):
        return cls(data, np.linspace(near, far, np.shape(data)[0] + 1))


@dataclass
class LinearHead:
    """A 1x1 convolution: per-location affine map ``W x + b``."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeMismatch("head weights must be K x C_in with a length-K bias")

    @property
    def n_classes(self):
        return self.weights.shape[0]

    @property
    def n_inputs(self):
        return self.weights.shape[1]

    @classmethod
    def zeros(cls, n_classes, n_inputs):
        return cls(np.zeros((n_classes, n_inputs)), np.zeros(n_classes))


@dataclass
class ClassLogits:
    data: np.ndarray
    frame: str  # "FV" (K x H x W) or "BEV" (K x X x Z)


# -- stencils ---------------------------------------------------------------

def trilinear_stencil(shape, coords):
    """Trilinear taps for continuous index-space coordinates.

    ``coords`` is (..., 3) in units of cells, with integer values at cell
    centers. Returns flat indices and weights of shape (..., 8); taps that
    fall outside the lattice get weight 0 (zero padding) and index 0.
    Coordinates within 1e-9 of a lattice point are snapped onto it so that
    lattice-aligned transforms resample exactly.
    """
    coords = np.asarray(coords, dtype=np.float64)
    lead = coords.shape[:-1]
    coords = coords.reshape(-1, 3)
    finite = np.all(np.isfinite(coords), axis=1)
    coords = np.where(finite[:, None], coords, -2.0)
    r = np.rint(coords)
    coords = np.where(np.abs(coords - r) < _SNAP, r, coords)
    base = np.floor(coords).astype(np.int64)
    frac = coords - base

    idx = base[:, None, :] + _TAPS[None, :, :]
    w_axes = np.where(_TAPS[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :])
    w = w_axes.prod(axis=2)

    dims = np.asarray(shape, dtype=np.int64)
    inside = np.all((idx >= 0) & (idx < dims), axis=2) & finite[:, None]
    w = np.where(inside, w, 0.0)
    idx = np.where(inside[..., None], idx, 0)
    flat = (idx[..., 0] * dims[1] + idx[..., 1]) * dims[2] + idx[..., 2]
    return flat.reshape(lead + (8,)), w.reshape(lead + (8,))


def metric_to_index(points, cell_size, origin):
    return (np.asarray(points, dtype=np.float64) - origin) / cell_size


def gather(data, flat, w):
    """Apply stencil taps to a C x X x Y x Z array; returns C x (leading dims)."""
    C = data.shape[0]
    src = data.reshape(C, -1)
    return (src[:, flat] * w).sum(axis=-1)


def stencil_matrix(flat, w, n_cols):
    """Sparse operator (rows = samples) equivalent to :func:`gather`."""
    flat = flat.reshape(-1, 8)
    w = w.reshape(-1, 8)
    rows = np.repeat(np.arange(flat.shape[0]), 8)
    m = sp.csr_matrix((w.ravel(), (rows, flat.ravel())), shape=(flat.shape[0], n_cols))
    m.sum_duplicates()
    return m


def bilinear_stencil(height, width, u, v):
    """Bilinear taps for in-image coordinates (0 <= u <= W-1, 0 <= v <= H-1).

    Returns (rows, cols, weights) each of shape (N, 4).
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u0 = np.clip(np.floor(u), 0, max(width - 2, 0)).astype(np.int64)
    v0 = np.clip(np.floor(v), 0, max(height - 2, 0)).astype(np.int64)
    u1 = np.minimum(u0 + 1, width - 1)
    v1 = np.minimum(v0 + 1, height - 1)
    fu = u - u0
    fv = v - v0
    rows = np.stack([v0, v0, v1, v1], axis=-1)
    cols = np.stack([u0, u1, u0, u1], axis=-1)
    w = np.stack([(1 - fv) * (1 - fu), (1 - fv) * fu, fv * (1 - fu), fv * fu], axis=-1)
    return rows, cols, w


def depth_likelihood(centers, probs, z):
    """Interpolate per-bin probabilities linearly in depth between bin centers.

    ``probs`` is (D, N), ``z`` is (N,). Constant beyond the outer centers.
    """
    D = len(centers)
    if D == 1:
        return probs[0].copy()
    zc = np.clip(z, centers[0], centers[-1])
    k = np.clip(np.searchsorted(centers, zc, side="right") - 1, 0, D - 2)
    t = (zc - centers[k]) / (centers[k + 1] - centers[k])
    n = np.arange(len(z))
    return (1 - t) * probs[k, n] + t * probs[k + 1, n]


# -- operations ----------------------------------------------------------------

def lift_features(features, depth, K: CameraIntrinsics, grid_spec: GridSpec | None = None):
    """Lift a C x H x W feature map into a voxel grid.

    Each voxel center is projected into the image; visible voxels take the
    bilinearly sampled feature vector scaled by the depth likelihood at the
    voxel's depth. Voxels behind the camera or outside the image stay 0.
    """
    grid_spec = grid_spec or GridSpec()
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3:
        raise ShapeMismatch("features must be C x H x W")
    C, H, W = features.shape
    if depth.data.shape[1:] != (H, W):
        raise ShapeMismatch(f"feature map {H}x{W} vs depth {depth.data.shape[1:]}")
    if (H, W) != (K.height, K.width):
        raise ShapeMismatch("feature map size does not match intrinsics")

    pts = grid_spec.centers().reshape(-1, 3)
    u, v, z = project_unchecked(pts, K)
    vis = (z > 0) & (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
    out = np.zeros((C, pts.shape[0]))
    if vis.any():
        rows, cols, w = bilinear_stencil(H, W, u[vis], v[vis])
        f = (features[:, rows, cols] * w).sum(axis=-1)
        p = (depth.data[:, rows, cols] * w).sum(axis=-1)
        out[:, vis] = f * depth_likelihood(depth.bin_centers, p, z[vis])
    return VoxelGrid.from_spec(out.reshape((C,) + grid_spec.shape), grid_spec)


def warp_stencil(spec: GridSpec, T_0i: Pose):
    """Taps that resample a grid in frame 0 onto the same lattice in frame i."""
    q = spec.centers().reshape(-1, 3)
    p = transform_points(invert(T_0i), q)
    return trilinear_stencil(spec.shape, metric_to_index(p, spec.cell_size, spec.origin))


def warp_grid(v: VoxelGrid, T_0i: Pose) -> VoxelGrid:
    """Express grid ``v`` (frame 0) in frame i by inverse-mapping resampling."""
    spec = v.spec
    flat, w = warp_stencil(spec, T_0i)
    out = gather(v.data, flat, w)
    return v.like(out.reshape(v.data.shape).astype(v.data.dtype, copy=False))


def warp_matrix(spec: GridSpec, T_0i: Pose):
    flat, w = warp_stencil(spec, T_0i)
    n = spec.nx * spec.ny * spec.nz
    return stencil_matrix(flat, w, n)


def frustum_stencil(spec: GridSpec, K: CameraIntrinsics, fv: FvSpec, rows=None):
    """Taps of the perspective frustum volume: shape (H', W, D_rays, 8).

    ``rows`` optionally restricts to a subset of image rows.
    """
    rows = np.arange(fv.height) if rows is None else np.asarray(rows)
    us, vs = np.meshgrid(np.arange(fv.width, dtype=np.float64), rows.astype(np.float64))
    d = fv.ray_depths()
    x = (us - K.cx) / K.fx
    y = (vs - K.cy) / K.fy
    pts = np.stack(
        [x[..., None] * d, y[..., None] * d, np.broadcast_to(d, x.shape + d.shape)], axis=-1
    )
    return trilinear_stencil(spec.shape, metric_to_index(pts, spec.cell_size, spec.origin))


def frustum_matrix(spec: GridSpec, K: CameraIntrinsics, fv: FvSpec):
    """Sparse (H*W*D_rays) x (X*Y*Z) frustum sampling operator."""
    flat, w = frustum_stencil(spec, K, fv)
    return stencil_matrix(flat, w, spec.nx * spec.ny * spec.nz)


def _check_head(head, n_in, what):
    if head.n_inputs != n_in:
        raise ShapeMismatch(f"{what} head expects {head.n_inputs} inputs, grid provides {n_in}")


def fv_head(v: VoxelGrid, K: CameraIntrinsics, head: LinearHead, fv: FvSpec | None = None,
            chunk_rows=16) -> ClassLogits:
    """Frontal-view logits from the perspective-resampled grid.

    Every pixel's ray is sampled at ``n_rays`` depths; the C x D_rays samples
    are concatenated channel-major (index ``c * D_rays + j``) and mapped by
    the head.
    """
    fv = fv or FvSpec.for_camera(K)
    C = v.data.shape[0]
    _check_head(head, C * fv.n_rays, "FV")
    spec = v.spec
    out = np.empty((head.n_classes, fv.height, fv.width))
    data = v.data.astype(np.float64, copy=False)
    for r0 in range(0, fv.height, chunk_rows):
        rows = np.arange(r0, min(r0 + chunk_rows, fv.height))
        flat, w = frustum_stencil(spec, K, fv, rows)
        samples = gather(data, flat, w)  # C x h x W x D
        feats = samples.transpose(1, 2, 0, 3).reshape(len(rows), fv.width, C * fv.n_rays)
        logits = feats @ head.weights.T + head.bias
        out[:, rows, :] = logits.transpose(2, 0, 1)
    return ClassLogits(out, "FV")


def bev_features(v: VoxelGrid):
    """Column features: X x Z x (C * Y), index ``c * Y + y``."""
    C, X, Y, Z = v.data.shape
    return v.data.transpose(1, 3, 0, 2).reshape(X, Z, C * Y)


def bev_head(v: VoxelGrid, head: LinearHead) -> ClassLogits:
    """BEV logits by flattening the grid orthographically along height."""
    C, X, Y, Z = v.data.shape
    _check_head(head, C * Y, "BEV")
    feats = bev_features(v).astype(np.float64, copy=False)
    logits = feats @ head.weights.T + head.bias
    return ClassLogits(logits.transpose(2, 0, 1), "BEV")
