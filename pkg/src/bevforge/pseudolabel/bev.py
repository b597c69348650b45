"""BEV label maps: static rasterisation, densification, box rasterisation, merging."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..classes import IGNORE, STATIC_PRIORITY
from ..errors import LatticeMismatch

_EDGE_EPS = 1e-9


@dataclass(frozen=True)
class BevSpec:
    """X x Z lattice on the ground plane; ``x_min``/``z_min`` are outer cell faces."""

    nx: int = 96
    nz: int = 96
    cell_size: float = 0.5
    x_min: float = -24.0
    z_min: float = 0.0

    @property
    def shape(self):
        return (self.nx, self.nz)

    @property
    def origin(self):
        h = self.cell_size / 2
        return np.array([self.x_min + h, self.z_min + h])

    def centers(self):
        """Cell centers (X, Z, 2) as (x, z)."""
        xs = self.x_min + self.cell_size * (np.arange(self.nx) + 0.5)
        zs = self.z_min + self.cell_size * (np.arange(self.nz) + 0.5)
        return np.stack(np.meshgrid(xs, zs, indexing="ij"), axis=-1)

    def cell_index(self, x, z):
        """Integer cell indices and an in-extent mask for metric (x, z)."""
        ix = np.floor((np.asarray(x) - self.x_min) / self.cell_size)
        iz = np.floor((np.asarray(z) - self.z_min) / self.cell_size)
        inside = (ix >= 0) & (ix < self.nx) & (iz >= 0) & (iz < self.nz)
        return ix.astype(np.int64), iz.astype(np.int64), inside


@dataclass
class BevMap:
    labels: np.ndarray  # X x Z uint8, 255 = void
    spec: BevSpec

    @classmethod
    def void(cls, spec):
        return cls(np.full(spec.shape, IGNORE, dtype=np.uint8), spec)

    def __eq__(self, other):
        return (isinstance(other, BevMap) and self.spec == other.spec
                and np.array_equal(self.labels, other.labels))


def rasterize_static(cloud, spec: BevSpec, priority=STATIC_PRIORITY) -> BevMap:
    """Orthographic projection of static points; later classes in ``priority`` win."""
    out = BevMap.void(spec)
    ix, iz, inside = spec.cell_index(cloud.points[:, 0], cloud.points[:, 2])
    for cls in priority:
        m = inside & (cloud.labels == cls)
        out.labels[ix[m], iz[m]] = cls
    return out


_STRUCT = np.ones((3, 3), dtype=bool)


def close_mask(mask, iterations):
    """Binary closing (dilate then erode ``iterations`` times, 3x3 element).

    The mask is padded first so closing never shrinks the input at the
    map border.
    """
    if iterations <= 0 or not mask.any():
        return mask.copy()
    p = iterations
    padded = np.pad(mask, p)
    d = ndimage.binary_dilation(padded, _STRUCT, iterations=iterations)
    e = ndimage.binary_erosion(d, _STRUCT, iterations=iterations, border_value=1)
    return e[p:-p, p:-p]


def densify(sparse: BevMap, iterations=2, priority=STATIC_PRIORITY) -> BevMap:
    out = BevMap.void(sparse.spec)
    for cls in priority:
        closed = close_mask(sparse.labels == cls, iterations)
        out.labels[closed] = cls
    return out


def box_mask(spec: BevSpec, x_c, z_c, half_a, half_b, theta):
    """Cells whose centers fall inside an oriented rectangle (half-open bounds)."""
    c = spec.centers()
    dx = c[..., 0] - x_c
    dz = c[..., 1] - z_c
    ct, st = np.cos(theta), np.sin(theta)
    lx = ct * dx + st * dz
    lz = -st * dx + ct * dz
    return ((lx >= -half_a - _EDGE_EPS) & (lx < half_a - _EDGE_EPS)
            & (lz >= -half_b - _EDGE_EPS) & (lz < half_b - _EDGE_EPS))


def rasterize_dynamic(instances, spec: BevSpec) -> BevMap:
    """Rasterise (ellipse, class) pairs as oriented boxes with half-extents (a, b).

    Boxes are drawn smallest first so larger ones overwrite contained small ones.
    """
    out = BevMap.void(spec)
    order = sorted(range(len(instances)), key=lambda k: (instances[k][0].a * instances[k][0].b, k))
    for k in order:
        e, cls = instances[k]
        out.labels[box_mask(spec, e.x_c, e.z_c, e.a, e.b, e.theta)] = cls
    return out


def merge(b_s: BevMap, b_d: BevMap) -> BevMap:
    """Overlay dynamic boxes on the static map."""
    if b_s.spec != b_d.spec or b_s.labels.shape != b_d.labels.shape:
        raise LatticeMismatch("static and dynamic maps live on different lattices")
    return BevMap(np.where(b_d.labels != IGNORE, b_d.labels, b_s.labels).astype(np.uint8), b_s.spec)
