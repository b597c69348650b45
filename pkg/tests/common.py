"""Fixtures shared by the unit and acceptance suites."""

import numpy as np

from bevforge.geometry import Pose, invert, rotation_x, rotation_y, rotation_z
from bevforge.voxel import GridSpec

# 32 x 8 x 32 lattice used by the double-warp check
ROUNDTRIP_SPEC = GridSpec(32, 8, 32, 0.5, -8.0, -1.0, 0.0)
ROUNDTRIP_SEED = 2024
# Max interior error of warp(warp(v, T), T^-1) produced by the loop-based
# scalar resampler on the seeded field and pose below (0.07817231670182467),
# rounded up in the fourth decimal.
ROUNDTRIP_TOL = 0.0782


def smooth_field(rng, spec, channels):
    """Sum of a few random low-frequency plane waves per channel."""
    c = spec.centers()
    out = np.zeros((channels,) + spec.shape)
    for ch in range(channels):
        for _ in range(3):
            k = rng.normal(size=3)
            k = k / np.linalg.norm(k) * rng.uniform(0.3, 0.9)
            out[ch] += rng.normal() * np.sin(c @ k + rng.uniform(0, 2 * np.pi))
    return out


def small_rigid(rng):
    R = rotation_y(rng.uniform(-0.17, 0.17)) @ rotation_x(rng.uniform(-0.03, 0.03)) \
        @ rotation_z(rng.uniform(-0.03, 0.03))
    return Pose(R, [rng.uniform(-1, 1), rng.uniform(-0.1, 0.1), rng.uniform(-1, 1)])


def roundtrip_case():
    rng = np.random.default_rng(ROUNDTRIP_SEED)
    data = smooth_field(rng, ROUNDTRIP_SPEC, 8)
    return data, small_rigid(rng)


def interior_mask(spec, T):
    """Cells >= 2 from every face whose double-warp sample paths stay in bounds.

    The outer warp reads the once-warped grid around ``T(q)``; each of those
    eight taps was itself sampled from the input at ``T^-1`` of the tap.
    """
    n = np.array(spec.shape)
    idx = np.stack(np.meshgrid(*[np.arange(s) for s in spec.shape], indexing="ij"), -1).reshape(-1, 3)
    ok = np.all((idx >= 2) & (idx <= n - 3), axis=1)
    c = spec.centers().reshape(-1, 3)
    Tinv = invert(T)
    f = (c @ T.rotation.T + T.translation - spec.origin) / spec.cell_size
    ok &= np.all((f >= 0) & (f <= n - 1), axis=1)
    base = np.floor(f).astype(int)
    for d in np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)]):
        q = np.clip(base + d, 0, n - 1) * spec.cell_size + spec.origin
        g = (q @ Tinv.rotation.T + Tinv.translation - spec.origin) / spec.cell_size
        ok &= np.all((g >= 0) & (g <= n - 1), axis=1)
    return ok.reshape(spec.shape)
