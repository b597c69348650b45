"""Losses for implicit (FV, over a window) and explicit (BEV) supervision.

Gradients through the head/warp chain are hand-derived: every resampling
step is a fixed sparse linear operator, so its backward pass is the
transpose, and the heads are affine maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classes import IGNORE
from .errors import EmptyTarget, IndexOutOfWindow, ShapeMismatch
from .geometry import CameraIntrinsics, Pose, rotation_x, rotation_y
from .voxel import (
    ClassLogits,
    FvSpec,
    GridSpec,
    LinearHead,
    VoxelGrid,
    bev_features,
    bev_head,
    frustum_matrix,
    fv_head,
    warp_grid,
    warp_matrix,
)


@dataclass(frozen=True)
class WeightSchedule:
    n: int
    w_start: float = 1.0
    w_end: float = 0.2

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("window length must be >= 0")
        if not (self.w_start >= self.w_end > 0):
            raise ValueError("need w_start >= w_end > 0")


def decay_weight(i, sched: WeightSchedule):
    """Weight of timestep ``i``, decaying linearly from ``w_start`` to ``w_end``."""
    if not 0 <= i <= sched.n:
        raise IndexOutOfWindow(f"timestep {i} outside window 0..{sched.n}")
    if sched.n == 0:
        return sched.w_start
    t = i / sched.n
    return (1.0 - t) * sched.w_start + t * sched.w_end


def _logits_array(logits):
    return logits.data if isinstance(logits, ClassLogits) else np.asarray(logits)


def cross_entropy(logits, target):
    """Mean cross entropy over non-ignored cells and its gradient w.r.t. logits.

    ``logits`` is K x (spatial...), ``target`` holds class ids with 255 as
    ignore.
    """
    x = np.asarray(_logits_array(logits), dtype=np.float64)
    target = np.asarray(target)
    if x.shape[1:] != target.shape:
        raise ShapeMismatch(f"logits {x.shape} vs target {target.shape}")
    n_classes = x.shape[0]
    flat = x.reshape(n_classes, -1)
    tgt = target.reshape(-1).astype(np.int64)
    valid = tgt != IGNORE
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise EmptyTarget("every target cell is ignored")
    if np.any(tgt[valid] >= n_classes) or np.any(tgt[valid] < 0):
        raise ValueError("target class id out of range")

    m = flat.max(axis=0)
    e = np.exp(flat - m)
    s = e.sum(axis=0)
    lse = m + np.log(s)
    cols = np.flatnonzero(valid)
    picked = flat[tgt[cols], cols]
    loss = float(np.sum(lse[cols] - picked) / n_valid)

    grad = e / s
    grad[:, ~valid] = 0.0
    grad[tgt[cols], cols] -= 1.0
    grad /= n_valid
    return loss, grad.reshape(x.shape)


def explicit_loss(bev_logits, pseudolabel):
    """BEV pseudolabel loss; same contract as :func:`cross_entropy`."""
    return cross_entropy(bev_logits, pseudolabel)


def implicit_loss(predictions, sched: WeightSchedule):
    """Weighted sum of per-timestep FV cross entropies.

    ``predictions`` is a sequence of ``(logits, target)`` for i = 0..n.
    Returns ``(L_fv, terms, grads)`` where ``terms[i] = w_i * CE_i`` and
    ``grads[i]`` is the gradient of ``L_fv`` w.r.t. the i-th logits.
    """
    if len(predictions) != sched.n + 1:
        raise ShapeMismatch(f"expected {sched.n + 1} predictions, got {len(predictions)}")
    terms, grads = [], []
    for i, (logits, target) in enumerate(predictions):
        w = decay_weight(i, sched)
        ce, g = cross_entropy(logits, target)
        terms.append(w * ce)
        grads.append(w * g)
    total = 0.0
    for t in terms:
        total += t
    return total, terms, grads


def total_loss(l_fv, l_bev):
    if l_fv < 0 or l_bev < 0:
        raise ValueError("losses must be non-negative")
    return l_fv + l_bev


# -- backward pass through the fixed pipeline -------------------------------

@dataclass
class Heads:
    fv: LinearHead
    bev: LinearHead


@dataclass
class LossReport:
    l_fv: float
    l_bev: float
    l_total: float
    fv_terms: list
    grads: dict = field(default_factory=dict)


def chain_gradients(v: VoxelGrid, poses, heads: Heads, fv_targets, bev_target,
                    K: CameraIntrinsics, fv: FvSpec | None = None,
                    sched: WeightSchedule | None = None) -> LossReport:
    """Total loss and analytic gradients w.r.t. both heads and the voxel features.

    ``poses[i]`` is T_0->i for i = 0..n (``poses[0]`` is normally the
    identity) and ``fv_targets[i]`` the FV labels at t_i.
    """
    fv = fv or FvSpec.for_camera(K)
    n = len(poses) - 1
    sched = sched or WeightSchedule(n)
    if len(fv_targets) != n + 1 or sched.n != n:
        raise ShapeMismatch("poses, targets and schedule disagree on window length")

    spec = v.spec
    C = v.data.shape[0]
    n_vox = spec.nx * spec.ny * spec.nz
    D = fv.n_rays
    P = fv.height * fv.width
    vflat = v.data.reshape(C, n_vox).astype(np.float64).T  # n_vox x C

    S = frustum_matrix(spec, K, fv)
    Wf, bf = heads.fv.weights, heads.fv.bias
    if heads.fv.n_inputs != C * D:
        raise ShapeMismatch("FV head input size must equal C * n_rays")

    g_wf = np.zeros_like(Wf)
    g_bf = np.zeros_like(bf)
    g_v = np.zeros_like(vflat)
    terms = []
    for i, (T, target) in enumerate(zip(poses, fv_targets)):
        A = S @ warp_matrix(spec, T)  # (P*D) x n_vox
        samples = A @ vflat  # (P*D) x C, row = p * D + j
        feats = samples.reshape(P, D, C).transpose(0, 2, 1).reshape(P, C * D)
        logits = feats @ Wf.T + bf  # P x K
        w = decay_weight(i, sched)
        ce, g = cross_entropy(logits.T.reshape(-1, fv.height, fv.width), target)
        terms.append(w * ce)
        g = w * g.reshape(g.shape[0], P).T  # P x K
        g_wf += g.T @ feats
        g_bf += g.sum(axis=0)
        g_feats = (g @ Wf).reshape(P, C, D).transpose(0, 2, 1).reshape(P * D, C)
        g_v += A.T @ g_feats

    l_fv = 0.0
    for t in terms:
        l_fv += t

    Wb, bb = heads.bev.weights, heads.bev.bias
    bfeat = bev_features(v).astype(np.float64)  # X x Z x (C*Y)
    X, Z, CY = bfeat.shape
    if heads.bev.n_inputs != CY:
        raise ShapeMismatch("BEV head input size must equal C * Y")
    blog = bfeat.reshape(-1, CY) @ Wb.T + bb
    l_bev, gb = cross_entropy(blog.T.reshape(-1, X, Z), bev_target)
    gb = gb.reshape(gb.shape[0], X * Z).T  # (X*Z) x K
    g_wb = gb.T @ bfeat.reshape(-1, CY)
    g_bb = gb.sum(axis=0)
    g_bfeat = (gb @ Wb).reshape(X, Z, C, spec.ny)  # undo bev_features layout
    g_v_bev = g_bfeat.transpose(2, 0, 3, 1)  # C x X x Y x Z

    g_vox = g_v.T.reshape(v.data.shape) + g_v_bev
    return LossReport(
        l_fv=l_fv,
        l_bev=l_bev,
        l_total=total_loss(l_fv, l_bev),
        fv_terms=terms,
        grads={
            "fv_head.weights": g_wf,
            "fv_head.bias": g_bf,
            "bev_head.weights": g_wb,
            "bev_head.bias": g_bb,
            "voxels": g_vox,
        },
    )


def forward_loss(v, poses, heads, fv_targets, bev_target, K, fv=None, sched=None):
    """Total loss computed through the public forward operators only."""
    fv = fv or FvSpec.for_camera(K)
    sched = sched or WeightSchedule(len(poses) - 1)
    preds = [(fv_head(warp_grid(v, T), K, heads.fv, fv), t) for T, t in zip(poses, fv_targets)]
    l_fv, _, _ = implicit_loss(preds, sched)
    l_bev, _ = explicit_loss(bev_head(v, heads.bev), bev_target)
    return total_loss(l_fv, l_bev)


# -- finite-difference check -----------------------------------------------------

@dataclass
class GradcheckProblem:
    v: VoxelGrid
    poses: list
    heads: Heads
    fv_targets: list
    bev_target: np.ndarray
    K: CameraIntrinsics
    fv: FvSpec

    def args(self):
        return (self.v, self.poses, self.heads, self.fv_targets, self.bev_target, self.K, self.fv)


@dataclass
class GradcheckRow:
    name: str
    analytic_norm: float
    fd_norm: float
    max_rel_error: float


def make_gradcheck_problem(seed, n=2, n_classes=3, channels=2, grid=4, n_rays=4):
    """Small random instance: grid^3 cells of 1 m, a 6x5 image, n future steps."""
    rng = np.random.default_rng(seed)
    half = grid / 2
    spec = GridSpec(grid, grid, grid, 1.0, -half, -half, 1.0)
    K = CameraIntrinsics(fx=4.0, fy=4.0, cx=2.5, cy=2.0, width=6, height=5)
    fv = FvSpec(5, 6, n_rays, 1.5, 1.0 + grid - 0.5)
    v = VoxelGrid.from_spec(rng.normal(size=(channels,) + spec.shape), spec)

    poses = [Pose.identity()]
    for i in range(1, n + 1):
        R = rotation_y(rng.uniform(-0.08, 0.08)) @ rotation_x(rng.uniform(-0.03, 0.03))
        t = np.array([rng.uniform(-0.2, 0.2), rng.uniform(-0.1, 0.1), -0.3 * i + rng.uniform(-0.1, 0.1)])
        poses.append(Pose(R, t))

    heads = Heads(
        LinearHead(rng.normal(scale=0.5, size=(n_classes, channels * n_rays)), rng.normal(size=n_classes)),
        LinearHead(rng.normal(scale=0.5, size=(n_classes, channels * grid)), rng.normal(size=n_classes)),
    )

    def labels(shape):
        lab = rng.integers(0, n_classes, size=shape).astype(np.uint8)
        lab[rng.random(shape) < 0.15] = IGNORE
        lab.flat[0] = 0
        return lab

    fv_targets = [labels((fv.height, fv.width)) for _ in range(n + 1)]
    bev_target = labels((grid, grid))
    return GradcheckProblem(v, poses, heads, fv_targets, bev_target, K, fv)


def _param_views(problem):
    h = problem.heads
    return {
        "fv_head.weights": h.fv.weights,
        "fv_head.bias": h.fv.bias,
        "bev_head.weights": h.bev.weights,
        "bev_head.bias": h.bev.bias,
        "voxels": problem.v.data,
    }


def finite_difference(problem, name, h=1e-4):
    """Central differences of the total loss w.r.t. one parameter tensor."""
    param = _param_views(problem)[name]
    out = np.zeros_like(param, dtype=np.float64)
    flat = param.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        lp = forward_loss(*problem.args())
        flat[k] = orig - h
        lm = forward_loss(*problem.args())
        flat[k] = orig
        out.flat[k] = (lp - lm) / (2 * h)
    return out


def relative_error(analytic, numeric, floor=1e-7):
    """Element-wise ``|a - n| / max(|a|, |n|, floor)``; ``floor`` guards exact zeros."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def gradcheck(seed, h=1e-4, problem=None):
    """Compare analytic gradients with central differences for every parameter."""
    problem = problem or make_gradcheck_problem(seed)
    report = chain_gradients(*problem.args())
    rows = []
    for name in _param_views(problem):
        fd = finite_difference(problem, name, h)
        an = report.grads[name]
        rows.append(GradcheckRow(
            name,
            float(np.linalg.norm(an)),
            float(np.linalg.norm(fd)),
            float(relative_error(an, fd).max()),
        ))
    return rows
