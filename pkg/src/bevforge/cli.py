"""Command-line entry point: ``bevforge <subcommand> ...``.

Exit status: 0 on success, 1 when a validation step fails, 2 on malformed
input, I/O or configuration errors. ``BEVFORGE_LOG`` (error, warn, info,
debug) sets the log level on standard error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .errors import BevForgeError, ConfigError, FormatError, MalformedLine
from .geometry import invert

log = logging.getLogger("bevforge")

OK, VALIDATION_FAILED, BAD_INPUT = 0, 1, 2
GRADCHECK_TOL = 1e-3
_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def frame_name(index):
    return f"{int(index):04d}"


# -- shared option handling ---------------------------------------------------------

def _load_config(args):
    cfg = io.parse_config(args.config) if args.config else io.RunConfig()
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def _common(p):
    p.add_argument("--config", metavar="PATH", help="key=value run configuration (defaults when omitted)")
    p.add_argument("--seed", type=int, metavar="U64", help="overrides the configured seed")


# -- synth ----------------------------------------------------------------------------

def cmd_synth(args):
    from . import synthetic as S

    cfg = _load_config(args)
    if args.frames < 1:
        raise ValueError("--frames must be >= 1")
    scene_cfg = S.SceneConfig(frames=args.frames, moving=args.moving)
    scene = S.generate_scene(cfg.seed, scene_cfg)
    K = S.default_camera()
    out = Path(args.out)
    for sub in ("semantic", "depth", "bev_gt"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    io.write_intrinsics(out / "intrinsics.txt", K)
    io.write_poses(out / "poses.txt", scene.trajectory)
    (out / "scene.txt").write_text(scene.to_text())
    for i, pose, sem, depth in S.render_sequence(scene, K):
        name = frame_name(i)
        io.write_pgm(out / "semantic" / f"{name}.pgm", sem)
        io.write_tensor(out / "depth" / f"{name}.btr", depth)
        gt = S.render_bev_gt(scene, pose, cfg.bev_spec, time=float(i))
        io.write_pgm(out / "bev_gt" / f"{name}.pgm", io.bev_to_image(gt.labels))
    io.write_effective_config(out, replace(cfg, output_dir=str(out)))
    log.info("wrote %d frames to %s", len(scene.trajectory), out)
    return OK


# -- pseudolabel ---------------------------------------------------------------------

def _pseudolabel_anchor(job):
    """Worker: one anchor frame in, one map (and optional render) out."""
    from .pseudolabel import Frame, FrameWindow, PseudolabelConfig, generate_pseudolabel

    seq, out, cfg, indices, names, poses, color = job
    K = io.read_intrinsics(seq / "intrinsics.txt")
    frames = []
    for i in indices:
        sem = io.read_pgm(seq / "semantic" / f"{names[i]}.pgm")
        depth = io.read_tensor(seq / "depth" / f"{names[i]}.btr")
        frames.append(Frame(sem, depth, poses[i], int(names[i])))
    window = FrameWindow(frames, 0, cfg.window_stride)
    bev = generate_pseudolabel(window, K, PseudolabelConfig.from_run_config(cfg))
    img = io.bev_to_image(bev.labels)
    name = names[indices[0]]
    io.write_pgm(out / f"{name}.pgm", img)
    if color:
        io.write_ppm(out / f"{name}.ppm", io.colorize(img))
    return name


def cmd_pseudolabel(args):
    from .pseudolabel import window_indices

    cfg = _load_config(args)
    if args.jobs < 1:
        raise ValueError("--jobs must be >= 1")
    seq, out = Path(args.inp), Path(args.out)
    ids, poses = io.read_pose_table(seq / "poses.txt")
    io.read_intrinsics(seq / "intrinsics.txt")
    names = [frame_name(i) for i in ids]
    jobs = []
    for a in range(len(ids)):
        idx = window_indices(a, len(ids), cfg.window_size, cfg.window_stride)
        if idx is not None:
            jobs.append((seq, out, cfg, idx, names, poses, args.color))
    if not jobs:
        log.warning("sequence of %d frames is shorter than one window (%d)", len(ids), cfg.window_size)
    out.mkdir(parents=True, exist_ok=True)
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            done = list(pool.map(_pseudolabel_anchor, jobs))
    else:
        done = [_pseudolabel_anchor(j) for j in jobs]
    io.write_effective_config(out, replace(cfg, sequence_dir=str(seq), output_dir=str(out)))
    log.info("wrote %d pseudolabel maps to %s", len(done), out)
    return OK


# -- eval --------------------------------------------------------------------------------

def cmd_eval(args):
    from . import metrics

    cfg = _load_config(args)
    pred_dir, ref_dir = Path(args.pred), Path(args.ref)
    names = sorted(p.name for p in pred_dir.glob("*.pgm"))
    if not names:
        raise FormatError(f"no .pgm maps in {pred_dir}")
    cm = metrics.ConfusionMatrix.zeros()
    for name in names:
        ref = ref_dir / name
        if not ref.exists():
            raise FileNotFoundError(f"no reference map {ref}")
        metrics.accumulate_confusion(io.read_pgm(pred_dir / name), io.read_pgm(ref), cm)
    per_class, mean = metrics.iou(cm)
    table = metrics.format_table(per_class, mean)
    csv = metrics.format_csv(per_class, mean)
    print(table)
    print(csv.splitlines()[1])
    if args.out:
        from . import plotting

        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(csv + "\n")
        np.savetxt(out / "confusion.csv", cm.counts, fmt="%d", delimiter=",")
        plotting.iou_bars(per_class, mean, out / "iou.png")
        plotting.confusion_heatmap(cm.counts, out / "confusion.png")
        io.write_effective_config(out, replace(cfg, output_dir=str(out)))
    log.info("evaluated %d maps, %d cells", len(names), cm.total)
    return OK


# -- warp / lift --------------------------------------------------------------------------

def cmd_warp(args):
    from .voxel import VoxelGrid, warp_grid

    cfg = _load_config(args)
    data = io.read_tensor(args.inp).astype(np.float64)
    if data.ndim != 4:
        raise FormatError(f"{args.inp}: expected a C x X x Y x Z tensor, got shape {data.shape}")
    spec = replace(cfg.grid_spec, nx=data.shape[1], ny=data.shape[2], nz=data.shape[3])
    grid = VoxelGrid.from_spec(data, spec)
    ids, poses = io.read_pose_table(args.pose)
    if not poses:
        raise MalformedLine(f"{args.pose}: no pose")
    # the file holds T_0->i; --invert applies its inverse instead
    T = invert(poses[0]) if args.invert else poses[0]
    out = warp_grid(grid, T)
    io.write_tensor(args.out, out.data.astype(np.float32))
    io.write_effective_config(Path(args.out).parent, cfg)
    return OK


def cmd_lift(args):
    from .voxel import DepthDistribution, lift_features

    cfg = _load_config(args)
    src = Path(args.inp)
    K = io.read_intrinsics(src / "intrinsics.txt")
    features = io.read_tensor(src / "features.btr")
    probs = io.read_tensor(src / "depth.btr")
    if probs.ndim != 3 or probs.shape[0] != cfg.depth_bins:
        raise FormatError(f"depth.btr must be {cfg.depth_bins} x H x W, got {probs.shape}")
    depth = DepthDistribution(probs, cfg.depth_edges())
    grid = lift_features(features, depth, K, cfg.grid_spec)
    io.write_tensor(args.out, grid.data.astype(np.float32))
    io.write_effective_config(Path(args.out).parent, cfg)
    return OK


# -- gradcheck ----------------------------------------------------------------------------

def cmd_gradcheck(args):
    from .supervision import gradcheck

    cfg = _load_config(args)
    rows = gradcheck(cfg.seed, h=args.step)
    print(f"{'parameter':<18} {'|analytic|':>12} {'|numeric|':>12} {'max rel err':>12}")
    worst = 0.0
    for r in rows:
        print(f"{r.name:<18} {r.analytic_norm:12.6g} {r.fd_norm:12.6g} {r.max_rel_error:12.3e}")
        worst = max(worst, r.max_rel_error)
    ok = worst < GRADCHECK_TOL
    print(f"{'PASS' if ok else 'FAIL'}: max relative error {worst:.3e} (tolerance {GRADCHECK_TOL:g})")
    return OK if ok else VALIDATION_FAILED


# -- parser -------------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="bevforge", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    s = sub.add_parser("synth", help="render a synthetic sequence with exact depth and BEV truth")
    _common(s)
    s.add_argument("--out", required=True, metavar="DIR", help="sequence directory to create")
    s.add_argument("--frames", type=int, default=12, metavar="N", help="trajectory length (default 12)")
    s.add_argument("--moving", action="store_true", help="vehicles drive at constant velocity")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("pseudolabel", help="BEV pseudolabels for every full window of a sequence")
    _common(s)
    s.add_argument("--in", dest="inp", required=True, metavar="DIR", help="sequence directory")
    s.add_argument("--out", required=True, metavar="DIR", help="output directory for NNNN.pgm maps")
    s.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes (default 1)")
    s.add_argument("--color", action="store_true", help="also write NNNN.ppm palette renders")
    s.set_defaults(func=cmd_pseudolabel)

    s = sub.add_parser("eval", help="class-wise IoU of predicted vs reference maps")
    _common(s)
    s.add_argument("--pred", required=True, metavar="DIR", help="predicted NNNN.pgm maps")
    s.add_argument("--ref", required=True, metavar="DIR", help="reference maps with matching names")
    s.add_argument("--out", metavar="DIR", help="write metrics.csv, confusion.csv and figures here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("warp", help="resample a stored voxel grid into another frame")
    _common(s)
    s.add_argument("--in", dest="inp", required=True, metavar="PATH", help="C x X x Y x Z float32 tensor")
    s.add_argument("--pose", required=True, metavar="PATH", help="pose file; its first line is T_0->i")
    s.add_argument("--invert", action="store_true", help="apply the inverse of the pose")
    s.add_argument("--out", required=True, metavar="PATH", help="output tensor")
    s.set_defaults(func=cmd_warp)

    s = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    _common(s)
    s.add_argument("--step", type=float, default=1e-4, metavar="H", help="central-difference step (default 1e-4)")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("lift", help="lift a feature map into a voxel grid")
    _common(s)
    s.add_argument("--in", dest="inp", required=True, metavar="DIR",
                   help="directory with features.btr (C x H x W), depth.btr (D x H x W), intrinsics.txt")
    s.add_argument("--out", required=True, metavar="PATH", help="output C x X x Y x Z tensor")
    s.set_defaults(func=cmd_lift)
    return p


def _setup_logging():
    level = os.environ.get("BEVFORGE_LOG", "warn").strip().lower()
    if level not in _LEVELS:
        raise ConfigError(f"BEVFORGE_LOG must be one of {', '.join(_LEVELS)}, got {level!r}")
    logging.basicConfig(level=_LEVELS[level], stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def run(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        return args.func(args)
    except (BevForgeError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return BAD_INPUT


def main(argv=None):
    sys.exit(run(argv))
