"""Readers and writers for every on-disk format, plus the run configuration.

All binary formats are little-endian.

BTR1 tensor layout::

    b"BTR1" | u8 dtype (0 = u8, 1 = f32) | u8 ndim | ndim x u32 dims | payload

Readers raise subclasses of :class:`bevforge.errors.FormatError`; payloads
longer than their header declares are rejected as ``FormatError`` too.
"""

from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .classes import DYNAMIC_CLASSES, CLASS_NAMES, PALETTE, class_id
from .errors import (
    BadHeader,
    BadMagic,
    BadMaxval,
    ConfigError,
    FormatError,
    MalformedLine,
    NonRigidRotation,
    OutOfRange,
    TruncatedPayload,
    UnknownKey,
    UnsupportedDtype,
)
from .geometry import CameraIntrinsics, Pose, nearest_rotation, orthonormality_error
from .voxel import FvSpec, GridSpec

MAGIC = b"BTR1"
_DTYPES = {0: np.dtype("u1"), 1: np.dtype("<f4")}
_CODES = {np.dtype("u1"): 0, np.dtype("<f4"): 1}


# -- BTR1 tensors --------------------------------------------------------------

def encode_tensor(arr):
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.kind == "f" else arr.dtype
    if dt not in _CODES:
        raise UnsupportedDtype(f"cannot store dtype {arr.dtype}; use uint8 or float32")
    header = MAGIC + struct.pack("<BB", _CODES[dt], arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=dt).tobytes()


def decode_tensor(buf):
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise BadMagic("not a BTR1 tensor")
    code, ndim = buf[4], buf[5]
    if code not in _DTYPES:
        raise UnsupportedDtype(f"dtype code {code}")
    end = 6 + 4 * ndim
    if len(buf) < end:
        raise TruncatedPayload("header ends early")
    dims = struct.unpack(f"<{ndim}I", buf[6:end])
    dt = _DTYPES[code]
    size = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    payload = buf[end:]
    if len(payload) < size:
        raise TruncatedPayload(f"payload has {len(payload)} bytes, header declares {size}")
    if len(payload) > size:
        raise FormatError(f"{len(payload) - size} trailing bytes after payload")
    return np.frombuffer(payload, dtype=dt).reshape(dims).copy()


def write_tensor(path, arr):
    Path(path).write_bytes(encode_tensor(arr))


def read_tensor(path):
    return decode_tensor(Path(path).read_bytes())


# -- PGM / PPM -----------------------------------------------------------------

def _parse_pnm_header(buf, magic):
    """Return (width, height, maxval, payload offset) for a binary PNM."""
    pos = 0
    tokens = []
    n = len(buf)
    while len(tokens) < 4:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise BadHeader("header ends early")
        tokens.append(buf[start:pos])
    if tokens[0] != magic:
        raise BadHeader(f"expected {magic.decode()} magic, got {tokens[0][:8]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise BadHeader("non-numeric header field") from None
    if width < 1 or height < 1:
        raise BadHeader("image size must be positive")
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise BadHeader("missing whitespace after maxval")
    if maxval != 255:
        raise BadMaxval(f"maxval {maxval}; only 255 is supported")
    return width, height, maxval, pos + 1


def _read_pnm(buf, magic, channels):
    width, height, _, off = _parse_pnm_header(buf, magic)
    size = width * height * channels
    payload = buf[off:]
    if len(payload) < size:
        raise TruncatedPayload(f"payload has {len(payload)} bytes, expected {size}")
    if len(payload) > size:
        raise FormatError("trailing bytes after image payload")
    shape = (height, width, channels) if channels > 1 else (height, width)
    return np.frombuffer(payload, dtype=np.uint8).reshape(shape).copy()


def read_pgm(path):
    """Read an 8-bit binary PGM (P5) into an H x W uint8 array."""
    return _read_pnm(Path(path).read_bytes(), b"P5", 1)


def write_pgm(path, img):
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM data must be 2-D")
    if img.dtype != np.uint8:
        if img.min(initial=0) < 0 or img.max(initial=0) > 255:
            raise ValueError("PGM values must fit in 0..255")
        img = img.astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes())


def read_ppm(path):
    return _read_pnm(Path(path).read_bytes(), b"P6", 3)


def write_ppm(path, rgb):
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("PPM data must be H x W x 3")
    h, w, _ = rgb.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(rgb).tobytes())


def colorize(labels):
    """Map a label image to RGB with the fixed class palette (unknown ids -> black)."""
    labels = np.asarray(labels)
    lut = np.zeros((256, 3), dtype=np.uint8)
    for cid, rgb in PALETTE.items():
        lut[cid] = rgb
    return lut[labels]


def bev_to_image(bev):
    """Display orientation for an X x Z BEV map: forward up, right to the right."""
    return np.ascontiguousarray(np.asarray(bev).T[::-1])


def image_to_bev(img):
    return np.ascontiguousarray(np.asarray(img)[::-1].T)


# -- poses and intrinsics -----------------------------------------------------------

def _floats(line, lineno, count):
    parts = line.split()
    if len(parts) != count:
        raise MalformedLine(f"line {lineno}: expected {count} numbers, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise MalformedLine(f"line {lineno}: non-numeric field") from None


# rotations already orthonormal to rounding level are kept bit-exact
_REORTHO = 1e-12


def parse_pose_line(line, lineno=1):
    """Parse ``frame r11 r12 r13 t1 r21 r22 r23 t2 r31 r32 r33 t3``."""
    vals = _floats(line, lineno, 13)
    if not float(vals[0]).is_integer():
        raise MalformedLine(f"line {lineno}: frame index must be an integer")
    m = np.array(vals[1:]).reshape(3, 4)
    R = m[:, :3]
    err = orthonormality_error(R)
    if not np.all(np.isfinite(m)) or err >= 1e-4 or np.linalg.det(R) <= 0:
        raise NonRigidRotation(f"line {lineno}: rotation is not rigid (|R^T R - I| = {err:.3g})")
    if err > _REORTHO:
        R = nearest_rotation(R)
    return int(vals[0]), Pose(R, m[:, 3])


def read_pose_table(path):
    """Return ``(frame_indices, poses)`` from a camera-to-world pose file."""
    indices, poses = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        idx, pose = parse_pose_line(line, lineno)
        indices.append(idx)
        poses.append(pose)
    return indices, poses


def read_poses(path):
    return read_pose_table(path)[1]


def format_pose_line(index, pose):
    m = np.hstack([pose.rotation, pose.translation[:, None]])
    return " ".join([str(int(index))] + [repr(float(x)) for x in m.ravel()])


def write_poses(path, poses, indices=None):
    indices = range(len(poses)) if indices is None else indices
    Path(path).write_text("".join(format_pose_line(i, p) + "\n" for i, p in zip(indices, poses)))


def read_intrinsics(path):
    lines = [l for l in Path(path).read_text().splitlines() if l.strip() and not l.startswith("#")]
    if len(lines) != 1:
        raise MalformedLine("intrinsics file must hold exactly one line")
    fx, fy, cx, cy, w, h = _floats(lines[0], 1, 6)
    if not (w.is_integer() and h.is_integer()):
        raise MalformedLine("image size must be integral")
    try:
        return CameraIntrinsics(fx, fy, cx, cy, int(w), int(h))
    except ValueError as e:
        raise MalformedLine(str(e)) from None


def write_intrinsics(path, K):
    Path(path).write_text(f"{K.fx!r} {K.fy!r} {K.cx!r} {K.cy!r} {K.width} {K.height}\n")


# -- run configuration ----------------------------------------------------------------

def _positive(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _any(x):
    return True


@dataclass(frozen=True)
class RunConfig:
    sequence_dir: str = ""
    output_dir: str = ""
    grid_nx: int = 96
    grid_ny: int = 8
    grid_nz: int = 96
    cell_size: float = 0.5
    grid_x_min: float = -24.0
    grid_y_min: float = -1.0
    grid_z_min: float = 0.0
    depth_bins: int = 48
    depth_min: float = 1.0
    depth_max: float = 49.0
    fv_rays: int = 48
    fv_min_depth: float = 1.0
    fv_max_depth: float = 49.0
    window_size: int = 10
    window_stride: int = 2
    dbscan_eps: float = 0.8
    dbscan_min_pts: int = 8
    closing_iters: int = 2
    ransac_iters: int = 200
    ransac_tol: float = 0.05
    seed: int = 0
    dynamic_classes: tuple = field(default=DYNAMIC_CLASSES)

    @property
    def grid_spec(self):
        return GridSpec(self.grid_nx, self.grid_ny, self.grid_nz, self.cell_size,
                        self.grid_x_min, self.grid_y_min, self.grid_z_min)

    @property
    def bev_spec(self):
        from .pseudolabel.bev import BevSpec

        return BevSpec(self.grid_nx, self.grid_nz, self.cell_size, self.grid_x_min, self.grid_z_min)

    def fv_spec(self, K):
        return FvSpec(K.height, K.width, self.fv_rays, self.fv_min_depth, self.fv_max_depth)

    def depth_edges(self):
        return np.linspace(self.depth_min, self.depth_max, self.depth_bins + 1)

    def with_overrides(self, **kw):
        return validate_config(replace(self, **kw))


_CHECKS = {
    "grid_nx": (_positive, "> 0"),
    "grid_ny": (_positive, "> 0"),
    "grid_nz": (_positive, "> 0"),
    "cell_size": (_positive, "> 0"),
    "grid_x_min": (_any, ""),
    "grid_y_min": (_any, ""),
    "grid_z_min": (_any, ""),
    "depth_bins": (_positive, "> 0"),
    "depth_min": (_positive, "> 0"),
    "depth_max": (_positive, "> 0"),
    "fv_rays": (_positive, "> 0"),
    "fv_min_depth": (_positive, "> 0"),
    "fv_max_depth": (_positive, "> 0"),
    "window_size": (_positive, "> 0"),
    "window_stride": (_positive, "> 0"),
    "dbscan_eps": (_positive, "> 0"),
    "dbscan_min_pts": (_positive, ">= 1"),
    "closing_iters": (_nonneg, ">= 0"),
    "ransac_iters": (_positive, ">= 1"),
    "ransac_tol": (_positive, "> 0"),
    "seed": (lambda s: 0 <= s < 2**64, "in [0, 2^64)"),
}


def validate_config(cfg):
    for key, (ok, desc) in _CHECKS.items():
        val = getattr(cfg, key)
        if not (isinstance(val, int) or math.isfinite(val)) or not ok(val):
            raise OutOfRange(f"{key}={val} must be {desc}")
    if cfg.depth_max <= cfg.depth_min:
        raise OutOfRange("depth_max must exceed depth_min")
    if cfg.fv_max_depth < cfg.fv_min_depth:
        raise OutOfRange("fv_max_depth must be >= fv_min_depth")
    return cfg


def _convert(name, typ, raw):
    try:
        if name == "dynamic_classes":
            items = [s for s in raw.split(",") if s.strip()]
            return tuple(class_id(s) for s in items)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return raw
    except (ValueError, KeyError):
        raise OutOfRange(f"{name}: cannot parse {raw!r}") from None


_LINE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*?)\s*$")


def parse_config_text(text):
    """Parse ``key=value`` lines (``#`` starts a comment) over the defaults."""
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0]
        if not line.strip():
            continue
        m = _LINE.match(line)
        if not m:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, raw = m.groups()
        if key not in types:
            raise UnknownKey(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, types[key], raw)
    return validate_config(RunConfig(**values))


def parse_config(path):
    return parse_config_text(Path(path).read_text())


def format_config(cfg):
    lines = []
    for f in fields(cfg):
        val = getattr(cfg, f.name)
        if f.name == "dynamic_classes":
            val = ",".join(CLASS_NAMES[c] for c in val)
        lines.append(f"{f.name}={val}")
    return "\n".join(lines) + "\n"


def write_effective_config(out_dir, cfg):
    path = Path(out_dir) / "config.effective.txt"
    path.write_text(format_config(cfg))
    return path
