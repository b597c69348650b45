"""Deterministic synthetic street scenes with exact semantics, depth and BEV truth.

World frame = camera frame of the first trajectory pose (x right, y down,
z forward); the ground is the plane ``y = camera_height``. The road runs
along world z. Lateral bands, measured on world x::

    road      [-r, r)
    sidewalk  [r, r + s)        and mirrored
    terrain   [r + s, r + s + t) and mirrored
    beyond    unlabelled ground (255)

Buildings stand beyond a small unlabelled gap with their walls on BEV cell
centers, so that lifted wall points fall inside the closed footprint.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .classes import (BUILDING, CAR, IGNORE, PERSON, ROAD, SIDEWALK, TERRAIN, TRUCK,
                      TWO_WHEELER, CLASS_NAMES)
from .geometry import CameraIntrinsics, Pose, rotation_y, transform_points
from .pseudolabel.bev import BevMap, BevSpec

_EPS = 1e-9
NO_HIT = np.inf


@dataclass(frozen=True)
class Box:
    """Upright box standing on the ground; footprint is an oriented rectangle."""

    x: float
    z: float
    length: float  # along the heading (local z)
    width: float  # across the heading (local x)
    height: float
    yaw: float  # heading angle; 0 = along +z
    cls: int
    speed: float = 0.0  # metres per frame along the heading

    def center_at(self, t):
        return (self.x + self.speed * t * np.sin(self.yaw), self.z + self.speed * t * np.cos(self.yaw))


@dataclass(frozen=True)
class Cylinder:
    x: float
    z: float
    radius: float
    height: float
    cls: int


@dataclass(frozen=True)
class SceneConfig:
    camera_height: float = 1.55
    road_half_width: float = 4.0
    sidewalk_width: float = 2.0
    terrain_width: float = 4.0
    building_gap: float = 0.75
    buildings: tuple = (2, 6)
    vehicles: tuple = (1, 5)
    vehicle_zone: tuple = (6.0, 10.0)  # rear bumper of the first vehicle
    vehicle_reach: float = 22.0  # no vehicle centre beyond this z
    min_visibility: float = 0.7  # fraction of a vehicle's silhouette visible from the first pose
    vehicle_yaw: float = 0.03
    persons: tuple = (0, 3)
    frames: int = 12
    spacing: float = 0.8
    arc_start: int = -1  # frame index where the trajectory starts to turn; -1 = straight
    arc_yaw_per_frame: float = 0.02
    moving: bool = False  # constant-velocity dynamic objects
    vehicle_speed: float = 0.6
    depth_noise: float = 0.0


@dataclass
class SceneSpec:
    seed: int
    config: SceneConfig
    buildings: list = field(default_factory=list)
    vehicles: list = field(default_factory=list)
    persons: list = field(default_factory=list)
    trajectory: list = field(default_factory=list)  # camera-to-world poses

    def to_text(self):
        """``key=value`` manifest; byte-identical for identical scenes."""
        out = [f"seed={self.seed}"]
        for k, v in asdict(self.config).items():
            out.append(f"config.{k}={v}")
        for name, items in (("building", self.buildings), ("vehicle", self.vehicles),
                            ("person", self.persons)):
            for i, obj in enumerate(items):
                out.append("")
                out.append(f"[{name} {i}]")
                for k, v in asdict(obj).items():
                    out.append(f"{k}={CLASS_NAMES[v] if k == 'cls' else repr(float(v))}")
        for i, p in enumerate(self.trajectory):
            out.append("")
            out.append(f"[pose {i}]")
            out.append("R=" + " ".join(repr(float(x)) for x in p.rotation.ravel()))
            out.append("t=" + " ".join(repr(float(x)) for x in p.translation))
        return "\n".join(out) + "\n"


def default_camera():
    return CameraIntrinsics(fx=192.0, fy=192.0, cx=191.5, cy=63.5, width=384, height=128)


def _trajectory(cfg):
    poses = []
    x = z = yaw = 0.0
    for k in range(cfg.frames):
        poses.append(Pose(rotation_y(yaw), (x, 0.0, z)))
        if 0 <= cfg.arc_start <= k:
            yaw += cfg.arc_yaw_per_frame
        x += cfg.spacing * np.sin(yaw)
        z += cfg.spacing * np.cos(yaw)
    return poses


def _snap_center(v, cell=0.5):
    """Round to the nearest BEV cell center of a lattice with faces at multiples of ``cell``."""
    return (np.floor(v / cell) + 0.5) * cell


def generate_scene(seed, config: SceneConfig | None = None) -> SceneSpec:
    cfg = config or SceneConfig()
    rng = np.random.default_rng(seed)
    r, s, t = cfg.road_half_width, cfg.sidewalk_width, cfg.terrain_width

    buildings = []
    n_b = int(rng.integers(cfg.buildings[0], cfg.buildings[1] + 1))
    z_next = {-1: float(rng.uniform(0, 8)), 1: float(rng.uniform(0, 8))}
    inner = _snap_center(r + s + t + cfg.building_gap)
    for _ in range(n_b):
        side = 1 if rng.random() < 0.5 else -1
        length = _snap_center(rng.uniform(6, 14)) - 0.25
        depth = _snap_center(rng.uniform(5, 10)) - 0.25
        z0 = _snap_center(z_next[side])
        z_next[side] = z0 + length + rng.uniform(2, 6)
        x_near = side * inner
        x_far = side * (inner + depth)
        buildings.append(Box(
            x=(x_near + x_far) / 2, z=z0 + length / 2, length=length, width=depth,
            height=float(rng.uniform(4, 12)), yaw=0.0, cls=BUILDING,
        ))

    vehicles = []
    n_v = int(rng.integers(cfg.vehicles[0], cfg.vehicles[1] + 1))
    # Parked along alternating curbs. A candidate is skipped when it sits
    # past the reach (its side would be seen edge-on) or when the vehicles
    # already placed hide too much of it from the first pose.
    trajectory = _trajectory(cfg)
    z_next = float(rng.uniform(*cfg.vehicle_zone))
    side = 1 if rng.random() < 0.5 else -1
    for _ in range(n_v):
        truck = rng.random() < 0.2
        length, width, height = (7.0, 2.4, 3.0) if truck else (4.2, 1.8, 1.5)
        zc = z_next + length / 2
        z_next = zc + length / 2 + rng.uniform(0.5, 3)
        xc = side * (r - width / 2 - rng.uniform(0.2, 0.5))
        yaw = float(rng.uniform(-cfg.vehicle_yaw, cfg.vehicle_yaw))
        side = -side
        if vehicles and zc > cfg.vehicle_reach:
            break
        box = Box(x=float(xc), z=float(zc), length=length, width=width, height=height, yaw=yaw,
                  cls=TRUCK if truck else CAR,
                  speed=cfg.vehicle_speed if cfg.moving else 0.0)
        probe = SceneSpec(int(seed), cfg, vehicles=vehicles + [box])
        seen, alone = vehicle_visibility(probe, trajectory[0], default_camera())[-1]
        if not vehicles or seen >= cfg.min_visibility * alone:
            vehicles.append(box)

    persons = []
    n_p = int(rng.integers(cfg.persons[0], cfg.persons[1] + 1))
    for _ in range(n_p):
        side = 1 if rng.random() < 0.5 else -1
        bike = rng.random() < 0.3
        persons.append(Cylinder(
            x=float(side * (r + s / 2)), z=float(rng.uniform(6, 35)),
            radius=0.5 if bike else 0.3, height=1.2 if bike else 1.7,
            cls=TWO_WHEELER if bike else PERSON,
        ))

    return SceneSpec(int(seed), cfg, buildings, vehicles, persons, trajectory)


# -- ray casting --------------------------------------------------------------------

def ground_class(scene, x):
    cfg = scene.config
    ax = np.asarray(x, dtype=np.float64)
    r, s, t = cfg.road_half_width, cfg.sidewalk_width, cfg.terrain_width
    out = np.full(ax.shape, IGNORE, dtype=np.uint8)
    out[(ax >= -(r + s + t)) & (ax < r + s + t)] = TERRAIN
    out[(ax >= -(r + s)) & (ax < r + s)] = SIDEWALK
    out[(ax >= -r) & (ax < r)] = ROAD
    return out


def _box_hits(box, o, d, h, time):
    """Ray parameter of the entry point into ``box`` (inf when missed)."""
    cx, cz = box.center_at(time)
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    # world -> box local (local z = heading)
    ox, oz = o[..., 0] - cx, o[..., 2] - cz
    lo = np.stack([c * ox - s * oz, o[..., 1], s * ox + c * oz], axis=-1)
    ld = np.stack([c * d[..., 0] - s * d[..., 2], d[..., 1], s * d[..., 0] + c * d[..., 2]], axis=-1)
    lo_b = np.array([-box.width / 2, h - box.height, -box.length / 2])
    hi_b = np.array([box.width / 2, h, box.length / 2])
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo_b - lo) / ld
        t2 = (hi_b - lo) / ld
    tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
    tmax = np.where(np.isnan(t2), np.inf, np.maximum(t1, t2))
    # rays parallel to a slab: inside -> unconstrained, outside -> miss
    par = ld == 0
    inside = (lo >= lo_b) & (lo <= hi_b)
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), tmax)
    t_near = tmin.max(axis=-1)
    t_far = tmax.min(axis=-1)
    hit = (t_near <= t_far) & (t_near > 0)
    return np.where(hit, t_near, NO_HIT)


def _cylinder_hits(cyl, o, d, h):
    ox, oz = o[..., 0] - cyl.x, o[..., 2] - cyl.z
    dx, dz = d[..., 0], d[..., 2]
    a = dx * dx + dz * dz
    b = 2 * (ox * dx + oz * dz)
    c = ox * ox + oz * oz - cyl.radius ** 2
    disc = b * b - 4 * a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        t_side = (-b - np.sqrt(np.maximum(disc, 0))) / (2 * a)
    y = o[..., 1] + t_side * d[..., 1]
    side_ok = (disc >= 0) & (a > 0) & (t_side > 0) & (y >= h - cyl.height) & (y <= h)
    best = np.where(side_ok, t_side, NO_HIT)
    top = h - cyl.height
    with np.errstate(divide="ignore", invalid="ignore"):
        t_cap = (top - o[..., 1]) / d[..., 1]
    px = ox + t_cap * dx
    pz = oz + t_cap * dz
    cap_ok = (t_cap > 0) & (px * px + pz * pz <= cyl.radius ** 2) & np.isfinite(t_cap)
    return np.minimum(best, np.where(cap_ok, t_cap, NO_HIT))


def _cast(scene: SceneSpec, pose: Pose, K: CameraIntrinsics, time, objects=None):
    """Nearest hit per pixel center: ``(ray parameter, label, object index)``.

    Object indices enumerate buildings, then vehicles, then persons; ground
    and misses get -1. ``objects`` restricts casting to a subset of indices.
    """
    h = scene.config.camera_height
    us, vs = np.meshgrid(np.arange(K.width, dtype=np.float64), np.arange(K.height, dtype=np.float64))
    d_cam = np.stack([(us - K.cx) / K.fx, (vs - K.cy) / K.fy, np.ones_like(us)], axis=-1)
    d = d_cam @ pose.rotation.T
    o = np.broadcast_to(pose.translation, d.shape)

    best = np.full(us.shape, NO_HIT)
    label = np.full(us.shape, IGNORE, dtype=np.uint8)
    index = np.full(us.shape, -1, dtype=np.int64)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = np.where(d[..., 1] > 0, (h - o[..., 1]) / d[..., 1], NO_HIT)
    ok = np.isfinite(t_ground) & (t_ground > 0)
    gx = o[..., 0] + np.where(ok, t_ground, 0.0) * d[..., 0]
    best = np.where(ok, t_ground, best)
    label = np.where(ok, ground_class(scene, np.where(ok, gx, 0.0)), label)

    everything = list(scene.buildings) + list(scene.vehicles) + list(scene.persons)
    n_b, n_v = len(scene.buildings), len(scene.vehicles)
    for i, obj in enumerate(everything):
        if objects is not None and i not in objects:
            continue
        if i < n_b:
            t = _box_hits(obj, o, d, h, 0.0)
        elif i < n_b + n_v:
            t = _box_hits(obj, o, d, h, time)
        else:
            t = _cylinder_hits(obj, o, d, h)
        closer = t < best
        best = np.where(closer, t, best)
        label = np.where(closer, np.uint8(obj.cls), label)
        index = np.where(closer, i, index)
    return best, label, index


def render_frame(scene: SceneSpec, pose: Pose, K: CameraIntrinsics, time=0.0, rng=None):
    """Ray-cast labels and z-depth for every pixel center.

    Returns ``(semantic uint8 H x W, depth float32 H x W)``. Pixels whose ray
    hits nothing get label 255 and depth 0; unlabelled ground keeps its depth.
    """
    best, label, _ = _cast(scene, pose, K, time)
    depth = np.where(np.isfinite(best), best, 0.0)
    label = np.where(np.isfinite(best), label, IGNORE).astype(np.uint8)
    if scene.config.depth_noise > 0:
        rng = rng if rng is not None else np.random.default_rng(scene.seed)
        noisy = depth + rng.normal(0.0, scene.config.depth_noise, depth.shape)
        depth = np.where(depth > 0, np.maximum(noisy, 1e-3), 0.0)
    return label, depth.astype(np.float32)


def vehicle_visibility(scene: SceneSpec, pose: Pose, K: CameraIntrinsics, time=0.0):
    """Per vehicle: ``(visible pixels, pixels it would cover with nothing else in the scene)``."""
    _, _, index = _cast(scene, pose, K, time)
    n_b = len(scene.buildings)
    out = []
    for j in range(len(scene.vehicles)):
        _, _, alone = _cast(scene, pose, K, time, objects={n_b + j})
        out.append((int(np.sum(index == n_b + j)), int(np.sum(alone == n_b + j))))
    return out


def _in_box(box, x, z, time):
    cx, cz = box.center_at(time)
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    lx = c * (x - cx) - s * (z - cz)
    lz = s * (x - cx) + c * (z - cz)
    return (np.abs(lx) <= box.width / 2 + _EPS) & (np.abs(lz) <= box.length / 2 + _EPS)


def render_bev_gt(scene: SceneSpec, anchor_pose: Pose, spec: BevSpec | None = None, time=0.0,
                  include_dynamic=True) -> BevMap:
    """Occlusion-agnostic top-down truth in the anchor camera's BEV lattice."""
    spec = spec or BevSpec()
    c = spec.centers()
    h = scene.config.camera_height
    pts = np.stack([c[..., 0], np.full(c.shape[:2], h), c[..., 1]], axis=-1)
    w = transform_points(anchor_pose, pts)
    x, z = w[..., 0], w[..., 2]
    out = ground_class(scene, x)
    for b in scene.buildings:
        out[_in_box(b, x, z, 0.0)] = b.cls
    if include_dynamic:
        for v in scene.vehicles:
            out[_in_box(v, x, z, time)] = v.cls
        for p in scene.persons:
            out[(x - p.x) ** 2 + (z - p.z) ** 2 <= p.radius ** 2 + _EPS] = p.cls
    return BevMap(out.astype(np.uint8), spec)


def render_sequence(scene, K=None):
    """Render every trajectory frame; yields ``(index, pose, semantic, depth)``."""
    K = K or default_camera()
    rng = np.random.default_rng([scene.seed, 1])
    for i, pose in enumerate(scene.trajectory):
        sem, depth = render_frame(scene, pose, K, time=float(i), rng=rng)
        yield i, pose, sem, depth
