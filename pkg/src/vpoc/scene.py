"""Procedural strawberry plants, hemisphere camera geometry and a ray-cast renderer.

World frame: plant base at the origin, ``+z`` up, ground plane at ``z = 0``.
Camera frame (OpenCV style): ``x`` right, ``y`` down, ``z`` along the optical
axis. Pixel ``(col, row)`` covers ``[col, col + 1) x [row, row + 1)`` and is
sampled at its center.
"""

from __future__ import annotations

import colorsys
import enum
import json
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from . import kernels
from .errors import ConfigError, DegeneratePoseError, GeometryError
from .rng import stream


class Ripeness(str, enum.Enum):
    RIPE = "ripe"
    UNRIPE = "unripe"


@dataclass(frozen=True)
class Berry:
    center: tuple[float, float, float]
    radius: float
    ripeness: Ripeness

    @property
    def ripe(self):
        return self.ripeness is Ripeness.RIPE


@dataclass(frozen=True)
class Leaf:
    """Opaque elliptical disk.

    The first semi-axis lies along the radial direction from the plant stem
    (projected into the leaf plane), so leaves fan outward; the second is
    perpendicular to it within the plane.
    """

    center: tuple[float, float, float]
    normal: tuple[float, float, float]
    semi_axes: tuple[float, float]

    def in_plane_axis(self):
        n = np.asarray(self.normal)
        radial = np.array([self.center[0], self.center[1], 0.0])
        u = radial - (radial @ n) * n
        if np.linalg.norm(u) < 1e-9:
            u = np.array([1.0, 0.0, 0.0]) - n[0] * n
            if np.linalg.norm(u) < 1e-9:
                u = np.array([0.0, 1.0, 0.0]) - n[1] * n
        return u / np.linalg.norm(u)


@dataclass(frozen=True)
class PlantScene:
    berries: tuple[Berry, ...]
    leaves: tuple[Leaf, ...]
    seed: int

    @cached_property
    def sphere_array(self):
        arr = np.array([[*b.center, b.radius] for b in self.berries], dtype=np.float64)
        return np.ascontiguousarray(arr.reshape(-1, 4))

    @cached_property
    def disk_array(self):
        rows = [[*lf.center, *lf.normal, *lf.in_plane_axis(), *lf.semi_axes] for lf in self.leaves]
        return np.ascontiguousarray(np.array(rows, dtype=np.float64).reshape(-1, 11))

    def to_dict(self):
        return {
            "seed": self.seed,
            "berries": [
                {"center": list(b.center), "radius": b.radius, "ripeness": b.ripeness.value}
                for b in self.berries
            ],
            "leaves": [
                {"center": list(lf.center), "normal": list(lf.normal), "semi_axes": list(lf.semi_axes)}
                for lf in self.leaves
            ],
        }

    @classmethod
    def from_dict(cls, data):
        berries = tuple(
            Berry(tuple(b["center"]), float(b["radius"]), Ripeness(b["ripeness"])) for b in data["berries"]
        )
        leaves = tuple(
            Leaf(tuple(lf["center"]), tuple(lf["normal"]), tuple(lf["semi_axes"])) for lf in data["leaves"]
        )
        return cls(berries, leaves, int(data["seed"]))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass
class SceneConfig:
    """Plant generator parameters (meters, radians)."""

    berry_count_min: int = 3
    berry_count_max: int = 10
    berry_radius_min: float = 0.008
    berry_radius_max: float = 0.02
    ripe_prob: float = 0.4
    leaf_count_min: int = 8
    leaf_count_max: int = 16
    leaf_semi_min: float = 0.03
    leaf_semi_max: float = 0.07
    plant_radius: float = 0.15
    plant_height: float = 0.12
    # trusses droop outward below a central leaf canopy: berries sit low on the
    # outer ring, leaves stay nearer the crown
    berry_height_frac: float = 0.55
    berry_radial_min_frac: float = 0.7
    leaf_height_min_frac: float = 0.55
    leaf_radial_max_frac: float = 0.6
    leaf_tilt_max: float = 0.6

    def validate(self):
        if not 0 <= self.berry_count_min <= self.berry_count_max:
            raise ConfigError("berry_count_min must be in [0, berry_count_max]")
        if not 0 < self.berry_radius_min <= self.berry_radius_max:
            raise ConfigError("berry radius bounds must satisfy 0 < min <= max")
        if not 0.0 <= self.ripe_prob <= 1.0:
            raise ConfigError("ripe_prob must lie in [0, 1]")
        if not 0 <= self.leaf_count_min <= self.leaf_count_max:
            raise ConfigError("leaf_count_min must be in [0, leaf_count_max]")
        if not 0 < self.leaf_semi_min <= self.leaf_semi_max:
            raise ConfigError("leaf semi-axis bounds must satisfy 0 < min <= max")
        if self.plant_radius <= 0 or self.plant_height <= 0:
            raise ConfigError("plant dimensions must be positive")
        if self.berry_radius_max * 2 > self.plant_height:
            raise ConfigError("berries do not fit inside the plant height")
        for name in ("berry_height_frac", "berry_radial_min_frac", "leaf_height_min_frac", "leaf_radial_max_frac"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.leaf_tilt_max < math.pi / 2:
            raise ConfigError("leaf_tilt_max must lie in [0, pi/2)")
        return self


def _leaf_over_berry(leaf, berry):
    dx = leaf.center[0] - berry.center[0]
    dy = leaf.center[1] - berry.center[1]
    return math.hypot(dx, dy) < max(leaf.semi_axes) + berry.radius


def generate_plant(seed, config=None):
    """Sample a plant. Pure function of ``(seed, config)``."""
    cfg = (config or SceneConfig()).validate()
    rng = stream(seed, "plant")
    h = cfg.plant_height
    berries = []
    n_berries = int(rng.integers(cfg.berry_count_min, cfg.berry_count_max + 1))
    for _ in range(n_berries):
        radius = float(rng.uniform(cfg.berry_radius_min, cfg.berry_radius_max))
        ripe = bool(rng.random() < cfg.ripe_prob)
        for _attempt in range(20):
            r = cfg.plant_radius * math.sqrt(rng.uniform(cfg.berry_radial_min_frac**2, 1.0))
            a = rng.uniform(0.0, 2 * math.pi)
            z_hi = max(radius, cfg.berry_height_frac * h)
            z = float(rng.uniform(radius, z_hi))
            c = (r * math.cos(a), r * math.sin(a), z)
            clear = all(
                math.dist(c, b.center) > radius + b.radius for b in berries
            )
            if clear:
                break
        berries.append(Berry(c, radius, Ripeness.RIPE if ripe else Ripeness.UNRIPE))

    leaves = []
    n_leaves = int(rng.integers(cfg.leaf_count_min, cfg.leaf_count_max + 1))
    for _ in range(n_leaves):
        r = cfg.leaf_radial_max_frac * cfg.plant_radius * math.sqrt(rng.random())
        a = rng.uniform(0.0, 2 * math.pi)
        z = float(rng.uniform(cfg.leaf_height_min_frac * h, h))
        tilt = rng.uniform(0.0, cfg.leaf_tilt_max)
        tilt_dir = rng.uniform(0.0, 2 * math.pi)
        normal = (
            math.sin(tilt) * math.cos(tilt_dir),
            math.sin(tilt) * math.sin(tilt_dir),
            math.cos(tilt),
        )
        semi = (
            float(rng.uniform(cfg.leaf_semi_min, cfg.leaf_semi_max)),
            float(rng.uniform(cfg.leaf_semi_min, cfg.leaf_semi_max)),
        )
        leaves.append(Leaf((r * math.cos(a), r * math.sin(a), z), normal, semi))

    if berries and leaves and not any(_leaf_over_berry(lf, b) for lf in leaves for b in berries):
        lf, b = leaves[0], berries[0]
        leaves[0] = Leaf((b.center[0], b.center[1], lf.center[2]), lf.normal, lf.semi_axes)

    return PlantScene(tuple(berries), tuple(leaves), int(seed))


# ---------------------------------------------------------------------------
# camera geometry


@dataclass(frozen=True)
class CameraPose:
    theta: float
    phi: float
    radius: float = 0.5

    @property
    def position(self):
        s = math.sin(self.phi)
        return np.array(
            [self.radius * s * math.cos(self.theta), self.radius * s * math.sin(self.theta), self.radius * math.cos(self.phi)]
        )


@dataclass(frozen=True)
class Workspace:
    """Reachable polar band; azimuth wraps freely."""

    phi_min: float = math.radians(10.0)
    phi_max: float = math.radians(80.0)

    def __post_init__(self):
        if not 0.0 < self.phi_min < self.phi_max < math.pi / 2:
            raise ConfigError("workspace needs 0 < phi_min < phi_max < pi/2")

    def contains(self, phi):
        return self.phi_min <= phi <= self.phi_max


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int = 64
    height: int = 64
    fov: float = math.pi / 2

    def __post_init__(self):
        if self.width != self.height or self.width < 1:
            raise ConfigError("frames must be square with positive size")
        if not 0.0 < self.fov < math.pi:
            raise ConfigError("fov must lie in (0, pi)")

    @property
    def focal(self):
        return self.width / (2.0 * math.tan(self.fov / 2.0))


@dataclass(frozen=True)
class RigidTransform:
    """Camera-to-world transform; ``rotation`` columns are right, down, forward."""

    rotation: np.ndarray
    origin: np.ndarray

    @property
    def right(self):
        return self.rotation[:, 0]

    @property
    def down(self):
        return self.rotation[:, 1]

    @property
    def forward(self):
        return self.rotation[:, 2]

    def to_camera(self, points):
        return (np.asarray(points, dtype=np.float64) - self.origin) @ self.rotation

    def to_world(self, points):
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.origin


def _cross3(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def _unit3(v):
    return v / math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])


def pose_to_world(pose):
    if pose.radius <= 0:
        raise GeometryError("hemisphere radius must be positive")
    if abs(math.sin(pose.phi)) < 1e-12:
        raise DegeneratePoseError("camera up vector is undefined at the zenith")
    p = pose.position
    forward = _unit3(-p)
    up = _unit3(np.array([0.0, 0.0, 1.0]) - forward[2] * forward)
    right = _cross3(forward, up)
    return RigidTransform(np.column_stack([right, -up, forward]), p)


@dataclass(frozen=True)
class BoundingBox:
    """Integer pixel box, half-open: columns ``[x_min, x_max)``, rows ``[y_min, y_max)``."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise GeometryError(f"degenerate box {self.as_list()}")

    @property
    def area(self):
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def center(self):
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def as_list(self):
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(frozen=True)
class SphereProjection:
    """Continuous silhouette extent in pixel coordinates, before clipping."""

    x0: float
    y0: float
    x1: float
    y1: float
    diameter_px: float
    center_px: tuple[float, float]


def _tangent_bounds(a, z, rho):
    s = math.sqrt(max(a * a + z * z - rho * rho, 0.0))
    d = z * z - rho * rho
    return (a * z - rho * s) / d, (a * z + rho * s) / d


def sphere_silhouette(center, radius, transform, intrinsics):
    """Exact image-plane extent of a sphere, or ``None`` when not in front of the camera."""
    x, y, z = transform.to_camera(center)
    if math.sqrt(x * x + y * y + z * z) <= radius:
        raise GeometryError("camera origin lies inside the sphere")
    if z <= radius:
        return None
    f = intrinsics.focal
    cx, cy = intrinsics.width / 2.0, intrinsics.height / 2.0
    ux0, ux1 = _tangent_bounds(x, z, radius)
    vy0, vy1 = _tangent_bounds(y, z, radius)
    dist = math.sqrt(x * x + y * y + z * z)
    diameter = 2.0 * f * radius / math.sqrt(dist * dist - radius * radius)
    return SphereProjection(cx + f * ux0, cy + f * vy0, cx + f * ux1, cy + f * vy1, diameter, (cx + f * x / z, cy + f * y / z))


def project_sphere(berry, pose, intrinsics=None, transform=None):
    """Pixel box covering every pixel the projected silhouette touches, clipped to the frame."""
    intrinsics = intrinsics or CameraIntrinsics()
    tf = transform or pose_to_world(pose)
    x, y, z = tf.to_camera(berry.center)
    if math.sqrt(x * x + y * y + z * z) <= berry.radius:
        raise GeometryError("camera origin lies inside the berry")
    w, h = intrinsics.width, intrinsics.height
    if z <= -berry.radius:
        return None
    if z <= berry.radius:
        # straddles the image plane: silhouette is unbounded
        return BoundingBox(0, 0, w, h)
    sil = sphere_silhouette(berry.center, berry.radius, tf, intrinsics)
    if sil.x1 <= 0 or sil.y1 <= 0 or sil.x0 >= w or sil.y0 >= h:
        return None
    x_min = max(0, math.floor(sil.x0))
    y_min = max(0, math.floor(sil.y0))
    x_max = min(w, max(math.ceil(sil.x1), x_min + 1))
    y_max = min(h, max(math.ceil(sil.y1), y_min + 1))
    return BoundingBox(x_min, y_min, x_max, y_max)


# ---------------------------------------------------------------------------
# visibility

_GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


@lru_cache(maxsize=16)
def _sunflower(samples):
    k = np.arange(samples, dtype=np.float64)
    r = np.sqrt((k + 0.5) / samples)
    ang = k * _GOLDEN_ANGLE
    return np.column_stack([r * np.cos(ang), r * np.sin(ang)])


def _silhouette_points(center, radius, eye, samples):
    """Stratified points on the eye-facing hemisphere, evenly spread over its silhouette disk."""
    c = np.asarray(center, dtype=np.float64)
    w = _unit3(eye - c)
    helper = np.array([1.0, 0.0, 0.0]) if abs(w[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = _unit3(_cross3(w, helper))
    e2 = _cross3(w, e1)
    ab = _sunflower(samples) * (radius * 0.999)
    lift = np.sqrt(np.maximum(radius * radius - (ab * ab).sum(axis=1), 0.0))
    return np.ascontiguousarray(c + ab[:, :1] * e1 + ab[:, 1:] * e2 + lift[:, None] * w)


def _berry_index(berry, scene):
    if isinstance(berry, (int, np.integer)):
        return int(berry), scene.berries[int(berry)]
    try:
        return scene.berries.index(berry), berry
    except ValueError:
        return -1, berry


def visible_fraction(berry, scene, pose, samples=64):
    """Fraction of the berry's camera-facing surface with a clear line of sight.

    ``berry`` may be a :class:`Berry` or its index in ``scene.berries``.
    """
    if samples < 1:
        raise ConfigError("samples must be >= 1")
    idx, b = _berry_index(berry, scene)
    eye = pose.position
    pts = _silhouette_points(b.center, b.radius, eye, samples)
    blocked = kernels.segments_blocked(pts, np.ascontiguousarray(eye), scene.sphere_array, scene.disk_array, idx)
    return float(samples - int(np.count_nonzero(blocked))) / samples


def visible_fractions(scene, pose, samples=64):
    return np.array([visible_fraction(i, scene, pose, samples) for i in range(len(scene.berries))])


# ---------------------------------------------------------------------------
# rendering

LIGHT_DIR = np.array([0.3, -0.2, 1.0]) / np.linalg.norm([0.3, -0.2, 1.0])
BERRY_AMBIENT = 0.55
LEAF_AMBIENT = 0.5

# (hue degrees, hue jitter degrees, saturation, value)
RIPE_HSV = (0.0, 8.0, 0.82, 0.92)
UNRIPE_HSV = (82.0, 12.0, 0.32, 0.95)
LEAF_HSV = (115.0, 8.0, 0.65, 0.42)
GROUND_RGB = colorsys.hsv_to_rgb(30.0 / 360.0, 0.6, 0.45)
BACKDROP_RGB = colorsys.hsv_to_rgb(28.0 / 360.0, 0.35, 0.6)
GROUND_Z = 0.0


def _jittered_rgb(spec, rng):
    hue, jitter, s, v = spec
    h = ((hue + rng.uniform(-jitter, jitter)) % 360.0) / 360.0
    return colorsys.hsv_to_rgb(h, s, v)


def primitive_colors(scene):
    """Per-berry and per-leaf base RGB; the jitter is a pure function of the scene seed."""
    berry_rgb = np.array(
        [_jittered_rgb(RIPE_HSV if b.ripe else UNRIPE_HSV, stream(scene.seed, "hue", "berry", i)) for i, b in enumerate(scene.berries)]
    ).reshape(-1, 3)
    leaf_rgb = np.array(
        [_jittered_rgb(LEAF_HSV, stream(scene.seed, "hue", "leaf", i)) for i in range(len(scene.leaves))]
    ).reshape(-1, 3)
    return berry_rgb, leaf_rgb


@lru_cache(maxsize=8)
def _camera_rays(width, height, fov):
    f = CameraIntrinsics(width, height, fov).focal
    cols = (np.arange(width) + 0.5 - width / 2.0) / f
    rows = (np.arange(height) + 0.5 - height / 2.0) / f
    u, v = np.meshgrid(cols, rows)
    d = np.stack([u, v, np.ones_like(u)], axis=-1).reshape(-1, 3)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


@dataclass(frozen=True)
class Frame:
    pixels: np.ndarray = field(repr=False)
    pose: CameraPose

    def __eq__(self, other):
        return isinstance(other, Frame) and self.pose == other.pose and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


def cast_pixels(scene, pose, intrinsics=None):
    """Ray cast every pixel; returns ``(t, kind, index, dirs)`` with flat arrays."""
    intrinsics = intrinsics or CameraIntrinsics()
    tf = pose_to_world(pose)
    dirs = np.ascontiguousarray(_camera_rays(intrinsics.width, intrinsics.height, intrinsics.fov) @ tf.rotation.T)
    origins = np.ascontiguousarray(np.broadcast_to(tf.origin, dirs.shape))
    t, kind, index = kernels.cast_rays(origins, dirs, scene.sphere_array, scene.disk_array, GROUND_Z)
    return t, kind, index, dirs


def render(scene, pose, intrinsics=None):
    intrinsics = intrinsics or CameraIntrinsics()
    t, kind, index, dirs = cast_pixels(scene, pose, intrinsics)
    eye = pose.position
    n = t.shape[0]
    rgb = np.empty((n, 3))
    rgb[:] = BACKDROP_RGB
    berry_rgb, leaf_rgb = primitive_colors(scene)

    m = kind == kernels.HIT_GROUND
    rgb[m] = GROUND_RGB

    m = kind == kernels.HIT_SPHERE
    if m.any():
        idx = index[m]
        hit = eye + t[m, None] * dirs[m]
        normal = (hit - scene.sphere_array[idx, :3]) / scene.sphere_array[idx, 3:4]
        shade = BERRY_AMBIENT + (1.0 - BERRY_AMBIENT) * np.clip(normal @ LIGHT_DIR, 0.0, 1.0)
        rgb[m] = berry_rgb[idx] * shade[:, None]

    m = kind == kernels.HIT_DISK
    if m.any():
        idx = index[m]
        normal = scene.disk_array[idx, 3:6]
        facing = np.einsum("nk,nk->n", normal, dirs[m])
        normal = np.where(facing[:, None] > 0, -normal, normal)
        shade = LEAF_AMBIENT + (1.0 - LEAF_AMBIENT) * np.clip(normal @ LIGHT_DIR, 0.0, 1.0)
        rgb[m] = leaf_rgb[idx] * shade[:, None]

    pixels = np.rint(rgb * 255.0).astype(np.uint8).reshape(intrinsics.height, intrinsics.width, 3)
    return Frame(pixels, pose)


def berry_mask(scene, pose, berry_index, intrinsics=None):
    """Boolean (H, W) mask of pixels whose nearest hit is the given berry."""
    intrinsics = intrinsics or CameraIntrinsics()
    _, kind, index, _ = cast_pixels(scene, pose, intrinsics)
    m = (kind == kernels.HIT_SPHERE) & (index == berry_index)
    return m.reshape(intrinsics.height, intrinsics.width)

