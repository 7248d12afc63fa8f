"""Detector data collection: sample viewpoints, render, project berries, drop occluded boxes."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from matplotlib.colors import rgb_to_hsv

from .errors import ConfigError, FormatError, GeometryError, StorageError
from .rng import stream
from .scene import (
    BoundingBox,
    CameraIntrinsics,
    CameraPose,
    Frame,
    Ripeness,
    SceneConfig,
    Workspace,
    generate_plant,
    project_sphere,
    render,
)

__all__ = [
    "Annotation",
    "AnnotatedFrame",
    "BoundingBox",
    "DatasetConfig",
    "HueHeuristic",
    "class_hue_mask",
    "collect",
    "load_dataset",
    "occlusion_check",
    "read_ppm",
    "sample_poses",
    "save_dataset",
    "split",
    "write_ppm",
]


@dataclass
class HueHeuristic:
    """Per-class hue windows (degrees) and acceptance thresholds for the occlusion test."""

    ripe_hue_lo: float = 345.0
    ripe_hue_hi: float = 15.0
    ripe_min_saturation: float = 0.4
    unripe_hue_lo: float = 60.0
    unripe_hue_hi: float = 130.0
    unripe_min_value: float = 0.5
    min_fraction: float = 0.15
    min_pixels: int = 4

    def validate(self):
        if not 0.0 <= self.min_fraction <= 1.0:
            raise ConfigError("min_fraction must lie in [0, 1]")
        if self.min_pixels < 0:
            raise ConfigError("min_pixels must be >= 0")
        return self


@dataclass
class DatasetConfig:
    num_plants: int = 100
    num_views: int = 20
    train_fraction: float = 0.8
    # plant seeds are seed_base, seed_base + 1, ...
    seed_base: int = 0
    heuristic: HueHeuristic = field(default_factory=HueHeuristic)

    def validate(self):
        if self.num_plants < 1 or self.num_views < 1:
            raise ConfigError("num_plants and num_views must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        self.heuristic.validate()
        return self


@dataclass(frozen=True)
class Annotation:
    box: BoundingBox
    cls: Ripeness


@dataclass(frozen=True)
class AnnotatedFrame:
    frame: Frame
    annotations: tuple[Annotation, ...]
    plant_seed: int
    pose: CameraPose
    view: int = 0


def _in_window(hue, lo, hi):
    if lo <= hi:
        return (hue >= lo) & (hue <= hi)
    return (hue >= lo) | (hue <= hi)


def class_hue_mask(pixels, cls, heuristic=None):
    """Boolean mask of pixels inside the hue window of ``cls``."""
    hz = heuristic or HueHeuristic()
    hsv = rgb_to_hsv(np.asarray(pixels, dtype=np.float64) / 255.0)
    hue = hsv[..., 0] * 360.0
    if Ripeness(cls) is Ripeness.RIPE:
        return _in_window(hue, hz.ripe_hue_lo, hz.ripe_hue_hi) & (hsv[..., 1] >= hz.ripe_min_saturation)
    return _in_window(hue, hz.unripe_hue_lo, hz.unripe_hue_hi) & (hsv[..., 2] >= hz.unripe_min_value)


def occlusion_check(frame, box, cls, heuristic=None):
    """Accept a box iff enough of its pixels fall in the class hue window (boundary inclusive)."""
    hz = heuristic or HueHeuristic()
    pixels = frame.pixels if isinstance(frame, Frame) else np.asarray(frame)
    h, w = pixels.shape[:2]
    if box.x_max <= box.x_min or box.y_max <= box.y_min:
        raise GeometryError("zero-area box")
    if box.x_min < 0 or box.y_min < 0 or box.x_max > w or box.y_max > h:
        raise GeometryError(f"box {box.as_list()} exceeds frame {w}x{h}")
    crop = pixels[box.y_min : box.y_max, box.x_min : box.x_max]
    count = int(np.count_nonzero(class_hue_mask(crop, cls, hz)))
    return count >= max(hz.min_pixels, hz.min_fraction * box.area)


def sample_poses(rng, n, workspace, radius):
    """Uniform in the (theta, phi) rectangle of the workspace."""
    theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
    phi = rng.uniform(workspace.phi_min, workspace.phi_max, size=n)
    return [CameraPose(float(t), float(p), radius) for t, p in zip(theta, phi)]


def _collect_plant(plant_seed, num_views, seed, scene_config, intrinsics, workspace, radius, heuristic):
    scene = generate_plant(plant_seed, scene_config)
    poses = sample_poses(stream(seed, "dataset", "poses", plant_seed), num_views, workspace, radius)
    out = []
    for view, pose in enumerate(poses):
        frame = render(scene, pose, intrinsics)
        anns = []
        for berry in scene.berries:
            box = project_sphere(berry, pose, intrinsics)
            if box is not None and occlusion_check(frame, box, berry.ripeness, heuristic):
                anns.append(Annotation(box, berry.ripeness))
        out.append(AnnotatedFrame(frame, tuple(anns), plant_seed, pose, view))
    return out


def collect(
    num_plants,
    num_views,
    config=None,
    *,
    scene_config=None,
    intrinsics=None,
    workspace=None,
    radius=0.5,
    seed=0,
    workers=1,
):
    """Run the collection loop; frames are ordered by plant seed then view."""
    cfg = config or DatasetConfig()
    if num_plants < 1 or num_views < 1:
        raise ConfigError("num_plants and num_views must be >= 1")
    scene_config = scene_config or SceneConfig()
    intrinsics = intrinsics or CameraIntrinsics()
    workspace = workspace or Workspace()
    seeds = [cfg.seed_base + i for i in range(num_plants)]

    def job(ps):
        return _collect_plant(ps, num_views, seed, scene_config, intrinsics, workspace, radius, cfg.heuristic)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(job, seeds))
    else:
        chunks = [job(ps) for ps in seeds]
    return [af for chunk in chunks for af in chunk]


def split(dataset, train_fraction, seed=0):
    """Partition frames by plant so no plant lands in both halves."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError("train_fraction must lie in (0, 1)")
    if len(dataset) < 2:
        raise ConfigError("need at least two frames to split")
    plants = sorted({af.plant_seed for af in dataset})
    order = stream(seed, "split").permutation(len(plants))
    n = len(plants)
    n_train = n if n == 1 else min(max(int(round(train_fraction * n)), 1), n - 1)
    train_plants = {plants[i] for i in order[:n_train]}
    train = [af for af in dataset if af.plant_seed in train_plants]
    test = [af for af in dataset if af.plant_seed not in train_plants]
    return train, test


# ---------------------------------------------------------------------------
# persistence


def write_ppm(path, pixels):
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    h, w = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"truncated PPM header in {path}", offset=pos)
        tokens.append(data[start:pos])
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise FormatError(f"{path} is not an 8-bit binary PPM", offset=0)
    w, h = int(tokens[1]), int(tokens[2])
    pos += 1
    payload = data[pos : pos + w * h * 3]
    if len(payload) != w * h * 3:
        raise FormatError(f"truncated PPM payload in {path}", offset=len(data))
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).copy()


def _record(af, rel):
    return {
        "frame": rel,
        "plant_seed": af.plant_seed,
        "view": af.view,
        "pose": {"theta": af.pose.theta, "phi": af.pose.phi, "radius": af.pose.radius},
        "annotations": [{"box": a.box.as_list(), "class": a.cls.value} for a in af.annotations],
    }


def save_dataset(dataset, directory):
    """Write ``frames/<plant>_<view>.ppm`` and ``annotations.jsonl``."""
    try:
        os.makedirs(os.path.join(directory, "frames"), exist_ok=True)
        with open(os.path.join(directory, "annotations.jsonl"), "w", encoding="utf-8") as fh:
            for af in dataset:
                rel = f"frames/{af.plant_seed}_{af.view}.ppm"
                write_ppm(os.path.join(directory, rel), af.frame.pixels)
                fh.write(json.dumps(_record(af, rel), sort_keys=True) + "\n")
    except OSError as exc:
        raise StorageError(f"cannot write dataset to {directory}: {exc}") from exc


def load_dataset(directory):
    path = os.path.join(directory, "annotations.jsonl")
    if not os.path.exists(path):
        raise StorageError(f"no annotations.jsonl in {directory}")
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            pose = CameraPose(**rec["pose"])
            frame = Frame(read_ppm(os.path.join(directory, rec["frame"])), pose)
            anns = tuple(Annotation(BoundingBox(*a["box"]), Ripeness(a["class"])) for a in rec["annotations"])
            out.append(AnnotatedFrame(frame, anns, int(rec["plant_seed"]), pose, int(rec.get("view", 0))))
    return out
