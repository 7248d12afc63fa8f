"""Strawberry detectors behind one interface, plus IOU matching and precision-recall.

Two detectors are provided:

* :class:`OracleDetector` reads scene ground truth. Confidence grows with
  apparent size and visible fraction and carries Gaussian noise seeded by
  ``(scene, pose)``, so a pose always gets the same answer.
* :class:`GridDetector` is a per-cell logistic model over color features,
  trained on collected datasets.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np
from matplotlib.colors import rgb_to_hsv

from . import nets
from .dataset import HueHeuristic, class_hue_mask
from .errors import ConfigError, StateError
from .rng import stream
from .scene import (
    BoundingBox,
    CameraIntrinsics,
    Ripeness,
    SceneConfig,
    generate_plant,
    pose_to_world,
    project_sphere,
    sphere_silhouette,
    visible_fraction,
)

IOU_THRESHOLDS = tuple(round(0.1 * k, 1) for k in range(1, 10))
CONFIDENCE_GRID = tuple(round(0.01 * k, 2) for k in range(1, 101))
FEATURE_DIM = 12
CLASSES = (Ripeness.RIPE, Ripeness.UNRIPE)


class DetectorKind(str, enum.Enum):
    ORACLE = "oracle"
    GRID = "grid"


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    cls: Ripeness
    confidence: float


@dataclass
class DetectorConfig:
    kind: str = "oracle"
    noise_scale: float = 0.05
    v_min: float = 0.25
    alpha: float = 0.8
    beta: float = 2.0
    # calibrated so precision is 0.9 at (conf 0.6, IOU 0.5) on the default dataset
    gamma0: float = -2.3
    visibility_samples: int = 64
    grid_size: int = 8
    grid_threshold: float = 0.5

    def validate(self):
        DetectorKind(self.kind)
        if not 0.0 <= self.v_min <= 1.0 or not 0.0 <= self.grid_threshold <= 1.0:
            raise ConfigError("detector thresholds must lie in [0, 1]")
        if self.grid_size < 2:
            raise ConfigError("grid_size must be >= 2")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be >= 0")
        return self


def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def max_ripe_confidence(detections):
    return max((d.confidence for d in detections if d.cls is Ripeness.RIPE), default=0.0)


# ---------------------------------------------------------------------------
# oracle


class OracleDetector:
    needs_frame = False
    needs_scene = True

    def __init__(self, config=None, intrinsics=None):
        self.config = (config or DetectorConfig()).validate()
        self.intrinsics = intrinsics or CameraIntrinsics()

    def confidence(self, diameter_px, visible, noise=0.0):
        c = self.config
        z = c.alpha * math.log(max(diameter_px, 1e-6)) + c.beta * visible + c.gamma0
        return min(1.0, max(0.0, _sigmoid(z) + noise))

    def _noise(self, scene, pose, index):
        if self.config.noise_scale == 0.0:
            return 0.0
        theta = pose.theta % (2.0 * math.pi)
        key = (int(round(theta * 1e6)), int(round(pose.phi * 1e6)), index)
        return self.config.noise_scale * float(stream(scene.seed, "oracle", *key).standard_normal())

    def detect(self, frame=None, *, scene=None, pose=None):
        if scene is None or pose is None:
            raise StateError("oracle detector needs the scene and camera pose")
        tf = pose_to_world(pose)
        w, h = self.intrinsics.width, self.intrinsics.height
        out = []
        for i, berry in enumerate(scene.berries):
            box = project_sphere(berry, pose, self.intrinsics, tf)
            if box is None:
                continue
            sil = sphere_silhouette(berry.center, berry.radius, tf, self.intrinsics)
            if sil is None:
                continue
            cx, cy = sil.center_px
            if not (0.0 <= cx < w and 0.0 <= cy < h):
                continue
            vis = visible_fraction(i, scene, pose, self.config.visibility_samples)
            if vis < self.config.v_min:
                continue
            conf = self.confidence(sil.diameter_px, vis, self._noise(scene, pose, i))
            out.append(Detection(box, berry.ripeness, conf))
        return out


# ---------------------------------------------------------------------------
# grid detector


@dataclass
class GridDetectorParams:
    """Per-class logistic weights over the 12 per-cell features."""

    weights: np.ndarray  # (12, 2), columns ripe, unripe
    bias: np.ndarray  # (2,)
    grid_size: int = 8
    initial_loss: float | None = None
    final_loss: float | None = None

    def to_dict(self):
        return {"weights": self.weights.tolist(), "bias": self.bias.tolist(), "grid_size": self.grid_size}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["weights"], dtype=np.float64), np.asarray(d["bias"], dtype=np.float64), int(d["grid_size"]))


def cell_features(pixels, grid_size=8, heuristic=None):
    """Features per cell: mean RGB (3), 8-bin hue histogram (8), berry-hue fraction (1)."""
    pixels = np.asarray(pixels)
    h, w = pixels.shape[:2]
    if h % grid_size or w % grid_size:
        raise ConfigError(f"frame {w}x{h} is not divisible into a {grid_size}x{grid_size} grid")
    ch, cw = h // grid_size, w // grid_size
    rgb = pixels.astype(np.float64) / 255.0
    hue = rgb_to_hsv(rgb)[..., 0]
    berry = class_hue_mask(pixels, Ripeness.RIPE, heuristic) | class_hue_mask(pixels, Ripeness.UNRIPE, heuristic)

    def cells(a):
        return a.reshape(grid_size, ch, grid_size, cw, *a.shape[2:]).swapaxes(1, 2).reshape(grid_size * grid_size, ch * cw, *a.shape[2:])

    mean_rgb = cells(rgb).mean(axis=1)
    bins = np.minimum((hue * 8).astype(np.int64), 7)
    hist = np.stack([(cells(bins) == k).mean(axis=1) for k in range(8)], axis=1)
    frac = cells(berry.astype(np.float64)).mean(axis=1)[:, None]
    return np.concatenate([mean_rgb, hist, frac], axis=1)


def cell_labels(annotations, grid_size, width, height):
    """(G*G, 2) labels: a cell is positive for a class iff a box center of that class lies in it."""
    lab = np.zeros((grid_size * grid_size, 2))
    for a in annotations:
        cx, cy = a.box.center
        gx = min(int(cx * grid_size / width), grid_size - 1)
        gy = min(int(cy * grid_size / height), grid_size - 1)
        lab[gy * grid_size + gx, CLASSES.index(a.cls)] = 1.0
    return lab


def dataset_cells(frames, grid_size=8, heuristic=None):
    xs, ys = [], []
    for af in frames:
        h, w = af.frame.pixels.shape[:2]
        xs.append(cell_features(af.frame.pixels, grid_size, heuristic))
        ys.append(cell_labels(af.annotations, grid_size, w, h))
    return np.concatenate(xs), np.concatenate(ys)


@dataclass
class GridTrainConfig:
    epochs: int = 30
    batch_size: int = 256
    lr: float = 0.05
    seed: int = 0


def _bce(x, y, w, b):
    z = x @ w + b
    p = 1.0 / (1.0 + np.exp(-z))
    eps = 1e-12
    loss = -np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps))
    return loss, p


def fit_logistic(x, y, config=None, init=None):
    """Mini-batch Adam on standardized features; weights are folded back to raw feature space.

    Returns ``(weights, bias, initial_loss, final_loss)``.
    """
    cfg = config or GridTrainConfig()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] == 0:
        raise ConfigError("empty training set")
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd < 1e-8] = 1.0
    xs = (x - mu) / sd
    k = y.shape[1]
    if init is None:
        w0 = np.zeros((x.shape[1], k))
        b0 = np.zeros(k)
    else:
        w0, b0 = init
        w0 = np.asarray(w0, dtype=np.float64) * sd[:, None]
        b0 = np.asarray(b0, dtype=np.float64) + mu @ np.asarray(init[0], dtype=np.float64)
    arch = nets.Architecture(None, x.shape[1], 0, (), (nets.DenseSpec(x.shape[1], k, "linear"),))
    params = nets.NetworkParams(arch, [w0.copy(), b0.copy()])
    opt = nets.OptimizerState.for_params(params, cfg.lr)
    initial, _ = _bce(xs, y, params.tensors[0], params.tensors[1])
    if cfg.epochs == 0:
        if init is None:
            return np.zeros((x.shape[1], k)), np.zeros(k), float(initial), float(initial)
        return np.asarray(init[0], dtype=np.float64).copy(), np.asarray(init[1], dtype=np.float64).copy(), float(initial), float(initial)
    rng = stream(cfg.seed, "grid-train")
    n = xs.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            out, cache = nets.forward(params, {"vector": xs[idx]})
            p = 1.0 / (1.0 + np.exp(-out))
            grads, _ = nets.backward(params, cache, (p - y[idx]) / (idx.size * k))
            nets.adam_step(opt, params, grads)
    final, _ = _bce(xs, y, params.tensors[0], params.tensors[1])
    w = params.tensors[0] / sd[:, None]
    b = params.tensors[1] - mu @ w
    return w, b, float(initial), float(final)


def train_grid(train_set, config=None, grid_size=8, heuristic=None):
    """Fit the grid detector on annotated frames."""
    if not train_set:
        raise ConfigError("train_grid needs a nonempty training set")
    x, y = dataset_cells(train_set, grid_size, heuristic)
    w, b, initial, final = fit_logistic(x, y, config)
    return GridDetectorParams(w, b, grid_size, initial, final)


def cell_probabilities(params, pixels, heuristic=None):
    x = cell_features(pixels, params.grid_size, heuristic)
    z = x @ params.weights + params.bias
    return 1.0 / (1.0 + np.exp(-z))


def _components(mask):
    """4-connected components of a boolean grid, as lists of (row, col), in scan order."""
    g = mask.shape[0]
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for r in range(g):
        for c in range(mask.shape[1]):
            if not mask[r, c] or seen[r, c]:
                continue
            stack = [(r, c)]
            seen[r, c] = True
            comp = []
            while stack:
                i, j = stack.pop()
                comp.append((i, j))
                for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    a, b = i + di, j + dj
                    if 0 <= a < g and 0 <= b < mask.shape[1] and mask[a, b] and not seen[a, b]:
                        seen[a, b] = True
                        stack.append((a, b))
            comps.append(sorted(comp))
    return comps


class GridDetector:
    needs_frame = True
    needs_scene = False

    def __init__(self, params=None, config=None, heuristic=None):
        self.params = params
        self.config = (config or DetectorConfig(kind="grid")).validate()
        self.heuristic = heuristic or HueHeuristic()

    def detect(self, frame=None, *, scene=None, pose=None):
        if self.params is None:
            raise StateError("grid detector has no trained parameters")
        if frame is None:
            raise StateError("grid detector needs a frame")
        pixels = frame.pixels
        h, w = pixels.shape[:2]
        g = self.params.grid_size
        ch, cw = h // g, w // g
        probs = cell_probabilities(self.params, pixels, self.heuristic).reshape(g, g, 2)
        out = []
        for k, cls in enumerate(CLASSES):
            hue = class_hue_mask(pixels, cls, self.heuristic)
            for comp in _components(probs[..., k] >= self.config.grid_threshold):
                rows = [r for r, _ in comp]
                cols = [c for _, c in comp]
                y0, y1 = min(rows) * ch, (max(rows) + 1) * ch
                x0, x1 = min(cols) * cw, (max(cols) + 1) * cw
                sub = np.zeros((h, w), dtype=bool)
                for r, c in comp:
                    sub[r * ch : (r + 1) * ch, c * cw : (c + 1) * cw] = True
                ys, xs = np.nonzero(hue & sub)
                if ys.size:
                    box = BoundingBox(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
                else:
                    box = BoundingBox(x0, y0, x1, y1)
                conf = float(max(probs[r, c, k] for r, c in comp))
                out.append(Detection(box, cls, conf))
        return out


def make_detector(config=None, params=None, intrinsics=None):
    cfg = (config or DetectorConfig()).validate()
    if DetectorKind(cfg.kind) is DetectorKind.ORACLE:
        return OracleDetector(cfg, intrinsics)
    return GridDetector(params, cfg)


def detect(frame=None, config=None, *, scene=None, pose=None, params=None):
    """Run the configured detector once."""
    return make_detector(config, params).detect(frame, scene=scene, pose=pose)


# ---------------------------------------------------------------------------
# evaluation


def iou(a, b):
    ix = max(0, min(a.x_max, b.x_max) - max(a.x_min, b.x_min))
    iy = max(0, min(a.y_max, b.y_max) - max(a.y_min, b.y_min))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def greedy_match(detections, truths, iou_thresh):
    """Match detections, most confident first, to unmatched same-class truths.

    Returns one flag per detection (in the given order): ``True`` if matched.
    Each detection takes the unmatched truth with the highest IOU at or above
    the threshold; ties go to the earlier truth.
    """
    order = sorted(range(len(detections)), key=lambda i: -detections[i].confidence)
    used = [False] * len(truths)
    matched = [False] * len(detections)
    for i in order:
        d = detections[i]
        best, best_iou = -1, -1.0
        for j, t in enumerate(truths):
            if used[j] or t.cls is not d.cls:
                continue
            v = iou(d.box, t.box)
            if v >= iou_thresh and v > best_iou:
                best, best_iou = j, v
        if best >= 0:
            used[best] = True
            matched[i] = True
    return matched


@dataclass(frozen=True)
class PRPoint:
    iou_thresh: float
    conf_thresh: float
    precision: float
    recall: float
    tp: int = field(default=0, compare=False)
    fp: int = field(default=0, compare=False)
    fn: int = field(default=0, compare=False)


def pr_from_detections(per_frame, iou_thresholds=IOU_THRESHOLDS, confidence_grid=CONFIDENCE_GRID):
    """PR table from ``[(detections, truths), ...]``.

    Greedy matching in confidence order is prefix-stable, so one matching
    pass per IOU threshold serves every confidence threshold.
    """
    if not iou_thresholds or not confidence_grid:
        raise ConfigError("threshold lists must be nonempty")
    n_truth = sum(len(t) for _, t in per_frame)
    rows = []
    for it in iou_thresholds:
        confs, flags = [], []
        for dets, truths in per_frame:
            confs += [d.confidence for d in dets]
            flags += greedy_match(dets, truths, it)
        confs = np.asarray(confs, dtype=np.float64)
        flags = np.asarray(flags, dtype=bool)
        for ct in confidence_grid:
            keep = confs >= ct
            tp = int(np.count_nonzero(flags & keep))
            fp = int(np.count_nonzero(keep)) - tp
            fn = n_truth - tp
            precision = tp / (tp + fp) if tp + fp else 1.0
            recall = tp / (tp + fn) if tp + fn else 1.0
            rows.append(PRPoint(float(it), float(ct), precision, recall, tp, fp, fn))
    return rows


def _scene_lookup(scene_config):
    cache = {}

    def get(seed):
        if seed not in cache:
            cache[seed] = generate_plant(seed, scene_config)
        return cache[seed]

    return get


def run_detector(test_set, detector, scene_config=None):
    scene_for = _scene_lookup(scene_config or SceneConfig())
    out = []
    for af in test_set:
        scene = scene_for(af.plant_seed) if detector.needs_scene else None
        out.append((detector.detect(af.frame, scene=scene, pose=af.pose), list(af.annotations)))
    return out


def pr_curve(test_set, detector, iou_thresholds=IOU_THRESHOLDS, confidence_grid=CONFIDENCE_GRID, scene_config=None):
    if not test_set:
        raise ConfigError("pr_curve needs a nonempty test set")
    if not iou_thresholds or not confidence_grid:
        raise ConfigError("threshold lists must be nonempty")
    return pr_from_detections(run_detector(test_set, detector, scene_config), iou_thresholds, confidence_grid)


def lookup(rows, iou_thresh, conf_thresh):
    for r in rows:
        if abs(r.iou_thresh - iou_thresh) < 1e-9 and abs(r.conf_thresh - conf_thresh) < 1e-9:
            return r
    raise KeyError((iou_thresh, conf_thresh))


def write_pr_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["iou_thresh", "conf_thresh", "precision", "recall"])
        for r in rows:
            wr.writerow([f"{r.iou_thresh:.2f}", f"{r.conf_thresh:.2f}", f"{r.precision:.6f}", f"{r.recall:.6f}"])


def calibrate_offset(test_set, config=None, offsets=None, target_precision=0.9, conf_thresh=0.6, iou_thresh=0.5, scene_config=None):
    """Sweep the oracle offset and return ``(best_offset, [(offset, precision, recall), ...])``."""
    base = config or DetectorConfig()
    offsets = np.round(np.arange(-4.0, 1.01, 0.1), 2) if offsets is None else offsets
    scene_for = _scene_lookup(scene_config or SceneConfig())
    table = []
    for off in offsets:
        cfg = DetectorConfig(**{**base.__dict__, "gamma0": float(off)})
        det = OracleDetector(cfg)
        per_frame = [(det.detect(scene=scene_for(af.plant_seed), pose=af.pose), list(af.annotations)) for af in test_set]
        row = pr_from_detections(per_frame, (iou_thresh,), (conf_thresh,))[0]
        table.append((float(off), row.precision, row.recall))
    best = min(table, key=lambda r: (abs(r[1] - target_precision), -r[2]))
    return best[0], table
