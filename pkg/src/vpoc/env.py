"""Episodic viewpoint-optimization environment on the hemisphere workspace."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .detector import OracleDetector, max_ripe_confidence
from .errors import ConfigError, LifecycleError
from .nets import ObsSpec
from .scene import CameraIntrinsics, CameraPose, SceneConfig, Workspace, generate_plant, render
from .scene import Ripeness

__all__ = [
    "Action",
    "BandEnv",
    "EnvConfig",
    "Observation",
    "RewardConfig",
    "Transition",
    "ViewpointEnv",
    "Workspace",
    "discounted_return",
]


@dataclass
class RewardConfig:
    r_detect: float = 1.0
    r_invalid: float = -1.0
    r_exist: float = -0.1
    p_thresh: float = 0.6

    def validate(self):
        if not self.r_detect > self.r_exist > self.r_invalid:
            raise ConfigError("rewards must satisfy r_detect > r_exist > r_invalid")
        if not 0.0 < self.p_thresh <= 1.0:
            raise ConfigError("p_thresh must lie in (0, 1]")
        return self


@dataclass
class EnvConfig:
    theta0: float = 0.0
    phi0: float = math.radians(30.0)
    phi_min: float = math.radians(10.0)
    phi_max: float = math.radians(80.0)
    radius: float = 0.5
    horizon: int = 100
    a_max: float = 0.15
    gamma: float = 0.99
    observation: str = "features"
    top_k: int = 3
    width: int = 64
    fov: float = math.pi / 2
    reward: RewardConfig = field(default_factory=RewardConfig)

    def validate(self):
        Workspace(self.phi_min, self.phi_max)
        if not self.phi_min <= self.phi0 <= self.phi_max:
            raise ConfigError("spawn pose must lie in the workspace")
        if self.horizon < 1 or self.a_max <= 0 or self.radius <= 0:
            raise ConfigError("horizon, a_max and radius must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        if self.observation not in ("features", "pixels"):
            raise ConfigError("observation must be 'features' or 'pixels'")
        if self.top_k < 0:
            raise ConfigError("top_k must be >= 0")
        self.reward.validate()
        return self

    @property
    def workspace(self):
        return Workspace(self.phi_min, self.phi_max)

    @property
    def intrinsics(self):
        return CameraIntrinsics(self.width, self.width, self.fov)


@dataclass(frozen=True)
class Action:
    d_theta: float
    d_phi: float

    def as_array(self):
        return np.array([self.d_theta, self.d_phi])

    def clipped(self, a_max):
        return Action(float(np.clip(self.d_theta, -a_max, a_max)), float(np.clip(self.d_phi, -a_max, a_max)))


@dataclass(frozen=True)
class Observation:
    """``vector`` always holds pose features first; ``image`` is (3, H, W) in [0, 1] for pixel mode."""

    vector: np.ndarray
    image: np.ndarray | None = None

    def inputs(self):
        out = {"vector": self.vector[None, :]}
        if self.image is not None:
            out["image"] = self.image[None]
        return out


@dataclass(frozen=True)
class Transition:
    observation: Observation
    action: Action
    reward: float
    next_observation: Observation
    done: bool
    info: dict = field(default_factory=dict, compare=False)


def discounted_return(rewards, gamma):
    """Sum of ``gamma**t * r_t``."""
    if not 0.0 <= gamma < 1.0:
        raise ConfigError("gamma must lie in [0, 1)")
    total = 0.0
    scale = 1.0
    for r in rewards:
        total += scale * r
        scale *= gamma
    return total


def pose_features(pose, workspace):
    span = workspace.phi_max - workspace.phi_min
    return [math.sin(pose.theta), math.cos(pose.theta), 2.0 * (pose.phi - workspace.phi_min) / span - 1.0]


def detection_features(detections, top_k, width, height):
    ripe = sorted((d for d in detections if d.cls is Ripeness.RIPE), key=lambda d: -d.confidence)[:top_k]
    feats = []
    for d in ripe:
        cx, cy = d.box.center
        size = max(d.box.x_max - d.box.x_min, d.box.y_max - d.box.y_min) / width
        feats += [2.0 * cx / width - 1.0, 2.0 * cy / height - 1.0, size, d.confidence]
    feats += [0.0] * (4 * top_k - len(feats))
    return feats


class ViewpointEnv:
    """Camera on a hemisphere above a fresh plant each episode.

    Reward is evaluated on the pose reached after the move. Requests that
    leave the polar band are clamped to it and earn ``r_invalid``.
    """

    def __init__(self, config=None, detector=None, scene_config=None):
        self.config = (config or EnvConfig()).validate()
        self.intrinsics = self.config.intrinsics
        self.detector = detector or OracleDetector(intrinsics=self.intrinsics)
        self.scene_config = scene_config or SceneConfig()
        self.workspace = self.config.workspace
        self.scene = None
        self.pose = None
        self.frame = None
        self.detections = []
        self.observation = None
        self.steps = 0
        self.done = True
        self.plant_seed = None

    @property
    def a_max(self):
        return self.config.a_max

    @property
    def obs_spec(self):
        k = self.config.top_k if self.config.observation == "features" else 0
        image = (3, self.intrinsics.height, self.intrinsics.width) if self.config.observation == "pixels" else None
        return ObsSpec(image, 3 + 4 * k, 2)

    @property
    def p_max(self):
        return max_ripe_confidence(self.detections)

    def _observe(self):
        cfg = self.config
        need_frame = cfg.observation == "pixels" or self.detector.needs_frame
        self.frame = render(self.scene, self.pose, self.intrinsics) if need_frame else None
        self.detections = self.detector.detect(self.frame, scene=self.scene, pose=self.pose)
        vec = pose_features(self.pose, self.workspace)
        image = None
        if cfg.observation == "features":
            vec += detection_features(self.detections, cfg.top_k, self.intrinsics.width, self.intrinsics.height)
        else:
            image = (self.frame.pixels.astype(np.float32) / 255.0).transpose(2, 0, 1).copy()
        self.observation = Observation(np.asarray(vec, dtype=np.float32), image)
        return self.observation

    def reset(self, plant_seed=0, scene=None):
        self.plant_seed = int(plant_seed)
        self.scene = scene if scene is not None else generate_plant(plant_seed, self.scene_config)
        self.pose = CameraPose(self.config.theta0, self.config.phi0, self.config.radius)
        self.steps = 0
        self.done = False
        return self._observe()

    def reward_for(self, requested_phi, p_max):
        r = self.config.reward
        if not self.workspace.contains(requested_phi):
            return r.r_invalid
        if p_max >= r.p_thresh:
            return r.r_detect
        return r.r_exist

    def step(self, action):
        if self.scene is None:
            raise LifecycleError("step() called before reset()")
        if self.done:
            raise LifecycleError("step() called after the episode ended")
        if not isinstance(action, Action):
            a = np.asarray(action, dtype=np.float64).reshape(-1)
            action = Action(float(a[0]), float(a[1]))
        action = action.clipped(self.config.a_max)
        prev = self.observation
        theta = (self.pose.theta + action.d_theta) % (2.0 * math.pi)
        if theta >= 2.0 * math.pi:  # a tiny negative step rounds up to exactly 2 pi
            theta = 0.0
        requested = self.pose.phi + action.d_phi
        phi = min(max(requested, self.workspace.phi_min), self.workspace.phi_max)
        self.pose = CameraPose(theta, phi, self.config.radius)
        obs = self._observe()
        p_max = self.p_max
        reward = self.reward_for(requested, p_max)
        self.steps += 1
        self.done = self.steps >= self.config.horizon
        info = {"p_max": p_max, "theta": theta, "phi": phi, "invalid": reward == self.config.reward.r_invalid, "step": self.steps}
        return Transition(prev, action, reward, obs, self.done, info)


def step_record(tr):
    """JSON-serializable episode log line for one transition."""
    return {
        "step": tr.info["step"],
        "pose": {"theta": tr.info["theta"], "phi": tr.info["phi"]},
        "action": [tr.action.d_theta, tr.action.d_phi],
        "reward": tr.reward,
        "p_max": tr.info["p_max"],
        "done": tr.done,
    }


def write_episode_log(transitions, fh):
    for tr in transitions:
        fh.write(json.dumps(step_record(tr), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# 1-D sanity task for the learner


@dataclass
class BandConfig:
    x0: float = -0.8
    band_lo: float = -0.2
    band_hi: float = 0.2
    a_max: float = 0.2
    horizon: int = 50
    gamma: float = 0.99


class BandEnv:
    """Point on ``[-1, 1]`` penalized by its distance to a target band each step.

    Observation is the position; the action is a bounded displacement and
    positions are clamped at the ends.
    """

    def __init__(self, config=None):
        self.config = config or BandConfig()
        self.x = self.config.x0
        self.steps = 0
        self.done = True

    @property
    def a_max(self):
        return self.config.a_max

    @property
    def obs_spec(self):
        return ObsSpec(None, 1, 1)

    def distance(self, x):
        return max(self.config.band_lo - x, x - self.config.band_hi, 0.0)

    def _obs(self):
        return Observation(np.array([self.x], dtype=np.float32))

    def reset(self, plant_seed=0, scene=None):
        self.x = self.config.x0
        self.steps = 0
        self.done = False
        self.observation = self._obs()
        return self.observation

    def step(self, action):
        if self.done:
            raise LifecycleError("step() called after the episode ended")
        a = float(np.clip(np.asarray(action, dtype=np.float64).reshape(-1)[0], -self.a_max, self.a_max))
        prev = self.observation
        self.x = min(max(self.x + a, -1.0), 1.0)
        reward = -self.distance(self.x)
        self.steps += 1
        self.done = self.steps >= self.config.horizon
        self.observation = self._obs()
        return Transition(prev, np.array([a]), reward, self.observation, self.done, {"step": self.steps, "x": self.x})
