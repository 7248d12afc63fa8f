"""Hand-written baseline policies, the learned actor, and the hybrid of the two.

Every policy maps the current environment state to an :class:`Action` inside
the action box. The environment exposes ``pose``, ``detections``,
``observation``, ``workspace`` and ``a_max``, which is all the context a
policy gets.

Image-to-hemisphere mapping used by the proportional policy (camera frame
is x right, y down, z forward toward the plant origin)::

        image              hemisphere
      +-----> u          increasing theta  = camera slides toward image-right
      |                  increasing phi    = camera moves down toward the bed,
      v  v                                   which pulls the view toward
                                             what is below the image center
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .detector import max_ripe_confidence
from .env import Action
from .errors import ConfigError, StateError
from .scene import Ripeness

POLICY_NAMES = ("random", "random-ba", "downward", "frozen", "proportional", "ddpg", "hybrid")


@dataclass
class BaselineConfig:
    phi_star: float = math.radians(60.0)
    detect_threshold: float = 0.5
    gain: float = 0.5
    # None means a_max
    step: float | None = None

    def validate(self, workspace=None):
        if workspace is not None and not workspace.phi_min < self.phi_star < workspace.phi_max:
            raise ConfigError("phi_star must lie strictly inside the workspace")
        if not 0.0 < self.detect_threshold < 1.0:
            raise ConfigError("detect_threshold must lie in (0, 1)")
        if self.step is not None and self.step <= 0:
            raise ConfigError("step must be positive")
        return self


def pi1(rng, a_max):
    """Uniform action on the action box."""
    d = rng.uniform(-a_max, a_max, size=2)
    return Action(float(d[0]), float(d[1]))


def reflect_phi(action, pose, workspace):
    """Negate the polar component when it would leave the workspace."""
    if workspace.contains(pose.phi + action.d_phi):
        return action
    return Action(action.d_theta, -action.d_phi)


def pi2(pose, rng, a_max, workspace):
    return reflect_phi(pi1(rng, a_max), pose, workspace)


def pi3(pose, rng, a_max, workspace, config):
    if pose.phi < config.phi_star:
        step = a_max if config.step is None else min(config.step, a_max)
        return reflect_phi(Action(0.0, step), pose, workspace)
    return pi2(pose, rng, a_max, workspace)


def _best_ripe(detections, threshold):
    best = None
    for d in detections:
        if d.cls is Ripeness.RIPE and d.confidence >= threshold and (best is None or d.confidence > best.confidence):
            best = d
    return best


def pi4(pose, detections, rng, a_max, workspace, config):
    """Hold still while a ripe berry is detected, else descend and wander."""
    if max_ripe_confidence(detections) >= config.detect_threshold:
        return Action(0.0, 0.0)
    return pi3(pose, rng, a_max, workspace, config)


def pi5(pose, detections, rng, a_max, workspace, config, width=64, height=64):
    """Steer to center the most confident ripe box."""
    best = _best_ripe(detections, config.detect_threshold)
    if best is None:
        return pi3(pose, rng, a_max, workspace, config)
    cx, cy = best.box.center
    u = 2.0 * cx / width - 1.0
    v = 2.0 * cy / height - 1.0
    k = config.gain * a_max
    act = Action(float(np.clip(k * u, -a_max, a_max)), float(np.clip(k * v, -a_max, a_max)))
    return reflect_phi(act, pose, workspace)


def hybrid(pose, observation, actor, rng, a_max, workspace, config):
    if actor is None:
        raise StateError("hybrid policy needs a trained actor")
    if pose.phi < config.phi_star:
        return pi3(pose, rng, a_max, workspace, config)
    a = np.asarray(actor(observation), dtype=np.float64).reshape(-1)
    return reflect_phi(Action(float(a[0]), float(a[1])), pose, workspace)


class Policy:
    """Adapter from an environment to one of the functions above."""

    name = "policy"

    def __init__(self, config=None):
        self.config = config or BaselineConfig()

    def __call__(self, env, rng):
        raise NotImplementedError


class RandomPolicy(Policy):
    name = "random"

    def __call__(self, env, rng):
        return pi1(rng, env.a_max)


class BoundedRandomPolicy(Policy):
    name = "random-ba"

    def __call__(self, env, rng):
        return pi2(env.pose, rng, env.a_max, env.workspace)


class DownwardPolicy(Policy):
    name = "downward"

    def __call__(self, env, rng):
        return pi3(env.pose, rng, env.a_max, env.workspace, self.config)


class FrozenPolicy(Policy):
    name = "frozen"

    def __call__(self, env, rng):
        return pi4(env.pose, env.detections, rng, env.a_max, env.workspace, self.config)


class ProportionalPolicy(Policy):
    name = "proportional"

    def __call__(self, env, rng):
        intr = env.intrinsics
        return pi5(env.pose, env.detections, rng, env.a_max, env.workspace, self.config, intr.width, intr.height)


class ActorPolicy(Policy):
    """Deterministic learned actor (no exploration noise)."""

    name = "ddpg"

    def __init__(self, actor, config=None):
        super().__init__(config)
        if actor is None:
            raise StateError("ddpg policy needs a trained actor")
        self.actor = actor

    def __call__(self, env, rng):
        a = np.asarray(self.actor(env.observation), dtype=np.float64).reshape(-1)
        return Action(float(a[0]), float(a[1]))


class HybridPolicy(ActorPolicy):
    name = "hybrid"

    def __call__(self, env, rng):
        return hybrid(env.pose, env.observation, self.actor, rng, env.a_max, env.workspace, self.config)


_BY_NAME = {
    "random": RandomPolicy,
    "random-ba": BoundedRandomPolicy,
    "downward": DownwardPolicy,
    "frozen": FrozenPolicy,
    "proportional": ProportionalPolicy,
}


def make_policy(name, config=None, actor=None):
    if name in _BY_NAME:
        return _BY_NAME[name](config)
    if name == "ddpg":
        return ActorPolicy(actor, config)
    if name == "hybrid":
        return HybridPolicy(actor, config)
    raise ConfigError(f"unknown policy {name!r}; expected one of {', '.join(POLICY_NAMES)}")
