import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import FixedDetector
from vpoc.detector import Detection
from vpoc.env import (
    Action,
    BandConfig,
    BandEnv,
    EnvConfig,
    RewardConfig,
    ViewpointEnv,
    discounted_return,
    pose_features,
    detection_features,
    write_episode_log,
)
from vpoc.errors import ConfigError, LifecycleError
from vpoc.scene import BoundingBox, PlantScene, Ripeness, Workspace

DEG = math.radians


def env_at(phi0=DEG(30), confidence=None, **kw):
    cfg = EnvConfig(phi0=phi0, **kw)
    env = ViewpointEnv(cfg, FixedDetector(confidence))
    env.reset(0, scene=PlantScene((), (), 0))
    return env


# -- reset ----------------------------------------------------------------------


def test_reset_spawns_at_fixed_pose_and_is_deterministic():
    env = ViewpointEnv()
    a = env.reset(17)
    assert (env.pose.theta, env.pose.phi) == (0.0, DEG(30))
    assert env.steps == 0 and not env.done
    b = ViewpointEnv().reset(17)
    assert np.array_equal(a.vector, b.vector)


def test_sequential_seeds_give_distinct_plants():
    env = ViewpointEnv(EnvConfig(), FixedDetector())
    layouts = set()
    for s in range(100):
        env.reset(s)
        layouts.add(env.scene.sphere_array.tobytes())
    assert len(layouts) == 100


def test_step_before_reset_is_a_lifecycle_error():
    with pytest.raises(LifecycleError):
        ViewpointEnv().step(Action(0, 0))


# -- step and reward ------------------------------------------------------------

# (spawn phi, action, detector confidence) -> reward
REWARD_TABLE = [
    (DEG(12), (0.0, -0.1), None, -1.0),  # below phi_min
    (DEG(12), (0.0, -0.1), 0.99, -1.0),  # invalid wins over a detection
    (DEG(78), (0.0, 0.1), None, -1.0),  # above phi_max
    (DEG(30), (0.0, 0.0), 0.7, 1.0),
    (DEG(30), (0.1, 0.1), 0.6, 1.0),  # threshold is inclusive
    (DEG(30), (0.0, 0.0), 0.5999999, -0.1),
    (DEG(30), (0.0, 0.0), None, -0.1),
    (DEG(30), (-0.15, 0.0), 0.0, -0.1),
    (DEG(10), (0.0, 0.0), 1.0, 1.0),  # sitting on the boundary is valid
    (DEG(30), (3.0, 0.0), None, -0.1),  # theta wrap never counts as invalid
]


@pytest.mark.parametrize("phi0,action,conf,expected", REWARD_TABLE)
def test_reward_table(phi0, action, conf, expected):
    env = env_at(phi0, conf)
    assert env.step(Action(*action)).reward == expected


def test_invalid_request_clamps_to_boundary():
    env = env_at(DEG(12))
    tr = env.step(Action(0.05, -0.1))
    assert env.pose.phi == DEG(10) and tr.info["invalid"]
    assert env.pose.theta == pytest.approx(0.05)
    env = env_at(DEG(79))
    env.step(Action(0.0, 0.1))
    assert env.pose.phi == DEG(80)


def test_actions_are_clipped_to_a_max():
    env = env_at(DEG(30))
    tr = env.step(Action(1.0, -1.0))
    assert tr.action == Action(0.15, -0.15)
    assert env.pose.phi == pytest.approx(DEG(30) - 0.15)


@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=40))
def test_pose_stays_in_workspace_and_reward_is_a_constant(actions):
    env = env_at(DEG(45), 0.65)
    ws = env.workspace
    for a in actions:
        tr = env.step(Action(*a))
        assert ws.phi_min <= env.pose.phi <= ws.phi_max
        assert 0.0 <= env.pose.theta < 2 * math.pi
        assert tr.reward in (1.0, -1.0, -0.1)


def test_episode_ends_at_horizon():
    env = env_at(horizon=5)
    dones = [env.step(Action(0, 0)).done for _ in range(5)]
    assert dones == [False] * 4 + [True]
    with pytest.raises(LifecycleError):
        env.step(Action(0, 0))


def test_same_seed_and_actions_replay_identically():
    rng = np.random.default_rng(3)
    actions = [Action(*rng.uniform(-0.15, 0.15, 2)) for _ in range(15)]

    def run():
        env = ViewpointEnv()
        env.reset(5)
        return [(t.reward, t.info["p_max"], t.next_observation.vector.tobytes()) for t in map(env.step, actions)]

    assert run() == run()


def test_real_detector_drives_reward():
    env = ViewpointEnv()
    env.reset(1_000_003)
    for _ in range(30):
        tr = env.step(Action(0.1, 0.05))
        assert (tr.reward == 1.0) == (tr.info["p_max"] >= 0.6) or tr.info["invalid"]


# -- observations ---------------------------------------------------------------


def test_feature_observation_layout():
    env = env_at(DEG(45), 0.8)
    vec = env.observation.vector
    assert vec.shape == (15,) and env.obs_spec.vector_dim == 15
    assert vec[:3] == pytest.approx([0.0, 1.0, 0.0], abs=1e-6)
    # one box centered in the frame, 8 px wide, then zero padding
    assert vec[3:7] == pytest.approx([0.0, 0.0, 8 / 64, 0.8], abs=1e-6)
    assert not vec[7:].any()


def test_detection_features_rank_by_confidence_and_skip_unripe():
    dets = [
        Detection(BoundingBox(0, 0, 4, 4), Ripeness.RIPE, 0.2),
        Detection(BoundingBox(60, 60, 64, 64), Ripeness.RIPE, 0.9),
        Detection(BoundingBox(30, 30, 34, 34), Ripeness.UNRIPE, 0.99),
    ]
    f = detection_features(dets, 3, 64, 64)
    assert len(f) == 12
    assert f[3] == 0.9 and f[7] == 0.2 and f[8:] == [0.0] * 4
    assert f[0] == pytest.approx(2 * 62 / 64 - 1)


def test_pose_features_normalise_phi():
    ws = Workspace(DEG(10), DEG(80))
    from vpoc.scene import CameraPose

    assert pose_features(CameraPose(0, DEG(10), 0.5), ws)[2] == pytest.approx(-1.0)
    assert pose_features(CameraPose(0, DEG(80), 0.5), ws)[2] == pytest.approx(1.0)


def test_pixel_observation_shapes():
    env = ViewpointEnv(EnvConfig(observation="pixels", width=32))
    obs = env.reset(2)
    assert obs.image.shape == (3, 32, 32) and obs.vector.shape == (3,)
    assert env.obs_spec.image_shape == (3, 32, 32)
    assert 0.0 <= obs.image.min() and obs.image.max() <= 1.0


# -- returns and config ---------------------------------------------------------


def test_discounted_return_examples():
    assert discounted_return([1.0], 0.5) == 1.0
    assert discounted_return([-0.1, -0.1, 1.0], 0.99) == pytest.approx(0.7811, abs=1e-12)
    assert discounted_return([2.0, 5.0, 7.0], 0.0) == 2.0
    with pytest.raises(ConfigError):
        discounted_return([1.0], 1.0)


@pytest.mark.parametrize(
    "kw",
    [{"phi_min": DEG(50), "phi_max": DEG(40)}, {"phi0": DEG(5)}, {"horizon": 0}, {"observation": "depth"}, {"gamma": 1.0}],
)
def test_invalid_env_config(kw):
    with pytest.raises(ConfigError):
        EnvConfig(**kw).validate()


def test_reward_ordering_is_enforced():
    with pytest.raises(ConfigError):
        RewardConfig(r_exist=-2.0).validate()


def test_episode_log_lines(tmp_path):
    import io
    import json

    env = env_at(DEG(30), 0.9)
    buf = io.StringIO()
    write_episode_log([env.step(Action(0.01, 0.0)) for _ in range(3)], buf)
    lines = [json.loads(s) for s in buf.getvalue().splitlines()]
    assert [r["step"] for r in lines] == [1, 2, 3]
    assert set(lines[0]) == {"step", "pose", "action", "reward", "p_max", "done"}
    assert lines[0]["reward"] == 1.0 and lines[0]["p_max"] == 0.9


# -- toy task -------------------------------------------------------------------


def test_band_env_rewards_negative_distance():
    env = BandEnv(BandConfig(x0=-0.8, horizon=3))
    env.reset()
    assert env.step(np.array([0.2])).reward == pytest.approx(-0.4)
    assert env.step(np.array([5.0])).reward == pytest.approx(-0.2)
    assert env.step(np.array([0.2])).reward == pytest.approx(0.0, abs=1e-12)
    assert env.done
