import math
import re

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vpoc import plotting
from vpoc.detector import OracleDetector
from vpoc.env import Action, EnvConfig, ViewpointEnv
from vpoc.errors import ConfigError
from vpoc.evaluation import (
    EpisodeRecord,
    FixationConfig,
    FixationLabel,
    classify_fixation,
    evaluate,
    fixation_counts,
    read_summary_csv,
    return_ratio,
    summarize,
    write_summary_csv,
)
from vpoc.policies import make_policy
from vpoc.scene import SceneConfig, Workspace

GAMMA = 0.99


def zero_policy(env, rng):
    return Action(0.0, 0.0)


def berry_free_env(horizon=100):
    scene = SceneConfig(berry_count_min=0, berry_count_max=0)
    return ViewpointEnv(EnvConfig(horizon=horizon), OracleDetector(), scene)


def test_zero_action_on_berry_free_plant_pays_only_existence_cost():
    env = berry_free_env()
    records, summary = evaluate(env, zero_policy, 3, name="zero")
    expected = sum(GAMMA**t * -0.1 for t in range(100))
    for rec in records:
        assert rec.length == 100
        assert rec.first_reward_step is None
        assert rec.discounted_return == pytest.approx(expected, abs=1e-9)
    assert summary.mean_return == pytest.approx(expected, abs=1e-9)
    assert summary.mean_first_reward is None and summary.rewarded_episodes == 0
    assert summary.invalid_count == 0


def test_single_episode_summary_equals_that_episode():
    env = ViewpointEnv()
    records, summary = evaluate(env, make_policy("proportional"), 1)
    rec = records[0]
    assert summary.episodes == 1
    assert summary.mean_return == rec.discounted_return
    assert summary.std_return == 0.0
    assert summary.mean_undiscounted == rec.undiscounted_return
    if rec.first_reward_step is None:
        assert summary.mean_first_reward is None
    else:
        assert summary.mean_first_reward == rec.first_reward_step
        assert summary.std_first_reward == 0.0


def test_summary_statistics_match_hand_computation():
    recs = []
    for rewards in ([-0.1, 1.0, 1.0], [-0.1, -0.1, -0.1], [1.0, -1.0, -0.1]):
        recs.append(EpisodeRecord(0, 0.5, (0.0, 0.5), [(0.0, 0.5)] * 3, [(0, 0)] * 3, rewards, [0.0] * 3))
    s = summarize(recs, "hand")
    returns = [-0.1 + 0.5 + 0.25, -0.1 - 0.05 - 0.025, 1.0 - 0.5 - 0.025]
    assert s.mean_return == pytest.approx(np.mean(returns))
    assert s.std_return == pytest.approx(np.std(returns))
    assert s.mean_first_reward == pytest.approx(0.5)  # steps 1 and 0
    assert s.rewarded_episodes == 2
    assert s.invalid_count == 1
    assert s.reward_rate == pytest.approx(3 / 9)
    assert s.return_stderr == pytest.approx(np.std(returns) / math.sqrt(3))


def test_summarize_rejects_empty_input():
    with pytest.raises(ConfigError):
        summarize([])


def test_evaluation_is_deterministic_and_order_independent():
    env = ViewpointEnv()
    pol = make_policy("random")
    a, sa = evaluate(env, pol, 4, seed=3)
    b, sb = evaluate(ViewpointEnv(), pol, 4, seed=3)
    assert [r.to_dict() for r in a] == [r.to_dict() for r in b]
    assert sa == sb
    # the third episode alone, starting from its own plant seed
    c, _ = evaluate(ViewpointEnv(), pol, 1, seed_base=a[2].plant_seed, seed=3)
    assert c[0].to_dict() == a[2].to_dict()


@pytest.mark.parametrize("baseline,value,ratio", [(5.0, 25.0, 5.0), (-20.0, -4.0, 5.0), (-20.0, 1.0, math.inf)])
def test_return_ratio(baseline, value, ratio):
    assert return_ratio(value, baseline) == ratio


# -- fixation -------------------------------------------------------------------


def record_from(poses, rewards):
    n = len(poses)
    return EpisodeRecord(0, GAMMA, poses[0], list(poses), [(0.0, 0.0)] * n, list(rewards), [0.0] * n)


def test_stationary_rewarded_tail_is_high_return_fixation():
    rec = record_from([(1.0, 0.6)] * 100, [-0.1] * 80 + [1.0] * 20)
    assert classify_fixation(rec) is FixationLabel.HIGH_RETURN


def test_stationary_unrewarded_tail_is_low_return_fixation():
    rec = record_from([(1.0, 0.6)] * 100, [-0.1] * 100)
    assert classify_fixation(rec) is FixationLabel.LOW_RETURN


def test_random_walk_is_not_a_fixation():
    rng = np.random.default_rng(0)
    steps = rng.uniform(-0.15, 0.15, (100, 2))
    theta = np.cumsum(steps[:, 0])
    phi = np.clip(0.6 + np.cumsum(steps[:, 1]), 0.2, 1.3)
    rec = record_from(list(zip(theta, phi)), [1.0] * 100)
    assert classify_fixation(rec) is FixationLabel.NONE


def test_short_episodes_are_not_judged():
    rec = record_from([(1.0, 0.6)] * 50, [1.0] * 50)
    assert classify_fixation(rec) is None
    counts = fixation_counts([rec, record_from([(1.0, 0.6)] * 60, [-0.1] * 60)])
    assert counts["not_applicable"] == 1 and counts[FixationLabel.LOW_RETURN.value] == 1


def test_fixation_threshold_boundary():
    # tail arcs of exactly eps/2 and 2*eps along a meridian
    cfg = FixationConfig(eps_fix=0.02)
    slow = record_from([(0.0, 0.5 + 0.01 * k) for k in range(100)], [-0.1] * 100)
    fast = record_from([(0.0, 0.3 + 0.04 * (k % 20)) for k in range(100)], [-0.1] * 100)
    assert classify_fixation(slow, cfg) is FixationLabel.LOW_RETURN
    assert classify_fixation(fast, cfg) is FixationLabel.NONE


@settings(max_examples=40, deadline=None)
@given(st.floats(-10, 10), st.integers(0, 2**31 - 1))
def test_fixation_label_is_invariant_to_azimuth_rotation(shift, seed):
    rng = np.random.default_rng(seed)
    scale = rng.choice([0.001, 0.01, 0.1])
    theta = np.cumsum(rng.uniform(-scale, scale, 80))
    phi = np.clip(0.7 + np.cumsum(rng.uniform(-scale, scale, 80)), 0.2, 1.3)
    rewards = list(rng.choice([-0.1, 1.0], 80))
    a = record_from(list(zip(theta, phi)), rewards)
    b = record_from(list(zip(theta + shift, phi)), rewards)
    assert classify_fixation(a) is classify_fixation(b)


def test_fixation_config_validation():
    with pytest.raises(ConfigError):
        FixationConfig(eps_fix=0).validate()
    with pytest.raises(ConfigError):
        FixationConfig(high_fraction=1.5).validate()


# -- outputs --------------------------------------------------------------------


def test_summary_csv_round_trip(tmp_path):
    env = ViewpointEnv()
    sums = [evaluate(env, make_policy(n), 3, name=n)[1] for n in ("random", "downward")]
    sums.append(evaluate(berry_free_env(20), zero_policy, 2, name="zero")[1])
    path = tmp_path / "summary.csv"
    write_summary_csv(sums, path)
    header = path.read_text().splitlines()[0].split(",")
    assert header[:6] == ["policy", "mean_return", "sd_return", "mean_steps_to_reward", "n_rewarded", "n_episodes"]
    back = read_summary_csv(path)
    for s, r in zip(sums, back):
        assert r.policy == s.policy and r.episodes == s.episodes and r.invalid_count == s.invalid_count
        assert r.mean_return == pytest.approx(s.mean_return, abs=1e-6)
        if s.mean_first_reward is None:
            assert r.mean_first_reward is None
        else:
            assert r.mean_first_reward == pytest.approx(s.mean_first_reward, abs=1e-6)


def _pairs(svg, cls):
    return re.findall(rf'class="{cls}"', svg)


@pytest.mark.parametrize("policy", ["random", "proportional"])
def test_trajectory_markers_match_reward_counts(policy):
    env = ViewpointEnv()
    records, _ = evaluate(env, make_policy(policy), 2)
    for rec in records:
        svg = plotting.plot_trajectory(rec, env.scene, workspace=env.workspace)
        assert len(_pairs(svg, "detect")) == sum(1 for r in rec.rewards if r == 1.0)
        assert len(_pairs(svg, "negative")) == sum(1 for r in rec.rewards if r < 0)
        assert svg.count("<polyline") == 1


def test_single_step_episode_draws_no_path():
    rec = record_from([(0.3, 0.7)], [1.0])
    svg = plotting.plot_trajectory(rec, workspace=Workspace())
    assert "<polyline" not in svg
    assert len(_pairs(svg, "detect")) == 1 and len(_pairs(svg, "negative")) == 0


def test_summary_bars_follow_policy_order_and_exact_heights():
    env = ViewpointEnv()
    names = ["proportional", "random", "downward", "random-ba"]
    sums = [evaluate(env, make_policy(n), 3, name=n)[1] for n in names]
    svg = plotting.summary_bars_svg(sums)
    bars = re.findall(r'<rect x="([\d.]+)" y="([\d.]+)" width="[\d.]+" height="([\d.]+)"[^>]*class="bar" data-value="([^"]+)"', svg)
    by_name = {s.policy: s for s in sums}
    expected = [n for n in plotting.POLICY_ORDER if n in by_name]
    assert [float(v) for *_, v in bars] == [by_name[n].mean_return for n in expected]
    xs = [float(x) for x, *_ in bars]
    assert xs == sorted(xs)
    # pixel heights are proportional to |value| on a shared axis
    per_unit = [float(h) / abs(float(v)) for _, _, h, v in bars if abs(float(v)) > 1.0]
    assert np.allclose(per_unit, per_unit[0], rtol=0.02)
    # one whisker (three lines) per bar with a nonzero standard error
    whiskers = sum(1 for s in sums if s.return_stderr > 0)
    assert svg.count('stroke-width="1.2"') == 3 * whiskers
