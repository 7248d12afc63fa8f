"""Policy evaluation: episode records, summary statistics and fixation labels."""

from __future__ import annotations

import csv
import dataclasses
import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .env import discounted_return
from .errors import ConfigError
from .rng import stream

# Evaluation plants start far above any training seed range.
EVAL_SEED_BASE = 1_000_000


@dataclass
class EpisodeRecord:
    plant_seed: int
    gamma: float
    start_pose: tuple[float, float]
    poses: list = field(default_factory=list)  # post-move (theta, phi) per step
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    p_max: list = field(default_factory=list)
    r_detect: float = 1.0
    r_invalid: float = -1.0

    @property
    def length(self):
        return len(self.rewards)

    @property
    def discounted_return(self):
        return discounted_return(self.rewards, self.gamma)

    @property
    def undiscounted_return(self):
        return float(sum(self.rewards))

    @property
    def first_reward_step(self):
        """0-based step index of the first detection reward, or ``None``."""
        for i, r in enumerate(self.rewards):
            if r == self.r_detect:
                return i
        return None

    @property
    def invalid_count(self):
        return sum(1 for r in self.rewards if r == self.r_invalid)

    def to_dict(self):
        return {
            "plant_seed": self.plant_seed,
            "start_pose": list(self.start_pose),
            "poses": [list(p) for p in self.poses],
            "actions": [list(a) for a in self.actions],
            "rewards": list(self.rewards),
            "p_max": list(self.p_max),
            "discounted_return": self.discounted_return,
            "return": self.undiscounted_return,
            "first_reward_step": self.first_reward_step,
        }


@dataclass
class Summary:
    policy: str
    episodes: int
    mean_return: float
    std_return: float
    mean_undiscounted: float
    mean_first_reward: float | None
    rewarded_episodes: int
    reward_rate: float
    invalid_count: int
    std_first_reward: float | None = None

    def to_dict(self):
        return dict(self.__dict__)

    @property
    def return_stderr(self):
        return self.std_return / math.sqrt(self.episodes) if self.episodes else 0.0

    @property
    def first_reward_stderr(self):
        if self.std_first_reward is None or not self.rewarded_episodes:
            return None
        return self.std_first_reward / math.sqrt(self.rewarded_episodes)


def run_episode(env, policy, plant_seed, rng):
    env.reset(plant_seed)
    r = env.config.reward
    rec = EpisodeRecord(plant_seed, env.config.gamma, (env.pose.theta, env.pose.phi), r_detect=r.r_detect, r_invalid=r.r_invalid)
    while not env.done:
        tr = env.step(policy(env, rng))
        rec.poses.append((tr.info["theta"], tr.info["phi"]))
        rec.actions.append((tr.action.d_theta, tr.action.d_phi))
        rec.rewards.append(tr.reward)
        rec.p_max.append(tr.info["p_max"])
    return rec


def summarize(records, name="policy"):
    if not records:
        raise ConfigError("cannot summarize zero episodes")
    returns = np.array([r.discounted_return for r in records])
    firsts = [r.first_reward_step for r in records if r.first_reward_step is not None]
    steps = sum(r.length for r in records)
    detects = sum(sum(1 for x in r.rewards if x == r.r_detect) for r in records)
    return Summary(
        policy=name,
        episodes=len(records),
        mean_return=float(returns.mean()),
        std_return=float(returns.std()),
        mean_undiscounted=float(np.mean([r.undiscounted_return for r in records])),
        mean_first_reward=float(np.mean(firsts)) if firsts else None,
        rewarded_episodes=len(firsts),
        reward_rate=detects / steps if steps else 0.0,
        invalid_count=sum(r.invalid_count for r in records),
        std_first_reward=float(np.std(firsts)) if firsts else None,
    )


def evaluate(env, policy, episodes, seed_base=EVAL_SEED_BASE, seed=0, name=None):
    """Run ``episodes`` episodes on plants ``seed_base, seed_base + 1, ...``.

    Policy randomness for each episode comes from its own stream, so one
    episode's result does not depend on which others ran.
    """
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")
    records = [run_episode(env, policy, seed_base + i, stream(seed, "eval", seed_base + i)) for i in range(episodes)]
    return records, summarize(records, name or getattr(policy, "name", "policy"))


def check_disjoint(train_seeds, eval_seeds):
    """Raise if any evaluation plant was also a training plant."""
    overlap = set(train_seeds) & set(eval_seeds)
    if overlap:
        raise ConfigError(f"evaluation seeds overlap training seeds: {sorted(overlap)[:5]}")


def return_ratio(value, baseline):
    """How many times better ``value`` is than ``baseline``.

    For a positive baseline this is the plain quotient. When both are
    negative (costs) it is the factor by which the cost shrank.
    """
    if baseline > 0:
        return value / baseline
    if baseline < 0:
        return baseline / value if value < 0 else math.inf
    return math.inf if value > 0 else 0.0


# ---------------------------------------------------------------------------
# fixation


class FixationLabel(str, enum.Enum):
    HIGH_RETURN = "high_return_fixation"
    LOW_RETURN = "low_return_fixation"
    NONE = "no_fixation"


@dataclass
class FixationConfig:
    window: int = 20
    # mean great-circle step (radians of arc) below which the camera counts as settled
    eps_fix: float = 0.02
    min_steps: int = 50
    high_fraction: float = 0.5

    def validate(self):
        if self.window < 1 or self.min_steps < 0:
            raise ConfigError("window must be >= 1 and min_steps >= 0")
        if self.eps_fix <= 0 or not 0.0 <= self.high_fraction <= 1.0:
            raise ConfigError("eps_fix must be positive and high_fraction in [0, 1]")
        return self


def _unit(theta, phi):
    s = math.sin(phi)
    return np.array([s * math.cos(theta), s * math.sin(theta), math.cos(phi)])


def great_circle_steps(poses):
    """Arc angle between successive (theta, phi) poses."""
    out = []
    for (t0, p0), (t1, p1) in zip(poses[:-1], poses[1:]):
        c = float(np.clip(_unit(t0, p0) @ _unit(t1, p1), -1.0, 1.0))
        out.append(math.acos(c))
    return out


def classify_fixation(record, config=None):
    """Label the tail of an episode, or ``None`` when it is too short to judge."""
    cfg = (config or FixationConfig()).validate()
    if record.length <= cfg.min_steps:
        return None
    w = min(cfg.window, record.length)
    tail = list(record.poses[-w:])
    if len(tail) < 2:
        return None
    if np.mean(great_circle_steps(tail)) >= cfg.eps_fix:
        return FixationLabel.NONE
    rewarded = sum(1 for r in record.rewards[-w:] if r == record.r_detect)
    return FixationLabel.HIGH_RETURN if rewarded >= cfg.high_fraction * w else FixationLabel.LOW_RETURN


def fixation_counts(records, config=None):
    counts = {label.value: 0 for label in FixationLabel}
    counts["not_applicable"] = 0
    for rec in records:
        label = classify_fixation(rec, config)
        counts[label.value if label else "not_applicable"] += 1
    return counts


# ---------------------------------------------------------------------------
# output


def write_records_jsonl(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


# CSV column -> Summary attribute; the first six columns are the published layout
SUMMARY_COLUMNS = (
    ("policy", "policy"),
    ("mean_return", "mean_return"),
    ("sd_return", "std_return"),
    ("mean_steps_to_reward", "mean_first_reward"),
    ("n_rewarded", "rewarded_episodes"),
    ("n_episodes", "episodes"),
    ("sd_steps_to_reward", "std_first_reward"),
    ("mean_undiscounted", "mean_undiscounted"),
    ("reward_rate", "reward_rate"),
    ("invalid_count", "invalid_count"),
)


def _cell(v):
    if v is None:
        return ""
    return f"{v:.6f}" if isinstance(v, float) else v


def write_summary_csv(summaries, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([c for c, _ in SUMMARY_COLUMNS])
        for s in summaries:
            w.writerow([_cell(getattr(s, attr)) for _, attr in SUMMARY_COLUMNS])


def read_summary_csv(path):
    """Summaries back from :func:`write_summary_csv` output."""
    kinds = {f.name: f.type for f in dataclasses.fields(Summary)}
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for col, attr in SUMMARY_COLUMNS:
                text = row.get(col, "")
                if attr == "policy":
                    kw[attr] = text
                elif text == "":
                    kw[attr] = None
                else:
                    kw[attr] = int(text) if kinds[attr] == "int" else float(text)
            out.append(Summary(**kw))
    return out
