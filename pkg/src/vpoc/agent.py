"""DDPG learner: replay buffer, exploration noise, updates and the training loops."""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nets
from .env import Action, discounted_return
from .errors import ConfigError, StateError, StorageError
from .rng import stream

__all__ = [
    "Agent",
    "DDPGConfig",
    "GaussianNoise",
    "OUNoise",
    "ReplayBuffer",
    "TrainResult",
    "run_training",
]


@dataclass
class DDPGConfig:
    gamma: float = 0.99
    tau: float = 1e-3
    batch_size: int = 16
    buffer_capacity: int = 100_000
    warmup: int = 500
    updates_per_step: int = 1
    noise: str = "ou"
    ou_theta: float = 0.15
    # exploration scale as a fraction of a_max
    noise_sigma_frac: float = 0.2
    # a horizon cut is not a real terminal state, so keep bootstrapping through it
    bootstrap_on_timeout: bool = True
    # evaluate the target actor at s_{i+1} (standard); False uses s_i as literally printed
    target_next_state: bool = True
    # feed the critic a / a_max so the action input spans [-1, 1] like the
    # other features; with raw radians the L2 penalty flattens Q along the action
    normalize_critic_action: bool = True
    net: nets.NetConfig = field(default_factory=nets.NetConfig)
    seed: int = 0
    dtype: str = "float32"

    def validate(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError("tau must lie in [0, 1]")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ConfigError("need 1 <= batch_size <= buffer_capacity")
        if self.warmup < 0 or self.updates_per_step < 1:
            raise ConfigError("warmup must be >= 0 and updates_per_step >= 1")
        if self.noise not in ("ou", "gaussian", "none"):
            raise ConfigError("noise must be 'ou', 'gaussian' or 'none'")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        self.net.validate()
        return self


# ---------------------------------------------------------------------------
# replay


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform sampling.

    One producer and one consumer may share it; ``store`` and ``sample`` are
    serialized by a lock so a sample sees a consistent prefix of the appends.
    """

    def __init__(self, capacity, vector_dim, action_dim, image_shape=None):
        if capacity < 1:
            raise ConfigError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.vector = np.zeros((capacity, vector_dim), np.float32)
        self.next_vector = np.zeros((capacity, vector_dim), np.float32)
        self.action = np.zeros((capacity, action_dim), np.float32)
        self.reward = np.zeros(capacity, np.float32)
        self.terminal = np.zeros(capacity, np.float32)
        self.image = self.next_image = None
        if image_shape is not None:
            # images are kept as bytes; np.zeros only commits pages as they fill
            self.image = np.zeros((capacity, *image_shape), np.uint8)
            self.next_image = np.zeros((capacity, *image_shape), np.uint8)
        self.total_stored = 0
        self._lock = threading.Lock()

    def __len__(self):
        return min(self.total_stored, self.capacity)

    def store(self, obs, action, reward, next_obs, terminal):
        with self._lock:
            i = self.total_stored % self.capacity
            self.vector[i] = obs.vector
            self.next_vector[i] = next_obs.vector
            self.action[i] = action
            self.reward[i] = reward
            self.terminal[i] = 1.0 if terminal else 0.0
            if self.image is not None:
                self.image[i] = np.round(obs.image * 255.0)
                self.next_image[i] = np.round(next_obs.image * 255.0)
            self.total_stored += 1

    def sample(self, batch_size, rng):
        with self._lock:
            n = len(self)
            if n < batch_size:
                raise StateError(f"buffer holds {n} transitions, need {batch_size}")
            idx = rng.integers(0, n, size=batch_size)
            batch = {
                "vector": self.vector[idx].copy(),
                "next_vector": self.next_vector[idx].copy(),
                "action": self.action[idx].copy(),
                "reward": self.reward[idx].copy(),
                "terminal": self.terminal[idx].copy(),
                "index": idx,
            }
            if self.image is not None:
                batch["image"] = self.image[idx].astype(np.float32) / 255.0
                batch["next_image"] = self.next_image[idx].astype(np.float32) / 255.0
        return batch


# ---------------------------------------------------------------------------
# exploration


class OUNoise:
    """Ornstein-Uhlenbeck process with unit time step."""

    def __init__(self, dim, theta, sigma, rng, mu=0.0):
        self.dim, self.theta, self.sigma, self.mu = dim, theta, sigma, mu
        self.rng = rng
        self.reset()

    def reset(self):
        self.state = np.full(self.dim, self.mu, dtype=np.float64)

    def sample(self):
        self.state = self.state + self.theta * (self.mu - self.state) + self.sigma * self.rng.standard_normal(self.dim)
        return self.state.copy()


class GaussianNoise:
    def __init__(self, dim, sigma, rng):
        self.dim, self.sigma, self.rng = dim, sigma, rng

    def reset(self):
        pass

    def sample(self):
        return self.sigma * self.rng.standard_normal(self.dim)


class ZeroNoise(GaussianNoise):
    def __init__(self, dim):
        super().__init__(dim, 0.0, None)

    def sample(self):
        return np.zeros(self.dim)


# ---------------------------------------------------------------------------
# agent


def _batch_inputs(batch, prefix=""):
    out = {"vector": batch[prefix + "vector"]}
    if prefix + "image" in batch:
        out["image"] = batch[prefix + "image"]
    return out


class Agent:
    def __init__(self, obs_spec, config=None, a_max=None):
        self.config = (config or DDPGConfig()).validate()
        cfg = self.config
        if a_max is not None:
            cfg.net.a_max = float(a_max)
        self.obs_spec = obs_spec
        self.a_max = cfg.net.a_max
        dtype = np.dtype(cfg.dtype)
        self.actor = nets.build_actor(obs_spec, cfg.net, stream(cfg.seed, "init", "actor"), dtype)
        self.critic = nets.build_critic(obs_spec, cfg.net, stream(cfg.seed, "init", "critic"), dtype)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        n = cfg.net
        self.actor_opt = nets.OptimizerState.for_params(self.actor, n.actor_lr, n.beta1, n.beta2, n.eps)
        self.critic_opt = nets.OptimizerState.for_params(self.critic, n.critic_lr, n.beta1, n.beta2, n.eps)
        self.buffer = ReplayBuffer(cfg.buffer_capacity, obs_spec.vector_dim, obs_spec.action_dim, obs_spec.image_shape)
        self.sample_rng = stream(cfg.seed, "replay")
        sigma = cfg.noise_sigma_frac * self.a_max
        noise_rng = stream(cfg.seed, "noise")
        if cfg.noise == "ou":
            self.noise = OUNoise(obs_spec.action_dim, cfg.ou_theta, sigma, noise_rng)
        elif cfg.noise == "gaussian":
            self.noise = GaussianNoise(obs_spec.action_dim, sigma, noise_rng)
        else:
            self.noise = ZeroNoise(obs_spec.action_dim)
        self.action_scale = 1.0 / self.a_max if cfg.normalize_critic_action else 1.0
        self.updates = 0
        self._published = self.actor.snapshot()
        self._publish_lock = threading.Lock()
        # held by train_step and save so a checkpoint never sees a half-applied update
        self._update_lock = threading.Lock()

    # -- acting ------------------------------------------------------------

    def policy_output(self, observation, params=None):
        out, _ = nets.forward(params or self.actor, observation.inputs())
        return out[0].astype(np.float64)

    def act(self, observation, explore=True, params=None):
        a = self.policy_output(observation, params)
        if explore:
            a = a + self.noise.sample()
        return np.clip(a, -self.a_max, self.a_max)

    def actor_fn(self):
        """Deterministic ``observation -> action`` callable for evaluation."""
        return lambda obs: self.act(obs, explore=False)

    def publish(self):
        snap = self.actor.snapshot()
        with self._publish_lock:
            self._published = snap

    def published(self):
        with self._publish_lock:
            return self._published

    # -- learning ----------------------------------------------------------

    @property
    def ready(self):
        return len(self.buffer) >= max(self.config.warmup, self.config.batch_size)

    def q_inputs(self, states, actions):
        """Critic input dict for ``actions`` in environment units."""
        return dict(states, action=actions * self.critic.dtype.type(self.action_scale))

    def targets(self, batch):
        """Bellman targets; ``terminal`` masks the bootstrap term."""
        cfg = self.config
        s_next = _batch_inputs(batch, "next_" if cfg.target_next_state else "")
        a_next, _ = nets.forward(self.target_actor, s_next)
        q_next, _ = nets.forward(self.target_critic, self.q_inputs(_batch_inputs(batch, "next_"), a_next))
        dtype = self.critic.dtype
        mask = 1.0 - batch["terminal"].astype(dtype)
        return batch["reward"].astype(dtype) + dtype.type(cfg.gamma) * mask * q_next[:, 0]

    def critic_loss(self, batch, y=None):
        y = self.targets(batch) if y is None else y
        q, _ = nets.forward(self.critic, self.q_inputs(_batch_inputs(batch), batch["action"]))
        err = q[:, 0] - y
        return float(np.mean(err.astype(np.float64) ** 2)) + nets.l2_penalty(self.critic, self.config.net.critic_l2)

    def critic_gradients(self, batch, y):
        q, cache = nets.forward(self.critic, self.q_inputs(_batch_inputs(batch), batch["action"]))
        err = q[:, 0] - y
        g = (2.0 / len(y)) * err[:, None]
        grads, _ = nets.backward(self.critic, cache, g)
        loss = float(np.mean(err.astype(np.float64) ** 2)) + nets.l2_penalty(self.critic, self.config.net.critic_l2)
        return nets.add_l2(self.critic, grads, self.config.net.critic_l2), loss

    def actor_objective(self, batch):
        """Batch mean of ``Q(s, pi(s))``, the quantity the actor ascends."""
        s = _batch_inputs(batch)
        a, _ = nets.forward(self.actor, s)
        q, _ = nets.forward(self.critic, self.q_inputs(s, a))
        return float(np.mean(q.astype(np.float64)))

    def actor_gradients(self, batch):
        """Gradient of the negated objective w.r.t. actor params, via dQ/da chained through pi."""
        s = _batch_inputs(batch)
        a, a_cache = nets.forward(self.actor, s)
        q, q_cache = nets.forward(self.critic, self.q_inputs(s, a))
        n = q.shape[0]
        _, q_grads = nets.backward(self.critic, q_cache, np.full_like(q, -1.0 / n))
        grads, _ = nets.backward(self.actor, a_cache, q_grads["action"] * self.critic.dtype.type(self.action_scale))
        return grads

    def train_step(self, batch=None):
        """One critic and one actor Adam step plus target blending.

        Returns the critic loss, or ``None`` while the buffer is below warm-up.
        """
        if batch is None:
            if not self.ready:
                return None
            batch = self.buffer.sample(self.config.batch_size, self.sample_rng)
        with self._update_lock:
            y = self.targets(batch)
            grads, loss = self.critic_gradients(batch, y)
            nets.adam_step(self.critic_opt, self.critic, grads)
            nets.adam_step(self.actor_opt, self.actor, self.actor_gradients(batch))
            nets.polyak_update(self.target_critic, self.critic, self.config.tau)
            nets.polyak_update(self.target_actor, self.actor, self.config.tau)
            self.updates += 1
        return loss

    # -- persistence -------------------------------------------------------

    def save(self, path, metadata=None):
        meta = dict(metadata or {})
        try:
            with self._update_lock:
                meta.update({"updates": self.updates, "buffer_total": self.buffer.total_stored, "ddpg": _config_dict(self.config)})
                nets.save_checkpoint(
                    path,
                    {"actor": self.actor, "critic": self.critic, "target_actor": self.target_actor, "target_critic": self.target_critic},
                    {"actor": self.actor_opt, "critic": self.critic_opt},
                    meta,
                )
        except OSError as exc:
            raise StorageError(f"cannot write checkpoint {path}: {exc}") from exc

    def load(self, path):
        ck = nets.load_checkpoint(path)
        dtype = self.actor.dtype
        for name in ("actor", "critic", "target_actor", "target_critic"):
            if name not in ck.networks:
                raise StateError(f"checkpoint {path} has no {name!r} network")
            mine = getattr(self, name)
            nets.check_compatible(ck.networks[name], mine.arch)
            setattr(self, name, ck.networks[name].astype(dtype))
        for name in ("actor", "critic"):
            opt = ck.optimizers.get(name)
            if opt is not None:
                opt.m = [m.astype(dtype) for m in opt.m]
                opt.v = [v.astype(dtype) for v in opt.v]
                setattr(self, f"{name}_opt", opt)
        self.updates = int(ck.metadata.get("updates", 0))
        self.publish()
        return ck.metadata


def load_actor(path, dtype=np.float32):
    """Actor parameters from a training checkpoint, as an ``observation -> action`` callable."""
    ck = nets.load_checkpoint(path)
    if "actor" not in ck.networks:
        raise StateError(f"checkpoint {path} has no actor")
    actor = ck.networks["actor"].astype(dtype)
    a_max = actor.arch.output_scale

    def fn(obs):
        out, _ = nets.forward(actor, obs.inputs())
        return np.clip(out[0].astype(np.float64), -a_max, a_max)

    fn.params = actor
    return fn


def _config_dict(cfg):
    d = asdict(cfg)
    d["net"]["hidden"] = list(d["net"]["hidden"])
    return d


# ---------------------------------------------------------------------------
# training loops


@dataclass
class TrainResult:
    episodes: int
    env_steps: int
    updates: int
    stored: int
    records: list = field(default_factory=list)


def _episode_record(ep, seed, rewards, losses, gamma):
    return {
        "episode": ep,
        "plant_seed": seed,
        "steps": len(rewards),
        "return": float(sum(rewards)),
        "discounted_return": float(discounted_return(rewards, gamma)),
        "critic_loss": float(np.mean(losses)) if losses else None,
    }


def _action_array(action):
    return action.as_array() if isinstance(action, Action) else np.asarray(action, dtype=np.float64)


def _is_terminal(tr, cfg):
    return bool(tr.done and not cfg.bootstrap_on_timeout)


def _open_log(path, start):
    if path is None:
        return None
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        return open(path, "a" if start else "w", encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot open training log {path}: {exc}") from exc


def _checkpoint(agent, out_dir, ep, seed_base, total_steps):
    if out_dir is None:
        return None
    path = os.path.join(out_dir, f"checkpoint_{ep:06d}.vpoc")
    agent.save(path, {"episode": ep, "seed_base": seed_base, "env_steps": total_steps})
    latest = os.path.join(out_dir, "latest.vpoc")
    agent.save(latest, {"episode": ep, "seed_base": seed_base, "env_steps": total_steps})
    return path


def run_training(
    env,
    agent,
    episodes,
    *,
    mode="sequential",
    seed_base=0,
    start_episode=0,
    log_path=None,
    timing_path=None,
    checkpoint_dir=None,
    checkpoint_every=100,
    duration=None,
    progress=None,
):
    """Train ``agent`` on ``env`` for ``episodes`` episodes (plant seeds ``seed_base + ep``).

    The training log holds only seed-determined fields so sequential runs
    reproduce it byte for byte; wall-clock times go to ``timing_path``.
    ``duration`` (seconds) stops a parallel run early, after the episode in
    progress.
    """
    if mode not in ("sequential", "parallel"):
        raise ConfigError("mode must be 'sequential' or 'parallel'")
    if episodes < 0:
        raise ConfigError("episodes must be >= 0")
    if checkpoint_dir is not None:
        try:
            os.makedirs(checkpoint_dir, exist_ok=True)
        except OSError as exc:
            raise StorageError(f"cannot create checkpoint directory {checkpoint_dir}: {exc}") from exc
    log = _open_log(log_path, start_episode > 0)
    timing = _open_log(timing_path, start_episode > 0)
    try:
        if mode == "sequential":
            return _run_sequential(env, agent, episodes, seed_base, start_episode, log, timing, checkpoint_dir, checkpoint_every, progress)
        return _run_parallel(env, agent, episodes, seed_base, start_episode, log, timing, checkpoint_dir, checkpoint_every, duration, progress)
    finally:
        for fh in (log, timing):
            if fh is not None:
                fh.close()


def _emit(log, timing, rec, t0):
    if log is not None:
        log.write(json.dumps(rec, sort_keys=True) + "\n")
        log.flush()
    if timing is not None:
        timing.write(json.dumps({"episode": rec["episode"], "wall_clock": round(time.perf_counter() - t0, 6)}) + "\n")


def _run_sequential(env, agent, episodes, seed_base, start, log, timing, ckpt_dir, every, progress):
    cfg = agent.config
    t0 = time.perf_counter()
    steps = 0
    records = []
    for ep in range(start, start + episodes):
        seed = seed_base + ep
        obs = env.reset(seed)
        agent.noise.reset()
        rewards, losses = [], []
        while not env.done:
            a = agent.act(obs, explore=True)
            tr = env.step(a)
            agent.buffer.store(obs, _action_array(tr.action), tr.reward, tr.next_observation, _is_terminal(tr, cfg))
            steps += 1
            obs = tr.next_observation
            rewards.append(tr.reward)
            for _ in range(cfg.updates_per_step):
                loss = agent.train_step()
                if loss is not None:
                    losses.append(loss)
        rec = _episode_record(ep, seed, rewards, losses, cfg.gamma)
        records.append(rec)
        _emit(log, timing, rec, t0)
        if progress is not None:
            progress(rec)
        if ckpt_dir is not None and ((ep + 1) % every == 0 or ep == start + episodes - 1):
            _checkpoint(agent, ckpt_dir, ep + 1, seed_base, steps)
    return TrainResult(len(records), steps, agent.updates, agent.buffer.total_stored, records)


def _run_parallel(env, agent, episodes, seed_base, start, log, timing, ckpt_dir, every, duration, progress):
    """Actor thread steps the environment with the latest published actor
    while the learner thread updates continuously until the actor finishes."""
    cfg = agent.config
    t0 = time.perf_counter()
    stop = threading.Event()
    counters = {"env_steps": 0, "losses": []}
    records = []
    errors = []
    loss_lock = threading.Lock()
    publish_every = 50

    def actor_loop():
        try:
            for ep in range(start, start + episodes):
                if stop.is_set() or (duration is not None and time.perf_counter() - t0 >= duration):
                    break
                seed = seed_base + ep
                obs = env.reset(seed)
                agent.noise.reset()
                rewards = []
                while not env.done:
                    a = agent.act(obs, explore=True, params=agent.published())
                    tr = env.step(a)
                    agent.buffer.store(obs, _action_array(tr.action), tr.reward, tr.next_observation, _is_terminal(tr, cfg))
                    counters["env_steps"] += 1
                    obs = tr.next_observation
                    rewards.append(tr.reward)
                with loss_lock:
                    losses, counters["losses"] = counters["losses"], []
                rec = _episode_record(ep, seed, rewards, losses, cfg.gamma)
                records.append(rec)
                _emit(log, timing, rec, t0)
                if progress is not None:
                    progress(rec)
                if ckpt_dir is not None and (ep + 1) % every == 0:
                    _checkpoint(agent, ckpt_dir, ep + 1, seed_base, counters["env_steps"])
        except BaseException as exc:  # surfaced to the caller after join
            errors.append(exc)
        finally:
            stop.set()

    def learner_loop():
        try:
            while not stop.is_set():
                loss = agent.train_step()
                if loss is None:
                    time.sleep(0.001)
                    continue
                with loss_lock:
                    counters["losses"].append(loss)
                if agent.updates % publish_every == 0:
                    agent.publish()
        except BaseException as exc:
            errors.append(exc)
            stop.set()

    threads = [threading.Thread(target=actor_loop, name="vpoc-actor"), threading.Thread(target=learner_loop, name="vpoc-learner")]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    agent.publish()
    if ckpt_dir is not None and records:
        _checkpoint(agent, ckpt_dir, records[-1]["episode"] + 1, seed_base, counters["env_steps"])
    return TrainResult(len(records), counters["env_steps"], agent.updates, agent.buffer.total_stored, records)
