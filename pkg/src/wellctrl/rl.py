"""A2C and PPO training loops with synchronized parallel rollout collection.

Each iteration: N actors run T environment steps (episodes reset with a fresh
draw from the training scenario vector), advantages come from GAE, and a
single learner applies the update. Worker results are always reduced in actor
index order, so runs are bit-identical at any worker count.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .env import WellControlEnv, base_policy, clip_weights, mean_return_over
from .nn import (ActorCritic, Adam, clip_grad_norm, flatten_grads,
                 gaussian_logprob_entropy, gaussian_logprob_grads)

GRAD_CLIP_NORM = 0.5


@dataclass
class TrainConfig:
    algo: str = "ppo"                 # "ppo" | "a2c"
    n_actors: int = 8
    n_steps: int = 50                 # T, steps per actor per iteration
    minibatch: int = 16               # PPO only
    epochs: int = 20                  # PPO only; A2C uses 1 epoch, full batch
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.1
    vf_coef: float = 0.5
    ent_coef: float = 0.01
    learning_rate: float = 5e-4
    total_episodes: int = 4000
    eval_cadence: int = 1
    checkpoint_cadence: int = 0       # iterations; 0 = final only
    seed: int = 0
    layer_sizes: list[int] | None = None
    workers: int = 1

    def __post_init__(self):
        if self.algo not in ("ppo", "a2c"):
            raise ValueError(f"unknown algorithm {self.algo!r}")
        if self.algo == "a2c":
            self.ent_coef = 0.0 if self.ent_coef == 0.01 else self.ent_coef
        if self.minibatch > self.n_actors * self.n_steps:
            raise ValueError("minibatch exceeds rollout size")
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip range must lie in (0, 1)")


@dataclass
class RolloutBuffer:
    """Per-actor sequences of length T, stacked as (N, T, ...) arrays."""

    obs: np.ndarray        # (N, T, obs_dim)
    actions: np.ndarray    # (N, T, act_dim)
    logp_old: np.ndarray   # (N, T)
    rewards: np.ndarray    # (N, T)
    values: np.ndarray     # (N, T)
    dones: np.ndarray      # (N, T) - True if step ended an episode
    last_values: np.ndarray  # (N,) bootstrap value after step T
    last_dones: np.ndarray   # (N,) whether step T was terminal

    @property
    def size(self) -> int:
        return self.rewards.size


def sample_action(net: ActorCritic, obs: np.ndarray,
                  rng: np.random.Generator) -> tuple[np.ndarray, float, float]:
    """Draw an action from the diagonal Gaussian; returns (a, logp, value)."""
    mean, log_std, value = net.forward(obs)
    a = mean[0] + np.exp(log_std) * rng.standard_normal(net.action_dim)
    logp, _ = gaussian_logprob_entropy(mean, log_std, a[None, :])
    return a, float(logp[0]), float(value[0])


def deterministic_policy(net: ActorCritic) -> Callable[[np.ndarray], np.ndarray]:
    """Evaluation policy: the Gaussian mean (the env clips to weight bounds)."""

    def policy(obs):
        mean, _, _ = net.forward(obs)
        return mean[0]

    return policy


def _rollout_one_actor(net: ActorCritic, env: WellControlEnv, T: int,
                       rng: np.random.Generator, state: dict) -> dict:
    """Run one actor for T steps, resetting at episode boundaries."""
    obs_dim, act_dim = env.obs_dim, net.action_dim
    out = {
        "obs": np.empty((T, obs_dim)), "actions": np.empty((T, act_dim)),
        "logp": np.empty(T), "rewards": np.empty(T), "values": np.empty(T),
        "dones": np.zeros(T, dtype=bool),
    }
    obs = state.get("obs")
    if obs is None:
        obs = env.reset()
    for t in range(T):
        a, logp, v = sample_action(net, obs, rng)
        out["obs"][t] = obs
        out["actions"][t] = a
        out["logp"][t] = logp
        out["values"][t] = v
        obs, r, done = env.step(clip_weights(a))
        out["rewards"][t] = r
        out["dones"][t] = done
        if done:
            obs = env.reset()
    out["last_done"] = bool(out["dones"][-1])
    _, _, last_v = net.forward(obs)
    out["last_value"] = float(last_v[0])
    state["obs"] = obs
    return out


def collect_rollouts(net: ActorCritic, envs: Sequence[WellControlEnv],
                     T: int, rngs: Sequence[np.random.Generator],
                     states: Sequence[dict], workers: int = 1) -> RolloutBuffer:
    """Synchronous collection across N actors; reduced in actor order."""
    n = len(envs)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda i: _rollout_one_actor(net, envs[i], T, rngs[i], states[i]),
                range(n)))
    else:
        results = [_rollout_one_actor(net, envs[i], T, rngs[i], states[i])
                   for i in range(n)]
    return RolloutBuffer(
        obs=np.stack([r["obs"] for r in results]),
        actions=np.stack([r["actions"] for r in results]),
        logp_old=np.stack([r["logp"] for r in results]),
        rewards=np.stack([r["rewards"] for r in results]),
        values=np.stack([r["values"] for r in results]),
        dones=np.stack([r["dones"] for r in results]),
        last_values=np.array([r["last_value"] for r in results]),
        last_dones=np.array([r["last_done"] for r in results]),
    )


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                last_value: float, gamma: float, lam: float
                ) -> tuple[np.ndarray, np.ndarray]:
    """GAE over one actor's sequence with bootstrap at the buffer end.

    delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t;
    A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1};
    returns = A + V.
    """
    T = rewards.shape[0]
    adv = np.zeros(T)
    next_v = last_value
    next_adv = 0.0
    for t in range(T - 1, -1, -1):
        nonterm = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_v * nonterm - values[t]
        next_adv = delta + gamma * lam * nonterm * next_adv
        adv[t] = next_adv
        next_v = values[t]
    return adv, adv + values


def buffer_advantages(buf: RolloutBuffer, gamma: float, lam: float
                      ) -> tuple[np.ndarray, np.ndarray]:
    advs, rets = [], []
    for i in range(buf.rewards.shape[0]):
        a, r = compute_gae(buf.rewards[i], buf.values[i], buf.dones[i],
                           buf.last_values[i], gamma, lam)
        advs.append(a)
        rets.append(r)
    return np.stack(advs), np.stack(rets)


def composite_loss(net: ActorCritic, obs: np.ndarray, actions: np.ndarray,
                   logp_old: np.ndarray, advantages: np.ndarray,
                   returns: np.ndarray, cfg: TrainConfig,
                   want_grads: bool = True) -> dict:
    """Composite actor-critic loss (and gradients) on one (mini)batch.

    A2C: -mean(logp * A) + vf_coef * mean((R - V)^2) - ent_coef * entropy.
    PPO: -mean(min(r A, clip(r) A)) + the same value and entropy terms, with
    r = exp(logp - logp_old). Advantages are treated as constants.
    """
    B = obs.shape[0]
    cache: dict = {}
    mean, log_std, value = net.forward(obs, cache)
    logp, entropy = gaussian_logprob_entropy(mean, log_std, actions)
    d_mean_logp, d_logstd_logp = gaussian_logprob_grads(mean, log_std, actions)

    if cfg.algo == "a2c":
        pg_loss = float(-np.mean(logp * advantages))
        dlogp = -advantages / B
    else:
        ratio = np.exp(logp - logp_old)
        unclipped = ratio * advantages
        clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * advantages
        pg_loss = float(-np.mean(np.minimum(unclipped, clipped)))
        # gradient flows through the selected branch only; the clipped branch
        # has zero gradient where the clip is active
        use_unclipped = unclipped <= clipped
        clip_inactive = (ratio > 1.0 - cfg.clip_eps) & (ratio < 1.0 + cfg.clip_eps)
        active = use_unclipped | clip_inactive
        dlogp = np.where(active, -advantages * ratio, 0.0) / B

    v_err = value - returns
    value_loss = float(np.mean(v_err ** 2))
    ent_loss = -entropy
    total = pg_loss + cfg.vf_coef * value_loss + cfg.ent_coef * ent_loss
    out = {"loss": total, "pg_loss": pg_loss, "value_loss": value_loss,
           "entropy": entropy}
    if not want_grads:
        return out

    d_mean = d_mean_logp * dlogp[:, None]
    d_log_std = (d_logstd_logp * dlogp[:, None]).sum(axis=0)
    d_log_std += cfg.ent_coef * -np.ones(net.action_dim)  # d(-entropy)/dlogstd
    d_value = cfg.vf_coef * 2.0 * v_err / B
    out["grads"] = flatten_grads(net.backward(cache, d_mean, d_value, d_log_std))
    return out


def _apply_update(net: ActorCritic, opt: Adam, grads: np.ndarray) -> None:
    grads = clip_grad_norm(grads, GRAD_CLIP_NORM)
    net.set_flat_params(opt.step(net.flat_params(), grads))


def a2c_update(net: ActorCritic, opt: Adam, buf: RolloutBuffer,
               cfg: TrainConfig) -> dict:
    """One full-batch, single-epoch gradient step."""
    adv, ret = buffer_advantages(buf, cfg.gamma, cfg.gae_lambda)
    obs = buf.obs.reshape(-1, buf.obs.shape[-1])
    actions = buf.actions.reshape(-1, buf.actions.shape[-1])
    stats = composite_loss(net, obs, actions, buf.logp_old.ravel(),
                           adv.ravel(), ret.ravel(), cfg)
    if not np.isfinite(stats["loss"]):
        raise FloatingPointError(f"non-finite A2C loss: {stats}")
    _apply_update(net, opt, stats.pop("grads"))
    return stats


def ppo_update(net: ActorCritic, opt: Adam, buf: RolloutBuffer,
               cfg: TrainConfig, rng: np.random.Generator) -> dict:
    """K epochs of shuffled minibatches with per-minibatch advantage
    normalization."""
    adv, ret = buffer_advantages(buf, cfg.gamma, cfg.gae_lambda)
    obs = buf.obs.reshape(-1, buf.obs.shape[-1])
    actions = buf.actions.reshape(-1, buf.actions.shape[-1])
    logp_old = buf.logp_old.ravel()
    adv = adv.ravel()
    ret = ret.ravel()
    n = obs.shape[0]
    last = {}
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n - cfg.minibatch + 1, cfg.minibatch):
            mb = order[start:start + cfg.minibatch]
            a_mb = adv[mb]
            a_mb = (a_mb - a_mb.mean()) / (a_mb.std() + 1e-8)
            stats = composite_loss(net, obs[mb], actions[mb], logp_old[mb],
                                   a_mb, ret[mb], cfg)
            if not np.isfinite(stats["loss"]):
                raise FloatingPointError(f"non-finite PPO loss: {stats}")
            _apply_update(net, opt, stats.pop("grads"))
            last = stats
    return last


@dataclass
class TrainLogRow:
    iteration: int
    episodes: int
    r_train: float
    r_eval: float
    pg_loss: float
    value_loss: float
    entropy: float
    wall_time: float


def default_layer_sizes(obs_dim: int, action_dim: int) -> list[int]:
    return [obs_dim, 20, 20, action_dim]


def train(cfg: TrainConfig, make_env: Callable[[list[int]], WellControlEnv],
          training_ids: Sequence[int], evaluation_ids: Sequence[int],
          log_path: str | Path | None = None,
          checkpoint_dir: str | Path | None = None) -> list[TrainLogRow]:
    """Run the full training loop until total_episodes is reached.

    ``make_env(scenario_ids)`` builds an environment whose scenario source is
    restricted to the given ids. Training environments draw uniformly from
    ``training_ids``; monitoring returns are computed with the deterministic
    policy on the training and evaluation vectors (undiscounted).
    """
    ss = np.random.SeedSequence(cfg.seed)
    net_rng, update_rng, *actor_seeds = ss.spawn(2 + cfg.n_actors)
    train_env_proto = make_env(list(training_ids))
    layer_sizes = cfg.layer_sizes or default_layer_sizes(
        train_env_proto.obs_dim, train_env_proto.action_dim)
    if layer_sizes[0] != train_env_proto.obs_dim:
        raise ValueError(f"network input {layer_sizes[0]} != observation dim "
                         f"{train_env_proto.obs_dim}")
    net = ActorCritic(layer_sizes, rng=np.random.default_rng(net_rng))
    opt = Adam(lr=cfg.learning_rate)
    update_gen = np.random.default_rng(update_rng)

    envs = [make_env(list(training_ids)) for _ in range(cfg.n_actors)]
    actor_rngs = []
    for env, seed in zip(envs, actor_seeds):
        gen = np.random.default_rng(seed)
        env.rng = gen
        actor_rngs.append(gen)
    states = [{} for _ in range(cfg.n_actors)]
    eval_env = make_env(list(training_ids) + list(evaluation_ids))
    n_train = len(training_ids)
    eval_idx_train = list(range(n_train))
    eval_idx_eval = list(range(n_train, n_train + len(evaluation_ids)))

    rows: list[TrainLogRow] = []
    episodes = 0
    iteration = 0
    t0 = time.perf_counter()
    while episodes < cfg.total_episodes:
        iteration += 1
        buf = collect_rollouts(net, envs, cfg.n_steps, actor_rngs, states,
                               workers=cfg.workers)
        episodes += int(buf.dones.sum())
        if cfg.algo == "a2c":
            stats = a2c_update(net, opt, buf, cfg)
        else:
            stats = ppo_update(net, opt, buf, cfg, update_gen)
        if cfg.eval_cadence and iteration % cfg.eval_cadence == 0:
            policy = deterministic_policy(net)
            r_train = mean_return_over(eval_env, policy, eval_idx_train)
            r_eval = (mean_return_over(eval_env, policy, eval_idx_eval)
                      if eval_idx_eval else float("nan"))
        else:
            r_train = r_eval = float("nan")
        rows.append(TrainLogRow(
            iteration=iteration, episodes=episodes, r_train=r_train,
            r_eval=r_eval, pg_loss=stats.get("pg_loss", float("nan")),
            value_loss=stats.get("value_loss", float("nan")),
            entropy=stats.get("entropy", float("nan")),
            wall_time=time.perf_counter() - t0))
        if (checkpoint_dir is not None and cfg.checkpoint_cadence
                and iteration % cfg.checkpoint_cadence == 0):
            net.save(Path(checkpoint_dir) / f"checkpoint_{iteration:05d}.bin",
                     step=iteration)
    if checkpoint_dir is not None:
        net.save(Path(checkpoint_dir) / "checkpoint_final.bin", step=iteration)
    if log_path is not None:
        write_training_log(log_path, rows)
    return rows


def write_training_log(path: str | Path, rows: list[TrainLogRow]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "episodes", "r_train", "r_eval",
                         "policy_loss", "value_loss", "entropy", "wall_time"])
        for r in rows:
            writer.writerow([r.iteration, r.episodes, f"{r.r_train:.17g}",
                             f"{r.r_eval:.17g}", f"{r.pg_loss:.17g}",
                             f"{r.value_loss:.17g}", f"{r.entropy:.17g}",
                             f"{r.wall_time:.3f}"])
