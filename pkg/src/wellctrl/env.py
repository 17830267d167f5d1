"""Episodic well-control environment wrapping the flow simulator.

Observations are saturation at producers plus gauge-normalized pressure at
producers and injectors. Actions are valve-opening weights in [0.001, 1]
that are normalized into balanced per-well rates. Rewards are the oil
produced per control step divided by total pore volume (recovery-factor
fraction), so every reward lies in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .flow import FlowSimulator
from .grid import Grid, WellSet
from .permfields import PermField

W_MIN = 0.001
W_MAX = 1.0


@dataclass(frozen=True)
class EpisodeConfig:
    """Episode shape: M control steps over t_total days."""

    m_steps: int = 5
    t_total: float = 25.0
    gamma: float = 0.99
    base_first_action: bool = True
    n_sub: int = 10
    mu: float = 0.3

    def __post_init__(self):
        if self.m_steps < 1:
            raise ValueError("episode needs at least one control step")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("discount must lie in [0, 1]")

    @property
    def dt_control(self) -> float:
        return self.t_total / self.m_steps


def clip_weights(w: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(w, dtype=float), W_MIN, W_MAX)


def weights_to_rates(w: np.ndarray, wells: WellSet) -> np.ndarray:
    """Normalize valve weights into balanced per-well rates.

    Producer i gets -(w_i / sum of producer weights) * c; injector i gets
    +(w_{n_p+i} / sum of injector weights) * c. The result sums to zero by
    construction.
    """
    w = np.asarray(w, dtype=float)
    if w.size != wells.n_p + wells.n_i:
        raise ValueError("weight vector length must be n_p + n_i")
    wp = w[:wells.n_p]
    wi = w[wells.n_p:]
    rates = np.empty(wells.n_p + wells.n_i)
    rates[:wells.n_p] = -(wp / wp.sum()) * wells.total_rate
    rates[wells.n_p:] = (wi / wi.sum()) * wells.total_rate
    return rates


def normalize_pressure(p_wells: np.ndarray) -> np.ndarray:
    """Affine map of gauge-pinned pressures to [-1, 1] per observation.

    Only pressure differences are physical; all-equal pressures map to 0.
    """
    centered = p_wells - p_wells.mean()
    m = np.abs(centered).max()
    if m == 0.0:
        return np.zeros_like(centered)
    return centered / m


class WellControlEnv:
    """Five-step (by default) control episodes with per-reset permeability
    draws from a scenario source.

    The action is a weight vector over the control wells. When the well set
    has a single injector its weight is dropped from the action (rate
    normalization makes it a no-op), so the action dimension is n_p; otherwise
    it is n_p + n_i. With ``full_state=True`` the observation is the whole
    saturation field instead of the well values.
    """

    def __init__(self, grid: Grid, wells: WellSet,
                 scenarios: Sequence[PermField],
                 cfg: EpisodeConfig = EpisodeConfig(),
                 rng: np.random.Generator | None = None,
                 full_state: bool = False):
        if len(scenarios) == 0:
            raise ValueError("scenario source must be non-empty")
        self.grid = grid
        self.wells = wells
        self.scenarios = list(scenarios)
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng()
        self.full_state = full_state
        self._sim_cache: dict[int, FlowSimulator] = {}
        self._drop_injector = wells.n_i == 1
        self._s: np.ndarray | None = None
        self._sim: FlowSimulator | None = None
        self._step_idx = 0
        self._done = True
        self.episodes_run = 0

    @property
    def obs_dim(self) -> int:
        if self.full_state:
            return self.grid.n_cells
        return 2 * self.wells.n_p + self.wells.n_i

    @property
    def action_dim(self) -> int:
        return self.wells.n_p if self._drop_injector else self.wells.n_p + self.wells.n_i

    def base_action(self) -> np.ndarray:
        return np.ones(self.action_dim)

    def _full_weights(self, action: np.ndarray) -> np.ndarray:
        w = clip_weights(action)
        if w.size != self.action_dim:
            raise ValueError(f"action must have length {self.action_dim}")
        if self._drop_injector:
            w = np.concatenate([w, [1.0]])
        return w

    def _observe(self, p: np.ndarray) -> np.ndarray:
        if self.full_state:
            return self._s.copy()
        prod = np.array(self.wells.producers, dtype=int)
        inj = np.array(self.wells.injectors, dtype=int)
        wells_all = np.concatenate([prod, inj])
        p_norm = normalize_pressure(p[wells_all])
        return np.concatenate([self._s[prod], p_norm[:prod.size], p_norm[prod.size:]])

    def _simulator_for(self, scenario_idx: int) -> FlowSimulator:
        sim = self._sim_cache.get(scenario_idx)
        if sim is None:
            sim = FlowSimulator(self.grid, self.wells,
                                self.scenarios[scenario_idx].k,
                                mu=self.cfg.mu, n_sub=self.cfg.n_sub)
            self._sim_cache[scenario_idx] = sim
        return sim

    def reset(self, scenario_idx: int | None = None) -> np.ndarray:
        """Start a new episode; draws a scenario uniformly unless given one."""
        if scenario_idx is None:
            scenario_idx = int(self.rng.integers(len(self.scenarios)))
        self._sim = self._simulator_for(scenario_idx)
        self._s = np.zeros(self.grid.n_cells)
        self._step_idx = 0
        self._done = False
        self.scenario_idx = scenario_idx
        p = self._sim.solve_pressure(
            weights_to_rates(np.ones(self.wells.n_p + self.wells.n_i), self.wells))
        return self._observe(p)

    def step(self, action: np.ndarray) -> tuple[np.ndarray, float, bool]:
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        if self.cfg.base_first_action and self._step_idx == 0:
            action = self.base_action()
        w = self._full_weights(action)
        rates = weights_to_rates(w, self.wells)
        self._s, oil, p = self._sim.control_step(self._s, rates,
                                                 self.cfg.dt_control)
        reward = oil / self.grid.pore_volume
        self._step_idx += 1
        self._done = self._step_idx >= self.cfg.m_steps
        if self._done:
            self.episodes_run += 1
        return self._observe(p), reward, self._done


def base_policy(env: WellControlEnv) -> Callable[[np.ndarray], np.ndarray]:
    """All valves equally open at every control step."""
    a = env.base_action()
    return lambda obs: a


def episode_return(env: WellControlEnv,
                   policy: Callable[[np.ndarray], np.ndarray],
                   scenario_idx: int) -> float:
    """Undiscounted return of one full episode on a fixed scenario."""
    obs = env.reset(scenario_idx)
    total = 0.0
    done = False
    while not done:
        obs, r, done = env.step(policy(obs))
        total += r
    return total


def mean_return_over(env: WellControlEnv,
                     policy: Callable[[np.ndarray], np.ndarray],
                     scenario_indices: Sequence[int] | None = None,
                     workers: int = 1) -> float:
    """Arithmetic mean of episode returns over a scenario vector.

    With workers > 1 each scenario runs on its own environment clone; results
    are reduced in scenario order, so the value is identical to a serial loop.
    """
    if scenario_indices is None:
        scenario_indices = range(len(env.scenarios))
    idxs = list(scenario_indices)
    if not idxs:
        raise ValueError("scenario vector must be non-empty")
    if workers <= 1:
        return float(np.mean([episode_return(env, policy, i) for i in idxs]))

    from concurrent.futures import ThreadPoolExecutor

    def one(i):
        clone = WellControlEnv(env.grid, env.wells, env.scenarios, env.cfg,
                               full_state=env.full_state)
        return episode_return(clone, policy, i)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        returns = list(pool.map(one, idxs))
    env.episodes_run += len(idxs)
    return float(np.mean(returns))


def episode_trace(env: WellControlEnv,
                  policy: Callable[[np.ndarray], np.ndarray],
                  scenario_idx: int) -> list[dict]:
    """Per-step (observation, executed weights, rates, reward) records."""
    obs = env.reset(scenario_idx)
    rows = []
    done = False
    step = 0
    while not done:
        action = policy(obs)
        if env.cfg.base_first_action and step == 0:
            action = env.base_action()
        w = env._full_weights(action)
        next_obs, r, done = env.step(action)
        rows.append({"step": step, "obs": obs.copy(), "weights": w,
                     "rates": weights_to_rates(w, env.wells), "reward": r})
        obs = next_obs
        step += 1
    return rows
