"""Run configuration: YAML schema, validation, and desk-scale presets.

One config file drives the whole pipeline; every stage's randomness flows
from the named seeds in it. Flags on the CLI override individual keys.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml

from .env import EpisodeConfig
from .grid import Grid, WellSet, build_grid, case1_wells, case2_wells
from .permfields import ChannelParams, GaussianFieldParams

SCHEMA_VERSION = 1

REQUIRED_SECTIONS = {
    "schema_version": None,
    "case": None,
    "output_dir": None,
    "grid": ["nx", "ny", "lx", "ly", "phi"],
    "wells": ["pattern", "total_rate"],
    "episode": ["m_steps", "t_total"],
    "distribution": ["kind"],
    "scenario": ["n_samples", "n_clusters", "seed"],
}

DIST_KEYS = {
    "channel": ["w_min", "w_max", "g_high", "g_low"],
    "gaussian": ["mu_g", "sigma", "corr_len"],
}


class ConfigError(ValueError):
    """Raised for any schema problem; the message names the offending keys."""


def validate_config(cfg: dict) -> dict:
    missing = []
    for key, subkeys in REQUIRED_SECTIONS.items():
        if key not in cfg:
            missing.append(key)
            continue
        if subkeys:
            for sub in subkeys:
                if sub not in cfg[key]:
                    missing.append(f"{key}.{sub}")
    if missing:
        raise ConfigError("config missing required keys: " + ", ".join(missing))
    if cfg["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {cfg['schema_version']} "
                          f"(expected {SCHEMA_VERSION})")
    kind = cfg["distribution"]["kind"]
    if kind not in DIST_KEYS:
        raise ConfigError(f"distribution.kind must be one of {sorted(DIST_KEYS)}, "
                          f"got {kind!r}")
    missing = [f"distribution.{k}" for k in DIST_KEYS[kind]
               if k not in cfg["distribution"]]
    if missing:
        raise ConfigError("config missing required keys: " + ", ".join(missing))
    if cfg["wells"]["pattern"] not in ("case1", "case2"):
        raise ConfigError("wells.pattern must be 'case1' or 'case2'")
    return cfg


def load_config(path: str | Path) -> dict:
    with open(path) as f:
        cfg = yaml.safe_load(f)
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} does not contain a mapping")
    return validate_config(cfg)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode("utf-8")).hexdigest()


def build_problem(cfg: dict) -> tuple[Grid, WellSet, EpisodeConfig]:
    g = cfg["grid"]
    grid = build_grid(g["nx"], g["ny"], g["lx"], g["ly"], g["phi"])
    w = cfg["wells"]
    if w["pattern"] == "case1":
        wells = case1_wells(grid, total_rate=w["total_rate"])
    else:
        wells = case2_wells(grid, total_rate=w["total_rate"])
    e = cfg["episode"]
    episode = EpisodeConfig(
        m_steps=e["m_steps"], t_total=e["t_total"],
        gamma=e.get("gamma", 0.99),
        base_first_action=e.get("base_first_action", True),
        n_sub=e.get("n_sub", 10), mu=e.get("mu", 0.3))
    return grid, wells, episode


def distribution_params(cfg: dict):
    d = cfg["distribution"]
    if d["kind"] == "channel":
        return ChannelParams(w_min=d["w_min"], w_max=d["w_max"],
                             g_high=d["g_high"], g_low=d["g_low"])
    return GaussianFieldParams(mu_g=d["mu_g"], sigma=d["sigma"],
                               corr_len=d["corr_len"])


_BASE_RL = {
    "gamma": 0.99, "gae_lambda": 0.95, "vf_coef": 0.5,
    "total_episodes": 4000, "seeds": [0, 1, 2], "eval_cadence": 1,
}

CASE1_DESK = {
    "schema_version": SCHEMA_VERSION,
    "case": 1,
    "output_dir": "runs/case1-desk",
    "seed": 0,
    "workers": 1,
    "grid": {"nx": 31, "ny": 31, "lx": 1200.0, "ly": 1200.0, "phi": 0.2},
    "wells": {"pattern": "case1", "total_rate": 2304.0},
    "episode": {"m_steps": 5, "t_total": 125.0, "gamma": 0.99,
                "base_first_action": True, "n_sub": 10, "mu": 0.3},
    "distribution": {"kind": "channel", "w_min": 120.0, "w_max": 360.0,
                     "g_high": 5.5, "g_low": -2.0},
    "scenario": {"n_samples": 64, "n_clusters": 8, "seed": 7, "probes": "all"},
    "ppo": {**_BASE_RL, "n_actors": 8, "n_steps": 50, "minibatch": 16,
            "epochs": 20, "clip_eps": 0.1, "ent_coef": 0.01,
            "learning_rate": 1e-4},
    "a2c": {**_BASE_RL, "n_actors": 8, "n_steps": 5, "minibatch": 8,
            "gamma": 1.0, "gae_lambda": 1.0, "ent_coef": 0.0,
            "learning_rate": 2e-3, "total_episodes": 6400,
            "eval_cadence": 10},
    "de": {"population": 16, "iterations": 60, "recombination": 0.9,
           "f_min": 0.5, "f_max": 1.0, "seed": 3},
    "full_state": {"hidden": [64, 32], "learning_rate": 1e-5},
}

CASE2_DESK = {
    "schema_version": SCHEMA_VERSION,
    "case": 2,
    "output_dir": "runs/case2-desk",
    "seed": 0,
    "workers": 1,
    "grid": {"nx": 31, "ny": 31, "lx": 1200.0, "ly": 1200.0, "phi": 0.2},
    "wells": {"pattern": "case2", "total_rate": 8064.0},
    "episode": {"m_steps": 5, "t_total": 25.0, "gamma": 0.99,
                "base_first_action": True, "n_sub": 10, "mu": 0.3},
    "distribution": {"kind": "gaussian", "mu_g": 2.41, "sigma": 2.5,
                     "corr_len": 240.0},
    "scenario": {"n_samples": 64, "n_clusters": 8, "seed": 7, "probes": "all"},
    "ppo": {**_BASE_RL, "n_actors": 8, "n_steps": 50, "minibatch": 16,
            "epochs": 20, "clip_eps": 0.1, "ent_coef": 0.01,
            "learning_rate": 5e-4},
    "a2c": {**_BASE_RL, "n_actors": 8, "n_steps": 5, "minibatch": 8,
            "gamma": 1.0, "gae_lambda": 1.0, "ent_coef": 0.0,
            "learning_rate": 2e-3, "total_episodes": 6400,
            "eval_cadence": 10},
    "de": {"population": 16, "iterations": 60, "recombination": 0.9,
           "f_min": 0.5, "f_max": 1.0, "seed": 3},
    "full_state": {"hidden": [64, 32], "learning_rate": 5e-6},
}

# paper-scale counterparts, used for the simulation-run accounting tables
CASE1_PAPER = {
    "episodes": 60000, "seeds": 3,
    "de_generations": 750, "de_population": 310, "n_clusters": 16,
}
CASE2_PAPER = {
    "episodes": 60000, "seeds": 3,
    "de_generations": 750, "de_population": 20, "n_clusters": 16,
}


def desk_preset(case: int) -> dict:
    if case == 1:
        return copy.deepcopy(CASE1_DESK)
    if case == 2:
        return copy.deepcopy(CASE2_DESK)
    raise ConfigError(f"no desk preset for case {case}")


def write_preset(path: str | Path, case: int) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(desk_preset(case), f, sort_keys=False)
