"""Tests for configuration handling and the CLI pipeline."""

import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from wellctrl.cli import main, make_env_factory
from wellctrl.cluster import ScenarioSet
from wellctrl.config import (CASE2_PAPER, ConfigError, config_hash,
                             build_problem, desk_preset, load_config,
                             validate_config, write_preset)
from wellctrl.env import base_policy, episode_return
from wellctrl.nn import ActorCritic
from wellctrl.rl import deterministic_policy


def tiny_config(out_dir: Path) -> dict:
    rl_common = {"gamma": 0.99, "gae_lambda": 0.95, "vf_coef": 0.5,
                 "total_episodes": 8, "seeds": [0], "eval_cadence": 1,
                 "n_actors": 2, "n_steps": 10, "minibatch": 4, "epochs": 2}
    return {
        "schema_version": 1,
        "case": 2,
        "output_dir": str(out_dir),
        "seed": 0,
        "workers": 1,
        "grid": {"nx": 9, "ny": 9, "lx": 900.0, "ly": 900.0, "phi": 0.2},
        "wells": {"pattern": "case2", "total_rate": 8064.0},
        "episode": {"m_steps": 5, "t_total": 25.0, "gamma": 0.99,
                    "base_first_action": True, "n_sub": 10, "mu": 0.3},
        "distribution": {"kind": "gaussian", "mu_g": 2.41, "sigma": 2.5,
                         "corr_len": 240.0},
        "scenario": {"n_samples": 8, "n_clusters": 2, "seed": 7,
                     "probes": "all"},
        "ppo": {**rl_common, "clip_eps": 0.1, "ent_coef": 0.01,
                "learning_rate": 1e-4},
        "a2c": {**rl_common, "ent_coef": 0.0, "learning_rate": 5e-3},
        "de": {"population": 4, "iterations": 2, "seed": 3},
        "full_state": {"hidden": [8], "learning_rate": 1e-5},
    }


class TestValidate:
    def test_lists_every_missing_key(self):
        cfg = tiny_config(Path("x"))
        del cfg["grid"]["nx"]
        del cfg["scenario"]
        del cfg["case"]
        with pytest.raises(ConfigError) as err:
            validate_config(cfg)
        msg = str(err.value)
        assert "grid.nx" in msg and "scenario" in msg and "case" in msg

    def test_rejects_wrong_schema_version(self):
        cfg = tiny_config(Path("x"))
        cfg["schema_version"] = 99
        with pytest.raises(ConfigError, match="schema_version"):
            validate_config(cfg)

    def test_rejects_unknown_distribution(self):
        cfg = tiny_config(Path("x"))
        cfg["distribution"] = {"kind": "lognormal"}
        with pytest.raises(ConfigError, match="distribution.kind"):
            validate_config(cfg)

    def test_lists_missing_distribution_keys(self):
        cfg = tiny_config(Path("x"))
        del cfg["distribution"]["sigma"]
        with pytest.raises(ConfigError, match="distribution.sigma"):
            validate_config(cfg)

    def test_rejects_unknown_well_pattern(self):
        cfg = tiny_config(Path("x"))
        cfg["wells"]["pattern"] = "case9"
        with pytest.raises(ConfigError, match="pattern"):
            validate_config(cfg)

    def test_load_rejects_non_mapping(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("- just\n- a list\n")
        with pytest.raises(ConfigError, match="mapping"):
            load_config(path)


class TestPresets:
    def test_desk_preset_is_a_copy(self):
        a = desk_preset(2)
        a["grid"]["nx"] = 999
        assert desk_preset(2)["grid"]["nx"] == 31

    def test_unknown_case_rejected(self):
        with pytest.raises(ConfigError):
            desk_preset(3)

    def test_write_preset_round_trip(self, tmp_path):
        path = tmp_path / "case2.yaml"
        write_preset(path, 2)
        cfg = load_config(path)
        assert cfg == desk_preset(2)
        grid, wells, episode = build_problem(cfg)
        assert (grid.nx, grid.ny) == (31, 31)
        assert wells.n_p == 4 and wells.n_i == 1
        assert episode.m_steps == 5

    def test_config_hash_stable_and_sensitive(self):
        cfg = tiny_config(Path("x"))
        h1 = config_hash(cfg)
        assert h1 == config_hash(tiny_config(Path("x")))
        cfg["seed"] = 1
        assert config_hash(cfg) != h1


def _invoke(runner, args):
    result = runner.invoke(main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


def _tree_digest(root: Path) -> dict:
    return {str(p.relative_to(root)):
            hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run the whole CLI pipeline once on a tiny case-2 problem."""
    root = tmp_path_factory.mktemp("cli")
    out = root / "out"
    cfg = tiny_config(out)
    cfg_path = root / "config.yaml"
    with open(cfg_path, "w") as f:
        yaml.safe_dump(cfg, f, sort_keys=False)
    runner = CliRunner()
    outputs = {}
    for args in (["sample"], ["cluster"], ["train", "--algo", "ppo"],
                 ["train", "--algo", "a2c"], ["benchmark"],
                 ["evaluate", "--algo", "ppo"], ["report"]):
        res = _invoke(runner, args + ["--config", str(cfg_path)])
        outputs[args[0] if len(args) == 1 else "_".join(args[:3:2])] = res.output
    return {"cfg": cfg, "cfg_path": cfg_path, "out": out, "runner": runner,
            "outputs": outputs}


class TestPipeline:
    def test_sample_outputs(self, pipeline):
        fdir = pipeline["out"] / "archive" / "fields"
        files = sorted(fdir.glob("sample_*.csv"))
        assert len(files) == 8
        assert (pipeline["out"] / "sample.done.json").exists()
        with open(pipeline["out"] / "archive" / "sample_manifest.json") as f:
            manifest = json.load(f)
        assert manifest["n_samples"] == 8 and manifest["seed"] == 7

    def test_cluster_outputs(self, pipeline):
        ss = ScenarioSet.load(pipeline["out"] / "scenario")
        assert len(ss.training_ids) == 2 and len(ss.evaluation_ids) == 2
        assert not set(ss.training_ids) & set(ss.evaluation_ids)
        assert len(ss.samples) == 8

    def test_train_outputs(self, pipeline):
        for algo in ("ppo", "a2c"):
            tdir = pipeline["out"] / f"train_{algo}"
            assert (tdir / "log_seed_0.csv").exists()
            assert (tdir / "seed_0" / "checkpoint_final.bin").exists()
            with open(tdir / "mean_across_seeds.csv") as f:
                rows = list(csv.reader(f))
            assert rows[0] == ["iteration", "episodes", "r_train_mean",
                               "r_eval_mean"]
            assert len(rows) > 1

    def test_benchmark_outputs_and_accounting(self, pipeline):
        with open(pipeline["out"] / "de" / "de_summary.json") as f:
            summary = json.load(f)
        assert len(summary["runs"]) == 2
        with open(pipeline["out"] / "manifest.json") as f:
            manifest = json.load(f)
        # population x (initial + iterations) generations x eval perms
        assert manifest["stages"]["benchmark"]["simulation_runs"] == 4 * 3 * 2

    def test_evaluate_matches_recomputation(self, pipeline):
        ss = ScenarioSet.load(pipeline["out"] / "scenario")
        make_env = make_env_factory(pipeline["cfg"], ss)
        env = make_env(list(range(len(ss.samples))))
        net, _ = ActorCritic.load(pipeline["out"] / "train_ppo" / "seed_0" /
                                  "checkpoint_final.bin")
        policy = deterministic_policy(net)
        with open(pipeline["out"] / "evaluate_ppo.csv") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == len(ss.evaluation_ids)
        for row in rows:
            expected = episode_return(env, policy, int(row["scenario_id"]))
            assert abs(float(row["return"]) - expected) < 1e-12

    def test_report_accounting_paper_scale(self, pipeline):
        path = pipeline["out"] / "report" / "accounting_paper_scale.csv"
        lines = path.read_text().splitlines()
        rows = list(csv.DictReader(lines))
        by_algo = {r["algorithm"]: int(r["simulation_runs"]) for r in rows
                   if r["algorithm"] in ("PPO", "A2C", "DE")}
        assert by_algo["PPO"] == 60000 * 3 == 180000
        assert by_algo["A2C"] == 180000
        assert by_algo["DE"] == (CASE2_PAPER["de_generations"]
                                 * CASE2_PAPER["de_population"]
                                 * CASE2_PAPER["n_clusters"]) == 240000
        assert any(line.startswith("# note:") for line in lines)

    def test_report_accounting_desk_scale(self, pipeline):
        path = pipeline["out"] / "report" / "accounting_desk_scale.csv"
        rows = list(csv.DictReader(path.read_text().splitlines()))
        by_algo = {r["algorithm"]: int(r["simulation_runs"]) for r in rows
                   if r["algorithm"] in ("PPO", "A2C", "DE")}
        assert by_algo["PPO"] == 8 * 1
        assert by_algo["DE"] == 2 * 4 * 2  # generations x population x perms

    def test_report_recovery_factors(self, pipeline):
        ss = ScenarioSet.load(pipeline["out"] / "scenario")
        make_env = make_env_factory(pipeline["cfg"], ss)
        env = make_env(list(range(len(ss.samples))))
        with open(pipeline["out"] / "report" / "recovery_factors.csv") as f:
            rows = list(csv.DictReader(f))
        assert [int(r["scenario_id"]) for r in rows] == list(ss.evaluation_ids)
        with open(pipeline["out"] / "de" / "de_summary.json") as f:
            de = {r["scenario_id"]: r["best_fitness"]
                  for r in json.load(f)["runs"]}
        base = base_policy(env)
        for row in rows:
            sid = int(row["scenario_id"])
            assert abs(float(row["base"])
                       - episode_return(env, base, sid)) < 1e-12
            assert abs(float(row["de"]) - de[sid]) < 1e-12
            assert np.isfinite(float(row["ppo"]))
            assert np.isfinite(float(row["a2c"]))

    def test_report_learning_curves_and_controls(self, pipeline):
        rdir = pipeline["out"] / "report"
        with open(pipeline["out"] / "de" / "de_summary.json") as f:
            de_mean = json.load(f)["mean_best_fitness"]
        for algo in ("ppo", "a2c"):
            with open(rdir / f"learning_curve_{algo}.csv") as f:
                rows = list(csv.DictReader(f))
            assert rows and all(float(r["de_reference"]) == de_mean
                                for r in rows)
        for name in ("base", "ppo", "a2c"):
            with open(rdir / f"controls_{name}.csv") as f:
                rows = list(csv.DictReader(f))
            # 2 perms x 5 steps x 5 wells
            assert len(rows) == 2 * 5 * 5
            assert {r["kind"] for r in rows} == {"producer", "injector"}
        assert (rdir / "gaps.txt").read_text().strip() == "none"

    def test_idempotent_rerun(self, pipeline):
        before = _tree_digest(pipeline["out"])
        runner = pipeline["runner"]
        for stage in ("sample", "cluster", "benchmark"):
            res = _invoke(runner, [stage, "--config",
                                   str(pipeline["cfg_path"])])
            assert "up to date, skipping" in res.output
        res = _invoke(runner, ["train", "--algo", "ppo", "--config",
                               str(pipeline["cfg_path"])])
        assert "up to date, skipping" in res.output
        assert _tree_digest(pipeline["out"]) == before

    def test_full_state_train_observes_whole_field(self, pipeline):
        runner = pipeline["runner"]
        _invoke(runner, ["train", "--algo", "ppo", "--full-state",
                         "--config", str(pipeline["cfg_path"])])
        ckpt = (pipeline["out"] / "train_ppo_fullstate" / "seed_0" /
                "checkpoint_final.bin")
        _, header = ActorCritic.load(ckpt)
        assert header["layer_sizes"] == [81, 8, 4]


class TestCliErrors:
    def test_no_config_given(self):
        result = CliRunner().invoke(main, ["sample"])
        assert result.exit_code == 2

    def test_missing_config_file(self):
        result = CliRunner().invoke(main, ["sample", "--config",
                                           "/nonexistent/cfg.yaml"])
        assert result.exit_code == 2

    def test_invalid_config_exits_2(self, tmp_path):
        cfg = tiny_config(tmp_path / "out")
        del cfg["grid"]["phi"]
        path = tmp_path / "cfg.yaml"
        with open(path, "w") as f:
            yaml.safe_dump(cfg, f)
        result = CliRunner().invoke(main, ["sample", "--config", str(path)])
        assert result.exit_code == 2
        assert "grid.phi" in result.output

    def test_cluster_before_sample_exits_2(self, tmp_path):
        cfg = tiny_config(tmp_path / "out")
        path = tmp_path / "cfg.yaml"
        with open(path, "w") as f:
            yaml.safe_dump(cfg, f)
        result = CliRunner().invoke(main, ["cluster", "--config", str(path)])
        assert result.exit_code == 2
        assert "run 'sample' first" in result.output

    def test_preset_bad_case_exits_2(self, tmp_path):
        result = CliRunner().invoke(
            main, ["preset", "5", str(tmp_path / "p.yaml")])
        assert result.exit_code == 2


class TestPresetCommand:
    def test_writes_loadable_preset(self, tmp_path):
        path = tmp_path / "case1.yaml"
        result = CliRunner().invoke(main, ["preset", "1", str(path)])
        assert result.exit_code == 0
        assert load_config(path)["case"] == 1
