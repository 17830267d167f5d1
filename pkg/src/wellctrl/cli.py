"""Command-line pipeline: sample -> cluster -> train -> benchmark ->
evaluate -> report.

Every stage is idempotent: rerunning with an identical config and completed
outputs performs no compute and leaves the outputs byte-identical. Exit
codes: 0 success, 2 config error, 3 numerical failure.
"""

from __future__ import annotations

import csv
import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import config as cfgmod
from .cluster import ScenarioSet, build_scenario_set
from .config import ConfigError, config_hash, load_config
from .de import DeConfig, de_benchmark, save_de_results
from .env import WellControlEnv, base_policy, episode_return
from .nn import ActorCritic
from .permfields import (ChannelParams, ConditionalGaussianSampler, PermField,
                         GaussianFieldParams, sample_channel)
from .report import (accounting_rows, recovery_factor_table,
                     write_accounting_csv, write_control_table,
                     write_recovery_csv)
from .rl import TrainConfig, deterministic_policy, train

EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_ERROR = 3


def _fail(code: int, msg: str):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _load(config_path: str | None, desk: int | None, overrides: dict) -> dict:
    try:
        if config_path:
            cfg = load_config(config_path)
        elif desk:
            cfg = cfgmod.desk_preset(desk)
        else:
            raise ConfigError("provide --config FILE or --desk CASE")
        for key, value in overrides.items():
            if value is not None:
                cfg[key] = value
        return cfg
    except (ConfigError, OSError) as e:
        _fail(EXIT_CONFIG_ERROR, str(e))


def _stage_done(out_dir: Path, stage: str, relevant_cfg: dict) -> bool:
    marker = out_dir / f"{stage}.done.json"
    if not marker.exists():
        return False
    with open(marker) as f:
        return json.load(f).get("config_hash") == config_hash(relevant_cfg)


def _mark_done(out_dir: Path, stage: str, relevant_cfg: dict,
               extra: dict | None = None) -> None:
    marker = out_dir / f"{stage}.done.json"
    payload = {"config_hash": config_hash(relevant_cfg),
               "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S")}
    payload.update(extra or {})
    with open(marker, "w") as f:
        json.dump(payload, f, indent=2)


def _update_manifest(out_dir: Path, stage: str, info: dict) -> None:
    path = out_dir / "manifest.json"
    manifest = {}
    if path.exists():
        with open(path) as f:
            manifest = json.load(f)
    manifest.setdefault("stages", {})[stage] = info
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2)


def _sample_fields(cfg: dict, n: int, seed: int) -> list[PermField]:
    grid, wells, _ = cfgmod.build_problem(cfg)
    params = cfgmod.distribution_params(cfg)
    rng = np.random.default_rng(seed)
    if isinstance(params, ChannelParams):
        return [sample_channel(rng, grid, params) for _ in range(n)]
    sampler = ConditionalGaussianSampler(grid, wells, params)
    return [sampler.sample(rng) for _ in range(n)]


def make_env_factory(cfg: dict, scenario_set: ScenarioSet,
                     full_state: bool = False):
    grid, wells, episode = cfgmod.build_problem(cfg)

    def make_env(scenario_ids):
        fields = [scenario_set.samples[i] for i in scenario_ids]
        return WellControlEnv(grid, wells, fields, episode,
                              full_state=full_state)

    return make_env


def _train_config(cfg: dict, algo: str, seed: int, obs_dim: int,
                  action_dim: int, full_state: bool) -> TrainConfig:
    section = cfg.get(algo)
    if section is None:
        raise ConfigError(f"config has no '{algo}' section")
    layer_sizes = section.get("layer_sizes")
    lr = section["learning_rate"]
    if full_state:
        fs = cfg.get("full_state", {})
        layer_sizes = [obs_dim] + list(fs.get("hidden", [64, 32])) + [action_dim]
        lr = fs.get("learning_rate", lr)
    elif layer_sizes is None:
        layer_sizes = [obs_dim, 20, 20, action_dim]
    return TrainConfig(
        algo=algo,
        n_actors=section.get("n_actors", 8),
        n_steps=section.get("n_steps", 50),
        minibatch=section.get("minibatch", 16),
        epochs=section.get("epochs", 20),
        gamma=section.get("gamma", 0.99),
        gae_lambda=section.get("gae_lambda", 0.95),
        clip_eps=section.get("clip_eps", 0.1),
        vf_coef=section.get("vf_coef", 0.5),
        ent_coef=section.get("ent_coef", 0.01 if algo == "ppo" else 0.0),
        learning_rate=lr,
        total_episodes=section.get("total_episodes", 4000),
        eval_cadence=section.get("eval_cadence", 1),
        seed=seed,
        layer_sizes=list(layer_sizes),
        workers=cfg.get("workers", 1),
    )


@click.group()
def main():
    """Robust well-control pipeline."""


_common = [
    click.option("--config", "config_path", type=click.Path(), default=None,
                 help="YAML run configuration"),
    click.option("--desk", type=int, default=None,
                 help="use a desk-scale preset for the given case (1 or 2)"),
    click.option("--seed", type=int, default=None, help="override config seed"),
    click.option("--workers", type=int, default=None,
                 help="override worker-count setting"),
]


def common_options(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


def _prepare(config_path, desk, seed, workers) -> tuple[dict, Path]:
    cfg = _load(config_path, desk, {"seed": seed, "workers": workers})
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


@main.command()
@common_options
def sample(config_path, desk, seed, workers):
    """Sample N permeability fields into the scenario archive."""
    cfg, out = _prepare(config_path, desk, seed, workers)
    relevant = {k: cfg[k] for k in ("grid", "wells", "distribution", "scenario")}
    archive = out / "archive"
    if _stage_done(out, "sample", relevant):
        click.echo("sample: up to date, skipping")
        return
    t0 = time.perf_counter()
    n = cfg["scenario"]["n_samples"]
    sample_seed = cfg["scenario"]["seed"]
    try:
        fields = _sample_fields(cfg, n, sample_seed)
    except np.linalg.LinAlgError as e:
        _fail(EXIT_NUMERICAL_ERROR, str(e))
    fdir = archive / "fields"
    fdir.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(fields):
        f.save_csv(fdir / f"sample_{i:04d}.csv")
    with open(archive / "sample_manifest.json", "w") as f:
        json.dump({"n_samples": n, "seed": sample_seed,
                   "distribution": cfg["distribution"]}, f, indent=2)
    _mark_done(out, "sample", relevant)
    _update_manifest(out, "sample", {"n_samples": n,
                                     "seconds": time.perf_counter() - t0})
    click.echo(f"sample: wrote {n} fields to {archive}")


def _load_archive(out: Path, n: int) -> list[PermField]:
    fdir = out / "archive" / "fields"
    if not fdir.exists():
        _fail(EXIT_CONFIG_ERROR, f"scenario archive missing at {fdir}; "
                                 "run 'sample' first")
    return [PermField.load_csv(fdir / f"sample_{i:04d}.csv") for i in range(n)]


@main.command()
@common_options
def cluster(config_path, desk, seed, workers):
    """Build the training/evaluation scenario vectors by clustering."""
    cfg, out = _prepare(config_path, desk, seed, workers)
    relevant = {k: cfg[k] for k in ("grid", "wells", "episode", "distribution",
                                    "scenario")}
    if _stage_done(out, "cluster", relevant):
        click.echo("cluster: up to date, skipping")
        return
    t0 = time.perf_counter()
    grid, wells, episode = cfgmod.build_problem(cfg)
    sc = cfg["scenario"]
    fields = _load_archive(out, sc["n_samples"])
    probes = None
    if sc.get("probes") == "wells":
        probes = np.array(list(wells.producers) + list(wells.injectors))
    rng = np.random.default_rng(sc["seed"] + 1)
    try:
        scenario_set = build_scenario_set(
            fields, grid, wells, episode.t_total,
            n_clusters=sc["n_clusters"], rng=rng, m_steps=episode.m_steps,
            n_sub=episode.n_sub, mu=episode.mu, probes=probes,
            workers=cfg.get("workers", 1))
    except (np.linalg.LinAlgError, RuntimeError) as e:
        _fail(EXIT_NUMERICAL_ERROR, str(e))
    scenario_set.save(out / "scenario")
    _mark_done(out, "cluster", relevant)
    _update_manifest(out, "cluster", {
        "simulation_runs": sc["n_samples"],
        "seconds": time.perf_counter() - t0})
    click.echo(f"cluster: training ids {scenario_set.training_ids}, "
               f"evaluation ids {scenario_set.evaluation_ids}")


def _load_scenario(out: Path) -> ScenarioSet:
    sdir = out / "scenario"
    if not (sdir / "manifest.json").exists():
        _fail(EXIT_CONFIG_ERROR, f"scenario set missing at {sdir}; "
                                 "run 'cluster' first")
    return ScenarioSet.load(sdir)


@main.command(name="train")
@common_options
@click.option("--algo", type=click.Choice(["ppo", "a2c"]), default="ppo")
@click.option("--frozen", type=int, default=None,
              help="train on a single training-vector permeability (index)")
@click.option("--full-state", is_flag=True, default=False,
              help="observe the whole saturation field")
def train_cmd(config_path, desk, seed, workers, algo, frozen, full_state):
    """Train a policy; one run per configured seed."""
    cfg, out = _prepare(config_path, desk, seed, workers)
    section = cfg.get(algo)
    if section is None:
        _fail(EXIT_CONFIG_ERROR, f"config has no '{algo}' section")
    tag = algo + ("_frozen" if frozen is not None else "") + \
        ("_fullstate" if full_state else "")
    relevant = {"algo": section, "episode": cfg["episode"], "tag": tag,
                "seed_override": seed}
    if _stage_done(out, f"train_{tag}", relevant):
        click.echo(f"train[{tag}]: up to date, skipping")
        return
    t0 = time.perf_counter()
    scenario_set = _load_scenario(out)
    make_env = make_env_factory(cfg, scenario_set, full_state=full_state)
    training_ids = list(scenario_set.training_ids)
    if frozen is not None:
        if not 0 <= frozen < len(training_ids):
            _fail(EXIT_CONFIG_ERROR, f"--frozen index {frozen} out of range")
        training_ids = [training_ids[frozen]]
    evaluation_ids = list(scenario_set.evaluation_ids)
    proto = make_env(training_ids)
    seeds = [seed] if seed is not None else section.get("seeds", [0, 1, 2])
    tdir = out / f"train_{tag}"
    tdir.mkdir(exist_ok=True)
    all_rows = []
    for s in seeds:
        tc = _train_config(cfg, algo, s, proto.obs_dim, proto.action_dim,
                           full_state)
        ckpt_dir = tdir / f"seed_{s}"
        ckpt_dir.mkdir(exist_ok=True)
        try:
            rows = train(tc, make_env, training_ids, evaluation_ids,
                         log_path=tdir / f"log_seed_{s}.csv",
                         checkpoint_dir=ckpt_dir)
        except (FloatingPointError, np.linalg.LinAlgError, RuntimeError) as e:
            _fail(EXIT_NUMERICAL_ERROR, str(e))
        all_rows.append(rows)
        click.echo(f"train[{tag}] seed {s}: final R_train "
                   f"{rows[-1].r_train:.4f}, R_eval {rows[-1].r_eval:.4f}")
    n_iter = min(len(r) for r in all_rows)
    with open(tdir / "mean_across_seeds.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "episodes", "r_train_mean", "r_eval_mean"])
        for i in range(n_iter):
            writer.writerow([
                all_rows[0][i].iteration, all_rows[0][i].episodes,
                f"{np.mean([r[i].r_train for r in all_rows]):.17g}",
                f"{np.mean([r[i].r_eval for r in all_rows]):.17g}"])
    episodes = sum(r[-1].episodes for r in all_rows)
    _mark_done(out, f"train_{tag}", relevant)
    _update_manifest(out, f"train_{tag}", {
        "simulation_runs": episodes, "seeds": seeds,
        "seconds": time.perf_counter() - t0})


@main.command()
@common_options
def benchmark(config_path, desk, seed, workers):
    """Run the DE baseline on every evaluation permeability."""
    cfg, out = _prepare(config_path, desk, seed, workers)
    if "de" not in cfg:
        _fail(EXIT_CONFIG_ERROR, "config has no 'de' section")
    relevant = {"de": cfg["de"], "episode": cfg["episode"]}
    if _stage_done(out, "benchmark", relevant):
        click.echo("benchmark: up to date, skipping")
        return
    t0 = time.perf_counter()
    scenario_set = _load_scenario(out)
    make_env = make_env_factory(cfg, scenario_set)
    d = cfg["de"]
    de_cfg = DeConfig(population=d["population"], iterations=d["iterations"],
                      recombination=d.get("recombination", 0.9),
                      f_min=d.get("f_min", 0.5), f_max=d.get("f_max", 1.0),
                      seed=d.get("seed", 0), workers=cfg.get("workers", 1),
                      paper_literal_mutation=d.get("paper_literal_mutation",
                                                   False))
    eval_ids = list(scenario_set.evaluation_ids)
    try:
        results, mean_best = de_benchmark(
            lambda: make_env(list(range(len(scenario_set.samples)))),
            eval_ids, de_cfg)
    except (FloatingPointError, np.linalg.LinAlgError, RuntimeError) as e:
        _fail(EXIT_NUMERICAL_ERROR, str(e))
    save_de_results(out / "de", results, mean_best)
    _mark_done(out, "benchmark", relevant)
    _update_manifest(out, "benchmark", {
        "simulation_runs": de_cfg.population * (de_cfg.iterations + 1)
        * len(eval_ids),
        "seconds": time.perf_counter() - t0})
    click.echo(f"benchmark: mean DE best return {mean_best:.4f}")


@main.command()
@common_options
@click.option("--algo", type=click.Choice(["ppo", "a2c"]), default="ppo")
def evaluate(config_path, desk, seed, workers, algo):
    """Evaluate trained checkpoints on the evaluation vector."""
    cfg, out = _prepare(config_path, desk, seed, workers)
    scenario_set = _load_scenario(out)
    make_env = make_env_factory(cfg, scenario_set)
    env = make_env(list(range(len(scenario_set.samples))))
    tdir = out / f"train_{algo}"
    ckpts = sorted(tdir.glob("seed_*/checkpoint_final.bin"))
    if not ckpts:
        _fail(EXIT_CONFIG_ERROR, f"no checkpoints under {tdir}; run 'train'")
    rows = []
    for ckpt in ckpts:
        net, header = ActorCritic.load(ckpt)
        policy = deterministic_policy(net)
        for sid in scenario_set.evaluation_ids:
            rows.append({"checkpoint": str(ckpt.parent.name),
                         "scenario_id": sid,
                         "return": episode_return(env, policy, sid)})
    path = out / f"evaluate_{algo}.csv"
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["checkpoint", "scenario_id",
                                               "return"])
        writer.writeheader()
        for r in rows:
            writer.writerow({**r, "return": f"{r['return']:.17g}"})
    click.echo(f"evaluate: wrote {path}")


@main.command()
@common_options
def report(config_path, desk, seed, workers):
    """Assemble the report bundle from whatever stages have completed."""
    cfg, out = _prepare(config_path, desk, seed, workers)
    rdir = out / "report"
    rdir.mkdir(exist_ok=True)
    gaps = []

    # (d) simulation-run accounting, desk and paper scale
    paper = cfgmod.CASE1_PAPER if cfg["case"] == 1 else cfgmod.CASE2_PAPER
    write_accounting_csv(rdir / "accounting_paper_scale.csv", accounting_rows(
        paper["episodes"], paper["seeds"], paper["de_generations"],
        paper["de_population"], paper["n_clusters"]))
    rl_eps = cfg.get("ppo", {}).get("total_episodes", 0)
    n_seeds = len(cfg.get("ppo", {}).get("seeds", []))
    write_accounting_csv(rdir / "accounting_desk_scale.csv", accounting_rows(
        rl_eps, n_seeds, cfg.get("de", {}).get("iterations", 0),
        cfg.get("de", {}).get("population", 0),
        cfg["scenario"]["n_clusters"],
        a2c_episodes=cfg.get("a2c", {}).get("total_episodes", rl_eps)))

    try:
        scenario_set = _load_scenario(out)
    except SystemExit:
        gaps.append("scenario set missing; only accounting tables written")
        _write_gaps(rdir, gaps)
        return

    make_env = make_env_factory(cfg, scenario_set)
    env = make_env(list(range(len(scenario_set.samples))))
    eval_ids = list(scenario_set.evaluation_ids)

    de_returns = None
    de_mean = None
    de_summary = out / "de" / "de_summary.json"
    if de_summary.exists():
        with open(de_summary) as f:
            summary = json.load(f)
        de_returns = {r["scenario_id"]: r["best_fitness"]
                      for r in summary["runs"]}
        de_mean = summary["mean_best_fitness"]
    else:
        gaps.append("DE benchmark missing; no DE column or reference line")

    policies = {"base": base_policy(env)}
    for algo in ("ppo", "a2c"):
        ckpt = sorted((out / f"train_{algo}").glob(
            "seed_*/checkpoint_final.bin"))
        if ckpt:
            net, _ = ActorCritic.load(ckpt[0])
            policies[algo] = deterministic_policy(net)
        else:
            gaps.append(f"no {algo} checkpoints; column omitted")

    # (b) per-evaluation-perm recovery factors
    rows = recovery_factor_table(env, eval_ids, policies, de_returns)
    write_recovery_csv(rdir / "recovery_factors.csv", rows)

    # (c) per-perm per-step well controls
    for name, policy in policies.items():
        write_control_table(rdir / f"controls_{name}.csv", env, policy,
                            eval_ids)

    # (a) learning curves with the DE reference
    for tag in ("ppo", "a2c", "ppo_frozen", "a2c_frozen", "ppo_fullstate"):
        mean_csv = out / f"train_{tag}" / "mean_across_seeds.csv"
        if not mean_csv.exists():
            if tag in ("ppo", "a2c"):
                gaps.append(f"no training log for {tag}")
            continue
        with open(mean_csv) as f:
            lines = list(csv.reader(f))
        with open(rdir / f"learning_curve_{tag}.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(lines[0] + ["de_reference"])
            for row in lines[1:]:
                writer.writerow(row + ["" if de_mean is None
                                       else f"{de_mean:.17g}"])
    _write_gaps(rdir, gaps)
    click.echo(f"report: bundle written to {rdir}"
               + (f" ({len(gaps)} gap(s) noted)" if gaps else ""))


def _write_gaps(rdir: Path, gaps: list[str]) -> None:
    with open(rdir / "gaps.txt", "w") as f:
        if gaps:
            f.write("\n".join(gaps) + "\n")
        else:
            f.write("none\n")


@main.command(name="preset")
@click.argument("case", type=int)
@click.argument("path", type=click.Path())
def preset_cmd(case, path):
    """Write a desk-scale preset config for CASE (1 or 2) to PATH."""
    try:
        cfgmod.write_preset(path, case)
    except ConfigError as e:
        _fail(EXIT_CONFIG_ERROR, str(e))
    click.echo(f"wrote case-{case} desk preset to {path}")


if __name__ == "__main__":
    main()
