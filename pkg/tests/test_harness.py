from __future__ import annotations

import json

import numpy as np
import pytest

from fairppo.errors import ConfigError
from fairppo.harness import cli
from fairppo.harness import experiment as ex
from fairppo.harness.plots import export_plots, non_dominated, pareto_rows, rows_from_directory

TINY_AH = dict(grid_width=6, grid_height=6, n_agents=4, n_bushes=6, episode_length_ts=20)
TINY_HS = dict(patients_per_day=15, day_length_min=240.0, peak_start_min=60.0, peak_end_min=120.0)


def tiny(env="ah", algorithm="fairppo", tmp_path=None, **kw):
    base = dict(
        environment=env, algorithm=algorithm, seeds=(0,), train_episodes=2, eval_episodes=1,
        eval_episode_length=20 if env == "ah" else None, env=TINY_AH if env == "ah" else TINY_HS, hidden=(8,),
        output_dir=str(tmp_path) if tmp_path is not None else "runs",
    )
    base.update(kw)
    return ex.ExperimentConfig(**base)


# --- configuration ------------------------------------------------------------------


def test_presets_fill_missing_counts():
    c = ex.ExperimentConfig(environment="ah")
    assert (c.train_episodes, c.eval_episodes, c.eval_episode_length) == (150, 20, 300)
    env = c.env_config()
    assert (env.grid_width, env.n_agents, env.n_bushes) == (11, 8, 16)
    h = ex.ExperimentConfig(environment="hs", scale="paper")
    assert h.train_episodes == 2000 and h.env_config().patients_per_day == 300
    assert ex.ExperimentConfig(environment="hs").env_config().patients_per_day == 60


@pytest.mark.parametrize(
    "kwargs",
    [dict(environment="gym"), dict(algorithm="dqn"), dict(metric="EO"), dict(alpha=-1.0), dict(seeds=()),
     dict(scale="huge"), dict(env={"n_agents": 3})],
)
def test_config_validation(kwargs):
    with pytest.raises((ConfigError, ValueError)):
        ex.ExperimentConfig(**kwargs)


def test_config_hash_ignores_seeds_and_output(tmp_path):
    a = tiny()
    assert a.config_hash() == tiny(seeds=(3, 4), output_dir="elsewhere").config_hash()
    assert a.config_hash() != tiny(alpha=0.5).config_hash()
    assert len(a.config_hash()) == 12
    path = tmp_path / "c.json"
    path.write_text(json.dumps(a.to_dict()))
    assert ex.ExperimentConfig.from_file(path) == a
    with pytest.raises(ConfigError):
        ex.ExperimentConfig.from_dict({"bogus": 1})


def test_labels():
    assert tiny(alpha=1.0, beta=0.5).label() == "fairppo-DP-a1-b0.5"
    assert tiny(algorithm="ppo").label() == "ppo"
    assert tiny(algorithm="soto", soto_alpha=2.0).label() == "soto-af2"


def test_episode_seed_is_deterministic_and_phase_dependent():
    assert ex.episode_seed(0, 1, 0) == ex.episode_seed(0, 1, 0)
    assert len({ex.episode_seed(0, e, p) for e in range(10) for p in (0, 1)}) == 20


def test_grid_configs():
    grid = ex.grid_configs(tiny(alphas=(0.5, 1.0), betas=(1.0,)))
    assert [(c.alpha, c.beta) for c in grid] == [(0.0, 0.0), (0.5, 1.0), (1.0, 1.0)]
    assert len(ex.grid_configs(tiny())) == 25
    assert [c.soto_alpha for c in ex.grid_configs(tiny(algorithm="soto"))] == [0.9, 1.0, 2.0, 5.0]
    assert len(ex.grid_configs(tiny(algorithm="ppo"))) == 1


# --- training and evaluation ----------------------------------------------------------


def test_ppo_and_zero_weight_fairppo_produce_identical_parameters():
    a = ex.train(tiny(algorithm="ppo"), 0, checkpoint=False).alg
    b = ex.train(tiny(algorithm="fairppo", alpha=0.0, beta=0.0), 0, checkpoint=False).alg
    for slot in a.policy:
        pa, pb = a.policy[slot].params, b.policy[slot].params
        assert all(np.array_equal(pa[k], pb[k]) for k in pa)


@pytest.mark.parametrize("env", ["ah", "hs"])
@pytest.mark.parametrize("algorithm", ["fairppo", "fen", "soto"])
def test_run_writes_reproducible_csvs(tmp_path, env, algorithm):
    paths = []
    for k in range(2):
        cfg = tiny(env, algorithm, tmp_path / str(k), alpha=0.5, beta=0.5)
        (tr, ev), = ex.run(cfg)
        assert tr.error is None and ev.report is not None
        d = cfg.run_dir(0)
        assert {p.name for p in d.iterdir()} >= {"config.json", "train.csv", "eval.csv", "report.txt", "timing.json",
                                                  "checkpoint.fppo"}
        paths.append(d)
    for name in ("train.csv", "eval.csv", "report.txt"):
        assert (paths[0] / name).read_bytes() == (paths[1] / name).read_bytes()
    rows = ex.read_csv(paths[0] / "train.csv")
    assert list(rows[0]) == list(ex.TRAIN_COLUMNS) and len(rows) == 2
    if env == "hs":
        assert "perfect_routing_pct" in ex.read_csv(paths[0] / "eval.csv")[0]


def test_evaluate_from_checkpoint_matches_in_memory(tmp_path):
    cfg = tiny(tmp_path=tmp_path, alpha=1.0)
    tr = ex.train(cfg, 0)
    mem = ex.evaluate(cfg, 0, alg=tr.alg)
    disk = ex.evaluate(cfg, 0)
    assert disk.eval_row["dp"] == pytest.approx(mem.eval_row["dp"], abs=1e-5)


def test_cf_metric_uses_counterfactual_rollouts(tmp_path):
    cfg = tiny(tmp_path=tmp_path, metric="CF", alpha=1.0, beta=1.0)
    tr = ex.train(cfg, 0, checkpoint=False)
    ev = ex.evaluate(cfg, 0, alg=tr.alg)
    assert ev.report.cf is not None


def test_sweep_writes_summary_and_price_of_fairness(tmp_path):
    cfg = tiny(tmp_path=tmp_path, alphas=(1.0,), betas=(0.0,), seeds=(0, 1))
    records = ex.sweep(cfg)
    assert len(records) == 4 and all(r.error is None for r in records)
    summary = ex.read_csv(tmp_path / "sweep-ah-fairppo-summary.csv")
    assert {r["label"] for r in summary} == {"fairppo-DP-a0-b0", "fairppo-DP-a1-b0"}
    base = [r for r in records if r.config.alpha == 0]
    assert all(r.eval_row["price_of_fairness"] == 0.0 for r in base)
    on_disk = ex.read_csv(next((tmp_path).rglob("eval.csv")))
    assert on_disk[0]["price_of_fairness"] != ""


# --- plots ----------------------------------------------------------------------------


def test_non_dominated_matches_brute_force():
    rng = np.random.default_rng(0)
    pts = [tuple(x) for x in rng.integers(0, 5, size=(30, 2)).astype(float)]
    flags = non_dominated(pts)
    for (d, r), f in zip(pts, flags):
        beaten = any(d2 <= d and r2 >= r and (d2, r2) != (d, r) for d2, r2 in pts)
        assert f == (not beaten)
    assert non_dominated([(1.0, 1.0), (2.0, 0.5), (0.5, 2.0)]) == [False, False, True]


def test_pareto_rows_flags():
    evals = [
        {"label": "a", "config_hash": "1", "seed": "0", "dp": "1.0", "mean_reward": "5"},
        {"label": "b", "config_hash": "2", "seed": "0", "dp": "2.0", "mean_reward": "4"},
        {"label": "c", "config_hash": "3", "seed": "0", "dp": "3.0", "mean_reward": "9"},
    ]
    flags = {r["label"]: r["non_dominated"] for r in pareto_rows(evals)}
    assert flags == {"a": True, "b": False, "c": True}


def test_plots_are_deterministic(tmp_path):
    ex.sweep(tiny(tmp_path=tmp_path / "runs", alphas=(1.0,), betas=(0.0,)))
    evals, trains = rows_from_directory(tmp_path / "runs")
    a = export_plots(evals, trains, tmp_path / "p1")
    b = export_plots(evals, trains, tmp_path / "p2")
    assert [p.name for p in a] == [p.name for p in b]
    assert {p.suffix for p in a} == {".csv", ".png"}
    for x, y in zip(a, b):
        assert x.read_bytes() == y.read_bytes()


# --- CLI ------------------------------------------------------------------------------


def _flags(tmp_path, *extra):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps(tiny(tmp_path=tmp_path / "runs").to_dict()))
    return ["--config", str(cfg), *extra]


def test_cli_train_eval_report_plot(tmp_path, capsys):
    assert cli.main(["train", *_flags(tmp_path, "--alpha", "1")]) == 0
    assert cli.main(["eval", *_flags(tmp_path, "--alpha", "1")]) == 0
    assert cli.main(["report", "--runs", str(tmp_path / "runs"), "--csv", str(tmp_path / "s.csv")]) == 0
    assert (tmp_path / "s.csv").exists()
    assert cli.main(["plot", "--runs", str(tmp_path / "runs")]) == 0
    assert "DP" in capsys.readouterr().out


def test_cli_sweep(tmp_path):
    assert cli.main(["sweep", *_flags(tmp_path, "--alphas", "1", "--betas", "0")]) == 0
    assert (tmp_path / "runs" / "sweep-ah-fairppo-summary.csv").exists()


def test_cli_exit_codes(tmp_path):
    assert cli.main(["eval", *_flags(tmp_path, "--checkpoint", str(tmp_path / "missing.fppo"))]) == 1
    assert cli.main(["eval", *_flags(tmp_path, "--seeds", "0,1", "--checkpoint", "x")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"environment": "nowhere"}))
    assert cli.main(["train", "--config", str(bad)]) == 2
    assert cli.main(["report", "--runs", str(tmp_path / "empty")]) == 1
    assert cli.main(["plot", "--runs", str(tmp_path / "empty")]) == 1
    with pytest.raises(SystemExit):
        cli.main(["frobnicate"])
