import json

import numpy as np
import pytest

from creditlab import cli
from creditlab.experiments import config as C
from creditlab.experiments.common import (grid_encoder, make_gridworld, make_infernet,
                                          manifest, stream)
from creditlab.experiments.offline import (exact_size_dataset, loglog_slope, loss_diag,
                                           rmse_curve, run_offline, time_bench)
from creditlab.experiments.online import run_online
from creditlab.experiments.results import (CSV_COLUMNS, MetricSeries, Point, RunResult,
                                           aggregate, emit_metrics, load_result, read_csv,
                                           write_csv)

TINY_NET = {"infernet.hidden_layers": 1, "infernet.units": 8}


def tiny(kind, **extra):
    overrides = {**TINY_NET, "seeds": [0]}
    overrides.update({k.replace("__", "."): v for k, v in extra.items()})
    return C.RunConfig(kind, overrides)


class TestConfig:
    def test_online_defaults(self):
        cfg = C.RunConfig("online_gridworld")
        assert cfg["infernet.lr"] == 1e-4 and cfg["infernet.train_steps"] == 500_000
        assert cfg["infernet.buffer"] == 500 and cfg["infernet.batch_episodes"] == 32
        assert cfg["agent.episodes"] == 2000 and cfg["td.lambda"] == 0.91
        assert cfg.seeds == [0, 1, 2, 3, 4]

    def test_offline_and_cartpole_defaults(self):
        off = C.RunConfig("offline_gridworld")
        assert off["infernet.lr"] == 1e-3 and off["infernet.train_steps"] == 50_000
        assert off["agent.train_steps"] == 5000
        cp = C.RunConfig("cartpole")
        assert cp["infernet.dropout"] == 0.2 and cp["infernet.batch_episodes"] == 10
        assert cp["agent.lr"] == 2.5e-4 and cp["agent.train_steps"] == 150_000
        assert len(cp.seeds) == 20

    def test_adam_settings_reach_the_model(self):
        cfg = tiny("online_gridworld", infernet__adam_beta2=0.99, infernet__adam_epsilon=1e-6)
        model = make_infernet(cfg, grid_encoder(make_gridworld(cfg)), stream(0, "x"))
        assert (model.adam.beta1, model.adam.beta2, model.adam.epsilon) == (0.9, 0.99, 1e-6)

    def test_fast_profile(self):
        cfg = C.RunConfig("offline_gridworld", fast=True)
        assert cfg["infernet.train_steps"] == 5000 and cfg["agent.train_steps"] == 500
        assert cfg.hash() != C.RunConfig("offline_gridworld").hash()

    def test_unknown_key(self):
        with pytest.raises(C.ConfigError, match="infernet.lrr"):
            C.RunConfig("online_gridworld", {"infernet.lrr": 1e-3})

    @pytest.mark.parametrize("kind", ["atari", "healthcare", "sepsis", "mujoco"])
    def test_rejected_kinds(self, kind):
        with pytest.raises(C.ConfigError):
            C.RunConfig(kind)

    @pytest.mark.parametrize("key, value", [
        ("infernet.lr", -1.0), ("infernet.units", 0), ("infernet.units", 2.5),
        ("agent.gamma", 1.5), ("agent", "ppo"), ("reward_mode", ["gp"]),
        ("seeds", []), ("seeds", [1, 1]), ("td.traces", "sticky"), ("agent", "dqn"),
        ("noise.sigma", -0.1), ("infernet.adam_beta1", 1.0), ("infernet.adam_epsilon", 0), ("infernet.dropout", 1.0), ("agent.episodes", True)])
    def test_invalid_values(self, key, value):
        with pytest.raises(C.ConfigError):
            C.RunConfig("online_gridworld", {key: value})

    def test_sizes_must_increase(self):
        with pytest.raises(C.ConfigError):
            C.RunConfig("offline_gridworld", {"dataset_sizes": [50, 10]})
        with pytest.raises(C.ConfigError):
            C.RunConfig("time_bench", {"bench.sizes": [250]})

    def test_hash_tracks_values(self):
        a = C.RunConfig("online_gridworld")
        assert a.hash() == C.RunConfig("online_gridworld").hash()
        b = a.replace(**{"infernet.lr": 2e-4})
        assert b.hash() != a.hash() and b["infernet.lr"] == 2e-4
        assert a["infernet.lr"] == 1e-4
        assert b.replace(**{"infernet.lr": 1e-4}) == a

    def test_replace_validates(self):
        with pytest.raises(C.ConfigError):
            C.RunConfig("online_gridworld").replace(seeds=[-1])
        with pytest.raises(C.ConfigError):
            C.RunConfig("online_gridworld").replace(bogus=1)

    def test_yaml_round_trip(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("experiment: online_gridworld\nagent: td_lambda\n"
                        "infernet.lr: 0.001\nseeds: [3, 4]\n")
        cfg = C.load_config(path)
        assert cfg.kind == "online_gridworld" and cfg["agent"] == "td_lambda"
        assert cfg.seeds == [3, 4]
        again = tmp_path / "d.yaml"
        again.write_text(C.dump_config(cfg))
        assert C.load_config(again) == cfg

    def test_nested_sections_rejected(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("experiment: online_gridworld\ninfernet:\n  lr: 0.001\n")
        with pytest.raises(C.ConfigError, match="nested"):
            C.load_config(path)

    def test_missing_kind_and_bad_file(self, tmp_path):
        with pytest.raises(C.ConfigError):
            C.from_mapping({"seeds": [0]})
        with pytest.raises(C.ConfigError):
            C.load_config(tmp_path / "missing.yaml")
        bad = tmp_path / "bad.yaml"
        bad.write_text("a: [1, 2\n")
        with pytest.raises(C.ConfigError):
            C.load_config(bad)


class TestResults:
    def test_series_invariants(self):
        with pytest.raises(ValueError):
            MetricSeries("r", [Point(2, 0.0, 0.0, 1), Point(1, 0.0, 0.0, 1)])
        with pytest.raises(ValueError):
            MetricSeries("r", [Point(1, 0.0, -0.1, 1)])

    def test_aggregate(self):
        s = aggregate("r", {1: {10: 1.0, 20: 3.0}, 0: {10: 3.0, 20: 3.0}})
        assert list(s.xs) == [10, 20] and list(s.means) == [2.0, 3.0]
        assert list(s.stds) == [1.0, 0.0]
        assert s.at(20).n_seeds == 2 and s.last.x == 20
        swapped = aggregate("r", {0: {10: 3.0, 20: 3.0}, 1: {10: 1.0, 20: 3.0}})
        assert swapped == s

    def test_empty_series_gives_header_only(self, tmp_path):
        path = tmp_path / "m.csv"
        write_csv([], path)
        assert path.read_text().strip() == ",".join(CSV_COLUMNS)
        assert read_csv(path) == []

    def test_csv_and_json_round_trip(self, tmp_path):
        series = [MetricSeries("b", [Point(1, 0.1, 0.2, 3), Point(2.5, 1 / 3, 0.0, 3)]),
                  MetricSeries("a", [Point(5, -1.0, 0.5, 1)])]
        result = RunResult({"config_hash": "x"}, series, {"k": 1})
        paths = emit_metrics(result, tmp_path / "run")
        assert sorted(p.name for p in paths) == ["manifest.json", "metrics.csv", "result.json"]
        assert read_csv(tmp_path / "run" / "metrics.csv") == series
        loaded = load_result(tmp_path / "run")
        assert loaded.series == series and loaded.artifacts == {"k": 1}
        assert loaded.get("a").last.mean == -1.0
        with pytest.raises(KeyError):
            loaded.get("c")

    def test_unwritable_directory(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(OSError):
            emit_metrics(RunResult({}), blocker / "sub")

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError):
            emit_metrics(RunResult({}), tmp_path, formats=("parquet",))

    def test_manifest_contents(self):
        cfg = C.RunConfig("online_gridworld")
        env = make_gridworld(cfg)
        m = manifest(cfg, env, extra=1)
        assert m["config_hash"] == cfg.hash() and m["seeds"] == cfg.seeds
        assert m["config"]["infernet.lr"] == 1e-4 and m["extra"] == 1
        assert m["layout_seed"] == 7 and "code_version" in m


class TestRunners:
    def test_online_gridworld_smoke_and_reproducible(self):
        cfg = tiny("online_gridworld", agent__episodes=20, eval__interval=10,
                   eval__episodes=2, infernet__pretrain_episodes=5,
                   infernet__pretrain_steps=5, infernet__train_steps=30,
                   infernet__train_every=5)
        a, b = run_online(cfg), run_online(cfg)
        assert a.names == ["return/immediate", "return/delayed", "return/inferred"]
        assert a.get("return/inferred").xs.tolist() == [10, 20]
        assert a.to_dict() == b.to_dict()
        assert a.artifacts["infernet_updates/inferred/seed0"] == 30
        assert a.manifest["reference"]["optimal_return"] == 5.0

    def test_online_td_lambda_and_checkpoint(self, tmp_path):
        cfg = C.RunConfig("online_gridworld", {
            **TINY_NET, "seeds": [0], "agent": "td_lambda", "reward_mode": ["inferred"],
            "agent.episodes": 5, "eval.interval": 5, "eval.episodes": 1,
            "infernet.pretrain_episodes": 2, "infernet.pretrain_steps": 2,
            "infernet.train_steps": 10}, out_dir=tmp_path)
        result = run_online(cfg)
        path = tmp_path / result.artifacts["checkpoint/inferred/seed0"]
        assert path.exists()

    def test_cartpole_smoke(self):
        cfg = C.RunConfig("cartpole", {
            **TINY_NET, "seeds": [0], "reward_mode": ["inferred"], "infernet.dropout": 0.0,
            "agent.train_steps": 300, "agent.learning_starts": 50, "agent.batch": 8,
            "eval.interval": 150, "eval.episodes": 1, "infernet.pretrain_episodes": 2,
            "infernet.pretrain_steps": 2, "infernet.train_steps": 20})
        result = run_online(cfg)
        assert result.get("return/inferred").xs.tolist() == [150, 300]
        assert run_online(cfg).to_dict() == result.to_dict()

    def test_offline_smoke(self):
        cfg = tiny("offline_gridworld", dataset_sizes=[3, 6], infernet__train_steps=20,
                   agent__train_steps=50, eval__episodes=1)
        result = run_offline(cfg)
        assert set(result.names) == {"return/immediate", "return/delayed", "return/inferred",
                                     "return/gp", "rmse/inferred", "rmse/gp"}
        assert result.get("rmse/gp").xs.tolist() == [3, 6]
        assert run_offline(cfg).to_dict() == result.to_dict()

    def test_rmse_curve_smoke(self):
        cfg = tiny("rmse_curve", dataset_sizes=[4], infernet__train_steps=10)
        names = rmse_curve(cfg).names
        assert names == ["rmse/inferred/sigma=0", "rmse/gp/sigma=0",
                         "rmse/inferred/sigma=0.3", "rmse/gp/sigma=0.3"]

    def test_time_bench_smoke(self):
        cfg = tiny("time_bench", bench__sizes=[20, 40], bench__repeats=1,
                   bench__infernet_epochs=2)
        result = time_bench(cfg)
        assert set(result.manifest["loglog_slopes"]) == {"gp", "inferred"}
        assert result.get("seconds/gp").xs.tolist() == [20, 40]

    def test_loss_diag_smoke(self):
        cfg = tiny("loss_diag", diag__episodes=10, diag__checkpoints=4,
                   infernet__train_steps=40)
        result = loss_diag(cfg)
        assert result.get("objective_loss").xs.tolist() == [0, 10, 20, 30, 40]
        assert -1.0 <= result.manifest["spearman"][0] <= 1.0

    def test_wrong_kind(self):
        with pytest.raises(C.ConfigError):
            run_offline(C.RunConfig("online_gridworld"))
        with pytest.raises(C.ConfigError):
            run_online(C.RunConfig("loss_diag"))

    def test_exact_size_dataset(self):
        env = make_gridworld(C.RunConfig("online_gridworld"))
        data = exact_size_dataset(env, 137, stream(0, "x"))
        assert sum(len(e) for e in data) == 137
        last = data[-1]
        assert last.delayed_reward == pytest.approx(last.rewards.sum())

    def test_loglog_slope(self):
        ns = np.array([1.0, 2.0, 4.0, 8.0])
        assert loglog_slope(ns, 3 * ns ** 2) == pytest.approx(2.0)


class TestCli:
    def write_cfg(self, tmp_path, text):
        path = tmp_path / "cfg.yaml"
        path.write_text(text)
        return str(path)

    def test_success_and_plot_data(self, tmp_path):
        cfg = self.write_cfg(tmp_path, "experiment: loss_diag\ninfernet.units: 4\n"
                             "infernet.hidden_layers: 1\ndiag.episodes: 3\n"
                             "diag.checkpoints: 2\ninfernet.train_steps: 4\n")
        out = tmp_path / "run"
        assert cli.main(["loss-diag", "--config", cfg, "--seeds", "1,2", "--out", str(out)]) == 0
        manifest_data = json.loads((out / "manifest.json").read_text())
        assert manifest_data["seeds"] == [1, 2]
        original = (out / "metrics.csv").read_text()
        (out / "metrics.csv").unlink()
        assert cli.main(["plot-data", str(out)]) == 0
        assert (out / "metrics.csv").read_text() == original

    def test_config_errors_exit_one(self, tmp_path):
        bad = self.write_cfg(tmp_path, "experiment: loss_diag\nbogus: 1\n")
        assert cli.main(["loss-diag", "--config", bad, "--out", str(tmp_path / "o")]) == 1
        assert cli.main(["online", "--seeds", "a,b", "--out", str(tmp_path / "o")]) == 1
        wrong = self.write_cfg(tmp_path, "experiment: loss_diag\n")
        assert cli.main(["offline", "--config", wrong, "--out", str(tmp_path / "o")]) == 1

    def test_runtime_error_exits_two(self, tmp_path):
        cfg = self.write_cfg(tmp_path, "experiment: loss_diag\ninfernet.units: 4\n"
                             "infernet.hidden_layers: 1\ndiag.episodes: 2\n"
                             "diag.checkpoints: 1\ninfernet.train_steps: 1\n")
        blocker = tmp_path / "blocker"
        blocker.write_text("")
        assert cli.main(["loss-diag", "--config", cfg, "--seed", "0",
                         "--out", str(blocker / "out")]) == 2

    def test_plot_data_missing_run(self, tmp_path):
        assert cli.main(["plot-data", str(tmp_path / "nothing")]) == 2

    def test_seed_flags_exclusive(self, tmp_path):
        with pytest.raises(SystemExit):
            cli.main(["online", "--seed", "1", "--seeds", "1,2", "--out", str(tmp_path)])
