import json
import subprocess
import sys

import numpy as np
import pytest

from fedmeter import cli
from fedmeter import experiment as ex
from fedmeter.experiment import (ConfigError, DataConfig, ExperimentConfig,
                                 apply_override, build_client_data, config_from_dict,
                                 config_to_dict, recommended_train_config,
                                 run_experiment, validate_config)


def tiny_dict(out_dir, **kw):
    base = {
        "name": "tiny",
        "model": "lstm",
        "setting": "federated",
        "protocol": "baseline",
        "master_seed": 1,
        "output_dir": str(out_dir),
        "data": {"source": "synthetic", "households": 3, "days": 20,
                 "anomaly_fraction": 0.15},
        "federation": {"rounds": 2, "local_epochs": 1, "malicious_count": 0},
        "train": {"epochs": 2, "batch_size": 16, "seed": 0},
    }
    for key, value in kw.items():
        if isinstance(value, dict):
            base[key] = {**base.get(key, {}), **value}
        else:
            base[key] = value
    return base


def tiny_cfg(out_dir, **kw):
    return config_from_dict(tiny_dict(out_dir, **kw))


class TestConfig:
    def test_roundtrip(self, tmp_path):
        cfg = tiny_cfg(tmp_path)
        again = config_from_dict(config_to_dict(cfg))
        assert again == cfg

    def test_defaults_fill(self):
        cfg = config_from_dict({})
        assert cfg.federation.poison_fraction == 0.3
        assert cfg.attack.pgd_iters == 10
        assert cfg.attack.awgn_variance == 0.1
        assert cfg.threshold == 0.5
        assert cfg.data.households == 19 and cfg.data.days == 365

    def test_empty_attack_normalizes_to_baseline(self):
        cfg = config_from_dict({})
        assert cfg.attack.family == "none" and cfg.protocol == "baseline"

    def test_validate_returns_derived_seeds(self, tmp_path):
        _, seeds = validate_config(tiny_cfg(tmp_path))
        assert {"master", "federation", "central", "attack-eval"} <= set(seeds)

    def test_paper_scale_malicious_count_valid(self, tmp_path):
        cfg = tiny_cfg(tmp_path, data={"households": 19, "days": 20},
                       federation={"malicious_count": 9},
                       attack={"family": "pgd", "epsilon": 0.5},
                       protocol="training_attack")
        validate_config(cfg)

    def test_excess_malicious_count_rejected(self, tmp_path):
        cfg = tiny_cfg(tmp_path, data={"households": 19},
                       federation={"malicious_count": 20},
                       attack={"family": "pgd"}, protocol="training_attack")
        with pytest.raises(ConfigError, match="malicious_count 20"):
            validate_config(cfg)

    def test_all_violations_listed_together(self, tmp_path):
        cfg = tiny_cfg(tmp_path, setting="central", threshold=2.0,
                       federation={"malicious_count": 2, "clients_per_round": 2})
        with pytest.raises(ConfigError) as err:
            validate_config(cfg)
        message = str(err.value)
        assert "malicious_count" in message
        assert "clients_per_round" in message
        assert "threshold" in message

    def test_attack_protocol_requires_family(self, tmp_path):
        cfg = tiny_cfg(tmp_path, protocol="inference_attack")
        with pytest.raises(ConfigError, match="requires an attack"):
            validate_config(cfg)

    def test_baseline_contradicts_attack(self, tmp_path):
        cfg = tiny_cfg(tmp_path, attack={"family": "fgsm"})
        with pytest.raises(ConfigError, match="baseline"):
            validate_config(cfg)

    def test_sweeps_are_federated_only(self, tmp_path):
        cfg = tiny_cfg(tmp_path, setting="central", protocol="sweep_epsilon",
                       attack={"family": "fgsm"})
        with pytest.raises(ConfigError, match="federated"):
            validate_config(cfg)

    def test_apply_override_parses_json_values(self):
        raw = {}
        apply_override(raw, "train.epochs", "5")
        apply_override(raw, "attack.family", "pgd")
        apply_override(raw, "data.anomaly_fraction", "0.2")
        assert raw == {"train": {"epochs": 5}, "attack": {"family": "pgd"},
                       "data": {"anomaly_fraction": 0.2}}

    def test_recommended_train_config(self):
        assert recommended_train_config("lstm").base_lr == 0.01
        assert recommended_train_config("transformer").base_lr == 1e-3
        assert recommended_train_config("transformer", epochs=7).epochs == 7


class TestBuildClientData:
    def test_synthetic_shapes(self, tmp_path):
        clients = build_client_data(tiny_cfg(tmp_path))
        assert len(clients) == 3
        for c in clients:
            assert c.train.profiles.shape[1] == 24
            # stratified split keeps both classes on both sides
            assert set(np.unique(c.train.labels)) == {0, 1}
            assert len(c.train) + len(c.test) == 23  # 20 days + 15% anomalies

    def test_windows_match_synthesizer_design(self, tmp_path):
        clients = build_client_data(tiny_cfg(tmp_path, data={"days": 120}))
        for c in clients:
            assert c.windows.low_hours == (4, 5, 6, 7, 8, 9)
            assert c.windows.high_hours == (0, 18, 19, 20, 21, 22, 23)

    def test_csv_route_matches_synthetic_route(self, tmp_path):
        csv_path = tmp_path / "meters.csv"
        assert cli.main(["synth-data", "--households", "2", "--days", "15",
                         "--seed", "1", "--out", str(csv_path)]) == 0
        synthetic = build_client_data(tiny_cfg(tmp_path, data={"households": 2,
                                                               "days": 15}))
        from_csv = build_client_data(tiny_cfg(
            tmp_path, data={"source": "csv", "csv_path": str(csv_path),
                            "households": 2, "days": 15}))
        for a, b in zip(synthetic, from_csv):
            assert a.client_id == b.client_id
            # CSV renders 12 significant digits, so equality is approximate
            np.testing.assert_allclose(a.train.profiles, b.train.profiles, rtol=1e-9)
            np.testing.assert_array_equal(a.train.labels, b.train.labels)


class TestRunExperiment:
    def test_baseline_outputs(self, tmp_path):
        result = run_experiment(tiny_cfg(tmp_path / "run"))
        assert len(result.rows) == 1
        assert result.rows[0][0] == "LSTM (FL)"
        assert result.rows[0][1] == "No Attack"
        assert result.rows[0][-1] == ""  # asr column empty
        out = tmp_path / "run"
        for name in ("metrics.csv", "config.json", "manifest.json",
                     "rounds_clean.jsonl", "final_clean.ckpt"):
            assert (out / name).exists(), name
        manifest = json.loads((out / "manifest.json").read_text())
        assert "seeds" in manifest and "config_sha256" in manifest

    def test_inference_attack_outputs(self, tmp_path):
        cfg = tiny_cfg(tmp_path / "run", setting="central",
                       protocol="inference_attack",
                       attack={"family": "fgsm", "epsilon": 0.4},
                       federation={"rounds": 2, "malicious_count": 0,
                                   "clients_per_round": None})
        result = run_experiment(cfg)
        assert len(result.rows) == 1
        row = result.rows[0]
        assert row[0] == "LSTM (Central)" and row[1] == "FGSM"
        assert row[-1] != ""  # asr present
        adv = (tmp_path / "run" / "adversarial_test.csv").read_text().splitlines()
        assert adv[0].endswith("attack_family,epsilon")
        assert adv[1].endswith("fgsm,0.4")

    def test_training_attack_rows(self, tmp_path):
        cfg = tiny_cfg(tmp_path / "run", protocol="training_attack",
                       attack={"family": "label_flip", "flip_fraction": 1.0},
                       federation={"rounds": 2, "malicious_count": 1,
                                   "poison_fraction": 0.3})
        result = run_experiment(cfg)
        assert [r[1] for r in result.rows] == ["No Attack", "Label Flip"]
        assert result.rows[1][-1] != ""

    def test_sweep_epsilon_cardinality_and_plots(self, tmp_path):
        cfg = tiny_cfg(tmp_path / "run", protocol="sweep_epsilon",
                       epsilon_list=[0.1, 0.5],
                       attack={"family": "fgsm", "epsilon": 0.1},
                       federation={"rounds": 1, "malicious_count": 1})
        result = run_experiment(cfg)
        assert len(result.rows) == 4  # 2 epsilons x {fgsm, pgd}
        fig = (tmp_path / "run" / "fig5b.csv").read_text().splitlines()
        assert fig[0] == "epsilon,attack,accuracy"
        assert len(fig) == 1 + 4

    def test_sweep_malicious_plot(self, tmp_path):
        cfg = tiny_cfg(tmp_path / "run", protocol="sweep_malicious",
                       malicious_fraction_list=[0.34, 0.67],
                       attack={"family": "pgd", "epsilon": 0.3, "pgd_iters": 2},
                       federation={"rounds": 1, "malicious_count": 0})
        result = run_experiment(cfg)
        fig = (tmp_path / "run" / "fig5a.csv").read_text().splitlines()
        assert fig[0] == "malicious_fraction,attack,accuracy"
        assert len(result.rows) == 2 and len(fig) == 3

    def test_byte_identical_reruns(self, tmp_path):
        cfg_a = tiny_cfg(tmp_path / "a", protocol="training_attack",
                         attack={"family": "fgsm", "epsilon": 0.3},
                         federation={"rounds": 2, "malicious_count": 1})
        cfg_b = tiny_cfg(tmp_path / "b", protocol="training_attack",
                         attack={"family": "fgsm", "epsilon": 0.3},
                         federation={"rounds": 2, "malicious_count": 1})
        run_experiment(cfg_a)
        run_experiment(cfg_b)
        for name in ("metrics.csv", "rounds_clean.jsonl", "rounds_attacked_fgsm.jsonl"):
            assert (tmp_path / "a" / name).read_bytes() == \
                   (tmp_path / "b" / name).read_bytes(), name

    def test_different_seed_changes_outputs(self, tmp_path):
        # untrained tiny runs can tie on 2-decimal metrics, so compare the
        # full-precision round logs
        run_experiment(tiny_cfg(tmp_path / "a"))
        run_experiment(tiny_cfg(tmp_path / "b", master_seed=2))
        a = (tmp_path / "a" / "rounds_clean.jsonl").read_text()
        b = (tmp_path / "b" / "rounds_clean.jsonl").read_text()
        assert a != b

    def test_output_root_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv(ex.OUTPUT_ROOT_ENV, str(tmp_path))
        cfg = tiny_cfg("relative_run")
        result = run_experiment(cfg)
        assert result.output_dir == str(tmp_path / "relative_run")
        assert (tmp_path / "relative_run" / "metrics.csv").exists()


class TestCli:
    def test_synth_data_schema(self, tmp_path):
        out = tmp_path / "data.csv"
        code = cli.main(["synth-data", "--households", "2", "--days", "3",
                         "--seed", "4", "--out", str(out)])
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "household_id,timestamp,kwh"
        assert len(lines) == 1 + 2 * 3 * 24
        assert lines[1].startswith("h00,2021-01-04T00,")

    def test_train_with_overrides(self, tmp_path, capsys):
        code = cli.main([
            "train", "--model", "lstm", "--out", str(tmp_path / "run"),
            "--seed", "3",
            "--set", "data.households=3", "--set", "data.days=20",
            "--set", "data.anomaly_fraction=0.15",
            "--set", "federation.rounds=1", "--set", "train.epochs=1",
            "--set", "train.batch_size=16",
        ])
        assert code == 0
        assert "No Attack" in capsys.readouterr().out
        assert (tmp_path / "run" / "metrics.csv").exists()

    def test_config_error_exit_code(self, tmp_path, capsys):
        code = cli.main(["train", "--setting", "central",
                         "--set", "federation.clients_per_round=5",
                         "--out", str(tmp_path / "x")])
        assert code == cli.EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_io_error_exit_code(self, capsys):
        code = cli.main(["report", "/nonexistent/run-dir"])
        assert code == cli.EXIT_IO

    def test_report_combines_runs(self, tmp_path, capsys):
        run_experiment(tiny_cfg(tmp_path / "r1"))
        run_experiment(tiny_cfg(tmp_path / "r2", master_seed=5))
        out = tmp_path / "combined.csv"
        code = cli.main(["report", str(tmp_path / "r1"), str(tmp_path / "r2"),
                         "--out", str(out)])
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("run,setting,attack")
        assert len(lines) == 3

    def test_console_script_help(self):
        proc = subprocess.run([sys.executable, "-m", "fedmeter.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        for sub in ("synth-data", "train", "attack-eval", "federate", "sweep",
                    "report"):
            assert sub in proc.stdout
