import glob
import hashlib
import json
import os

import numpy as np
import pandas as pd
import pytest

from cutlearn.cli import ConfigError, ExperimentConfig, cmd_bench, cmd_fit, cmd_simulate, load_config, main, read_dataset

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")


def write_config(tmp_path, **overrides):
    cfg = {
        "setting": "S1",
        "n": 120,
        "replications": 2,
        "estimands": [{"family": "rmst", "horizon": 2.0}],
        "cut_kinds": ["aipcw"],
        "learners": ["s", "ra", "r"],
        "nuisance": {"base_learners": ["constant", "ridge"], "grid_cap": 48, "hazard_bins": 10, "cv_folds": 2},
        "split": {"k1": 2, "k2": 2},
        "seed": 7,
    }
    cfg.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def file_hash(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


class TestConfigValidation:
    def test_unknown_learner_names_field(self, tmp_path):
        path = write_config(tmp_path, learners=["s", "bogus"])
        with pytest.raises(ConfigError, match="learners"):
            load_config(path)

    def test_unknown_learner_exit_code(self, tmp_path, capsys):
        path = write_config(tmp_path, learners=["nope"])
        code = main(["simulate", "--config", path, "--out", str(tmp_path)])
        assert code == 2
        assert "learners" in capsys.readouterr().err

    def test_incompatible_estimand_setting(self, tmp_path):
        path = write_config(tmp_path, estimands=[{"family": "cif", "horizon": 2.0, "cause": 1}])
        with pytest.raises(ConfigError, match="competing"):
            load_config(path)

    def test_separable_requires_aipcw(self, tmp_path):
        path = write_config(
            tmp_path,
            setting="S3",
            estimands=[{"family": "sep_direct_cif", "horizon": 2.0, "cause": 1, "fixed_arm": 1}],
            cut_kinds=["bj"],
        )
        with pytest.raises(ConfigError, match="cut_kinds"):
            load_config(path)

    def test_missing_file_is_config_error(self):
        with pytest.raises(ConfigError, match="not found"):
            load_config("/nonexistent/cfg.json")


class TestSimulate:
    def test_deterministic_outputs(self, tmp_path):
        path = write_config(tmp_path)
        cfg = load_config(path)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        cmd_simulate(cfg, str(out1))
        cmd_simulate(cfg, str(out2))
        assert file_hash(out1 / "s1_data.csv") == file_hash(out2 / "s1_data.csv")
        assert file_hash(out1 / "s1_truth.csv") == file_hash(out2 / "s1_truth.csv")

    def test_competing_statuses_present(self, tmp_path):
        path = write_config(tmp_path, setting="S3", n=200,
                            estimands=[{"family": "cif", "horizon": 3.0, "cause": 1}])
        cfg = load_config(path)
        cmd_simulate(cfg, str(tmp_path / "sim"))
        df = pd.read_csv(tmp_path / "sim" / "s3_data.csv")
        assert set(df["status"].unique()) == {0, 1, 2}

    def test_manifest_hash_tracks_setting(self, tmp_path):
        p1 = write_config(tmp_path)
        cfg1 = load_config(p1)
        cmd_simulate(cfg1, str(tmp_path / "m1"))
        cfg2 = load_config(write_config(tmp_path, setting="S3",
                                        estimands=[{"family": "rmst", "horizon": 2.0}]))
        cmd_simulate(cfg2, str(tmp_path / "m2"))
        cfg3 = load_config(write_config(tmp_path, seed=99))
        cmd_simulate(cfg3, str(tmp_path / "m3"))

        def hash_line(p):
            for line in open(p):
                if line.startswith("coefficient_hash"):
                    return line.strip()

        h1 = hash_line(tmp_path / "m1" / "s1_manifest.txt")
        h2 = hash_line(tmp_path / "m2" / "s3_manifest.txt")
        h3 = hash_line(tmp_path / "m3" / "s1_manifest.txt")
        assert h1 != h2
        assert h1 == h3  # same setting, different seed


class TestFit:
    def test_rerun_identical_and_diagnostics(self, tmp_path):
        path = write_config(tmp_path)
        cfg = load_config(path)
        cmd_simulate(cfg, str(tmp_path / "sim"))
        data_path = str(tmp_path / "sim" / "s1_data.csv")
        cmd_fit(cfg, data_path, str(tmp_path / "f1"))
        cmd_fit(cfg, data_path, str(tmp_path / "f2"))
        for name in os.listdir(tmp_path / "f1"):
            assert file_hash(tmp_path / "f1" / name) == file_hash(tmp_path / "f2" / name), name
        diag = json.load(open(tmp_path / "f1" / "diagnostics.json"))
        tag = next(iter(diag))
        assert "floored" in diag[tag] and "fold_sizes" in diag[tag]

    def test_schema_errors_with_line_numbers(self, tmp_path):
        path = write_config(tmp_path)
        cfg = load_config(path)
        df = pd.DataFrame({"id": [0, 1], "x1": [0.1, 0.2], "a": [0, 1], "time": [1.0, -2.0], "status": [1, 0]})
        bad = tmp_path / "bad.csv"
        df.to_csv(bad, index=False)
        with pytest.raises(ConfigError, match="line 3"):
            cmd_fit(cfg, str(bad), str(tmp_path))

    def test_read_dataset_roundtrip(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        cmd_simulate(cfg, str(tmp_path / "sim"))
        data = read_dataset(str(tmp_path / "sim" / "s1_data.csv"))
        assert len(data) == 120
        assert data.covariates.shape == (120, 6)


class TestBench:
    def test_emits_rows_per_learner_and_metric(self, tmp_path):
        cfg = load_config(write_config(tmp_path, replications=3, n=120))
        cmd_bench(cfg, str(tmp_path / "bench"), workers=1)
        metrics = pd.read_csv(tmp_path / "bench" / "metrics.csv")
        pehe = metrics[metrics["metric"] == "pehe"]
        assert set(pehe["learner"]) == {"s", "ra", "r"}
        counts = pehe.groupby("learner")["replication"].nunique()
        assert (counts == 3).all()
        summary = pd.read_csv(tmp_path / "bench" / "summary.csv")
        assert {"median", "q1", "q3", "iqr", "whisker_lo", "whisker_hi"} <= set(summary.columns)
        assert (metrics["metric"] == "psihat_median").any()

    def test_oracle_injection_zero_pehe(self, tmp_path):
        # injecting the truth as predictions yields exactly zero pehe rows
        from cutlearn.metrics import evaluate
        from cutlearn.simgen import SettingId, generate
        from cutlearn.transforms import EstimandSpec

        _, gt = generate(SettingId("S1", 150, 5))
        psi0 = gt.true_hte(EstimandSpec.rmst(2.0))
        rep = evaluate(psi0, psi0, gt.pi1 * (1 - gt.pi1))
        assert rep.pehe == 0.0 and rep.pehe_h == 0.0

    def test_worker_pool_matches_serial(self, tmp_path):
        cfg = load_config(write_config(tmp_path, replications=2, n=96))
        cmd_bench(cfg, str(tmp_path / "serial"), workers=1)
        cmd_bench(cfg, str(tmp_path / "pool"), workers=2)
        assert file_hash(tmp_path / "serial" / "metrics.csv") == file_hash(tmp_path / "pool" / "metrics.csv")


class TestConfigCorpus:
    @pytest.mark.parametrize("path", sorted(glob.glob(os.path.join(CONFIG_DIR, "*.json"))))
    def test_corpus_configs_load(self, path):
        cfg = load_config(path)
        assert isinstance(cfg, ExperimentConfig)

    def test_corpus_size_and_spread(self):
        paths = sorted(glob.glob(os.path.join(CONFIG_DIR, "*.json")))
        assert len(paths) >= 20
        settings = set()
        learners = set()
        families = set()
        for p in paths:
            cfg = load_config(p)
            settings.update(cfg.settings)
            learners.update(cfg.learners)
            families.update(e.family for e in cfg.estimands)
        assert settings == {"S1", "S2", "S3", "S4"}
        assert learners == {"s", "t", "x", "if", "iptw", "ra", "aiptw", "mc", "mcea", "r", "u"}
        assert {"survival", "rmst", "cif", "rmtl"} <= families

    @pytest.mark.parametrize("path", sorted(glob.glob(os.path.join(CONFIG_DIR, "*.json"))))
    def test_corpus_runs_crash_free(self, path, tmp_path):
        # every admissible config completes the full simulate -> bench loop
        cfg = load_config(path)
        cfg.n = min(cfg.n, 120)
        cfg.replications = 1
        cmd_bench(cfg, str(tmp_path / "out"), workers=1)
        assert os.path.exists(tmp_path / "out" / "metrics.csv")
