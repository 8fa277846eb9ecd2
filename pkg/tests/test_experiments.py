"""Experiment-harness tests: config resolution and validation diagnostics,
tiny end-to-end runs with byte-stable artifacts, CLI exit codes, override
plumbing, and cross-run comparison."""
import json
import os

import numpy as np
import pytest

from benn import cli
from benn import experiments as ex


def tiny_regression_cfg(out_dir, **overrides):
    cfg = {
        "experiment": "regression-value",
        "steps": 40,
        "log_interval": 20,
        "eval_draws": 8,
        "seed": 0,
        "output_dir": str(out_dir),
        "dataset": {"regions": [[-1.0, 1.0, 0.05, 8]]},
        "model": {"layer_sizes": [1, 8, 2], "draws": 2},
        "eval": {"points": 21},
        "constraints": [{"kind": "value", "locations": [2.0], "target": 0.5}],
    }
    cfg.update(overrides)
    return cfg


def tiny_micro_cfg(out_dir, **overrides):
    cfg = {
        "experiment": "microstructure",
        "steps": 4,
        "log_interval": 2,
        "seed": 0,
        "output_dir": str(out_dir),
        "dataset": {"size": 16, "n_samples": 4},
        "model": {"hidden": 16, "latent": 3, "batch_size": 4, "constraint_batch": 4},
        "generate_count": 4,
        "constraints": [
            {"kind": "tpcf", "target": "train_mean"},
            {"kind": "porosity", "target": "train_mean"},
        ],
    }
    cfg.update(overrides)
    return cfg


def write_cfg(path, cfg):
    with open(path, "w") as f:
        json.dump(cfg, f)
    return str(path)


class TestResolveConfig:
    def test_defaults_filled(self):
        cfg = ex.resolve_config({"experiment": "regression-value", "steps": 5,
                                 "output_dir": "x"}, env={})
        assert cfg["seed"] == 0
        assert cfg["eval_draws"] == 250
        assert cfg["mdmm"]["optimizer"] == "adam"
        assert cfg["mdmm"]["damping_variant"] == "g2"
        assert cfg["eval"]["domain"] == [-10.0, 10.0]
        assert cfg["eval"]["points"] == 301
        assert cfg["model"]["layer_sizes"] == [1, 100, 2]
        assert cfg["model"]["activation"] == "relu"
        assert cfg["dataset"]["seed"] == 0

    def test_beam_domain_and_user_values_win(self):
        cfg = ex.resolve_config(
            {"experiment": "beam", "steps": 5, "output_dir": "x",
             "mdmm": {"lr_theta": 0.5}, "seed": 7},
            env={},
        )
        assert cfg["eval"]["domain"] == [0.0, 3.0]
        assert cfg["mdmm"]["lr_theta"] == 0.5
        assert cfg["mdmm"]["lr_multiplier"] == 0.1  # untouched default
        assert cfg["dataset"]["seed"] == 7

    def test_micro_model_defaults(self):
        cfg = ex.resolve_config({"experiment": "microstructure", "steps": 5,
                                 "output_dir": "x"}, env={})
        assert cfg["model"] == {"hidden": 256, "latent": 16,
                                "batch_size": 16, "constraint_batch": 16}

    def test_env_seed_override(self):
        cfg = ex.resolve_config(
            {"experiment": "regression-value", "steps": 5, "output_dir": "x", "seed": 3},
            env={"BENN_SEED": "11"},
        )
        assert cfg["seed"] == 11
        assert cfg["dataset"]["seed"] == 11


class TestApplyOverrides:
    def test_json_literals_and_nesting(self):
        cfg = {"mdmm": {"lr_theta": 0.001}}
        ex.apply_overrides(cfg, ["steps=500", "mdmm.lr_theta=0.5", "model.activation=gelu"])
        assert cfg["steps"] == 500 and isinstance(cfg["steps"], int)
        assert cfg["mdmm"]["lr_theta"] == 0.5
        assert cfg["model"]["activation"] == "gelu"  # plain-string fallback

    def test_list_indexing(self):
        cfg = {"constraints": [{"kind": "value", "target": 1.0}]}
        ex.apply_overrides(cfg, ["constraints.0.target=3.5"])
        assert cfg["constraints"][0]["target"] == 3.5

    def test_malformed_assignment(self):
        with pytest.raises(ex.ConfigError, match="path=value"):
            ex.apply_overrides({}, ["steps"])


class TestValidateConfig:
    def resolved(self, **kw):
        return ex.resolve_config(tiny_regression_cfg("out", **kw), env={})

    def test_valid_config_has_no_diagnostics(self):
        assert ex.validate_config(self.resolved()) == []

    def test_missing_required_key(self):
        cfg = ex.resolve_config({"experiment": "regression-value",
                                 "output_dir": "x"}, env={})
        diags = ex.validate_config(cfg)
        assert any("'steps' is a required property" in d for d in diags)
        assert all(d.startswith("$") for d in diags)

    def test_unknown_experiment(self):
        cfg = ex.resolve_config({"experiment": "frobnicate", "steps": 5,
                                 "output_dir": "x"}, env={})
        diags = ex.validate_config(cfg)
        assert any(d.startswith("$.experiment:") for d in diags)

    def test_unknown_top_level_key(self):
        diags = ex.validate_config(self.resolved(stepz=5))
        assert any("stepz" in d for d in diags)

    def test_constraint_family_mismatch(self):
        diags = ex.validate_config(
            self.resolved(constraints=[{"kind": "porosity", "target": 0.5}])
        )
        assert diags == [
            "$.constraints[0].kind: 'porosity' constraint does not apply to "
            "regression/beam experiments"
        ]

    def test_derivative_requires_epsilon(self):
        diags = ex.validate_config(
            self.resolved(constraints=[{"kind": "derivative", "locations": [1.0],
                                        "target": 0.0}])
        )
        assert diags == ["$.constraints[0]: derivative constraint requires epsilon"]

    def test_bound_interval_checks(self):
        diags = ex.validate_config(
            self.resolved(constraints=[{"kind": "bound", "interval": [1.0, -1.0],
                                        "target": [0.0, 1.0]}])
        )
        assert diags == ["$.constraints[0].interval: must satisfy lower < upper"]

    def test_layer_width_rules(self):
        diags = ex.validate_config(self.resolved(model={"layer_sizes": [2, 8, 3]}))
        assert "$.model.layer_sizes: output width must be 2 (mean and log-noise)" in diags
        assert "$.model.layer_sizes: input width must be 1" in diags

    def test_reversed_eval_domain(self):
        diags = ex.validate_config(self.resolved(eval={"domain": [5.0, -5.0], "points": 11}))
        assert diags == ["$.eval.domain: must satisfy lower < upper"]

    def test_beam_only_dataset_keys_flagged(self):
        diags = ex.validate_config(self.resolved(dataset={"n_obs": 5}))
        assert diags == ["$.dataset.n_obs: only applies to the beam experiment"]

    def test_micro_dataset_size_enum(self):
        cfg = ex.resolve_config(tiny_micro_cfg("out", dataset={"size": 17}), env={})
        diags = ex.validate_config(cfg)
        assert any(d.startswith("$.dataset.size:") for d in diags)


def run_tiny(tmp_path, name="run", **overrides):
    out = tmp_path / name
    cfg = ex.resolve_config(tiny_regression_cfg(out, **overrides), env={})
    assert ex.validate_config(cfg) == []
    assert ex.run_config(cfg, quiet=True) == 0
    return out


class TestRunArtifacts:
    def test_regression_artifacts(self, tmp_path):
        out = run_tiny(tmp_path)
        for name in ("config.json", "dataset.csv", "metrics.csv", "timings.csv",
                     "predictions.csv", "infeasibility.json", "checkpoint.json"):
            assert (out / name).exists(), name
        metrics = (out / "metrics.csv").read_text().splitlines()
        assert metrics[0] == "step,data_loss,residual_0,multiplier_0"
        assert len(metrics) == 1 + 2  # steps 40, logged at 20 and 40
        preds = (out / "predictions.csv").read_text().splitlines()
        assert preds[0] == "x,mean,epistemic_var,aleatoric_var"
        assert len(preds) == 1 + 21
        inf = json.loads((out / "infeasibility.json").read_text())
        assert inf["eval_draws"] == 8
        entry = inf["constraints"][0]
        assert entry["kind"] == "value"
        assert entry["infeasibility"] == pytest.approx(abs(entry["residual"]))
        echoed = json.loads((out / "config.json").read_text())
        assert echoed["steps"] == 40

    def test_byte_identical_reruns(self, tmp_path):
        a = run_tiny(tmp_path, "a")
        b = run_tiny(tmp_path, "b")
        for name in ("dataset.csv", "metrics.csv", "predictions.csv",
                     "infeasibility.json", "checkpoint.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_seed_changes_results(self, tmp_path):
        a = run_tiny(tmp_path, "a")
        b = run_tiny(tmp_path, "b", seed=1)
        assert (a / "metrics.csv").read_bytes() != (b / "metrics.csv").read_bytes()

    def test_microstructure_artifacts(self, tmp_path):
        out = tmp_path / "micro"
        cfg = ex.resolve_config(tiny_micro_cfg(out), env={})
        assert ex.validate_config(cfg) == []
        assert ex.run_config(cfg, quiet=True) == 0
        for name in ("config.json", "metrics.csv", "timings.csv",
                     "tpcf_compliance.json", "infeasibility.json", "checkpoint.json"):
            assert (out / name).exists(), name
        assert (out / "train_images").is_dir()
        assert (out / "generated").is_dir()
        echoed = json.loads((out / "config.json").read_text())
        # train_mean targets are resolved to numbers in the echoed config
        assert isinstance(echoed["constraints"][0]["target"], list)
        assert isinstance(echoed["constraints"][1]["target"], float)
        comp = json.loads((out / "tpcf_compliance.json").read_text())
        assert comp["n_generated"] == 4
        assert len(comp["target_curve"]) == len(comp["radii"])
        assert comp["l1_min"] <= comp["l1_mean"] <= comp["l1_max"]

    def test_nan_abort_exit_code_and_artifact(self, tmp_path):
        out = tmp_path / "blowup"
        cfg = ex.resolve_config(
            tiny_regression_cfg(out, steps=50,
                                mdmm={"optimizer": "sgd", "lr_theta": 1e30}),
            env={},
        )
        assert ex.validate_config(cfg) == []
        assert ex.run_config(cfg, quiet=True) == 3
        abort = json.loads((out / "abort.json").read_text())
        assert set(abort) == {"step", "term"}
        assert abort["step"] >= 1


class TestCli:
    def test_validate_ok(self, tmp_path, capsys):
        path = write_cfg(tmp_path / "c.json", tiny_regression_cfg(tmp_path / "out"))
        assert cli.main(["validate", path]) == 0
        assert capsys.readouterr().out.strip() == "valid"

    def test_validate_invalid_prints_diagnostics(self, tmp_path, capsys):
        cfg = tiny_regression_cfg(tmp_path / "out")
        del cfg["steps"]
        path = write_cfg(tmp_path / "c.json", cfg)
        assert cli.main(["validate", path]) == 2
        assert "'steps' is a required property" in capsys.readouterr().out

    def test_run_applies_set_overrides(self, tmp_path):
        out = tmp_path / "out"
        path = write_cfg(tmp_path / "c.json", tiny_regression_cfg(out))
        assert cli.main(["run", path, "--set", "steps=20",
                         "--set", "eval.points=5"]) == 0
        echoed = json.loads((out / "config.json").read_text())
        assert echoed["steps"] == 20
        preds = (out / "predictions.csv").read_text().splitlines()
        assert len(preds) == 1 + 5

    def test_run_validates_all_before_running_any(self, tmp_path, capsys):
        good_out = tmp_path / "good_out"
        good = write_cfg(tmp_path / "good.json", tiny_regression_cfg(good_out))
        bad_cfg = tiny_regression_cfg(tmp_path / "bad_out")
        bad_cfg["steps"] = 0
        bad = write_cfg(tmp_path / "bad.json", bad_cfg)
        assert cli.main(["run", good, bad]) == 2
        assert not good_out.exists()  # nothing trained
        err = capsys.readouterr().out
        assert "bad.json" in err and "$.steps" in err

    def test_run_missing_file(self, tmp_path, capsys):
        assert cli.main(["run", str(tmp_path / "nope.json")]) == 2
        assert "not found" in capsys.readouterr().out

    def test_run_parallel_jobs(self, tmp_path):
        p1 = write_cfg(tmp_path / "c1.json", tiny_regression_cfg(tmp_path / "o1"))
        p2 = write_cfg(tmp_path / "c2.json", tiny_regression_cfg(tmp_path / "o2", seed=1))
        assert cli.main(["run", p1, p2, "--jobs", "2"]) == 0
        assert (tmp_path / "o1" / "metrics.csv").exists()
        assert (tmp_path / "o2" / "metrics.csv").exists()

    def test_env_seed_reaches_run(self, tmp_path, monkeypatch):
        out = tmp_path / "out"
        path = write_cfg(tmp_path / "c.json", tiny_regression_cfg(out))
        monkeypatch.setenv("BENN_SEED", "9")
        assert cli.main(["run", path]) == 0
        echoed = json.loads((out / "config.json").read_text())
        assert echoed["seed"] == 9

    def test_bad_override_path_reports_not_crashes(self, tmp_path, capsys):
        path = write_cfg(tmp_path / "c.json", tiny_regression_cfg(tmp_path / "out"))
        assert cli.main(["run", path, "--set", "constraints.5.target=1"]) == 2
        assert "bad override" in capsys.readouterr().out


class TestCompare:
    def test_self_ratio_is_one(self, tmp_path, capsys):
        out = run_tiny(tmp_path)
        assert cli.main(["compare", str(out), "--baseline", str(out)]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "run,experiment,mse,mse_ratio,infeasibilities"
        row = lines[1].split(",")
        assert row[1] == "regression-value"
        assert float(row[3]) == 1.0

    def test_out_file_written(self, tmp_path, capsys):
        out = run_tiny(tmp_path)
        dest = tmp_path / "cmp.csv"
        assert cli.main(["compare", str(out), "--baseline", str(out),
                         "--out", str(dest)]) == 0
        assert dest.read_text() == capsys.readouterr().out

    def test_missing_baseline(self, tmp_path, capsys):
        out = run_tiny(tmp_path)
        assert cli.main(["compare", str(out), "--baseline",
                         str(tmp_path / "nope")]) == 2
        assert "compare:" in capsys.readouterr().err

    def test_grid_mismatch(self, tmp_path, capsys):
        a = run_tiny(tmp_path, "a")
        b = run_tiny(tmp_path, "b", eval={"points": 11})
        assert cli.main(["compare", str(a), "--baseline", str(b)]) == 2
        assert "does not match" in capsys.readouterr().err

    def test_microstructure_rejected(self, tmp_path, capsys):
        out = tmp_path / "micro"
        cfg = ex.resolve_config(
            tiny_micro_cfg(out, steps=2, constraints=[]), env={})
        assert ex.run_config(cfg, quiet=True) == 0
        assert cli.main(["compare", str(out), "--baseline", str(out)]) == 2
        assert "no prediction grid" in capsys.readouterr().err

    def test_mse_against_truth_is_finite_positive(self, tmp_path):
        out = run_tiny(tmp_path)
        summary = ex._run_summary(str(out))
        assert np.isfinite(summary["mse"]) and summary["mse"] > 0
