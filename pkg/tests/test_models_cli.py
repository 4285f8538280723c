import json
import math

import numpy as np
import pytest

from basisgp import cli, data as dmod, evalbench, models
from basisgp.config import RunConfig, run_config_from_dict, run_config_to_dict, ConfigError


def write_config(path, **kw):
    base = dict(
        version=1,
        model="dbk_exact",
        rank=6,
        hidden=[8],
        residual=False,
        correction=True,
        max_iters=40,
        eval_every=20,
        patience=None,
        seed=0,
    )
    base.update(kw)
    path.write_text(json.dumps(base))
    return path


class TestRunConfig:
    def test_round_trip(self):
        cfg = RunConfig(model="dbk_svi", rank=16, hidden=[32, 32], seed=3)
        back = run_config_from_dict(run_config_to_dict(cfg))
        assert back == cfg

    def test_unknown_keys_rejected(self):
        doc = run_config_to_dict(RunConfig())
        doc["learning_rte"] = 1e-3
        with pytest.raises(ConfigError, match="learning_rte"):
            run_config_from_dict(doc)

    def test_version_required(self):
        doc = run_config_to_dict(RunConfig())
        del doc["version"]
        with pytest.raises(ConfigError):
            run_config_from_dict(doc)

    def test_bad_model_rejected(self):
        doc = run_config_to_dict(RunConfig())
        doc["model"] = "kriging"
        with pytest.raises(ConfigError):
            run_config_from_dict(doc)

    def test_patience_below_eval_every_rejected(self):
        doc = run_config_to_dict(RunConfig())
        doc["patience"] = 10
        doc["eval_every"] = 100
        with pytest.raises(ConfigError):
            run_config_from_dict(doc)


class TestModelSerialization:
    def fitted(self, kind, **kw):
        train = dmod.gen_step1d(50, 0.01, 0)
        train_n, stats = dmod.normalize(train)
        cfg = RunConfig(
            model=kind,
            rank=5,
            hidden=[6],
            correction=True,
            max_iters=20,
            max_epochs=4,
            batch_size=16,
            eval_every=10,
            patience=None,
            seed=0,
            **kw,
        )
        model, _ = evalbench.train_model(cfg, train_n, None)
        model.normalization = stats
        return model

    @pytest.mark.parametrize("kind", ["dbk_exact", "dbk_svi", "dense_rbf"])
    def test_round_trip_predictions_identical(self, kind, tmp_path):
        model = self.fitted(kind)
        path = tmp_path / "model.json"
        models.save_model(path, model)
        loaded = models.load_model(path)
        x = np.linspace(-1, 1, 17)[:, None]
        a = model.predict(x)
        b = loaded.predict(x)
        assert np.array_equal(a.mean, b.mean)
        assert np.array_equal(a.variance, b.variance)

    def test_save_is_deterministic(self, tmp_path):
        model = self.fitted("dbk_exact")
        p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
        models.save_model(p1, model)
        models.save_model(p2, model)
        assert p1.read_bytes() == p2.read_bytes()

    def test_discriminator_field(self, tmp_path):
        for kind, tag in (
            ("dbk_exact", "exact"),
            ("dbk_svi", "svi"),
            ("dense_rbf", "dense_rbf"),
        ):
            path = tmp_path / f"{kind}.json"
            models.save_model(path, self.fitted(kind))
            assert json.loads(path.read_text())["inference"] == tag

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "m.json"
        models.save_model(path, self.fitted("dbk_exact"))
        doc = json.loads(path.read_text())
        doc["version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(models.ModelFormatError):
            models.load_model(path)


class TestCliSynth:
    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            code = cli.main(
                ["synth", "--n", "100", "--seed", "0", "--out", str(out)]
            )
            assert code == 0
        assert a.read_bytes() == b.read_bytes()

    def test_noiseless_y_equals_f_gt(self, tmp_path):
        out = tmp_path / "d.csv"
        cli.main(
            ["synth", "--n", "50", "--noise-var", "0", "--seed", "1", "--out", str(out)]
        )
        data = dmod.load_csv(out, "y")
        f_idx = data.feature_names.index("f_gt")
        assert np.array_equal(data.y, data.x[:, f_idx])

    def test_seed_changes_targets(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        cli.main(["synth", "--n", "50", "--seed", "0", "--out", str(a)])
        cli.main(["synth", "--n", "50", "--seed", "1", "--out", str(b)])
        assert a.read_bytes() != b.read_bytes()

    def test_invalid_flags_exit_2(self, tmp_path, capsys):
        code = cli.main(["synth", "--n", "0", "--out", str(tmp_path / "x.csv")])
        assert code == 2
        assert capsys.readouterr().err.startswith("error:")

    def test_io_failure_exit_1(self):
        code = cli.main(["synth", "--n", "5", "--out", "/nonexistent/dir/x.csv"])
        assert code == 1


class TestCliTrainPredictEval:
    def prepare(self, tmp_path, **cfg_kw):
        data_path = tmp_path / "train.csv"
        val_path = tmp_path / "val.csv"
        cli.main(["synth", "--n", "80", "--seed", "0", "--out", str(data_path)])
        cli.main(["synth", "--n", "20", "--seed", "1", "--out", str(val_path)])
        config = write_config(tmp_path / "config.json", **cfg_kw)
        return data_path, val_path, config

    def test_train_writes_model_and_improves(self, tmp_path):
        data_path, val_path, config = self.prepare(tmp_path)
        model_path = tmp_path / "model.json"
        log_path = tmp_path / "log.jsonl"
        code = cli.main(
            [
                "train",
                "--config",
                str(config),
                "--data",
                str(data_path),
                "--val",
                str(val_path),
                "--out",
                str(model_path),
                "--log",
                str(log_path),
            ]
        )
        assert code == 0
        assert model_path.exists()
        records = [json.loads(line) for line in log_path.read_text().splitlines()]
        assert records[-1]["objective"] > records[0]["objective"]

    def test_missing_val_with_patience_exit_2(self, tmp_path, capsys):
        data_path, _, config = self.prepare(tmp_path, patience=20, eval_every=20)
        code = cli.main(
            [
                "train",
                "--config",
                str(config),
                "--data",
                str(data_path),
                "--out",
                str(tmp_path / "m.json"),
            ]
        )
        assert code == 2
        assert "validation" in capsys.readouterr().err

    def test_pipeline_determinism_and_eval(self, tmp_path):
        # criterion: identical config + seed reproduces byte-identical
        # model and prediction files, and eval composes on the outputs
        data_path, val_path, config = self.prepare(tmp_path)
        outputs = []
        for tag in ("one", "two"):
            model_path = tmp_path / f"model_{tag}.json"
            preds_path = tmp_path / f"preds_{tag}.csv"
            assert (
                cli.main(
                    [
                        "train",
                        "--config",
                        str(config),
                        "--data",
                        str(data_path),
                        "--val",
                        str(val_path),
                        "--out",
                        str(model_path),
                    ]
                )
                == 0
            )
            assert (
                cli.main(
                    [
                        "predict",
                        "--model",
                        str(model_path),
                        "--data",
                        str(data_path),
                        "--out",
                        str(preds_path),
                    ]
                )
                == 0
            )
            outputs.append((model_path.read_bytes(), preds_path.read_bytes()))
        assert outputs[0] == outputs[1]

        report_path = tmp_path / "report.json"
        assert (
            cli.main(
                ["eval", "--preds", str(tmp_path / "preds_one.csv"), "--out", str(report_path)]
            )
            == 0
        )
        report = json.loads(report_path.read_text())
        assert report["mae"] <= report["rmse"]

    def test_predict_interpolates_training_data(self, tmp_path):
        data_path, val_path, config = self.prepare(
            tmp_path, max_iters=150, noise_var_init=5e-3
        )
        model_path = tmp_path / "model.json"
        preds_path = tmp_path / "preds.csv"
        cli.main(
            [
                "train",
                "--config",
                str(config),
                "--data",
                str(data_path),
                "--val",
                str(val_path),
                "--out",
                str(model_path),
            ]
        )
        cli.main(
            [
                "predict",
                "--model",
                str(model_path),
                "--data",
                str(data_path),
                "--out",
                str(preds_path),
            ]
        )
        preds = dmod.load_csv(preds_path, "target", ignore_columns=("row_index", "nll"))
        mean = preds.x[:, preds.feature_names.index("mean")]
        assert float(np.mean(np.abs(mean - preds.y))) < 0.5

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    def test_training_divergence_exit_3(self, tmp_path, capsys):
        # targets near the float64 overflow edge: ||y||^2 overflows inside
        # the likelihood, so training reports a non-finite objective
        data_path = tmp_path / "big.csv"
        dmod.write_csv(
            data_path,
            {"x0": np.linspace(-1, 1, 8), "y": np.full(8, 1e200)},
        )
        config = write_config(tmp_path / "config.json", normalize=False, max_iters=5)
        code = cli.main(
            [
                "train",
                "--config",
                str(config),
                "--data",
                str(data_path),
                "--out",
                str(tmp_path / "m.json"),
            ]
        )
        assert code == 3
        assert "non-finite" in capsys.readouterr().err

    def test_predict_without_targets(self, tmp_path):
        data_path, val_path, config = self.prepare(tmp_path)
        model_path = tmp_path / "model.json"
        cli.main(
            [
                "train",
                "--config",
                str(config),
                "--data",
                str(data_path),
                "--val",
                str(val_path),
                "--out",
                str(model_path),
            ]
        )
        unlabeled = tmp_path / "unlabeled.csv"
        dmod.write_csv(unlabeled, {"x0": np.linspace(-1, 1, 9)})
        preds_path = tmp_path / "preds.csv"
        assert (
            cli.main(
                [
                    "predict",
                    "--model",
                    str(model_path),
                    "--data",
                    str(unlabeled),
                    "--out",
                    str(preds_path),
                ]
            )
            == 0
        )
        header = preds_path.read_text().splitlines()[0]
        assert header == "row_index,mean,variance"

    def test_eval_of_zero_nll_construction(self, tmp_path):
        preds_path = tmp_path / "preds.csv"
        y = np.array([0.5, -0.25, 2.0])
        dmod.write_csv(
            preds_path,
            {
                "row_index": np.arange(3.0),
                "mean": y,
                "variance": np.full(3, 1 / (2 * math.pi)),
                "target": y,
                "nll": np.zeros(3),
            },
        )
        report_path = tmp_path / "report.json"
        assert cli.main(["eval", "--preds", str(preds_path), "--out", str(report_path)]) == 0
        report = json.loads(report_path.read_text())
        assert abs(report["nll"]) < 1e-12


class TestCliBenchmarkAndGrid:
    def test_benchmark_cell_counts(self, tmp_path):
        config = tmp_path / "bench.json"
        config.write_text(
            json.dumps(
                {
                    "version": 1,
                    "model": "dbk_exact",
                    "rank": 4,
                    "hidden": [6],
                    "max_iters": 10,
                    "max_epochs": 2,
                    "eval_every": 5,
                    "patience": None,
                    "batch_size": 16,
                    "sizes": [30, 60],
                    "methods": ["dbk_exact", "dense_rbf"],
                    "seeds": [0],
                    "test_n": 20,
                    "val_n": 10,
                }
            )
        )
        out_dir = tmp_path / "bench_out"
        assert cli.main(["benchmark", "--config", str(config), "--out", str(out_dir)]) == 0
        lines = (out_dir / "results.jsonl").read_text().splitlines()
        assert len(lines) == 4
        assert (out_dir / "results.csv").exists()

    def test_kernel_grid_export(self, tmp_path):
        data_path = tmp_path / "train.csv"
        cli.main(["synth", "--n", "60", "--seed", "0", "--out", str(data_path)])
        config = write_config(tmp_path / "config.json", max_iters=20)
        model_path = tmp_path / "model.json"
        cli.main(
            [
                "train",
                "--config",
                str(config),
                "--data",
                str(data_path),
                "--out",
                str(model_path),
            ]
        )
        grid_path = tmp_path / "grid.csv"
        # negative bounds need the --flag=value form to survive argparse
        code = cli.main(
            [
                "kernel-grid",
                "--model",
                str(model_path),
                "--grid=-1:1:5",
                "--out",
                str(grid_path),
            ]
        )
        assert code == 0
        lines = grid_path.read_text().splitlines()
        assert lines[0] == "x1,x2,k"
        assert len(lines) == 26
