import csv
import json

import numpy as np
import pytest

import retrocast as rc
from retrocast.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def data_csv(workdir):
    out = workdir / "synthdata"
    code = main(["synth", "--out", str(out), "--total-length", "1200",
                 "--pattern-length", "60", "--n-patterns", "2", "--seed", "3"])
    assert code == 0
    return out / "series.csv"


def model_flags(data_csv, out, **over):
    flags = {
        "--lookback": "16", "--horizon": "4", "--periods": "1,2",
        "--m": "3", "--max-epochs": "2", "--seed": "0",
    }
    flags.update({k: str(v) for k, v in over.items()})
    argv = ["--dataset", str(data_csv), "--out", str(out)]
    for k, v in flags.items():
        argv.extend([k, v])
    return argv


@pytest.fixture(scope="module")
def trained(workdir, data_csv):
    out = workdir / "train"
    code = main(["train"] + model_flags(data_csv, out))
    assert code == 0
    return out


class TestSynth:
    def test_outputs(self, workdir, data_csv):
        out = data_csv.parent
        series = rc.load_csv(data_csv, rc.CsvSchema(timestamp_column=0))
        assert series.n_steps == 1200
        annotations = rc.read_annotations(out / "annotations.csv")
        assert len(annotations) == 2 + 2  # one train occurrence + one test, per pattern
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "synth"
        assert manifest["dataset"]["synthetic"]["total_length"] == 1200


class TestTrain:
    def test_output_files(self, trained):
        for name in ("checkpoint.rc", "history.csv", "fingerprint.json",
                     "manifest.json"):
            assert (trained / name).is_file(), name

    def test_checkpoint_carries_fingerprint(self, trained):
        model, metric, extra = rc.load_checkpoint(trained / "checkpoint.rc")
        assert model.lookback == 16 and model.horizon == 4
        assert metric is None  # pearson is not stored
        fingerprint = json.loads((trained / "fingerprint.json").read_text())
        assert extra["fingerprint"] == fingerprint
        assert fingerprint["variant"] == "full"
        assert fingerprint["m"] == 3 and fingerprint["seed"] == 0

    def test_history_has_no_wall_times(self, trained):
        header = (trained / "history.csv").read_text().splitlines()[0]
        assert header == "epoch,train_loss,val_loss"

    def test_matches_library_api(self, trained, data_csv):
        raw = rc.load_csv(data_csv, rc.CsvSchema(timestamp_column=0))
        cfg = rc.ExperimentConfig(lookback=16, horizon=4, periods=(1, 2), m=3,
                                  max_epochs=2, seeds=(0,)).validate()
        want = rc.run_single(raw, cfg, seed=0)
        _, _, extra = rc.load_checkpoint(trained / "checkpoint.rc")
        assert extra["val_mse"] == want.val_mse
        assert extra["epochs_run"] == want.epochs_run

    def test_manifest_contents(self, trained, data_csv):
        manifest = json.loads((trained / "manifest.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["seeds"] == [0]
        assert manifest["config"]["m"] == 3
        assert manifest["dataset"]["path"] == str(data_csv)
        assert len(manifest["dataset"]["sha256"]) == 64
        assert "--lookback" in manifest["argv"]
        assert set(manifest["timing"]) == {
            "precompute_seconds", "train_seconds", "inference_seconds",
            "epoch_seconds",
        }

    def test_no_retrieval_flag_sets_variant(self, workdir, data_csv):
        out = workdir / "train_nr"
        code = main(["train"] + model_flags(data_csv, out) + ["--no-retrieval"])
        assert code == 0
        fingerprint = json.loads((out / "fingerprint.json").read_text())
        assert fingerprint["variant"] == "no_retrieval"

    def test_invalid_flag_value(self, workdir, data_csv, capsys):
        out = workdir / "train_bad"
        code = main(["train"] + model_flags(data_csv, out, **{"--m": "0"}))
        assert code == 2
        assert "error: invalid m: 0" in capsys.readouterr().err

    def test_missing_dataset(self, workdir, capsys):
        code = main(["train", "--out", str(workdir / "x"), "--lookback", "16"])
        assert code == 2
        assert "error: invalid data_path" in capsys.readouterr().err

    def test_config_file_with_flag_precedence(self, workdir, data_csv):
        ini = workdir / "exp.ini"
        ini.write_text(
            "[model]\nlookback = 16\nhorizon = 4\nperiods = 1 2\n"
            "[retrieval]\nm = 4\ntau = 0.3\n"
            "[train]\nmax_epochs = 1\n"
            "[run]\nseeds = 0\n"
        )
        out = workdir / "train_cfg"
        code = main(["train", "--config", str(ini), "--dataset", str(data_csv),
                     "--out", str(out), "--m", "2"])
        assert code == 0
        fingerprint = json.loads((out / "fingerprint.json").read_text())
        assert fingerprint["m"] == 2      # flag beats file
        assert fingerprint["tau"] == 0.3  # file beats default


class TestEvaluate:
    def run_eval(self, data_csv, trained, out, extra_flags=()):
        return main(["evaluate", "--dataset", str(data_csv), "--out", str(out),
                     "--checkpoint", str(trained / "checkpoint.rc"),
                     "--lookback", "16", "--horizon", "4", "--periods", "1,2",
                     "--m", "3", "--seed", "0"] + list(extra_flags))

    def test_reproduces_training_run_test_mse(self, workdir, data_csv, trained):
        out = workdir / "eval"
        assert self.run_eval(data_csv, trained, out) == 0
        with open(out / "metrics.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        raw = rc.load_csv(data_csv, rc.CsvSchema(timestamp_column=0))
        cfg = rc.ExperimentConfig(lookback=16, horizon=4, periods=(1, 2), m=3,
                                  max_epochs=2, seeds=(0,)).validate()
        want = rc.run_single(raw, cfg, seed=0)
        assert float(rows[0]["test_mse"]) == want.test_mse
        assert float(rows[0]["test_mae"]) == want.test_mae
        assert int(rows[0]["n_test_windows"]) == want.n_test_windows

    def test_rerun_is_byte_identical(self, workdir, data_csv, trained):
        a = workdir / "eval_a"
        b = workdir / "eval_b"
        assert self.run_eval(data_csv, trained, a) == 0
        assert self.run_eval(data_csv, trained, b) == 0
        assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
        assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()

    def test_mismatched_field_is_named(self, workdir, data_csv, trained, capsys):
        out = workdir / "eval_mismatch"
        code = self.run_eval(data_csv, trained, out, ["--tau", "0.7"])
        assert code == 2
        err = capsys.readouterr().err
        assert "error:" in err and "tau" in err

    def test_training_fields_adopted_from_checkpoint(self, workdir, data_csv,
                                                     trained):
        out = workdir / "eval_adopt"
        code = self.run_eval(data_csv, trained, out, ["--max-epochs", "9"])
        assert code == 0

    def test_multiple_checkpoints_one_row_each(self, workdir, data_csv, trained):
        out = workdir / "eval_multi"
        ckpt = str(trained / "checkpoint.rc")
        code = main(["evaluate", "--dataset", str(data_csv), "--out", str(out),
                     "--checkpoint", ckpt, ckpt,
                     "--lookback", "16", "--horizon", "4", "--periods", "1,2",
                     "--m", "3", "--seed", "0"])
        assert code == 0
        with open(out / "metrics.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        assert rows[0] == rows[1]


class TestStudies:
    def test_ablate_outputs(self, workdir, data_csv):
        out = workdir / "ablate"
        code = main(["ablate"] + model_flags(data_csv, out, **{"--max-epochs": 1})
                    + ["--variants", "full,no_retrieval"])
        assert code == 0
        metrics_head = (out / "metrics.csv").read_text().splitlines()[0]
        timing_head = (out / "timings.csv").read_text().splitlines()[0]
        assert "seconds" not in metrics_head
        assert "precompute_seconds" in timing_head
        with open(out / "summary.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["variant"] for r in rows] == ["full", "no_retrieval"]

    def test_stride_outputs(self, workdir, data_csv):
        out = workdir / "stride"
        code = main(["stride"] + model_flags(data_csv, out, **{"--max-epochs": 1})
                    + ["--strides", "1,4"])
        assert code == 0
        mse_head = (out / "stride_mse.csv").read_text().splitlines()[0]
        assert mse_head == "stride,test_mse_mean,test_mae_mean,seeds"
        timing_lines = (out / "stride_timings.csv").read_text().splitlines()
        assert timing_lines[0] == "stride,precompute_seconds_mean"
        assert len(timing_lines) == 3

    def test_gridsearch_outputs(self, workdir, data_csv):
        out = workdir / "grid"
        code = main(["gridsearch"] + model_flags(data_csv, out,
                                                 **{"--max-epochs": 1})
                    + ["--grid-lrs", "0.001,0.01", "--grid-lookbacks", "8,16",
                       "--grid-ms", "3"])
        assert code == 0
        with open(out / "grid.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4
        best = json.loads((out / "best.json").read_text())
        want = min(rows, key=lambda r: float(r["val_mse_mean"]))
        assert best["val_mse_mean"] == float(want["val_mse_mean"])
        assert (out / "metrics.csv").is_file() and (out / "timings.csv").is_file()

    def test_diagnose_outputs(self, workdir, data_csv):
        out = workdir / "diag"
        code = main(["diagnose"] + model_flags(data_csv, out,
                                               **{"--max-epochs": 1}))
        assert code == 0
        summary = json.loads((out / "diagnostics_summary.json").read_text())
        assert summary["n_records"] >= 3
        assert -1.0 <= summary["spearman_key_value"] <= 1.0
        n_lines = len((out / "diagnostics.csv").read_text().splitlines())
        assert n_lines == summary["n_records"] + 1

    def test_similarity_study_outputs(self, workdir, data_csv):
        out = workdir / "sim"
        code = main(["similarity-study"]
                    + model_flags(data_csv, out, **{"--max-epochs": 1})
                    + ["--metrics", "pearson,neg_l2"])
        assert code == 0
        with open(out / "summary.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["metric"] for r in rows] == ["pearson", "neg_l2"]

    def test_similarity_study_rejects_unknown_metric(self, workdir, data_csv,
                                                     capsys):
        out = workdir / "sim_bad"
        code = main(["similarity-study"] + model_flags(data_csv, out)
                    + ["--metrics", "pearson,dtw"])
        assert code == 2
        assert "invalid metric" in capsys.readouterr().err

    def test_training_length_study_outputs(self, workdir, data_csv):
        out = workdir / "tls"
        code = main(["training-length-study"]
                    + model_flags(data_csv, out, **{"--max-epochs": 1})
                    + ["--fractions", "0.5,1.0"])
        assert code == 0
        with open(out / "fractions.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [(r["fraction"], r["variant"]) for r in rows] == [
            ("0.5", "full"), ("0.5", "no_retrieval"),
            ("1.0", "full"), ("1.0", "no_retrieval"),
        ]


class TestParser:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert "retrocast" in capsys.readouterr().out

    def test_unknown_subcommand(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["transmogrify"])
        assert exc.value.code == 2

    def test_rare_pattern_rejects_unknown_kind(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["rare-pattern-study", "--kind", "sinusoid"])
        assert exc.value.code == 2

    def test_seed_and_seeds_mutually_exclusive(self, workdir, data_csv, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--dataset", str(data_csv), "--seed", "0",
                  "--seeds", "0,1"])
        assert exc.value.code == 2
