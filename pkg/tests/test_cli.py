import json

import numpy as np
import pytest

from samn.cli import EXIT_DATA, EXIT_DIVERGED, EXIT_OK, EXIT_USAGE, main
from samn.harness.synthetic import gaussian_blobs


@pytest.fixture
def blobs_csv(tmp_path):
    ds = gaussian_blobs(n_samples=60, seed=2)
    path = tmp_path / "blobs.csv"
    lines = ["a,b,label"] + [f"{x:.6f},{y:.6f},{ds.class_names[c]}" for (x, y), c in zip(ds.features, ds.labels)]
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def binary_csv(tmp_path):
    rng = np.random.default_rng(0)
    y = np.repeat([0, 1], 25)
    x = rng.normal(size=(50, 2)) + 4 * y[:, None]
    path = tmp_path / "bin.csv"
    path.write_text("".join(f"{a},{b},{'pos' if c else 'neg'}\n" for (a, b), c in zip(x, y)))
    return path


@pytest.mark.parametrize("model", ["samn", "cenet"])
def test_train_then_predict(tmp_path, blobs_csv, capsys, model):
    out = tmp_path / "out"
    code = main(["train", "--dataset", str(blobs_csv), "--label-col", "label", "--model", model,
                 "--epochs", "5", "--out", str(out)])
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert 0 <= report["accuracy"] <= 1 and report["best_epoch"] >= 1
    assert (out / f"blobs_{model}_seed1.csv").exists()

    code = main(["predict", "--checkpoint", report["checkpoint"], "--input", str(blobs_csv), "--label-col", "label"])
    assert code == EXIT_OK
    captured = capsys.readouterr()
    preds = captured.out.split()
    assert len(preds) == 60 and set(preds) <= {"blob0", "blob1", "blob2"}
    assert "accuracy" in captured.err


def test_predict_unlabeled_rows(tmp_path, blobs_csv, capsys):
    out = tmp_path / "out"
    main(["train", "--dataset", str(blobs_csv), "--label-col", "label", "--epochs", "2", "--out", str(out)])
    ckpt = json.loads(capsys.readouterr().out)["checkpoint"]
    rows = tmp_path / "rows.csv"
    rows.write_text("0.0,0.0\n6.0,0.0\n")
    assert main(["predict", "--checkpoint", ckpt, "--input", str(rows)]) == EXIT_OK
    assert len(capsys.readouterr().out.split()) == 2


@pytest.mark.parametrize("model", ["svc", "dnmsvm"])
def test_binary_models(tmp_path, binary_csv, capsys, model):
    code = main(["train", "--dataset", str(binary_csv), "--model", model, "--epochs", "3", "--out", str(tmp_path)])
    assert code == EXIT_OK
    ckpt = json.loads(capsys.readouterr().out)["checkpoint"]
    assert main(["predict", "--checkpoint", ckpt, "--input", str(binary_csv)]) == EXIT_OK
    assert set(capsys.readouterr().out.split()) <= {"neg", "pos"}


def test_gridsearch(binary_csv, capsys):
    assert main(["gridsearch", "--dataset", str(binary_csv), "--folds", "3"]) == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    assert result["cv_accuracy"] > 0.9


def test_experiment(tmp_path, blobs_csv, capsys):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({
        "dataset": str(blobs_csv), "label_col": "label", "epochs": 3, "seeds": [1, 2], "out_dir": str(tmp_path / "r"),
    }))
    assert main(["experiment", "--config", str(cfg)]) == EXIT_OK
    assert "| blobs | samn |" in capsys.readouterr().out
    assert (tmp_path / "r" / "blobs_samn.csv").exists()


class TestExitCodes:
    def test_usage(self):
        with pytest.raises(SystemExit) as info:
            main(["train", "--model", "forest"])
        assert info.value.code == EXIT_USAGE

    def test_bad_config_is_usage(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"dataset": "x.csv", "epochs": 0}')
        assert main(["experiment", "--config", str(cfg)]) == EXIT_USAGE

    def test_missing_file(self, tmp_path):
        assert main(["train", "--dataset", str(tmp_path / "none.csv")]) == EXIT_DATA

    def test_multiclass_svc(self, blobs_csv):
        assert main(["train", "--dataset", str(blobs_csv), "--label-col", "label", "--model", "svc"]) == EXIT_DATA

    def test_bad_checkpoint(self, tmp_path, blobs_csv):
        junk = tmp_path / "junk.npz"
        junk.write_bytes(b"not a checkpoint")
        assert main(["predict", "--checkpoint", str(junk), "--input", str(blobs_csv)]) == EXIT_DATA

    def test_divergence(self, tmp_path, blobs_csv):
        code = main(["train", "--dataset", str(blobs_csv), "--label-col", "label", "--lr", "1e308",
                     "--batch-size", "8", "--epochs", "3", "--out", str(tmp_path)])
        assert code == EXIT_DIVERGED
