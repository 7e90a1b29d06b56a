import json
import subprocess
import sys

import numpy as np
import pytest

from gampclass.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from gampclass.data import Dataset, read_dataset, write_libsvm


@pytest.fixture(scope="module")
def synth_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    rc = main(["synth", "--N", "100", "--M", "80", "--K", "5", "--feature-var", "0.0125",
               "--v", "1e-4", "--out", str(d / "train.svm"), "--test-out", str(d / "test.svm"),
               "--test-size", "200", "--seed", "3"])
    assert rc == EXIT_OK
    return d


def test_synth_deterministic(tmp_path, synth_files):
    out = tmp_path / "again.svm"
    main(["synth", "--N", "100", "--M", "80", "--K", "5", "--feature-var", "0.0125", "--v", "1e-4",
          "--out", str(out), "--test-out", str(tmp_path / "t.svm"), "--test-size", "200", "--seed", "3"])
    assert out.read_bytes() == (synth_files / "train.svm").read_bytes()
    truth = json.loads((tmp_path / "again.svm.truth.json").read_text())
    assert np.count_nonzero(truth["w_true"]) == 5


def test_train_predict_flow(tmp_path, synth_files, capsys):
    model = tmp_path / "m.json"
    report = tmp_path / "r.json"
    rc = main(["train", "--data", str(synth_files / "train.svm"), "--test", str(synth_files / "test.svm"),
               "--model", str(model), "--pi", "0.05", "--tune", "pi,v", "--report-json", str(report)])
    assert rc == EXIT_OK
    rep = json.loads(report.read_text())
    for key in ("accuracy", "test_error", "density", "K_hat", "total_runtime",
                "post_tuning_runtime", "converged"):
        assert key in rep
    assert 0 <= rep["post_tuning_runtime"] <= rep["total_runtime"]
    assert rep["accuracy"] > 0.9
    preds = tmp_path / "p.csv"
    assert main(["predict", "--model", str(model), "--data", str(synth_files / "test.svm"),
                 "--out", str(preds)]) == EXIT_OK
    lines = preds.read_text().splitlines()
    assert lines[0] == "label,prob_positive" and len(lines) == 201
    test = read_dataset(synth_files / "test.svm")
    labels = np.array([float(l.split(",")[0]) for l in lines[1:]])
    assert abs(np.mean(labels != test.y) - rep["test_error"]) < 1e-12


def test_train_is_deterministic(tmp_path, synth_files):
    outs = []
    for name in ("a.json", "b.json"):
        main(["train", "--data", str(synth_files / "train.svm"), "--model", str(tmp_path / name),
              "--activation", "logistic", "--prior", "laplacian", "--mode", "max_sum",
              "--lambda1", "0.5"])
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]


def test_xval_report(tmp_path, synth_files):
    report = tmp_path / "x.json"
    rc = main(["xval", "--data", str(synth_files / "train.svm"), "--activation", "logistic",
               "--prior", "laplacian", "--mode", "max_sum", "--grid", "lambda1=0.1:10:3",
               "--grid", "alpha=1,4", "--folds", "2", "--report-json", str(report)])
    assert rc == EXIT_OK
    rep = json.loads(report.read_text())
    assert rep["n_classifiers"] == 2 * 3 * 2
    assert 0 <= rep["post_tuning_runtime"] <= rep["total_runtime"]


def test_usage_errors(tmp_path, synth_files):
    train = str(synth_files / "train.svm")
    assert main(["bogus"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE
    assert main(["train", "--data", train, "--model", str(tmp_path / "m.json"),
                 "--mode", "max_sum"]) == EXIT_USAGE
    assert main(["predict", "--model", str(tmp_path / "nope.json"), "--data", train]) == EXIT_USAGE
    assert main(["train", "--data", str(tmp_path / "missing.svm"), "--model", "m.json"]) == EXIT_USAGE
    assert main(["xval", "--data", train, "--grid", "nonsense=1,2"]) == EXIT_USAGE


def test_bad_worker_count(monkeypatch, tmp_path, synth_files):
    monkeypatch.setenv("GAMPCLASS_WORKERS", "abc")
    assert main(["train", "--data", str(synth_files / "train.svm"),
                 "--model", str(tmp_path / "m.json")]) == EXIT_USAGE
    monkeypatch.setenv("GAMPCLASS_WORKERS", "0")
    assert main(["train", "--data", str(synth_files / "train.svm"),
                 "--model", str(tmp_path / "m.json")]) == EXIT_USAGE


def test_numeric_failure_exit_code_and_trace(tmp_path, synth_files):
    d = read_dataset(synth_files / "train.svm")
    X = d.X.toarray() if hasattr(d.X, "toarray") else np.asarray(d.X)
    big = tmp_path / "big.svm"
    write_libsvm(big, Dataset(X * 1e160, d.y))
    trace = tmp_path / "trace.csv"
    with np.errstate(all="ignore"):
        rc = main(["train", "--data", str(big), "--model", str(tmp_path / "m.json"),
                   "--prior", "gaussian", "--trace", str(trace)])
    assert rc == EXIT_NUMERIC
    assert trace.exists() and trace.read_text().count("\n") >= 2


def test_config_file_supplies_defaults(tmp_path, synth_files):
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"[train]\ndata = {synth_files / 'train.svm'}\nprior = gaussian\nmax-iter = 50\n")
    model = tmp_path / "m.json"
    assert main(["--config", str(cfg), "train", "--model", str(model)]) == EXIT_OK
    assert json.loads(model.read_text())["params"]["prior"] == "gaussian"
    cfg.write_text("[train]\nno_such_key = 1\n")
    assert main(["--config", str(cfg), "train", "--model", str(model)]) == EXIT_USAGE


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gampclass.cli", "reproduce", "fig9",
                           "--seed", "1", "--out", str(tmp_path / "x.csv")], capture_output=True)
    assert proc.returncode == EXIT_USAGE


def test_sweep_writes_table(tmp_path):
    out = tmp_path / "sweep.csv"
    rc = main(["sweep", "--points", "0.4:0.05,0.05:0.1", "--mc-samples", "10000",
               "--se-iters", "10", "--seed", "0", "--out", str(out)])
    assert rc == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0].startswith("M_over_N,K_over_N")
    assert len(lines) == 3
    assert lines[2].endswith(",1")  # K/N > M/N flagged ill-posed
