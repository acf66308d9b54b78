import csv
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from npode.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from npode.data import load_csv

SMALL = """\
model.feature_width = 4
model.latent_dim = 8
model.num_heads = 2
model.ode_channels = 4
model.solver_end = 0.1
train.iterations = 3
train.trace_every = 1
"""


def run(*argv):
    return main([str(a) for a in argv])


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return path


@pytest.fixture
def spiral_run(tmp_path, small_cfg):
    gen, tr = tmp_path / "gen", tmp_path / "tr"
    assert run("generate", "--seed", 3, "--out", gen) == EXIT_OK
    assert run("train", "--config", small_cfg, "--data", gen / "data.csv", "--out", tr) == EXIT_OK
    return gen, tr


def test_generate_spiral_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert run("generate", "--seed", 7, "--out", tmp_path / name) == EXIT_OK
    for fname in ("data.csv", "data.csv.meta.json", "reference.csv"):
        assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes()
    ds = load_csv(tmp_path / "a" / "data.csv")
    assert (len(ds), ds.m, ds.p) == (200, 1, 2)


def test_generate_synthetic6(tmp_path):
    assert run("generate", "--set", "data.source=synthetic6", "--set", "data.n_points=106",
               "--out", tmp_path) == EXIT_OK
    ds = load_csv(tmp_path / "data.csv")
    assert (len(ds), ds.m, ds.p) == (106, 6, 1)
    assert not (tmp_path / "reference.csv").exists()


def test_negative_noise_is_a_config_error_and_writes_nothing(tmp_path, capsys):
    out = tmp_path / "bad"
    assert run("generate", "--set", "data.noise_std=-0.1", "--out", out) == EXIT_CONFIG
    assert not out.exists()
    assert "noise_std" in capsys.readouterr().err


@pytest.mark.parametrize("argv, needle", [
    (["--set", "model.widht=3"], "model.widht"),
    (["--set", "train.iterations=many"], "train.iterations"),
    (["--set", "noequals"], "noequals"),
])
def test_bad_overrides_exit_with_config_code(tmp_path, capsys, argv, needle):
    assert run("generate", *argv, "--out", tmp_path / "o") == EXIT_CONFIG
    assert needle in capsys.readouterr().err


def test_unknown_key_in_config_file_names_line(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\nrun.seed = 1\nmodel.colour = red\n")
    assert run("generate", "--config", cfg, "--out", tmp_path / "o") == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "model.colour" in err and ":3:" in err


def test_train_writes_split_checkpoint_and_trace(spiral_run):
    _, tr = spiral_run
    assert len(load_csv(tr / "train.csv")) == 150
    assert len(load_csv(tr / "test.csv")) == 50
    assert (tr / "model.json").exists()
    trace = rows(tr / "trace.csv")
    assert len(trace) >= 3
    assert "train.iterations = 3" in (tr / "config.txt").read_text()


def test_train_gp_writes_no_trace(tmp_path):
    assert run("train", "--model", "gp-matern", "--set", "data.n_points=40", "--set", "split.test_count=10",
               "--out", tmp_path) == EXIT_OK
    assert (tmp_path / "model.json").exists()
    assert not (tmp_path / "trace.csv").exists()


def test_evaluate_predict_and_plot_on_spiral(spiral_run, tmp_path):
    gen, tr = spiral_run
    ev = tmp_path / "ev"
    assert run("evaluate", "--checkpoint", tr / "model.json", "--data", tr / "test.csv",
               "--out", ev) == EXIT_OK
    report = rows(ev / "eval.csv")
    assert len(report) == 50
    summary = rows(ev / "summary.csv")
    assert len(summary) == 1 and summary[0]["ci"] == "one_sigma"

    pr = tmp_path / "pr"
    (tmp_path / "in.csv").write_text("x1\n0.5\n1.5\n2.5\n")
    assert run("predict", "--checkpoint", tr / "model.json", "--data", tmp_path / "in.csv", "--out", pr) == EXIT_OK
    pred = rows(pr / "predictions.csv")
    assert len(pred) == 3 and all(float(r["y1_std"]) > 0 for r in pred)

    pl = tmp_path / "pl"
    assert run("plot", "--report", ev / "eval.csv", "--train", tr / "train.csv",
               "--reference", gen / "reference.csv", "--out", pl) == EXIT_OK
    root = ET.parse(pl / "plot.svg").getroot()
    assert root.tag.endswith("svg")
    assert len(root.findall(".//{http://www.w3.org/2000/svg}polygon")) == 2
    series = rows(pl / "plot_series.csv")
    by_x = {float(r["x1"]): r for r in report}
    for r in series:
        src = by_x[float(r["x"])]
        mean, std = float(src["y1_mean"]), float(src["y1_std"])
        assert float(r["y1_band_low"]) == pytest.approx(mean - std, abs=1e-12)
        assert float(r["y1_band_high"]) == pytest.approx(mean + std, abs=1e-12)


def test_evaluate_dimension_mismatch_exits_with_data_code(spiral_run, tmp_path, capsys):
    _, tr = spiral_run
    (tmp_path / "wrong.csv").write_text("x1,x2,y1\n1,2,3\n4,5,6\n")
    assert run("evaluate", "--checkpoint", tr / "model.json", "--data", tmp_path / "wrong.csv",
               "--out", tmp_path / "ev") == EXIT_DATA
    assert "expects 1 inputs" in capsys.readouterr().err


def test_nested_sweep_one_summary_row_per_size(tmp_path):
    tr, ev = tmp_path / "tr", tmp_path / "ev"
    assert run("train", "--model", "gp-poly", "--set", "data.source=synthetic6",
               "--set", "data.n_points=106", "--set", "split.test_count=20",
               "--set", "split.nested_train_sizes=30,50,80", "--out", tr) == EXIT_OK
    ckpts = [tr / f"size_{k}" / "model.json" for k in (30, 50, 80)]
    assert run("evaluate", "--checkpoint", *ckpts, "--data", tr / "test.csv", "--out", ev) == EXIT_OK
    summary = rows(ev / "summary.csv")
    assert [r["label"] for r in summary] == ["size_30", "size_50", "size_80"]
    assert all(r["ci"] == "ci95" and r["mape"] for r in summary)
    assert len(rows(ev / "eval_size_30.csv")) == 20

    pl = tmp_path / "pl"
    assert run("plot", "--report", ev / "eval_size_80.csv", "--out", pl) == EXIT_OK
    ET.parse(pl / "plot.svg")
    assert len(rows(pl / "plot_series.csv")) == 20


def test_missing_data_file_is_a_data_error(tmp_path):
    assert run("train", "--data", tmp_path / "absent.csv", "--out", tmp_path / "o") == EXIT_DATA


def test_params_prints_both_tables(tmp_path, capsys):
    assert run("params", "--out", tmp_path) == EXIT_OK
    text = capsys.readouterr().out
    for needle in ("99456", "442368", "384", "49536", "147456", "4.45x"):
        assert needle in text
    table = rows(tmp_path / "params.csv")
    totals = {r["model"]: int(r["count"]) for r in table if r["layer"] == "total"}
    assert sorted(totals.values()) == [99456, 442368]


def test_params_single_model(tmp_path, capsys):
    assert run("params", "--model", "npode", "--out", tmp_path) == EXIT_OK
    text = capsys.readouterr().out
    assert "99456" in text and "442368" not in text


def test_module_entry_point_runs(tmp_path):
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "npode", "params", "--out", str(tmp_path)],
                         capture_output=True, text=True, timeout=60)
    assert res.returncode == 0 and "99456" in res.stdout


def test_train_is_deterministic_on_disk(tmp_path, small_cfg):
    for name in ("a", "b"):
        assert run("train", "--config", small_cfg, "--seed", 5, "--set", "data.n_points=60",
                   "--set", "split.test_count=10", "--out", tmp_path / name) == EXIT_OK
    assert (tmp_path / "a" / "model.json").read_bytes() == (tmp_path / "b" / "model.json").read_bytes()
    a = load_csv(tmp_path / "a" / "test.csv")
    assert np.array_equal(a.X, load_csv(tmp_path / "b" / "test.csv").X)
