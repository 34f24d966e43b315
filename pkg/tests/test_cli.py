import json

import numpy as np
import pytest

from wpo_score import io
from wpo_score.checks import random_model
from wpo_score.cli import EXIT_NUMERIC, EXIT_OK, EXIT_PROPERTY, EXIT_USAGE, main
from wpo_score.datasets import read_csv, write_csv
from wpo_score.rng import stream


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture
def moons(tmp_path):
    path = tmp_path / "moons.csv"
    assert run("datagen", "--dataset", "two_moons", "--n", 400, "--noise", 0.05, "--seed", 1, "--out", path) == EXIT_OK
    return path


@pytest.fixture
def model_file(tmp_path):
    path = tmp_path / "model.json"
    io.save_model(random_model(stream(9, "check", 70), 2, 5), path)
    return path


def test_datagen(tmp_path, moons):
    assert read_csv(moons).shape == (400, 2)
    again = tmp_path / "again.csv"
    run("datagen", "--dataset", "two_moons", "--n", 400, "--noise", 0.05, "--seed", 1, "--out", again)
    assert again.read_bytes() == moons.read_bytes()
    small = tmp_path / "small.csv"
    run("datagen", "--dataset", "two_moons", "--n", 10, "--out", small)
    assert len(small.read_text().splitlines()) == 10
    assert run("datagen", "--dataset", "nope", "--n", 10, "--out", small) == EXIT_USAGE


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_and_exit_codes(tmp_path, moons):
    out = tmp_path / "m.json"
    report = tmp_path / "r.csv"
    args = ["train", "--data", moons, "--centers", 8, "--provider", "table", "--steps", 20, "--lr", 0.01]
    assert run(*args, "--out", out, "--report", report, "--eval-every", 10) == EXIT_OK
    assert report.read_text().splitlines()[0] == "step,loss,nll,seconds"
    out2 = tmp_path / "m2.json"
    run(*args, "--out", out2)
    assert out.read_bytes() == out2.read_bytes()
    assert run("train", "--centers", 8, "--out", out) == EXIT_USAGE
    assert run("train", "--data", tmp_path / "missing.csv", "--centers", 8, "--out", out) == EXIT_USAGE
    zero = tmp_path / "zero.json"
    assert run("train", "--data", moons, "--centers", 8, "--provider", "table", "--steps", 0, "--out", zero) == EXIT_OK
    assert io.load_model(zero).n_centers == 8
    bad = tmp_path / "bad.csv"
    write_csv(np.array([[1e300, 1e300], [-1e300, 0.0]]), bad)
    assert run("train", "--data", bad, "--centers", 2, "--provider", "table", "--steps", 5, "--out", out) == EXIT_NUMERIC


def test_sample(tmp_path, moons, model_file):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("sample", "--model", model_file, "--n", 300, "--seed", 2, "--out", a) == EXIT_OK
    run("sample", "--model", model_file, "--n", 300, "--seed", 2, "--out", b)
    assert a.read_bytes() == b.read_bytes() and read_csv(a).shape == (300, 2)
    assert run("sample", "--model", model_file, "--n", 0, "--out", a) == EXIT_OK
    assert a.read_text() == ""
    assert run("sample", "--model", model_file, "--n", 50, "--mode", "sde", "--steps", 20, "--out", a) == EXIT_OK
    emp = ["sample", "--score", "empirical", "--train-data", moons, "--n", 50, "--mode", "sde", "--steps", 20]
    assert run(*emp, "--out", a) == EXIT_OK
    assert run(*emp, "--eps-stop", 0, "--out", a) == EXIT_USAGE
    assert run("sample", "--score", "empirical", "--n", 5, "--mode", "sde", "--out", a) == EXIT_USAGE


def test_density_quadrature(tmp_path, model_file):
    out = tmp_path / "d.csv"
    assert run("density", "--model", model_file, "--grid=-12,12,-12,12,241,241", "--out", out) == EXIT_OK
    rows = np.loadtxt(out, delimiter=",", skiprows=1)
    assert rows.shape == (241 * 241, 3)
    assert rows[:, 2].sum() * 0.1 * 0.1 == pytest.approx(1.0, abs=1e-3)
    assert run("density", "--model", model_file, "--grid", "0,1,0,1,1,1", "--out", out) == EXIT_OK
    assert len(out.read_text().splitlines()) == 2
    assert run("density", "--model", model_file, "--grid", "0,1,0,1,0,5", "--out", out) == EXIT_USAGE
    m3 = tmp_path / "m3.json"
    io.save_model(random_model(stream(1, "check", 71), 3, 2), m3)
    assert run("density", "--model", m3, "--grid", "0,1,0,1,2,2", "--out", out) == EXIT_USAGE


def test_ellipses(tmp_path, model_file):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("ellipses", "--model", model_file, "--k", 3, "--seed", 1, "--out", a) == EXIT_OK
    run("ellipses", "--model", model_file, "--k", 3, "--seed", 1, "--out", b)
    assert a.read_bytes() == b.read_bytes() and len(a.read_text().splitlines()) == 4
    assert run("ellipses", "--model", model_file, "--k", 6, "--out", a) == EXIT_USAGE


def test_eval(tmp_path, moons, model_file):
    gen = tmp_path / "gen.csv"
    run("sample", "--model", model_file, "--n", 200, "--out", gen)
    test = tmp_path / "test.csv"
    run("datagen", "--dataset", "two_moons", "--n", 300, "--noise", 0.05, "--seed", 2, "--out", test)
    out = tmp_path / "rep.json"
    args = ["eval", "--model", model_file, "--test", test, "--train", moons, "--gen", gen, "--out", out]
    assert run(*args) == EXIT_OK
    rep = json.loads(out.read_text())
    assert {"nll", "mmd2", "nn_median_ratio", "sizes"} <= set(rep)
    assert run("eval", "--metrics", "", "--out", out) == EXIT_OK
    assert json.loads(out.read_text()) == {}
    assert run("eval", "--metrics", "mmd", "--test", moons, "--out", out) == EXIT_USAGE
    assert run("eval", "--metrics", "bogus", "--out", out) == EXIT_USAGE
    same = ["eval", "--metrics", "nn", "--test", moons, "--train", moons, "--gen", gen, "--out", out]
    assert run(*same) == EXIT_USAGE


def test_compare_earlystop(tmp_path, moons, model_file):
    out = tmp_path / "cmp.csv"
    base = ["compare-earlystop", "--data", moons, "--test", moons, "--model", model_file, "--out", out]
    assert run(*base) == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0] == "model,eps,nll,mmd2" and len(lines) == 5
    assert run(*base, "--eps", "") == EXIT_USAGE


def test_check(capsys):
    assert run("check", "--suite", "equiv,heat") == EXIT_OK
    assert run("check", "--suite", "hjb", "--corrupt") == EXIT_PROPERTY
    assert "failing properties" in capsys.readouterr().out
    assert run("check", "--suite", "bogus") == EXIT_USAGE


def test_config_replay(tmp_path, model_file):
    flags = tmp_path / "flags.csv"
    replay = tmp_path / "replay.csv"
    assert run("density", "--model", model_file, "--grid=-2,2,-2,2,5,5", "--s", 0.3, "--out", flags) == EXIT_OK
    cfg = tmp_path / "run.json"
    doc = {"command": "density", "model": str(model_file), "grid": "-2,2,-2,2,5,5", "s": 0.3, "out": str(replay)}
    cfg.write_text(json.dumps(doc))
    assert run("--config", cfg) == EXIT_OK
    assert flags.read_bytes() == replay.read_bytes()
    cfg.write_text(json.dumps({**doc, "colour": "red"}))
    assert run("--config", cfg) == EXIT_USAGE


def test_no_command():
    assert main([]) == EXIT_USAGE
