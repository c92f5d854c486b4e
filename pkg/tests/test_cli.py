import csv
import json
import math

import numpy as np
import pytest

from concept_forge.cli import main
from concept_forge.io import load_checkpoint, read_matrix, write_matrix

SMALL = """
world: {n: 2, d_z: 3, d_x: 4, mixing: linear}
sampler: {samples_per_env: 400}
train: {epochs: 3, l1_weight: 1e-4}
eval: {n_samples: 300}
steer: {d_act: 8, n_others: 2, n_pairs: 50, n_queries: 40, d_emb: 4}
seeds: [0]
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(SMALL)
    return str(p)


def run(*argv):
    return main([str(a) for a in argv])


def test_pipeline_commands(tmp_path, cfg, capsys):
    out = tmp_path / "run"
    for cmd in ("gen", "sample", "train", "eval"):
        assert run(cmd, "--config", cfg, "--out", out) == 0, cmd
    assert (out / "world.json").exists() and (out / "data" / "X_e1.cfmx").exists()
    stats = json.loads((out / "data" / "stats.json").read_text())
    assert len(stats["environments"]) == 3
    assert all(s["accepted"] == 400 for s in stats["environments"])

    model, header = load_checkpoint(out / "model.ckpt")
    assert header["architecture"]["n"] == 2 and header["seed"] == 0
    with open(out / "history.csv") as fh:
        hist = list(csv.DictReader(fh))
    assert [int(r["epoch"]) for r in hist] == [0, 1, 2, 3]

    rep = json.loads((out / "eval.json").read_text())
    assert math.isfinite(rep["r2"]) and math.isfinite(rep["mcc"])
    with open(out / "results.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and rows[0]["mixing"] == "linear"

    assert run("plot", "--config", cfg, "--out", out, "--input", out / "history.csv") == 0
    svg = (out / "history.svg").read_text()
    assert svg.lstrip().startswith("<?xml") and svg.rstrip().endswith("</svg>")
    assert run("plot", "--config", cfg, "--out", out, "--input", out / "results.csv") == 0


def test_identify(tmp_path, cfg):
    out = tmp_path / "id"
    assert run("gen", "--config", cfg, "--out", out, "--seed", 3) == 0
    assert run("identify", "--config", cfg, "--out", out, "--seed", 3) == 0
    rec = json.loads((out / "identify.json").read_text())
    assert rec["incidence_match"] is True and rec["seed"] == 3


def test_steer_csv_format(tmp_path, cfg):
    out = tmp_path / "st"
    assert run("steer", "--config", cfg, "--out", out, "--format", "csv") == 0
    with open(out / "steer.csv") as fh:
        row = next(csv.DictReader(fh))
    assert set(json.loads(row["mean_vector"])) >= {"concept_shift", "orthogonal_leakage"}
    # feeding the written pairs back gives the same report
    out2 = tmp_path / "st2"
    assert run("steer", "--config", cfg, "--out", out2, "--format", "csv",
               "--pairs", out / "pairs.csv") == 0
    assert (out2 / "steer.csv").read_text() == (out / "steer.csv").read_text()


def test_grid_empty_seeds(tmp_path, cfg):
    p = tmp_path / "empty.yaml"
    p.write_text(SMALL.replace("seeds: [0]", "seeds: []"))
    out = tmp_path / "g"
    assert run("grid", "--config", p, "--out", out) == 0
    assert len((out / "results.csv").read_text().splitlines()) == 1
    assert json.loads((out / "summary.json").read_text())["rows"][0]["n_seeds"] == 0


def test_grid_one_seed(tmp_path, cfg):
    out = tmp_path / "g"
    assert run("grid", "--config", cfg, "--out", out, "--seed", 2) == 0
    with open(out / "results.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["seed"] for r in rows] == ["2"] and rows[0]["status"] == "ok"


def test_invalid_config_exit_2_writes_nothing(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("world: {n: 2, shape: round}\n")
    out = tmp_path / "never"
    assert run("gen", "--config", p, "--out", out) == 2
    assert not out.exists()


def test_bad_arguments_exit_2(tmp_path):
    assert run("gen", "--format", "xml", "--out", tmp_path / "x") == 2
    assert run("frobnicate") == 2


def test_missing_input_exit_1(tmp_path, cfg):
    assert run("train", "--config", cfg, "--out", tmp_path / "empty") == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_3(tmp_path, cfg):
    out = tmp_path / "div"
    assert run("gen", "--config", cfg, "--out", out) == 0
    assert run("sample", "--config", cfg, "--out", out) == 0
    X = read_matrix(out / "data" / "X_e1.cfmx")
    X[0, 0] = np.inf
    write_matrix(out / "data" / "X_e1.cfmx", X)
    assert run("train", "--config", cfg, "--out", out) == 3


def test_log_env_var(tmp_path, cfg, monkeypatch):
    monkeypatch.setenv("CONCEPT_FORGE_LOG", "debug")
    assert run("gen", "--config", cfg, "--out", tmp_path / "l") == 0
