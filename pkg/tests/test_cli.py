import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from ignn_solver.bench import BenchmarkReport
from ignn_solver.cli import EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_IO, EXIT_OK, run
from ignn_solver.graph import normalize_adjacency, save_dataset, synth_chain
from ignn_solver.model import FixedPointProblem, IgnnModel, accuracy
from ignn_solver.neural import NeuralSolver

SMALL = "nhid = 8\nepochs = 20\ndropout = 0\ntol = 1e-6\nmax_iter = 500\nK = 3\nsolver_steps = 5\nseed = 1\n"


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.cfg"
    cfg.write_text(SMALL)
    out = root / "run"
    for cmd in ("train", "train-solver", "pareto", "trace"):
        assert run([cmd, "--config", str(cfg), "--data", "synth:chain", "--out", str(out), "--repeats", "1"]) == EXIT_OK
    return cfg, out


def test_outputs_and_manifest(trained):
    _, out = trained
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "trace" and manifest["seed"] == 1
    assert set(manifest["files"]) == {"model.ckpt", "solver.ckpt", "train_log.jsonl", "pareto.csv", "trace.csv"}
    for name, info in manifest["files"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == info["sha256"]


def test_pareto_report(trained):
    _, out = trained
    rep = BenchmarkReport.read_csv(out / "pareto.csv")
    assert rep.seed == 1 and rep.dataset == "synth:chain" and len(rep.config_hash) == 16
    keys = [(r.solver, r.iteration_budget) for r in rep.rows]
    assert keys == sorted(keys)
    assert {b for s, b in keys if s == "neural"} == set(range(0, 7))
    assert all(0.0 <= r.test_accuracy <= 1.0 for r in rep.rows)


def test_pareto_budget_zero_is_initializer_only(trained):
    _, out = trained
    model = IgnnModel.load(out / "model.ckpt")
    solver = NeuralSolver.load(out / "solver.ckpt")
    ds = synth_chain(4, 6, 8, 1)
    z0 = solver.init_estimate(FixedPointProblem(model, normalize_adjacency(ds.graph), ds.features))
    row = next(r for r in BenchmarkReport.read_csv(out / "pareto.csv").rows if r.solver == "neural" and r.iteration_budget == 0)
    assert row.f_evals == 1
    assert row.test_accuracy == accuracy(model, z0, ds.labels, ds.splits["test"])


def test_pareto_deterministic_counts(trained, tmp_path):
    cfg, out = trained
    again = tmp_path / "again"
    again.mkdir()
    for name in ("model.ckpt", "solver.ckpt"):
        (again / name).write_bytes((out / name).read_bytes())
    assert run(["pareto", "--config", str(cfg), "--data", "synth:chain", "--out", str(again), "--repeats", "1"]) == EXIT_OK
    a = BenchmarkReport.read_csv(out / "pareto.csv").rows
    b = BenchmarkReport.read_csv(again / "pareto.csv").rows
    assert [(r.solver, r.iteration_budget, r.f_evals, r.residual, r.test_accuracy) for r in a] == [
        (r.solver, r.iteration_budget, r.f_evals, r.residual, r.test_accuracy) for r in b
    ]


def test_trace_csv(trained):
    _, out = trained
    with open(out / "trace.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["solver"] for r in rows} == {"picard", "anderson", "neural"}
    res = {s: [float(r["residual"]) for r in rows if r["solver"] == s] for s in ("picard", "anderson", "neural")}
    assert all(np.isfinite(v) and v > 0 for vs in res.values() for v in vs)
    pic = res["picard"]
    assert len(pic) == 7
    assert all(b / a <= 0.95 + 0.05 for a, b in zip(pic[3:], pic[4:]))


def test_training_is_deterministic(trained, tmp_path):
    cfg, out = trained
    assert run(["train", "--config", str(cfg), "--data", "synth:chain", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "model.ckpt").read_bytes() == (out / "model.ckpt").read_bytes()


def test_dataset_directory_input(tmp_path):
    data = tmp_path / "data"
    save_dataset(synth_chain(3, 4, 4, 0), data)
    cfg = tmp_path / "c.cfg"
    cfg.write_text("nhid = 4\nepochs = 2\ntol = 1e-6\nmax_iter = 500\n")
    assert run(["train", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "o")]) == EXIT_OK


def test_exit_codes(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    assert run(["train", "--config", str(bad), "--data", "synth:chain", "--out", str(tmp_path / "a")]) == EXIT_CONFIG
    assert run(["train", "--data", "synth:unknown", "--out", str(tmp_path / "a")]) == EXIT_CONFIG
    assert run(["train", "--config", str(tmp_path / "nope.cfg"), "--data", "synth:chain", "--out", str(tmp_path / "a")]) == EXIT_IO
    assert run(["pareto", "--data", "synth:chain", "--out", str(tmp_path / "empty")]) == EXIT_IO
    assert run(["train", "--data", str(tmp_path / "no_such_dir"), "--out", str(tmp_path / "a")]) == EXIT_IO
    stiff = tmp_path / "stiff.cfg"
    stiff.write_text("nhid = 4\nepochs = 1\ntol = 1e-14\nmax_iter = 1\n")
    assert run(["train", "--config", str(stiff), "--data", "synth:chain", "--out", str(tmp_path / "b")]) == EXIT_CONVERGENCE


def test_overhead_command(tmp_path, capsys):
    log = tmp_path / "train_log.jsonl"
    recs = [
        {"phase": "meta", "step": 0, "solver_params": 10, "model_params": 1000, "wall_time_s": 0.0},
        {"phase": "warmup_model", "step": 0, "wall_time_s": 1.5},
        {"phase": "solver", "step": 0, "wall_time_s": 0.25},
        {"phase": "model", "step": 1, "wall_time_s": 2.5},
        {"phase": "solver", "step": 1, "wall_time_s": 0.75},
    ]
    log.write_text("".join(json.dumps(r) + "\n" for r in recs))
    assert run(["overhead", "--data", str(tmp_path), "--out", str(tmp_path / "o")]) == EXIT_OK
    summary = json.loads((tmp_path / "o" / "overhead.json").read_text())
    assert summary == {"solver_train_time": 1.0, "model_train_time": 4.0, "ratio": 0.25, "solver_params": 10, "model_params": 1000}

    log.write_text(json.dumps(recs[0]) + "\n{oops\n")
    assert run(["overhead", "--data", str(log), "--out", str(tmp_path / "o")]) == EXIT_IO
    assert ":2" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "ignn_solver.cli", "overhead", "--data", str(tmp_path / "x.jsonl"), "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == EXIT_IO
