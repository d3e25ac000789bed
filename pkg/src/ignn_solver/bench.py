"""Evaluation artifacts: speed/accuracy sweeps, convergence traces, overhead summaries."""

from __future__ import annotations

import csv
import json
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError
from .model import FixedPointProblem, IgnnModel, accuracy
from .neural import NeuralSolver
from .solvers import anderson_solve, picard_solve

REPORT_COLUMNS = ["solver", "iteration_budget", "f_evals", "wall_time_s", "residual", "test_accuracy"]


@dataclass(frozen=True)
class ReportRow:
    solver: str
    iteration_budget: int
    f_evals: int
    wall_time_s: float
    residual: float
    test_accuracy: float


@dataclass
class BenchmarkReport:
    seed: int
    dataset: str
    config_hash: str
    rows: list[ReportRow] = field(default_factory=list)

    def sorted(self) -> "BenchmarkReport":
        rows = sorted(self.rows, key=lambda r: (r.solver, r.iteration_budget))
        return BenchmarkReport(self.seed, self.dataset, self.config_hash, rows)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# seed={self.seed}\n# dataset={self.dataset}\n# config_hash={self.config_hash}\n")
            w = csv.writer(fh)
            w.writerow(REPORT_COLUMNS)
            for r in self.sorted().rows:
                w.writerow(
                    [r.solver, r.iteration_budget, r.f_evals, repr(r.wall_time_s), repr(r.residual), repr(r.test_accuracy)]
                )

    @classmethod
    def read_csv(cls, path) -> "BenchmarkReport":
        header: dict[str, str] = {}
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        body_start = 0
        for i, line in enumerate(lines):
            if not line.startswith("#"):
                body_start = i
                break
            key, sep, value = line[1:].strip().partition("=")
            if not sep:
                raise ParseError("expected 'key=value' header", path, i + 1)
            header[key] = value
        else:
            body_start = len(lines)
        reader = csv.reader(lines[body_start:])
        cols = next(reader, None)
        if cols != REPORT_COLUMNS:
            raise ParseError(f"unexpected columns {cols}", path, body_start + 1)
        for j, rec in enumerate(reader):
            lineno = body_start + 2 + j
            if len(rec) != len(REPORT_COLUMNS):
                raise ParseError(f"expected {len(REPORT_COLUMNS)} fields, got {len(rec)}", path, lineno)
            try:
                rows.append(
                    ReportRow(rec[0], int(rec[1]), int(rec[2]), float(rec[3]), float(rec[4]), float(rec[5]))
                )
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
        try:
            return cls(int(header.get("seed", 0)), header.get("dataset", ""), header.get("config_hash", ""), rows)
        except ValueError:
            raise ParseError("seed header is not an integer", path, 1) from None


def run_budget(solver_name: str, problem: FixedPointProblem, budget: int, neural: NeuralSolver | None = None, m: int = 5):
    """Run one solver for exactly ``budget`` updates (no early exit)."""
    z0 = np.zeros(problem.shape)
    if solver_name == "picard":
        return picard_solve(problem, z0, tol=0.0, max_iter=budget)
    if solver_name == "anderson":
        return anderson_solve(problem, z0, m=m, beta=1.0, tol=0.0, max_iter=budget)
    if solver_name == "neural":
        if neural is None:
            raise ValueError("neural solver checkpoint required")
        return neural.unroll(problem, budget, tol=0.0).trace
    raise ValueError(f"unknown solver {solver_name!r}")


def pareto_sweep(
    model: IgnnModel,
    problem: FixedPointProblem,
    labels,
    test_split,
    neural: NeuralSolver,
    budgets,
    repeats: int = 5,
    solvers=("picard", "anderson", "neural"),
) -> list[ReportRow]:
    """Accuracy, residual and cost per iteration budget.

    Wall time is the median of ``repeats`` timed runs after one untimed warm-up run.
    """
    rows = []
    for name in solvers:
        for b in budgets:
            trace = run_budget(name, problem, b, neural)
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                run_budget(name, problem, b, neural)
                times.append(time.perf_counter() - t0)
            rows.append(
                ReportRow(
                    name,
                    int(b),
                    trace.f_evals,
                    statistics.median(times) if times else 0.0,
                    trace.final_residual,
                    accuracy(model, trace.final_z, labels, test_split),
                )
            )
    return sorted(rows, key=lambda r: (r.solver, r.iteration_budget))


def trace_rows(problem: FixedPointProblem, neural: NeuralSolver, steps: int):
    """``(solver, k, residual, f_evals)`` for every step of every solver."""
    out = []
    for name in ("picard", "anderson", "neural"):
        trace = run_budget(name, problem, steps, neural)
        out.extend((name, r.k, r.residual, r.f_evals) for r in trace.iterates)
    return out


def write_trace_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["solver", "k", "residual", "f_evals"])
        for name, k, res, fe in rows:
            w.writerow([name, k, repr(res), fe])


def read_log(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed log record: {exc.msg}", path, i) from None
            if not isinstance(rec, dict) or "phase" not in rec:
                raise ParseError("log record lacks a 'phase' field", path, i)
            records.append(rec)
    return records


MODEL_PHASES = ("model", "warmup_model")


def overhead_summary(records: list[dict]) -> dict:
    """Time spent training the solver relative to training the model."""
    solver_t = sum(float(r.get("wall_time_s", 0.0)) for r in records if r["phase"] == "solver")
    model_t = sum(float(r.get("wall_time_s", 0.0)) for r in records if r["phase"] in MODEL_PHASES)
    meta = next((r for r in records if r["phase"] == "meta"), {})
    if solver_t == 0.0:
        ratio = 0.0
    else:
        ratio = solver_t / model_t if model_t > 0 else float("inf")
    return {
        "solver_train_time": solver_t,
        "model_train_time": model_t,
        "ratio": ratio,
        "solver_params": meta.get("solver_params"),
        "model_params": meta.get("model_params"),
    }
