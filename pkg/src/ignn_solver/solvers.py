"""Picard and Anderson fixed-point solvers sharing one trace format.

A *problem* is any callable ``f`` mapping an array to an array of the same
shape; :class:`~ignn_solver.model.FixedPointProblem` is the usual one. All
solvers stop on the relative residual ``||f(Z) - Z|| / max(||Z||, 1e-12)``.
"""

from __future__ import annotations

import csv
import json
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericError

RESIDUAL_FLOOR = 1e-12
TRACE_HEADER = ["k", "residual", "wall_time_s", "f_evals", "beta", "alpha_json"]


def relative_residual(z: np.ndarray, fz: np.ndarray) -> float:
    return float(np.linalg.norm(fz - z) / max(np.linalg.norm(z), RESIDUAL_FLOOR))


@dataclass
class IterateRecord:
    k: int
    residual: float
    wall_time: float
    f_evals: int
    alpha: tuple[float, ...] | None = None
    beta: float | None = None


@dataclass
class SolveTrace:
    solver: str
    iterates: list[IterateRecord] = field(default_factory=list)
    final_z: np.ndarray | None = None
    converged: bool = False
    f_evals: int = 0
    fallback_steps: list[int] = field(default_factory=list)

    @property
    def residuals(self) -> list[float]:
        return [r.residual for r in self.iterates]

    @property
    def iterations(self) -> int:
        return self.iterates[-1].k if self.iterates else 0

    @property
    def final_residual(self) -> float:
        return min(self.residuals) if self.iterates else float("inf")

    def f_evals_to(self, tol: float) -> int | None:
        """Evaluations spent when the residual first dropped to ``tol``."""
        for r in self.iterates:
            if r.residual <= tol:
                return r.f_evals
        return None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_HEADER)
            for r in self.iterates:
                w.writerow(
                    [
                        r.k,
                        repr(r.residual),
                        repr(r.wall_time),
                        r.f_evals,
                        "" if r.beta is None else repr(r.beta),
                        "" if r.alpha is None else json.dumps(list(r.alpha)),
                    ]
                )

    @classmethod
    def read_csv(cls, path, solver: str = "") -> "SolveTrace":
        trace = cls(solver)
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                trace.iterates.append(
                    IterateRecord(
                        k=int(row["k"]),
                        residual=float(row["residual"]),
                        wall_time=float(row["wall_time_s"]),
                        f_evals=int(row["f_evals"]),
                        beta=float(row["beta"]) if row["beta"] else None,
                        alpha=tuple(json.loads(row["alpha_json"])) if row["alpha_json"] else None,
                    )
                )
        if trace.iterates:
            trace.f_evals = trace.iterates[-1].f_evals
        return trace


def _check_finite(z, k):
    if not np.all(np.isfinite(z)):
        raise NumericError(f"non-finite iterate at step {k}", step=k)


def picard_solve(problem, z0, tol: float = 1e-6, max_iter: int = 500) -> SolveTrace:
    """Plain iteration ``Z <- f(Z)``.

    Performs at most ``max_iter`` updates (``max_iter + 1`` evaluations).
    Exhausting the budget is not an error: the trace comes back with
    ``converged=False`` and ``final_z`` set to the best iterate seen.
    """
    trace = SolveTrace("picard")
    t0 = time.perf_counter()
    z = np.array(z0, dtype=np.float64)
    best = (np.inf, z)
    for k in range(max_iter + 1):
        fz = problem(z)
        trace.f_evals += 1
        _check_finite(fz, k)
        res = relative_residual(z, fz)
        trace.iterates.append(IterateRecord(k, res, time.perf_counter() - t0, trace.f_evals))
        if res < best[0]:
            best = (res, z)
        if res <= tol:
            trace.converged = True
            break
        z = fz
    trace.final_z = best[1]
    return trace


def _aa_weights(g: np.ndarray) -> tuple[np.ndarray, bool]:
    rows = g.shape[0]
    gram = g @ g.T
    lam = 1e-8 * np.trace(gram) / rows
    try:
        y = np.linalg.solve(gram + lam * np.eye(rows), np.ones(rows))
    except np.linalg.LinAlgError:
        return np.full(rows, 1.0 / rows), True
    s = y.sum()
    if not np.all(np.isfinite(y)) or s == 0.0 or not np.isfinite(s):
        return np.full(rows, 1.0 / rows), True
    alpha = y / s
    return alpha, False


def aa_weights(g) -> np.ndarray:
    """Weights ``alpha`` minimizing ``||G^T alpha||`` subject to ``sum(alpha) = 1``.

    ``g`` stacks one flattened residual per row. The normal equations are
    damped by ``1e-8 * trace(G G^T) / rows``; if they remain singular the
    uniform weights are returned.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] < 1:
        raise DomainError(f"need at least one residual row, got shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise NumericError("residual window contains non-finite entries")
    return _aa_weights(g)[0]


def anderson_solve(problem, z0, m: int = 5, beta: float = 1.0, tol: float = 1e-6, max_iter: int = 500) -> SolveTrace:
    """Anderson acceleration over a rolling window of the last ``m + 1`` iterates.

    Each update costs one new evaluation of ``problem``.
    """
    if m < 1:
        raise DomainError("window size m must be >= 1")
    if not (0.0 < beta <= 1.0):
        raise DomainError(f"beta must lie in (0, 1], got {beta}")
    trace = SolveTrace("anderson")
    t0 = time.perf_counter()
    z = np.array(z0, dtype=np.float64)
    fz = problem(z)
    trace.f_evals = 1
    _check_finite(fz, 0)
    res = relative_residual(z, fz)
    trace.iterates.append(IterateRecord(0, res, time.perf_counter() - t0, 1))
    best = (res, z)
    zs: deque[np.ndarray] = deque([z], maxlen=m + 1)
    fs: deque[np.ndarray] = deque([fz], maxlen=m + 1)
    k = 0
    while res > tol and k < max_iter:
        g = np.stack([(f - x).ravel() for x, f in zip(zs, fs)])
        alpha, fell_back = _aa_weights(g)
        if fell_back:
            trace.fallback_steps.append(k)
        mix_f = sum(a * f for a, f in zip(alpha, fs))
        if beta == 1.0:
            z = mix_f
        else:
            z = beta * mix_f + (1.0 - beta) * sum(a * x for a, x in zip(alpha, zs))
        k += 1
        _check_finite(z, k)
        fz = problem(z)
        trace.f_evals += 1
        _check_finite(fz, k)
        res = relative_residual(z, fz)
        trace.iterates.append(
            IterateRecord(k, res, time.perf_counter() - t0, trace.f_evals, tuple(alpha.tolist()), beta)
        )
        if res < best[0]:
            best = (res, z)
        zs.append(z)
        fs.append(fz)
    trace.converged = res <= tol
    trace.final_z = best[1]
    return trace


class PicardSolver:
    name = "picard"

    def solve(self, problem, tol=1e-6, max_iter=500, z0=None) -> SolveTrace:
        if z0 is None:
            z0 = np.zeros(problem.shape)
        return picard_solve(problem, z0, tol, max_iter)


class AndersonSolver:
    name = "anderson"

    def __init__(self, m: int = 5, beta: float = 1.0):
        self.m = m
        self.beta = beta

    def solve(self, problem, tol=1e-6, max_iter=500, z0=None) -> SolveTrace:
        if z0 is None:
            z0 = np.zeros(problem.shape)
        return anderson_solve(problem, z0, self.m, self.beta, tol, max_iter)
