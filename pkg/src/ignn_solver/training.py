"""Optimization loops: solver training, model training and the alternating schedule."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import ConfigError, ConvergenceError, DomainError, PreconditionError, ShapeError
from .graph import Dataset, SparseGraph, normalize_adjacency
from .model import FixedPointProblem, IgnnModel, accuracy, implicit_backward, project_weights, readout_loss
from .neural import NeuralSolver, Unrolled
from .solvers import AndersonSolver, anderson_solve

SCHEDULES = ("constant", "last_step", "linear_increasing")


@dataclass
class SolverLossWeights:
    """Weights of the three solver-training losses.

    ``lambda1_schedule`` spreads the reconstruction weight over the unrolled
    steps; ``lambda1_warmup`` additionally ramps it from 0 over the training
    run and ``lambda3_decay`` linearly decays the mixing-weight loss to 0.
    """

    lambda1: float = 0.1
    lambda1_schedule: str = "linear_increasing"
    lambda1_warmup: bool = True
    lambda2: float = 5.0
    lambda3: float = 1e-4
    lambda3_decay: bool = True

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise DomainError("loss weights must be nonnegative")
        if self.lambda1_schedule not in SCHEDULES:
            raise DomainError(f"lambda1_schedule must be one of {SCHEDULES}, got {self.lambda1_schedule!r}")

    def step_weights(self, K: int, t: int = 0, total: int = 0) -> np.ndarray:
        """Reconstruction weight for each of the ``K`` unrolled iterates ``Z^[1..K]``."""
        k = np.arange(K, dtype=np.float64)
        if self.lambda1_schedule == "constant":
            w = np.full(K, self.lambda1)
        elif self.lambda1_schedule == "last_step":
            w = np.where(k == K - 1, self.lambda1, 0.0)
        else:
            w = self.lambda1 * (k + 1.0) / K
        if self.lambda1_warmup and total > 0:
            w = w * (t / total)
        return w

    def alpha_weight(self, t: int = 0, total: int = 0) -> float:
        if self.lambda3_decay and total > 0:
            return self.lambda3 * (1.0 - t / total)
        return self.lambda3


def solver_loss(un: Unrolled, z_star: np.ndarray, weights: SolverLossWeights, t: int = 0, total: int = 0):
    """Total solver loss and its components (as floats).

    ``L = sum_k w_k ||Z^[k+1] - Z*|| + lambda2 ||Z^[0] - Z*|| + lambda3 sum_k ||sum_i alpha_i G_i||``
    with Frobenius norms throughout.
    """
    z_star = np.asarray(z_star)
    if T._val(un.z0).shape != z_star.shape:
        raise ShapeError(f"Z0 {T._val(un.z0).shape} and Z* {z_star.shape} differ")
    K = len(un.zs)
    w = weights.step_weights(K, t, total)
    rec_terms = [T.fro_norm(T.sub(z, z_star)) for z in un.zs]
    init = T.fro_norm(T.sub(un.z0, z_star))
    alpha_terms = [T.fro_norm(g) for g in un.mixed_residuals]
    loss = T.scale(init, weights.lambda2)
    l_rec = 0.0
    for wk, term in zip(w, rec_terms):
        l_rec += wk * float(T._val(term))
        if wk != 0.0:
            loss = T.add(loss, T.scale(term, wk))
    lam3 = weights.alpha_weight(t, total)
    l_alpha = 0.0
    for term in alpha_terms:
        l_alpha += float(T._val(term))
        if lam3 != 0.0:
            loss = T.add(loss, T.scale(term, lam3))
    comps = {
        "rec": l_rec,
        "init": float(T._val(init)),
        "alpha": l_alpha,
        "rec_last": float(T._val(rec_terms[-1])) if rec_terms else float(T._val(init)),
        "total": float(T._val(loss)),
    }
    return loss, comps


class Adam:
    """Adam with bias correction. Parameters are updated in place, keyed by name."""

    def __init__(self, lr: float = 0.002, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if self.weight_decay:
                g = g + self.weight_decay * p
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float):
    """Rescale ``grads`` so their joint L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        return {k: g * factor for k, g in grads.items()}, norm, True
    return grads, norm, False


@dataclass
class FixedPointCache:
    """Accurate fixed point for one parameter state of the model."""

    theta_hash: str
    z_star: np.ndarray
    residual: float


def compute_fixed_point(problem: FixedPointProblem, tol: float = 1e-6, max_iter: int = 2000) -> FixedPointCache:
    trace = anderson_solve(problem, np.zeros(problem.shape), m=5, beta=1.0, tol=tol, max_iter=max_iter)
    if not trace.converged:
        raise ConvergenceError("reference fixed point did not converge", trace.final_residual)
    return FixedPointCache(problem.model.param_hash(), trace.final_z, trace.final_residual)


class JsonlLog:
    """Training log, one JSON object per line. ``path=None`` keeps records in memory only."""

    def __init__(self, path=None):
        self.path = path
        self.records: list[dict] = []
        if path is not None:
            open(path, "w").close()

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")


def train_solver(
    problem: FixedPointProblem,
    solver: NeuralSolver,
    weights: SolverLossWeights | None = None,
    steps: int = 100,
    lr: float = 0.002,
    cache: FixedPointCache | None = None,
    clip: float = 5.0,
    step_offset: int = 0,
    total_steps: int | None = None,
    log: JsonlLog | None = None,
    optimizer: Adam | None = None,
) -> list[dict]:
    """Fit the solver's initializer and predictor to the frozen model in ``problem``.

    Label free: the only target is the accurate fixed point. Each step unrolls
    ``solver.config.K`` updates on the tape and takes one Adam step on the
    solver parameters. Returns the per-step loss history.
    """
    weights = weights or SolverLossWeights()
    if cache is None:
        cache = compute_fixed_point(problem)
    elif cache.theta_hash != problem.model.param_hash():
        raise PreconditionError("fixed-point cache is stale: the model changed since it was computed")
    total = steps if total_steps is None else total_steps
    opt = optimizer or Adam(lr=lr)
    K = solver.config.K
    history = []
    for i in range(steps):
        t_start = time.perf_counter()
        t = step_offset + i
        tape = T.Tape()
        pv = {k: tape.leaf(v) for k, v in solver.params.items()}
        un = solver.unroll(problem, K, tol=0.0, params=pv)
        loss, comps = solver_loss(un, cache.z_star, weights, t, total)
        grads = tape.backward(loss) if isinstance(loss, T.Var) else None
        g = {k: grads[v] for k, v in pv.items()} if grads is not None else {}
        g, gnorm, clipped = clip_global_norm(g, clip)
        opt.step(solver.params, g)
        record = {
            "phase": "solver",
            "step": t,
            "loss": comps,
            "residual": un.residuals[-1],
            "grad_norm": gnorm,
            "clipped": clipped,
            "wall_time_s": time.perf_counter() - t_start,
        }
        history.append(record)
        if log is not None:
            log.write(record)
    return history


def _dropout_mask(rng, shape, rate):
    if rate <= 0:
        return None
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def train_ignn(
    model: IgnnModel,
    dataset: Dataset,
    solver,
    epochs: int = 100,
    lr: float = 0.002,
    tol: float = 3e-6,
    max_iter: int = 300,
    dropout: float = 0.5,
    weight_decay: float = 0.0,
    seed: int = 0,
    graph: SparseGraph | None = None,
    log: JsonlLog | None = None,
    optimizer: Adam | None = None,
    phase: str = "model",
    epoch_offset: int = 0,
) -> list[dict]:
    """Supervised training of the model with a frozen forward solver.

    Per epoch: solve for the fixed point, take the readout loss on the train
    split, back-propagate through the equilibrium implicitly, take an Adam
    step and re-project ``W``. Returns per-epoch metrics.
    """
    a_hat = normalize_adjacency(dataset.graph) if graph is None else graph
    problem = FixedPointProblem(model, a_hat, dataset.features)
    opt = optimizer or Adam(lr=lr, weight_decay=weight_decay)
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(epochs):
        t_start = time.perf_counter()
        trace = solver.solve(problem, tol=tol, max_iter=max_iter)
        if not trace.converged:
            raise ConvergenceError(
                f"forward solve ({solver.name}) did not converge in epoch {epoch_offset + epoch}",
                trace.final_residual,
            )
        z = trace.final_z
        mask = _dropout_mask(rng, z.shape, dropout)
        zd = z if mask is None else z * mask
        rl = readout_loss(model, zd, dataset.labels, dataset.splits["train"])
        gz = rl.grad_z if mask is None else rl.grad_z * mask
        ig = implicit_backward(problem, z, gz)
        grads = {"W": ig.W, "omega_w": ig.omega_w, "omega_b": ig.omega_b, "readout_w": rl.grad_w, "readout_b": rl.grad_b}
        record = {
            "phase": phase,
            "step": epoch_offset + epoch,
            "loss": {"task": rl.loss},
            "residual": trace.final_residual,
            "f_evals": trace.f_evals,
            "accuracy": {
                split: accuracy(model, z, dataset.labels, dataset.splits[split]) for split in ("train", "val", "test")
            },
        }
        opt.step(model.parameters(), grads)
        model.bump()
        project_weights(model)
        record["wall_time_s"] = time.perf_counter() - t_start
        history.append(record)
        if log is not None:
            log.write(record)
    return history


@dataclass
class AlternatingSchedule:
    """Alternating schedule: ``t1`` solver steps, then ``t2`` model epochs, repeated.

    ``t1`` defaults to ``ceil(0.07 * t2)``. The model epochs over all cycles
    sum to ``epoch_max``.
    """

    t2: int = 20
    epoch_max: int = 100
    t1: int | None = None
    warmup_epochs: int = 10
    warmup_solver_steps: int = 100

    def __post_init__(self):
        if self.t1 is None:
            self.t1 = math.ceil(0.07 * self.t2)
        if self.t1 < 1 or self.t2 < 1:
            raise ConfigError("T1 and T2 must both be >= 1")
        if self.epoch_max < self.t2 or self.epoch_max % self.t2:
            raise ConfigError(f"epoch_max={self.epoch_max} is not a positive multiple of T2={self.t2}")
        if self.warmup_epochs < 0 or self.warmup_solver_steps < 0:
            raise ConfigError("warm-up lengths must be nonnegative")

    @property
    def cycles(self) -> int:
        return self.epoch_max // self.t2

    @property
    def total_solver_steps(self) -> int:
        return self.warmup_solver_steps + self.cycles * self.t1


@dataclass
class AlternatingResult:
    model: IgnnModel
    solver: NeuralSolver
    history: list[dict] = field(default_factory=list)


def alternate_train(
    model: IgnnModel,
    dataset: Dataset,
    solver: NeuralSolver,
    schedule: AlternatingSchedule,
    weights: SolverLossWeights | None = None,
    lr: float = 0.002,
    solver_lr: float | None = None,
    tol: float = 3e-6,
    max_iter: int = 300,
    dropout: float = 0.5,
    weight_decay: float = 0.0,
    seed: int = 0,
    log: JsonlLog | None = None,
    on_cycle: Callable[[int], None] | None = None,
) -> AlternatingResult:
    """Train model and solver alternately.

    (i) warm up the model with classic Anderson and then the solver;
    (ii) tune the solver for ``t1`` steps against the current model;
    (iii) train the model for ``t2`` epochs with the solver frozen;
    repeat (ii)-(iii) until ``epoch_max`` model epochs have run.
    """
    log = log or JsonlLog()
    log.write(
        {
            "phase": "meta",
            "step": 0,
            "solver_params": solver.param_count(),
            "model_params": model.param_count(),
            "wall_time_s": 0.0,
        }
    )
    a_hat = normalize_adjacency(dataset.graph)
    problem = FixedPointProblem(model, a_hat, dataset.features)
    model_opt = Adam(lr=lr, weight_decay=weight_decay)
    solver_opt = Adam(lr=solver_lr or lr)
    total = schedule.total_solver_steps
    common = dict(tol=tol, max_iter=max_iter, dropout=dropout, graph=a_hat, log=log, optimizer=model_opt)
    epoch = 0
    if schedule.warmup_epochs:
        train_ignn(model, dataset, AndersonSolver(), schedule.warmup_epochs, seed=seed, phase="warmup_model", **common)
        epoch += schedule.warmup_epochs
    solver_step = 0

    def tune(steps):
        nonlocal solver_step
        if not steps:
            return
        t0 = time.perf_counter()
        cache = compute_fixed_point(problem)
        log.write({"phase": "solver", "step": solver_step, "event": "fixed_point", "wall_time_s": time.perf_counter() - t0})
        train_solver(
            problem, solver, weights, steps, cache=cache, step_offset=solver_step, total_steps=total,
            log=log, optimizer=solver_opt,
        )
        solver_step += steps

    tune(schedule.warmup_solver_steps)
    for cycle in range(schedule.cycles):
        tune(schedule.t1)
        train_ignn(model, dataset, solver, schedule.t2, seed=seed + 1 + cycle, epoch_offset=epoch, **common)
        epoch += schedule.t2
        if on_cycle is not None:
            on_cycle(cycle)
    return AlternatingResult(model, solver, log.records)
