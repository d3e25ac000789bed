"""Learned fixed-point solver: initializer plus a tiny graph network predicting AA coefficients.

The solver runs a generalized Anderson iteration. At step ``k`` it keeps the
last ``m_k + 1`` iterates and residuals, compresses every residual per node to
``p`` channels, runs one graph convolution over a sparsified graph, mean-pools
over nodes and reads out the mixing weights ``alpha`` (on the simplex) and the
mixing coefficient ``beta`` in ``(0, beta_max]``.

The same forward code runs on raw arrays (inference) or on tape variables
(training), see :mod:`ignn_solver.tensor`.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import tensor as T
from .checkpoint import read_tensors, write_tensors
from .errors import DomainError, NumericError, ParseError, ShapeError
from .graph import SparseGraph, sparsify
from .solvers import IterateRecord, SolveTrace, relative_residual

UPDATE_RULES = ("classic", "literal")


@dataclass
class NeuralSolverConfig:
    m: int = 5
    K: int = 10
    p: int = 8
    beta_max: float = 1.5
    keep_fraction: float = 0.25
    update_rule: str = "classic"
    gcn_hidden: int = 16

    def __post_init__(self):
        if self.m < 1 or self.K < 0 or self.p < 1 or self.gcn_hidden < 1:
            raise DomainError(f"invalid solver sizes: {self}")
        if self.beta_max <= 0:
            raise DomainError("beta_max must be positive")
        if self.update_rule not in UPDATE_RULES:
            raise DomainError(f"update_rule must be one of {UPDATE_RULES}, got {self.update_rule!r}")


class Unrolled(NamedTuple):
    """Everything one solver run produced, as arrays or tape variables."""

    z0: object
    zs: list  # Z^[1..K]
    mixed_residuals: list  # sum_i alpha_i G_i per step
    alphas: list
    betas: list
    residuals: list[float]  # relative residual of Z^[0..K]
    trace: SolveTrace


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class NeuralSolver:
    """Initializer ``h_phi`` and coefficient predictor ``s_xi`` for one hidden width.

    The initializer reads node features through the frozen model's input
    projection ``U = X Omega_w + Omega_b`` and returns ``act(U) + MLP(U)``,
    where the MLP has one ``tanh`` hidden layer of width ``hidden // 2``.
    """

    name = "neural"

    def __init__(self, hidden: int, config: NeuralSolverConfig | None = None, seed: int = 0):
        self.hidden = hidden
        self.config = config or NeuralSolverConfig()
        c = self.config
        rng = np.random.default_rng(seed)
        mid = max(1, hidden // 2)
        slots = c.m + 1
        self.params: dict[str, np.ndarray] = {
            "init_w1": _glorot(rng, hidden, mid),
            "init_b1": np.zeros(mid),
            "init_w2": np.zeros((mid, hidden)),
            "init_b2": np.zeros(hidden),
            "comp_w": _glorot(rng, hidden, c.p),
            "comp_b": np.zeros(c.p),
            "gcn_w": _glorot(rng, c.p * slots, c.gcn_hidden),
            "gcn_b": np.zeros(c.gcn_hidden),
            "alpha_w": _glorot(rng, c.gcn_hidden, slots) * 0.1,
            "alpha_b": np.zeros(slots),
            "beta_w": _glorot(rng, c.gcn_hidden, 1) * 0.1,
            "beta_b": np.zeros(1),
        }
        # the untrained solver starts close to plain Picard steps: almost all
        # weight on the newest iterate and beta = beta_max * sigmoid(b) = 1
        self.params["alpha_b"][:-1] = -6.0
        if c.beta_max > 1.0:
            self.params["beta_b"][:] = -np.log(c.beta_max - 1.0)
        self._support: dict[int, tuple[SparseGraph, SparseGraph]] = {}

    # bookkeeping ---------------------------------------------------------

    def param_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def copy(self) -> "NeuralSolver":
        other = NeuralSolver.__new__(NeuralSolver)
        other.hidden = self.hidden
        other.config = NeuralSolverConfig(**asdict(self.config))
        other.params = {k: v.copy() for k, v in self.params.items()}
        other._support = {}
        return other

    def support(self, graph: SparseGraph) -> SparseGraph:
        """Row-normalized sparsified graph used by the predictor (cached per graph)."""
        hit = self._support.get(id(graph))
        if hit is not None and hit[0] is graph:
            return hit[1]
        a_s = sparsify(graph, self.config.keep_fraction).row_normalized()
        self._support[id(graph)] = (graph, a_s)
        return a_s

    def save(self, path) -> None:
        c = self.config
        tensors = dict(self.params)
        meta = {
            "cfg_hidden": self.hidden,
            "cfg_m": c.m,
            "cfg_K": c.K,
            "cfg_p": c.p,
            "cfg_beta_max": c.beta_max,
            "cfg_keep_fraction": c.keep_fraction,
            "cfg_update_rule": UPDATE_RULES.index(c.update_rule),
            "cfg_gcn_hidden": c.gcn_hidden,
        }
        tensors.update({k: np.array(float(v)) for k, v in meta.items()})
        write_tensors(path, tensors)

    @classmethod
    def load(cls, path) -> "NeuralSolver":
        t = read_tensors(path)
        try:
            config = NeuralSolverConfig(
                m=int(t["cfg_m"]),
                K=int(t["cfg_K"]),
                p=int(t["cfg_p"]),
                beta_max=float(t["cfg_beta_max"]),
                keep_fraction=float(t["cfg_keep_fraction"]),
                update_rule=UPDATE_RULES[int(t["cfg_update_rule"])],
                gcn_hidden=int(t["cfg_gcn_hidden"]),
            )
            solver = cls(int(t["cfg_hidden"]), config)
            for k in solver.params:
                if t[k].shape != solver.params[k].shape:
                    raise ParseError(f"tensor {k} has shape {t[k].shape}, expected {solver.params[k].shape}", path)
                solver.params[k] = t[k]
        except KeyError as exc:
            raise ParseError(f"solver checkpoint lacks tensor {exc}", path) from None
        return solver

    # forward pieces --------------------------------------------------------

    def init_estimate(self, problem, params=None):
        """Initial iterate from node features (through the frozen input projection)."""
        p = self.params if params is None else params
        u = problem.bias
        if u.shape[1] != self.hidden:
            raise ShapeError(f"solver built for width {self.hidden}, problem has width {u.shape[1]}")
        h = T.tanh(T.affine(u, p["init_w1"], p["init_b1"]))
        return T.add(problem.model.act(u), T.affine(h, p["init_w2"], p["init_b2"]))

    def slot_features(self, g, params=None):
        """Per-residual quantities the predictor reuses while ``g`` stays in the window."""
        p = self.params if params is None else params
        nrm = T.fro_norm(g)
        return T.matmul(g, p["comp_w"]), T.mul(nrm, nrm)

    def predict_coeffs(self, window, a_s: SparseGraph, m_k: int, params=None, slots=None):
        """Mixing weights (length ``m_k + 1``) and ``beta`` from a residual window.

        ``window`` lists the ``m_k + 1`` residual matrices, oldest first;
        ``slots`` optionally carries their precomputed :meth:`slot_features`.
        """
        p = self.params if params is None else params
        c = self.config
        if len(window) == 0:
            raise DomainError("empty residual window")
        if len(window) != m_k + 1 or m_k > c.m:
            raise DomainError(f"window of {len(window)} residuals does not match m_k={m_k} (m={c.m})")
        n, d = T._val(window[0]).shape
        if slots is None:
            slots = [self.slot_features(g, p) for g in window]
        # one scale for the whole window keeps relative magnitudes and makes
        # the predictor blind to the absolute residual size; dividing the
        # compressed projection is the same as compressing the scaled residual
        sq = slots[0][1]
        for _, s in slots[1:]:
            sq = T.add(sq, s)
        scale = T.add(T.sqrt(T.scale(sq, 1.0 / (n * d * len(window)))), 1e-300)
        channels = [T.tanh(T.add(T.div(proj, scale), p["comp_b"])) for proj, _ in slots]
        pad = c.m + 1 - len(window)
        if pad:
            channels.append(np.zeros((n, c.p * pad)))
        storage = T.concat_cols(channels)
        hidden = T.tanh(T.add(T.spmm(a_s, T.matmul(storage, p["gcn_w"])), p["gcn_b"]))
        pooled = T.reshape(T.mean_rows(hidden), (1, -1))
        logits = T.reshape(T.affine(pooled, p["alpha_w"], p["alpha_b"]), (c.m + 1,))
        alpha = T.head(T.masked_softmax(logits, m_k + 1), m_k + 1)
        beta_logit = T.reshape(T.affine(pooled, p["beta_w"], p["beta_b"]), ())
        beta = T.scale(T.sigmoid(beta_logit), c.beta_max)
        return alpha, beta

    def _update(self, zs, gs, alpha, beta, mixed_g):
        if self.config.update_rule == "classic":
            return T.add(T.weighted_sum(alpha, zs), T.mul(beta, mixed_g))
        plain = gs[0]
        for g in gs[1:]:
            plain = T.add(plain, g)
        return T.add(T.mul(beta, plain), T.weighted_sum(alpha, zs))

    # the solver loop ---------------------------------------------------------

    def unroll(
        self,
        problem,
        steps: int,
        tol: float = 0.0,
        params=None,
        a_s: SparseGraph | None = None,
        coeff_fn: Callable[[int, int], tuple] | None = None,
        z0=None,
    ) -> Unrolled:
        """Run ``steps`` solver updates.

        With ``tol > 0`` the loop exits as soon as the relative residual of the
        current iterate is at most ``tol`` (inference); ``tol = 0`` always runs
        every step (training). ``coeff_fn(k, m_k) -> (alpha, beta)`` overrides
        the predictor.
        """
        if steps < 0:
            raise DomainError("steps must be >= 0")
        c = self.config
        a_s = self.support(problem.graph) if a_s is None else a_s
        trace = SolveTrace(self.name)
        t0 = time.perf_counter()
        z = self.init_estimate(problem, params) if z0 is None else z0
        z_init = z
        fz = problem(z)
        g = T.sub(fz, z)
        trace.f_evals = 1
        res = relative_residual(T._val(z), T._val(fz))
        residuals = [res]
        trace.iterates.append(IterateRecord(0, res, time.perf_counter() - t0, 1))
        zs, gs = [z], [g]
        slots = [self.slot_features(g, params)] if coeff_fn is None else None
        out_z, mixed, alphas, betas = [], [], [], []
        best = (res, T._val(z))
        for k in range(steps):
            if tol > 0 and res <= tol:
                break
            m_k = len(zs) - 1
            if coeff_fn is not None:
                alpha, beta = coeff_fn(k, m_k)
                alpha = np.asarray(alpha, dtype=np.float64)
                beta = np.asarray(float(beta))
            else:
                alpha, beta = self.predict_coeffs(gs, a_s, m_k, params, slots)
            mixed_g = T.weighted_sum(alpha, gs)
            try:
                z = self._update(zs, gs, alpha, beta, mixed_g)
            except NumericError:
                raise NumericError(f"non-finite iterate at step {k + 1}", step=k + 1) from None
            zv = T._val(z)
            if not np.all(np.isfinite(zv)):
                raise NumericError(f"non-finite iterate at step {k + 1}", step=k + 1)
            fz = problem(z)
            g = T.sub(fz, z)
            trace.f_evals += 1
            res = relative_residual(zv, T._val(fz))
            residuals.append(res)
            trace.iterates.append(
                IterateRecord(
                    k + 1,
                    res,
                    time.perf_counter() - t0,
                    trace.f_evals,
                    tuple(T._val(alpha).tolist()),
                    float(T._val(beta)),
                )
            )
            if res < best[0]:
                best = (res, zv)
            out_z.append(z)
            mixed.append(mixed_g)
            alphas.append(alpha)
            betas.append(beta)
            zs.append(z)
            gs.append(g)
            if slots is not None:
                slots.append(self.slot_features(g, params))
            if len(zs) > c.m + 1:
                zs.pop(0)
                gs.pop(0)
                if slots is not None:
                    slots.pop(0)
        trace.converged = tol > 0 and res <= tol
        trace.final_z = best[1]
        return Unrolled(z_init, out_z, mixed, alphas, betas, residuals, trace)

    def neural_solve(self, problem, steps: int, tol: float = 1e-6, **kw) -> SolveTrace:
        return self.unroll(problem, steps, tol=tol, **kw).trace

    def solve(self, problem, tol=1e-6, max_iter=500, z0=None) -> SolveTrace:
        """Solver-contract entry point (inference mode, early exit at ``tol``)."""
        return self.unroll(problem, max_iter, tol=tol, z0=z0).trace
