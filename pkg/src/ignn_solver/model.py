"""The implicit graph layer, its well-posedness projection and implicit gradients."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .checkpoint import read_tensors, write_tensors
from .errors import ConvergenceError, DomainError, ParseError, ShapeError
from .graph import SparseGraph, power_iteration, spectral_norm_estimate
from .tensor import as_matrix

ACTIVATIONS = ("relu", "tanh")


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass(eq=False)
class IgnnModel:
    """Parameters of ``Z = act(A_hat Z W + X Omega_w + Omega_b)`` plus a linear readout.

    ``version`` is bumped by every in-place update so that cached quantities
    (the injected bias, fixed points) can detect staleness.
    """

    W: np.ndarray
    omega_w: np.ndarray
    omega_b: np.ndarray
    readout_w: np.ndarray
    readout_b: np.ndarray
    activation: str = "relu"
    kappa: float = 0.95
    version: int = 0
    _sv: np.ndarray | None = field(default=None, repr=False)

    PARAM_NAMES = ("W", "omega_w", "omega_b", "readout_w", "readout_b")

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if not (0.0 < self.kappa < 1.0):
            raise DomainError(f"kappa must lie in (0, 1), got {self.kappa}")
        h = self.W.shape[0]
        if self.W.shape != (h, h) or self.omega_w.shape[1] != h or self.omega_b.shape != (h,):
            raise ShapeError(
                f"inconsistent shapes: W{self.W.shape}, omega_w{self.omega_w.shape}, omega_b{self.omega_b.shape}"
            )
        if self.readout_w.shape[0] != h or self.readout_b.shape != (self.readout_w.shape[1],):
            raise ShapeError(f"readout shapes {self.readout_w.shape}, {self.readout_b.shape} do not fit width {h}")

    @classmethod
    def create(
        cls,
        in_features: int,
        hidden: int,
        num_classes: int,
        seed: int = 0,
        activation: str = "relu",
        kappa: float = 0.95,
    ) -> "IgnnModel":
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(hidden)
        model = cls(
            W=rng.uniform(-bound, bound, size=(hidden, hidden)),
            omega_w=_glorot(rng, in_features, hidden),
            omega_b=np.zeros(hidden),
            readout_w=_glorot(rng, hidden, num_classes),
            readout_b=np.zeros(num_classes),
            activation=activation,
            kappa=kappa,
        )
        project_weights(model)
        return model

    @property
    def hidden(self) -> int:
        return self.W.shape[0]

    @property
    def in_features(self) -> int:
        return self.omega_w.shape[0]

    @property
    def num_classes(self) -> int:
        return self.readout_w.shape[1]

    def parameters(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.PARAM_NAMES}

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def param_hash(self) -> str:
        h = hashlib.sha1()
        for name in ("W", "omega_w", "omega_b"):
            h.update(np.ascontiguousarray(getattr(self, name)).tobytes())
        return h.hexdigest()

    def bump(self) -> None:
        self.version += 1

    def copy(self) -> "IgnnModel":
        return IgnnModel(
            **{k: v.copy() for k, v in self.parameters().items()},
            activation=self.activation,
            kappa=self.kappa,
        )

    def act(self, p):
        return T.relu(p) if self.activation == "relu" else T.tanh(p)

    def act_grad(self, p: np.ndarray) -> np.ndarray:
        if self.activation == "relu":
            return (p > 0.0).astype(np.float64)
        t = np.tanh(p)
        return 1.0 - t * t

    # checkpoints -------------------------------------------------------

    def save(self, path) -> None:
        tensors = dict(self.parameters())
        tensors["activation"] = np.array(float(ACTIVATIONS.index(self.activation)))
        tensors["kappa"] = np.array(self.kappa)
        write_tensors(path, tensors)

    @classmethod
    def load(cls, path) -> "IgnnModel":
        t = read_tensors(path)
        missing = [k for k in (*cls.PARAM_NAMES, "activation", "kappa") if k not in t]
        if missing:
            raise ParseError(f"model checkpoint lacks tensors {missing}", path)
        return cls(
            **{k: t[k] for k in cls.PARAM_NAMES},
            activation=ACTIVATIONS[int(t["activation"])],
            kappa=float(t["kappa"]),
        )


class FixedPointProblem:
    """The map ``Z -> f(Z)`` for one model, graph and feature matrix.

    Calling the problem evaluates the layer. The injected bias ``X Omega_w +
    Omega_b`` is cached and recomputed whenever the model's version changes.
    """

    def __init__(self, model: IgnnModel, graph: SparseGraph, features: np.ndarray):
        features = as_matrix(features, "features")
        if features.shape[0] != graph.n:
            raise ShapeError(f"features have {features.shape[0]} rows but graph has {graph.n} nodes")
        if features.shape[1] != model.in_features:
            raise ShapeError(f"features have {features.shape[1]} columns, model expects {model.in_features}")
        self.model = model
        self.graph = graph
        self.features = features
        self._bias = None
        self._bias_version = None
        self.f_evals = 0

    @property
    def shape(self) -> tuple[int, int]:
        return (self.graph.n, self.model.hidden)

    @property
    def bias(self) -> np.ndarray:
        if self._bias is None or self._bias_version != (id(self.model), self.model.version):
            self._bias = self.features @ self.model.omega_w + self.model.omega_b
            self._bias_version = (id(self.model), self.model.version)
        return self._bias

    def preactivation(self, z):
        return T.add(T.matmul(T.spmm(self.graph, z), self.model.W), self.bias)

    def __call__(self, z):
        return layer_forward(z, self)


def layer_forward(z, problem: FixedPointProblem):
    """``act(A_hat Z W + b(X))``. Accepts arrays or tape variables for ``z``."""
    shape = z.shape
    if tuple(shape) != problem.shape:
        raise ShapeError(f"Z has shape {tuple(shape)}, expected {problem.shape}")
    problem.f_evals += 1
    return problem.model.act(problem.preactivation(z))


def project_weights(model: IgnnModel, iterations: int = 2000, tol: float = 1e-14) -> IgnnModel:
    """Rescale ``W`` in place so its spectral norm is at most ``kappa``."""
    if np.any(model.W - np.diag(np.diag(model.W))):
        s, v = power_iteration(model.W, iterations, tol, start=model._sv)
        model._sv = v
    else:
        s = spectral_norm_estimate(model.W)
    if s > model.kappa:
        model.W = model.W * (model.kappa / s)
        model.bump()
    return model


class ImplicitGrads(NamedTuple):
    W: np.ndarray
    omega_w: np.ndarray
    omega_b: np.ndarray
    X: np.ndarray
    adjoint: np.ndarray
    iterations: int


def implicit_backward(
    problem: FixedPointProblem,
    z_star: np.ndarray,
    grad_z: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 1000,
) -> ImplicitGrads:
    """Gradients of a loss on the fixed point, via the adjoint fixed point.

    Solves ``u = D * (A_hat^T u W^T + grad_z)`` by Picard iteration, where ``D``
    is the activation derivative at the converged pre-activation, then applies
    one chain-rule step for ``W``, ``Omega`` and ``X``.
    """
    model = problem.model
    z_star = as_matrix(z_star, "z_star")
    grad_z = as_matrix(grad_z, "grad_z")
    if z_star.shape != problem.shape or grad_z.shape != problem.shape:
        raise ShapeError(f"z_star {z_star.shape} and grad_z {grad_z.shape} must both be {problem.shape}")
    az = problem.graph.matmul(z_star)
    pre = az @ model.W + problem.bias
    d = model.act_grad(pre)
    at = problem.graph.transpose()
    wt = model.W.T
    u = d * grad_z
    it = 1
    res = 0.0
    converged = False
    while it <= max_iter:
        u_next = d * (at.matmul(u) @ wt + grad_z)
        it += 1
        res = float(np.linalg.norm(u_next - u) / max(np.linalg.norm(u_next), 1e-12))
        u = u_next
        if res <= tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"adjoint solve did not reach tol={tol} in {max_iter} iterations", res)
    return ImplicitGrads(
        W=az.T @ u,
        omega_w=problem.features.T @ u,
        omega_b=u.sum(axis=0),
        X=u @ model.omega_w.T,
        adjoint=u,
        iterations=it,
    )


class ReadoutLoss(NamedTuple):
    loss: float
    grad_z: np.ndarray
    grad_w: np.ndarray
    grad_b: np.ndarray
    logits: np.ndarray


def readout_logits(model: IgnnModel, z: np.ndarray) -> np.ndarray:
    return z @ model.readout_w + model.readout_b


def readout_loss(model: IgnnModel, z: np.ndarray, labels, split) -> ReadoutLoss:
    """Mean softmax cross-entropy of the linear readout over ``split`` nodes."""
    split = np.asarray(split, dtype=np.int64)
    if split.size == 0:
        raise DomainError("empty split")
    labels = np.asarray(labels, dtype=np.int64)
    if split.min() < 0 or split.max() >= z.shape[0]:
        raise DomainError("split index out of range")
    logits = readout_logits(model, z)
    sel = logits[split]
    shifted = sel - sel.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    y = labels[split]
    loss = float(np.mean(logsum - shifted[np.arange(len(split)), y]))
    probs = np.exp(shifted - logsum[:, None])
    probs[np.arange(len(split)), y] -= 1.0
    dlogits = np.zeros_like(logits)
    dlogits[split] = probs / len(split)
    return ReadoutLoss(
        loss=loss,
        grad_z=dlogits @ model.readout_w.T,
        grad_w=z.T @ dlogits,
        grad_b=dlogits.sum(axis=0),
        logits=logits,
    )


def accuracy(model: IgnnModel, z: np.ndarray, labels, split) -> float:
    split = np.asarray(split, dtype=np.int64)
    if split.size == 0:
        return float("nan")
    pred = readout_logits(model, z[split]).argmax(axis=1)
    return float(np.mean(pred == np.asarray(labels)[split]))
