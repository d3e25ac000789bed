"""Implicit graph neural networks with classic and learned fixed-point solvers."""

from .errors import (
    ConfigError,
    ConvergenceError,
    DomainError,
    IgnnError,
    NumericError,
    ParseError,
    PreconditionError,
    ShapeError,
)
from .graph import Dataset, SparseGraph, normalize_adjacency, sparsify, synth_chain, synth_citeseer
from .kernels import BACKEND
from .model import FixedPointProblem, IgnnModel, implicit_backward, project_weights
from .neural import NeuralSolver, NeuralSolverConfig
from .solvers import AndersonSolver, PicardSolver, aa_weights, anderson_solve, picard_solve

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "AndersonSolver",
    "ConfigError",
    "ConvergenceError",
    "Dataset",
    "DomainError",
    "FixedPointProblem",
    "IgnnError",
    "IgnnModel",
    "NeuralSolver",
    "NeuralSolverConfig",
    "NumericError",
    "ParseError",
    "PicardSolver",
    "PreconditionError",
    "ShapeError",
    "SparseGraph",
    "aa_weights",
    "anderson_solve",
    "implicit_backward",
    "normalize_adjacency",
    "picard_solve",
    "project_weights",
    "sparsify",
    "synth_chain",
    "synth_citeseer",
]
