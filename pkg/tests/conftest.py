import numpy as np
import pytest

from ignn_solver.graph import Dataset, SparseGraph, normalize_adjacency
from ignn_solver.model import FixedPointProblem, IgnnModel


def path_graph(n):
    rows = list(range(n - 1)) + list(range(1, n))
    cols = list(range(1, n)) + list(range(n - 1))
    return SparseGraph.from_coo(n, rows, cols)


def random_graph(rng, n, p=0.3):
    upper = np.triu(rng.random((n, n)) < p, 1)
    a = (upper | upper.T).astype(float)
    return SparseGraph.from_dense(a)


def random_problem(seed, n=6, d=3, h=4, activation="tanh", kappa=0.95, p=0.4, scale_w=None):
    rng = np.random.default_rng(seed)
    graph = normalize_adjacency(random_graph(rng, n, p))
    model = IgnnModel.create(d, h, 2, seed=seed, activation=activation, kappa=kappa)
    if scale_w is not None:
        model.W = rng.standard_normal((h, h)) * scale_w
        from ignn_solver.model import project_weights

        project_weights(model)
    x = rng.standard_normal((n, d))
    return FixedPointProblem(model, graph, x)


@pytest.fixture
def three_node():
    """3 nodes, 2 edges (0-1, 1-2), 2 features, 2 classes."""
    graph = path_graph(3)
    features = np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]])
    labels = np.array([0, 0, 1])
    splits = {"train": np.array([0, 2]), "val": np.array([1]), "test": np.array([], dtype=int)}
    return Dataset(graph, features, labels, splits, num_classes=2, name="three")


@pytest.fixture
def three_node_problem(three_node):
    model = IgnnModel.create(2, 4, 2, seed=3, activation="tanh")
    return FixedPointProblem(model, normalize_adjacency(three_node.graph), three_node.features)
