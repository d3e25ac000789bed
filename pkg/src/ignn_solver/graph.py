"""Sparse graphs, normalization, sparsification and datasets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import kernels
from .errors import DomainError, ParseError, ShapeError
from .tensor import as_matrix


@dataclass(eq=False)
class SparseGraph:
    """Square CSR matrix with ``float64`` edge weights.

    Treat instances as immutable; the transpose is computed once and cached.
    """

    n: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    _transpose: "SparseGraph | None" = field(default=None, repr=False)

    def __post_init__(self):
        self.row_ptr = np.ascontiguousarray(self.row_ptr, dtype=np.int64)
        self.col_idx = np.ascontiguousarray(self.col_idx, dtype=np.int64)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.row_ptr.shape != (self.n + 1,):
            raise ShapeError(f"row_ptr must have length n+1={self.n + 1}, got {self.row_ptr.shape}")
        if self.row_ptr[0] != 0 or np.any(np.diff(self.row_ptr) < 0):
            raise ShapeError("row_ptr must start at 0 and be nondecreasing")
        if self.row_ptr[-1] != len(self.col_idx) or len(self.col_idx) != len(self.values):
            raise ShapeError("row_ptr[-1], col_idx and values lengths disagree")
        if len(self.col_idx) and (self.col_idx.min() < 0 or self.col_idx.max() >= self.n):
            raise ShapeError(f"column index outside [0, {self.n})")

    # construction ------------------------------------------------------

    @classmethod
    def from_coo(cls, n: int, rows, cols, values=None) -> "SparseGraph":
        """Build from coordinate triples. Duplicate ``(row, col)`` pairs are rejected."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.ones(len(rows)) if values is None else np.asarray(values, dtype=np.float64)
        if not (len(rows) == len(cols) == len(values)):
            raise ShapeError("rows, cols and values must have equal length")
        if len(rows) and (min(rows.min(), cols.min()) < 0 or max(rows.max(), cols.max()) >= n):
            raise ShapeError(f"node index outside [0, {n})")
        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]
        if len(rows) > 1:
            dup = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
            if dup.any():
                i = int(np.argmax(dup))
                raise DomainError(f"duplicate entry ({rows[i]}, {cols[i]})")
        row_ptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(row_ptr, rows + 1, 1)
        return cls(n, np.cumsum(row_ptr), cols, values)

    @classmethod
    def from_dense(cls, a) -> "SparseGraph":
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ShapeError(f"expected a square matrix, got shape {a.shape}")
        rows, cols = np.nonzero(a)
        return cls.from_coo(a.shape[0], rows, cols, a[rows, cols])

    @classmethod
    def identity(cls, n: int) -> "SparseGraph":
        idx = np.arange(n)
        return cls(n, np.arange(n + 1), idx, np.ones(n))

    # views ---------------------------------------------------------------

    @property
    def nnz(self) -> int:
        return len(self.values)

    def row_indices(self) -> np.ndarray:
        return np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.row_ptr))

    def coo(self):
        return self.row_indices(), self.col_idx.copy(), self.values.copy()

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        out[self.row_indices(), self.col_idx] = self.values
        return out

    def edge_set(self) -> set[tuple[int, int]]:
        return set(zip(self.row_indices().tolist(), self.col_idx.tolist()))

    def transpose(self) -> "SparseGraph":
        if self._transpose is None:
            rows, cols, vals = self.coo()
            t = SparseGraph.from_coo(self.n, cols, rows, vals)
            t._transpose = self
            self._transpose = t
        return self._transpose

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        t = self.transpose()
        if not (np.array_equal(t.row_ptr, self.row_ptr) and np.array_equal(t.col_idx, self.col_idx)):
            return False
        return bool(np.all(np.abs(t.values - self.values) <= tol))

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.row_indices(), weights=self.values, minlength=self.n).astype(np.float64)

    # arithmetic ----------------------------------------------------------

    def matmul(self, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim == 1:
            return kernels.csr_matvec(self.row_ptr, self.col_idx, self.values, x)
        if x.shape[0] != self.n:
            raise ShapeError(f"graph ({self.n}x{self.n}) @ {x.shape}")
        return kernels.csr_spmm(self.row_ptr, self.col_idx, self.values, x)

    def __matmul__(self, x):
        return self.matmul(x)

    def row_normalized(self) -> "SparseGraph":
        """Copy with every nonempty row rescaled to sum to one."""
        sums = self.row_sums()
        scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums != 0)
        return SparseGraph(self.n, self.row_ptr, self.col_idx, self.values * scale[self.row_indices()])

    def permuted(self, perm) -> "SparseGraph":
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        rows, cols, vals = self.coo()
        return SparseGraph.from_coo(self.n, perm[rows], perm[cols], vals)


# ------------------------------------------------------------------ operations


def normalize_adjacency(a: SparseGraph) -> SparseGraph:
    """Return ``D^{-1/2} (A + I) D^{-1/2}`` with ``D_ii = 1 + sum_j A_ij``."""
    if a.nnz and a.values.min() < 0:
        raise DomainError("adjacency weights must be nonnegative")
    rows, cols, vals = a.coo()
    diag = rows == cols
    self_w = np.zeros(a.n)
    self_w[rows[diag]] = vals[diag]
    off = ~diag
    rows = np.concatenate([rows[off], np.arange(a.n)])
    cols = np.concatenate([cols[off], np.arange(a.n)])
    vals = np.concatenate([vals[off], self_w + 1.0])
    deg = 1.0 + a.row_sums()
    inv_sqrt = 1.0 / np.sqrt(deg)
    return SparseGraph.from_coo(a.n, rows, cols, vals * inv_sqrt[rows] * inv_sqrt[cols])


def _top_weight(a_hat: SparseGraph, keep_fraction: float, seed: int) -> SparseGraph:
    rows, cols, vals = a_hat.coo()
    diag = rows == cols
    orows, ocols, ovals = rows[~diag], cols[~diag], vals[~diag]
    keep_n = math.ceil(keep_fraction * len(ovals))
    order = np.lexsort((ocols, orows, -ovals))
    chosen = order[:keep_n]
    survivors = set(zip(orows[chosen].tolist(), ocols[chosen].tolist()))
    survivors |= {(j, i) for i, j in survivors}
    keep = np.array([(i, j) in survivors for i, j in zip(orows.tolist(), ocols.tolist())], dtype=bool)
    keep_mask = diag.copy()
    keep_mask[np.flatnonzero(~diag)[keep]] = True
    return SparseGraph.from_coo(a_hat.n, rows[keep_mask], cols[keep_mask], vals[keep_mask])


SPARSIFIERS: dict[str, Callable[[SparseGraph, float, int], SparseGraph]] = {"top_weight": _top_weight}


def sparsify(a_hat: SparseGraph, keep_fraction: float = 0.25, seed: int = 0, method: str = "top_weight") -> SparseGraph:
    """Sparse support for the coefficient predictor.

    The default ``top_weight`` operator keeps every self-loop plus the
    ``ceil(keep_fraction * |off-diagonal|)`` heaviest off-diagonal entries
    (ties broken by ascending ``(row, col)``), then restores symmetry by
    keeping an edge when either direction survived. ``seed`` is accepted for
    randomized operators registered in ``SPARSIFIERS``.
    """
    if not (0.0 < keep_fraction <= 1.0):
        raise DomainError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    try:
        op = SPARSIFIERS[method]
    except KeyError:
        raise DomainError(f"unknown sparsifier {method!r}") from None
    return op(a_hat, keep_fraction, seed)


def _is_diagonal_dense(a: np.ndarray) -> bool:
    return a.shape[0] == a.shape[1] and not np.any(a - np.diag(np.diag(a)))


def power_iteration(a, iterations: int = 100, tol: float = 0.0, start: np.ndarray | None = None):
    """Largest singular value of ``a`` and its right singular vector.

    The estimate after each sweep is the Rayleigh quotient of ``A^T A`` at the
    current unit vector, which never decreases from one sweep to the next.
    Stops early once the relative change drops below ``tol``.
    """
    if iterations < 1:
        raise DomainError("iterations must be >= 1")
    if isinstance(a, SparseGraph):
        ncols = a.n
        mv = a.matmul
        rmv = a.transpose().matmul
    else:
        a = np.asarray(a, dtype=np.float64)
        ncols = a.shape[1]
        mv = a.__matmul__
        rmv = a.T.__matmul__
    if start is None:
        v = np.random.default_rng(0).standard_normal(ncols)
    else:
        v = np.array(start, dtype=np.float64)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        v = np.ones(ncols)
        nv = np.linalg.norm(v)
    v /= nv
    sigma = 0.0
    for _ in range(iterations):
        u = mv(v)
        est = float(np.linalg.norm(u))
        if est == 0.0:
            return 0.0, v
        w = rmv(u)
        nw = np.linalg.norm(w)
        converged = tol > 0 and abs(est - sigma) <= tol * est
        sigma = max(sigma, est)
        v = w / nw
        if converged:
            break
    return sigma, v


def spectral_norm_estimate(a, iterations: int = 100, tol: float = 0.0) -> float:
    """Power-iteration estimate of the largest singular value of ``a``.

    ``a`` is a :class:`SparseGraph` or a dense matrix. Diagonal inputs are
    answered exactly; the zero matrix gives 0.
    """
    if iterations < 1:
        raise DomainError("iterations must be >= 1")
    if isinstance(a, SparseGraph):
        rows = a.row_indices()
        if np.all(rows == a.col_idx):
            return float(np.abs(a.values).max()) if a.nnz else 0.0
    else:
        dense = np.asarray(a, dtype=np.float64)
        if _is_diagonal_dense(dense):
            return float(np.abs(np.diag(dense)).max()) if dense.size else 0.0
    return power_iteration(a, iterations, tol)[0]


# -------------------------------------------------------------------- datasets


@dataclass(eq=False)
class Dataset:
    """Graph, node features, labels and train/val/test splits.

    ``graph`` holds the raw adjacency; callers normalize it explicitly.
    """

    graph: SparseGraph
    features: np.ndarray
    labels: np.ndarray
    splits: dict[str, np.ndarray]
    num_classes: int = 0
    name: str = "dataset"

    def __post_init__(self):
        self.features = as_matrix(self.features, "features")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.graph.n
        if self.features.shape[0] != n or self.labels.shape != (n,):
            raise ShapeError(
                f"graph has {n} nodes but features {self.features.shape}, labels {self.labels.shape}"
            )
        if not self.num_classes:
            self.num_classes = int(self.labels.max()) + 1 if n else 0
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DomainError(f"labels must lie in [0, {self.num_classes})")
        seen: set[int] = set()
        for key in ("train", "val", "test"):
            idx = np.asarray(self.splits.get(key, []), dtype=np.int64)
            if len(idx) and (idx.min() < 0 or idx.max() >= n):
                raise DomainError(f"{key} split index outside [0, {n})")
            s = set(idx.tolist())
            if len(s) != len(idx) or seen & s:
                raise DomainError(f"{key} split overlaps another split or repeats an index")
            seen |= s
            self.splits[key] = idx

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def d(self) -> int:
        return self.features.shape[1]


DATA_FILES = {
    "edges": "edges.tsv",
    "features": "features.tsv",
    "labels": "labels.txt",
    "splits": "splits.txt",
}


def _content_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            yield lineno, raw.rstrip("\n").rstrip("\r")


def _parse_features(path) -> np.ndarray:
    rows = []
    width = None
    for lineno, line in _content_lines(path):
        if not line.strip():
            continue
        try:
            row = [float(tok) for tok in line.split("\t")]
        except ValueError:
            raise ParseError("feature values must be decimals", path, lineno) from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(f"ragged feature row: expected {width} values, got {len(row)}", path, lineno)
        rows.append(row)
    if not rows:
        raise ParseError("no feature rows", path)
    return np.array(rows, dtype=np.float64)


def _parse_edges(path, n: int) -> SparseGraph:
    rows, cols, vals = [], [], []
    seen: set[tuple[int, int]] = set()
    for lineno, line in _content_lines(path):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split("\t") if "\t" in s else s.split()
        if len(parts) not in (2, 3):
            raise ParseError("expected 'src<TAB>dst[<TAB>weight]'", path, lineno)
        try:
            u, v = int(parts[0]), int(parts[1])
            w = float(parts[2]) if len(parts) == 3 else 1.0
        except ValueError:
            raise ParseError("malformed edge line", path, lineno) from None
        if not (0 <= u < n and 0 <= v < n):
            raise ParseError(f"node index out of range [0, {n})", path, lineno)
        key = (min(u, v), max(u, v))
        if key in seen:
            raise ParseError(f"duplicate edge {u}-{v}", path, lineno)
        seen.add(key)
        rows.append(u)
        cols.append(v)
        vals.append(w)
        if u != v:
            rows.append(v)
            cols.append(u)
            vals.append(w)
    return SparseGraph.from_coo(n, rows, cols, vals)


def _parse_labels(path, n: int) -> np.ndarray:
    labels = []
    for lineno, line in _content_lines(path):
        s = line.strip()
        if not s:
            continue
        try:
            y = int(s)
        except ValueError:
            raise ParseError(f"unknown label {s!r}", path, lineno) from None
        if y < 0:
            raise ParseError(f"unknown label {y}", path, lineno)
        labels.append(y)
    if len(labels) != n:
        raise ParseError(f"expected {n} labels, found {len(labels)}", path)
    return np.array(labels, dtype=np.int64)


def _parse_splits(path, n: int) -> dict[str, np.ndarray]:
    splits: dict[str, np.ndarray] = {}
    for lineno, line in _content_lines(path):
        s = line.strip()
        if not s:
            continue
        head, colon, rest = s.partition(":")
        key = head.strip()
        if key not in ("train", "val", "test") or not colon:
            raise ParseError("expected a 'train:', 'val:' or 'test:' line", path, lineno)
        if key in splits:
            raise ParseError(f"split {key!r} listed twice", path, lineno)
        try:
            idx = np.array([int(t) for t in rest.split()], dtype=np.int64)
        except ValueError:
            raise ParseError("split indices must be integers", path, lineno) from None
        if len(idx) and (idx.min() < 0 or idx.max() >= n):
            raise ParseError(f"split index out of range [0, {n})", path, lineno)
        splits[key] = idx
    for key in ("train", "val", "test"):
        if key not in splits:
            raise ParseError(f"missing '{key}:' line", path)
    return splits


def load_dataset(edges_path, features_path, labels_path, splits_path, name: str | None = None) -> Dataset:
    """Read the four-file text format. The returned adjacency is unnormalized."""
    features = _parse_features(features_path)
    n = features.shape[0]
    graph = _parse_edges(edges_path, n)
    labels = _parse_labels(labels_path, n)
    splits = _parse_splits(splits_path, n)
    try:
        return Dataset(graph, features, labels, splits, name=name or Path(features_path).parent.name)
    except DomainError as exc:
        raise ParseError(str(exc), splits_path) from None


def load_dataset_dir(directory) -> Dataset:
    d = Path(directory)
    return load_dataset(*(d / DATA_FILES[k] for k in ("edges", "features", "labels", "splits")), name=d.name)


def save_dataset(ds: Dataset, directory) -> dict[str, Path]:
    """Write ``ds`` in the four-file format; floats are written round-trip exact."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {k: d / v for k, v in DATA_FILES.items()}
    rows, cols, vals = ds.graph.coo()
    with open(paths["edges"], "w", encoding="utf-8") as fh:
        fh.write("# src\tdst\tweight\n")
        for u, v, w in zip(rows.tolist(), cols.tolist(), vals.tolist()):
            if u <= v:
                fh.write(f"{u}\t{v}\t{w!r}\n")
    with open(paths["features"], "w", encoding="utf-8") as fh:
        for row in ds.features.tolist():
            fh.write("\t".join(repr(x) for x in row) + "\n")
    with open(paths["labels"], "w", encoding="utf-8") as fh:
        fh.writelines(f"{y}\n" for y in ds.labels.tolist())
    with open(paths["splits"], "w", encoding="utf-8") as fh:
        for key in ("train", "val", "test"):
            fh.write(f"{key}: " + " ".join(str(i) for i in ds.splits[key].tolist()) + "\n")
    return paths


# ------------------------------------------------------------------- synthetic


def _undirected(n, pairs) -> SparseGraph:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
    return SparseGraph.from_coo(n, rows, cols)


def _random_splits(rng, n, n_train, n_val, n_test):
    perm = rng.permutation(n)
    return {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train : n_train + n_val]),
        "test": np.sort(perm[n_train + n_val : n_train + n_val + n_test]),
    }


def synth_chain(num_chains: int, chain_len: int, d: int, seed: int = 0) -> Dataset:
    """Disjoint paths whose label is a bit visible only in each path's head.

    Head nodes carry the bit one-hot in feature columns 0/1; every other
    feature is zero, so classifying a tail node requires propagating
    information across ``chain_len - 1`` hops. Node ids are shuffled.
    """
    if num_chains < 1 or chain_len < 2:
        raise DomainError("need num_chains >= 1 and chain_len >= 2")
    if d < 2:
        raise DomainError("need d >= 2 feature columns")
    rng = np.random.default_rng(seed)
    n = num_chains * chain_len
    bits = np.arange(num_chains) % 2
    bits = rng.permutation(bits)
    ids = rng.permutation(n).reshape(num_chains, chain_len)
    pairs = [(ids[c, i], ids[c, i + 1]) for c in range(num_chains) for i in range(chain_len - 1)]
    features = np.zeros((n, d))
    labels = np.zeros(n, dtype=np.int64)
    for c in range(num_chains):
        features[ids[c, 0], bits[c]] = 1.0
        labels[ids[c]] = bits[c]
    n_train = n // 2
    n_val = n // 4
    splits = _random_splits(rng, n, n_train, n_val, n - n_train - n_val)
    return Dataset(_undirected(n, pairs), features, labels, splits, num_classes=2, name="synth_chain")


def synth_citeseer(
    seed: int = 0,
    n: int = 3327,
    num_edges: int = 4732,
    num_classes: int = 6,
    d: int = 300,
    homophily: float = 0.74,
    n_train: int = 360,
    n_val: int = 500,
    n_test: int = 1000,
) -> Dataset:
    """Citeseer-sized stand-in: homophilous sparse graph with bag-of-words features.

    Node count, edge count, class count and split sizes follow the Citeseer
    setup. Degrees are heavy tailed, edges join same-class nodes with
    probability ``homophily`` and features are sparse binary vectors whose
    word distribution depends weakly on the class.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, size=n)
    activity = rng.pareto(2.5, size=n) + 1.0
    by_class = [np.flatnonzero(labels == c) for c in range(num_classes)]
    class_p = [activity[idx] / activity[idx].sum() for idx in by_class]
    p_all = activity / activity.sum()
    edges: set[tuple[int, int]] = set()
    while len(edges) < num_edges:
        batch = num_edges - len(edges)
        src = rng.choice(n, size=batch, p=p_all)
        same = rng.random(batch) < homophily
        for s, sm in zip(src.tolist(), same.tolist()):
            c = labels[s]
            if sm:
                t = int(rng.choice(by_class[c], p=class_p[c]))
            else:
                t = int(rng.choice(n, p=p_all))
            if t == s:
                continue
            key = (min(s, t), max(s, t))
            if key not in edges:
                edges.add(key)
            if len(edges) == num_edges:
                break
    words_per_class = d // (num_classes + 1)
    base = np.full(d, 0.01)
    features = (rng.random((n, d)) < base).astype(np.float64)
    for c in range(num_classes):
        topic = np.arange(c * words_per_class, (c + 1) * words_per_class)
        members = by_class[c]
        features[np.ix_(members, topic)] = np.maximum(
            features[np.ix_(members, topic)], rng.random((len(members), len(topic))) < 0.04
        )
    graph = _undirected(n, sorted(edges))
    splits = _random_splits(rng, n, n_train, n_val, n_test)
    return Dataset(graph, features, labels, splits, num_classes=num_classes, name="synth_citeseer")
