import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from ignn_solver.errors import DomainError, ParseError
from ignn_solver.graph import (
    SparseGraph,
    load_dataset,
    load_dataset_dir,
    normalize_adjacency,
    power_iteration,
    save_dataset,
    sparsify,
    spectral_norm_estimate,
    synth_chain,
    synth_citeseer,
)

from conftest import path_graph, random_graph


def test_csr_invariants_and_dense_roundtrip():
    a = np.array([[0, 2.0, 0], [2.0, 0, 1.0], [0, 1.0, 0]])
    g = SparseGraph.from_dense(a)
    assert g.row_ptr[0] == 0 and g.row_ptr[-1] == g.nnz == 4
    assert np.all(np.diff(g.row_ptr) >= 0)
    np.testing.assert_array_equal(g.to_dense(), a)


def test_duplicate_coo_entries_rejected():
    with pytest.raises(DomainError):
        SparseGraph.from_coo(2, [0, 0], [1, 1], [1.0, 1.0])


def test_normalize_single_isolated_node():
    np.testing.assert_array_equal(normalize_adjacency(SparseGraph.from_coo(1, [], [])).to_dense(), [[1.0]])


def test_normalize_single_edge():
    np.testing.assert_allclose(normalize_adjacency(path_graph(2)).to_dense(), [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


def test_normalize_empty_graph_is_identity():
    np.testing.assert_array_equal(normalize_adjacency(SparseGraph.from_coo(5, [], [])).to_dense(), np.eye(5))


def test_normalize_negative_weight():
    with pytest.raises(DomainError):
        normalize_adjacency(SparseGraph.from_coo(2, [0, 1], [1, 0], [-1.0, -1.0]))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.floats(0.0, 1.0), st.integers(0, 2**31 - 1))
def test_normalized_symmetry_and_spectrum(n, p, seed):
    a_hat = normalize_adjacency(random_graph(np.random.default_rng(seed), n, p))
    assert a_hat.is_symmetric(1e-12)
    dense = a_hat.to_dense()
    # independent oracle: dense symmetric eigensolve
    assert np.max(np.abs(scipy.linalg.eigvalsh(dense))) <= 1.0 + 1e-9


@given(st.integers(1, 12), st.integers(1, 6))
def test_regular_graph_rows_sum_to_one(n, k):
    # ring lattice: every node has the same degree, so D^-1/2 (A+I) D^-1/2 is row stochastic
    k = min(k, (n - 1) // 2)
    pairs = {(i, (i + s) % n) for i in range(n) for s in range(1, k + 1)}
    rows = [i for i, j in pairs] + [j for i, j in pairs]
    cols = [j for i, j in pairs] + [i for i, j in pairs]
    a_hat = normalize_adjacency(SparseGraph.from_coo(n, rows, cols))
    np.testing.assert_allclose(a_hat.row_sums(), 1.0, atol=1e-12)


def test_hub_row_sum_exceeds_one():
    # symmetric normalization bounds the spectrum, not the row sums
    star = SparseGraph.from_coo(4, [0, 0, 0, 1, 2, 3], [1, 2, 3, 0, 0, 0])
    a_hat = normalize_adjacency(star)
    assert a_hat.row_sums()[0] > 1.0
    assert spectral_norm_estimate(a_hat, 500) <= 1.0 + 1e-9


def test_sparsify_full_keeps_edge_set():
    a_hat = normalize_adjacency(random_graph(np.random.default_rng(0), 12, 0.4))
    assert sparsify(a_hat, 1.0).edge_set() == a_hat.edge_set()


def test_sparsify_bad_fraction():
    a_hat = normalize_adjacency(path_graph(3))
    for f in (0.0, -0.1, 1.5):
        with pytest.raises(DomainError):
            sparsify(a_hat, f)


def test_sparsify_path_keeps_heaviest_pair():
    a = SparseGraph.from_coo(3, [0, 1, 1, 2], [1, 0, 2, 1], [1.0, 1.0, 3.0, 3.0])
    a_hat = normalize_adjacency(a)
    s = sparsify(a_hat, 0.25)  # ceil(0.25 * 4) = 1 directed entry, then symmetrized
    dense = a_hat.to_dense()
    best = max(((i, j) for i in range(3) for j in range(3) if i != j and dense[i, j] > 0), key=lambda e: dense[e])
    off = {e for e in s.edge_set() if e[0] != e[1]}
    assert off == {best, best[::-1]}
    assert {(i, i) for i in range(3)} <= s.edge_set()


def _brute_top_weight(a_hat, f):
    dense = a_hat.to_dense()
    entries = [(-dense[i, j], i, j) for i in range(a_hat.n) for j in range(a_hat.n) if i != j and dense[i, j] != 0]
    entries.sort()
    chosen = {(i, j) for _, i, j in entries[: math.ceil(f * len(entries))]}
    chosen |= {(j, i) for i, j in chosen}
    return chosen | {(i, i) for i in range(a_hat.n)}


def test_sparsify_star_tie_break_is_deterministic():
    n = 7
    star = SparseGraph.from_coo(n, [0] * (n - 1) + list(range(1, n)), list(range(1, n)) + [0] * (n - 1))
    a_hat = normalize_adjacency(star)
    s1, s2 = sparsify(a_hat, 0.5), sparsify(a_hat, 0.5)
    assert s1.edge_set() == s2.edge_set() == _brute_top_weight(a_hat, 0.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 25), st.floats(0.05, 1.0), st.floats(0.01, 1.0), st.integers(0, 2**31 - 1))
def test_sparsify_properties(n, p, f, seed):
    a_hat = normalize_adjacency(random_graph(np.random.default_rng(seed), n, p))
    s = sparsify(a_hat, f)
    assert s.edge_set() <= a_hat.edge_set()
    assert s.edge_set() == _brute_top_weight(a_hat, f)
    assert s.is_symmetric()


def test_spectral_norm_examples():
    assert spectral_norm_estimate(np.eye(3)) == 1.0
    assert spectral_norm_estimate(np.diag([2.0, 1.0])) == 2.0
    assert spectral_norm_estimate(np.zeros((3, 3))) == 0.0
    assert spectral_norm_estimate(SparseGraph.identity(4)) == 1.0


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**31 - 1))
def test_spectral_norm_of_normalized_graph(n, seed):
    a_hat = normalize_adjacency(random_graph(np.random.default_rng(seed), n, 0.3))
    est = spectral_norm_estimate(a_hat, 200)
    assert est <= 1.0 + 1e-9
    assert est <= np.linalg.norm(a_hat.to_dense(), 2) + 1e-9


def test_power_iteration_monotone_in_iterations():
    a = np.random.default_rng(4).standard_normal((10, 10))
    ests = [power_iteration(a, k)[0] for k in (1, 2, 5, 10, 50, 200)]
    assert all(b >= a_ - 1e-12 for a_, b in zip(ests, ests[1:]))
    assert abs(ests[-1] - np.linalg.svd(a, compute_uv=False)[0]) < 1e-6


def _write(tmp_path, edges, features, labels, splits):
    paths = []
    for name, text in zip(("e.tsv", "f.tsv", "l.txt", "s.txt"), (edges, features, labels, splits)):
        p = tmp_path / name
        p.write_text(text)
        paths.append(p)
    return paths


FIXTURE = ("# comment\n0\t1\n1\t2\t0.5\n", "1\t0\n0.5\t0.5\n0\t1\n", "0\n0\n1\n", "train: 0 2\nval: 1\ntest:\n")


def test_load_three_node_fixture(tmp_path):
    ds = load_dataset(*_write(tmp_path, *FIXTURE))
    assert (ds.n, ds.d, ds.num_classes) == (3, 2, 2)
    assert ds.graph.nnz == 4 and ds.graph.to_dense()[1, 2] == 0.5
    assert ds.splits["train"].tolist() == [0, 2] and ds.splits["test"].size == 0


@pytest.mark.parametrize(
    "idx,text,line",
    [
        (0, "0\t1\n1\t0\n", 2),  # duplicate (reversed) edge
        (0, "0\t1\n0\t1\n", 2),
        (0, "0\t5\n", 1),  # out of range
        (1, "1\t0\n0.5\n0\t1\n", 2),  # ragged
        (2, "0\ncat\n1\n", 2),  # unknown label
        (2, "0\n-1\n1\n", 2),
        (3, "train: 0 2\nval: x\ntest:\n", 2),
    ],
)
def test_parse_errors_name_file_and_line(tmp_path, idx, text, line):
    texts = list(FIXTURE)
    texts[idx] = text
    paths = _write(tmp_path, *texts)
    with pytest.raises(ParseError) as err:
        load_dataset(*paths)
    assert err.value.line == line
    assert str(paths[idx]) in str(err.value)


def test_dataset_roundtrip_is_lossless(tmp_path):
    ds = synth_citeseer(1, n=60, num_edges=90, d=12, n_train=10, n_val=10, n_test=20)
    ds.features = ds.features * np.random.default_rng(0).random(ds.features.shape)
    save_dataset(ds, tmp_path / "ds")
    back = load_dataset_dir(tmp_path / "ds")
    assert back.graph.edge_set() == ds.graph.edge_set()
    np.testing.assert_array_equal(back.graph.values, ds.graph.values)
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)
    for k in ("train", "val", "test"):
        np.testing.assert_array_equal(back.splits[k], ds.splits[k])


def test_synth_chain_small():
    ds = synth_chain(1, 2, 4, seed=0)
    assert ds.n == 2 and ds.graph.nnz == 2


@given(st.integers(1, 6), st.integers(2, 8), st.integers(0, 1000))
@settings(deadline=None, max_examples=30)
def test_synth_chain_labels_constant_per_chain(chains, length, seed):
    ds = synth_chain(chains, length, 3, seed)
    rows, cols, _ = ds.graph.coo()
    assert np.all(ds.labels[rows] == ds.labels[cols])
    # exactly one informative node per chain
    assert int(ds.features.sum()) == chains


def test_synth_chain_deterministic(tmp_path):
    a, b = synth_chain(4, 6, 8, 3), synth_chain(4, 6, 8, 3)
    save_dataset(a, tmp_path / "a")
    save_dataset(b, tmp_path / "b")
    for name in ("edges.tsv", "features.tsv", "labels.txt", "splits.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_synth_citeseer_matches_citeseer_sizes():
    ds = synth_citeseer(0)
    assert ds.n == 3327 and ds.graph.nnz == 2 * 4732 and ds.num_classes == 6
    assert [len(ds.splits[k]) for k in ("train", "val", "test")] == [360, 500, 1000]
