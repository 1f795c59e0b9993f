"""Tests for the graph-convolutional encoder."""

import io

import numpy as np
import pytest

from kgat.gcn import (
    GcnLayerParams,
    encode,
    encode_on_tape,
    gcn_layer,
    norm_constant,
    normalized_adjacency,
)
from kgat.graph import load_triples
from kgat.numeric import Tape, backward, grad_check


def graph_from(text, features=None):
    feat = io.StringIO(features) if features is not None else None
    return load_triples(io.StringIO(text), feat)


def random_graph(rng, n_nodes, n_edges, dim):
    """Random undirected graph plus feature matrix, via the triple loader."""
    lines = []
    for _ in range(n_edges):
        a, b = rng.integers(n_nodes), rng.integers(n_nodes)
        lines.append(f"n{a}\tr\tn{b}")
    # mention every node so the graph always has n_nodes nodes
    lines += [f"n{i}\tself\tn{i}" for i in range(n_nodes)]
    g = graph_from("\n".join(lines) + "\n")
    g.features = rng.normal(size=(g.node_count, dim))
    return g


def dense_oracle(g, h, w):
    """D^{-1/2} (A + I) D^{-1/2} H W^T built straight from the edge set."""
    n = g.node_count
    a = np.eye(n)
    for head, _, tail in g.edges:
        a[head, tail] = 1.0
        a[tail, head] = 1.0
    d_inv_sqrt = np.diag(1.0 / np.sqrt(a.sum(axis=1)))
    return d_inv_sqrt @ a @ d_inv_sqrt @ h @ w.T


class TestNormConstant:
    def test_isolated_node_self_pair(self):
        g = graph_from("a\tself\ta\n")
        assert norm_constant(g, 0, 0) == 1.0

    def test_mutually_linked_pair(self):
        g = graph_from("a\tr\tb\n")
        assert norm_constant(g, 0, 1) == pytest.approx(2.0)

    def test_star_center_to_leaf(self):
        k = 4
        g = graph_from("".join(f"hub\tr\tleaf{i}\n" for i in range(k)))
        hub = g.surface_index["hub"]
        leaf = g.surface_index["leaf0"]
        assert norm_constant(g, hub, leaf) == pytest.approx(np.sqrt(2 * (k + 1)))

    def test_non_neighbor_raises(self):
        g = graph_from("a\tr\tb\nc\tr\td\n")
        with pytest.raises(ValueError, match="not a neighbor"):
            norm_constant(g, 0, g.surface_index["c"])


class TestGcnLayer:
    def test_isolated_node_identity_weight_is_identity(self):
        g = graph_from("a\tself\ta\n")
        g.features = np.array([[2.0, -1.0]])
        p = GcnLayerParams(weight=np.eye(2), activation="linear")
        assert np.allclose(gcn_layer(g.features, g, p), g.features)

    def test_symmetric_pair_with_equal_features(self):
        g = graph_from("a\tr\tb\n")
        h = np.array([[1.0, 2.0], [1.0, 2.0]])
        p = GcnLayerParams(weight=np.eye(2), activation="linear")
        assert np.allclose(gcn_layer(h, g, p), h)

    def test_matches_dense_oracle_on_random_graphs(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            g = random_graph(rng, int(rng.integers(2, 11)), int(rng.integers(1, 15)), 3)
            w = rng.normal(size=(4, 3))
            got = gcn_layer(g.features, g, GcnLayerParams(w, "linear"))
            assert np.max(np.abs(got - dense_oracle(g, g.features, w))) < 1e-9

    def test_dimension_mismatch(self):
        g = graph_from("a\tr\tb\n")
        g.features = np.ones((2, 3))
        with pytest.raises(Exception, match="dim"):
            gcn_layer(g.features, g, GcnLayerParams(np.ones((2, 4))))

    def test_constant_vector_fixed_point_on_regular_graph(self):
        # 4-cycle: every node has degree 3 with self-loops
        g = graph_from("a\tr\tb\nb\tr\tc\nc\tr\td\nd\tr\ta\n")
        h = np.full((4, 2), 0.7)
        p = GcnLayerParams(weight=np.eye(2), activation="linear")
        assert np.allclose(gcn_layer(h, g, p), h, atol=1e-12)


class TestEncode:
    def test_zero_layers_returns_raw_features(self):
        g = graph_from("a\tr\tb\n")
        assert np.array_equal(encode(g, []), g.features)

    def test_one_identity_layer_on_isolated_nodes(self):
        g = graph_from("a\tself\ta\nb\tself\tb\n")
        g.features = np.array([[1.0, 0.5], [-2.0, 3.0]])
        out = encode(g, [GcnLayerParams(np.eye(2), "linear")])
        assert np.allclose(out, g.features)

    def test_two_relu_layers_match_composed_oracle(self):
        rng = np.random.default_rng(12)
        g = random_graph(rng, 6, 8, 3)
        w1, w2 = rng.normal(size=(5, 3)), rng.normal(size=(2, 5))
        got = encode(g, [GcnLayerParams(w1, "relu"), GcnLayerParams(w2, "relu")])
        mid = np.maximum(dense_oracle(g, g.features, w1), 0.0)
        want = np.maximum(dense_oracle(g, mid, w2), 0.0)
        assert np.max(np.abs(got - want)) < 1e-9

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(13)
        n = 7
        edges = [(int(rng.integers(n)), int(rng.integers(n))) for _ in range(10)]
        w = rng.normal(size=(3, 2))
        feats = rng.normal(size=(n, 2))

        def build(order):
            # same named nodes and edges; only the node insertion order
            # (and hence the id assignment) follows the permutation
            lines = [f"n{order[i]}\tself\tn{order[i]}" for i in range(n)]
            lines += [f"n{a}\tr\tn{b}" for a, b in edges]
            g = graph_from("\n".join(lines) + "\n")
            remap = np.empty((n, 2))
            for j in range(n):
                remap[g.surface_index[f"n{j}"]] = feats[j]
            return g, remap

        ident = list(range(n))
        perm = list(rng.permutation(n))
        g1, f1 = build(ident)
        g2, f2 = build(perm)
        g1.features, g2.features = f1, f2
        out1 = encode(g1, [GcnLayerParams(w, "relu")])
        out2 = encode(g2, [GcnLayerParams(w, "relu")])
        for i in range(n):
            row1 = out1[g1.surface_index[f"n{i}"]]
            row2 = out2[g2.surface_index[f"n{i}"]]
            assert np.allclose(row1, row2, atol=1e-12)


class TestTapePath:
    def test_tape_encode_matches_plain_encode(self):
        rng = np.random.default_rng(14)
        g = random_graph(rng, 6, 9, 3)
        w1, w2 = rng.normal(size=(4, 3)), rng.normal(size=(2, 4))
        plain = encode(g, [GcnLayerParams(w1, "relu"), GcnLayerParams(w2, "linear")])
        tape = Tape()
        out = encode_on_tape(tape, g, tape.constant(g.features),
                             [tape.parameter(w1), tape.parameter(w2)],
                             ["relu", "linear"])
        assert np.allclose(tape.value(out), plain, atol=1e-12)

    def test_gradient_through_layer_passes_grad_check(self):
        rng = np.random.default_rng(15)
        g = random_graph(rng, 5, 6, 3)
        feats = g.features.copy()

        def loss(tape, w):
            out = encode_on_tape(tape, g, tape.constant(feats), [w], ["relu"])
            return tape.sum_all(tape.mul(out, out))

        w0 = rng.normal(size=(4, 3))
        assert grad_check(loss, w0, eps=1e-5) < 1e-4

    def test_gradient_wrt_features(self):
        rng = np.random.default_rng(16)
        g = random_graph(rng, 5, 6, 3)
        w = rng.normal(size=(4, 3))

        def loss(tape, f):
            out = encode_on_tape(tape, g, f, [tape.constant(w)], ["linear"])
            return tape.sum_all(tape.mul(out, out))

        assert grad_check(loss, g.features, eps=1e-5) < 1e-4


def test_unknown_activation_rejected():
    with pytest.raises(ValueError, match="activation"):
        GcnLayerParams(weight=np.eye(2), activation="tanh")


def test_normalized_adjacency_matches_oracle_matrix():
    rng = np.random.default_rng(17)
    g = random_graph(rng, 8, 12, 2)
    n = g.node_count
    a = np.eye(n)
    for head, _, tail in g.edges:
        a[head, tail] = a[tail, head] = 1.0
    d = np.diag(1.0 / np.sqrt(a.sum(axis=1)))
    assert np.max(np.abs(normalized_adjacency(g) - d @ a @ d)) < 1e-12
