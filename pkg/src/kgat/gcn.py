"""Graph-convolutional encoding of the knowledge graph.

Each layer maps node embeddings h_v to

    h'_v = act( sum_{u in N(v)} (1 / c_vu) * W h_u )

with N(v) the undirected, self-loop-inclusive neighborhood and
c_vu = sqrt(deg(v) * deg(u)) the symmetric normalization. Weights are
stored (out_dim, in_dim); embeddings are row vectors, so the layer
multiplies by W transposed. Stacking layers with :func:`encode` yields
the per-node embedding matrix consumed by the attention pooler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import KnowledgeGraph, neighbors
from .numeric import ShapeError, Slot, Tape, relu

ACTIVATIONS = ("relu", "linear")


@dataclass
class GcnLayerParams:
    weight: np.ndarray  # (out_dim, in_dim)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{self.activation}', "
                             f"expected one of {ACTIVATIONS}")


def norm_constant(g: KnowledgeGraph, v: int, u: int) -> float:
    """sqrt(deg(v) * deg(u)) with self-loop-inclusive degrees."""
    nv = neighbors(g, v)
    if u not in nv:
        raise ValueError(f"node {u} is not a neighbor of node {v}")
    return math.sqrt(len(nv) * len(neighbors(g, u)))


def gcn_layer(h: np.ndarray, g: KnowledgeGraph, p: GcnLayerParams) -> np.ndarray:
    """One propagation step; output has p.weight's out_dim columns."""
    if h.shape[0] != g.node_count:
        raise ShapeError(f"embeddings have {h.shape[0]} rows for {g.node_count} nodes")
    if h.shape[1] != p.weight.shape[1]:
        raise ShapeError(
            f"embedding dim {h.shape[1]} does not match weight {p.weight.shape}")
    out = np.zeros((g.node_count, p.weight.shape[0]))
    for v in range(g.node_count):
        acc = np.zeros(p.weight.shape[0])
        for u in sorted(neighbors(g, v)):
            acc += (p.weight @ h[u]) / norm_constant(g, v, u)
        out[v] = acc
    return relu(out) if p.activation == "relu" else out


def encode(g: KnowledgeGraph, layers: list[GcnLayerParams]) -> np.ndarray:
    """Compose layers over the raw node features; no layers = raw features."""
    h = g.features
    for p in layers:
        h = gcn_layer(h, g, p)
    return h


def normalized_adjacency(g: KnowledgeGraph) -> np.ndarray:
    """Dense propagation matrix S with S[v, u] = 1/c_vu on neighbor pairs.

    Used by the training path to run a whole layer as one matmul; it is
    definitionally the same operator gcn_layer applies node by node.
    """
    s = np.zeros((g.node_count, g.node_count))
    for v in range(g.node_count):
        for u in neighbors(g, v):
            s[v, u] = 1.0 / norm_constant(g, v, u)
    return s


def encode_on_tape(tape: Tape, g: KnowledgeGraph, features: Slot,
                   weights: list[Slot], activations: list[str]) -> Slot:
    """Differentiable encode: same composition recorded on a tape."""
    s = tape.constant(normalized_adjacency(g))
    h = features
    for w, act in zip(weights, activations):
        h = tape.matmul_t(tape.matmul(s, h), w)
        if act == "relu":
            h = tape.relu(h)
    return h
