"""Triple store with adjacency queries and surface-form entity linking.

A graph is loaded once from a tab-separated triple file (and an optional
node-feature CSV) and is immutable afterwards, so it is safe to share
across threads. Edges are kept with their relation labels but neighbor
queries treat them as undirected and always include the node itself,
which is the convention the downstream graph encoder expects.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np


class GraphFormatError(ValueError):
    """Malformed triple or feature input."""


@dataclass(frozen=True)
class EntityMention:
    """A linked span: tokens [start, end) resolve to one graph node."""

    node_id: int
    start: int
    end: int

    def __post_init__(self):
        if self.end <= self.start or self.start < 0:
            raise ValueError(f"empty or negative mention span ({self.start}, {self.end})")


@dataclass
class KnowledgeGraph:
    """Entities, labeled edges, per-node features, and a surface index.

    ``surface_index`` maps lowercased surface forms to node ids;
    ``features`` has one row per node (node id == row). ``adjacency``
    holds undirected neighbor sets without the implicit self-loop; use
    :func:`neighbors` for the self-loop-inclusive set.
    """

    surfaces: list[str] = field(default_factory=list)
    edges: set[tuple[int, str, int]] = field(default_factory=set)
    surface_index: dict[str, int] = field(default_factory=dict)
    features: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    adjacency: list[set[int]] = field(default_factory=list)

    @property
    def node_count(self) -> int:
        return len(self.surfaces)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def degree(self, v: int) -> int:
        """Neighbor count including the self-loop."""
        return len(neighbors(self, v))

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (self.surfaces == other.surfaces and self.edges == other.edges
                and np.array_equal(self.features, other.features))


def empty_graph(feature_dim: int = 0) -> KnowledgeGraph:
    return KnowledgeGraph(features=np.zeros((0, feature_dim)))


def _read_lines(source) -> Iterable[tuple[int, str]]:
    """Yield (1-based line number, stripped line), skipping blanks/comments."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        yield lineno, line


def load_triples(triple_source, feature_source=None) -> KnowledgeGraph:
    """Build a graph from ``head<TAB>relation<TAB>tail`` lines.

    Nodes are interned by lowercased surface form in order of first
    appearance; duplicate triples collapse. The optional feature CSV has
    header ``node,f1..fd``; nodes without a feature row get zeros. With
    no feature source at all, nodes get one-hot rows so a fresh graph is
    still distinguishable to the encoder.
    """
    surfaces: list[str] = []
    index: dict[str, int] = {}
    edges: set[tuple[int, str, int]] = set()

    def intern(surface: str) -> int:
        key = surface.lower()
        if key not in index:
            index[key] = len(surfaces)
            surfaces.append(surface)
        return index[key]

    for lineno, line in _read_lines(triple_source):
        fields = line.split("\t")
        if len(fields) != 3:
            raise GraphFormatError(
                f"triple line {lineno}: expected 3 tab-separated fields, got {len(fields)}")
        head, relation, tail = (f.strip() for f in fields)
        if not head or not relation or not tail:
            raise GraphFormatError(f"triple line {lineno}: empty field")
        edges.add((intern(head), relation, intern(tail)))

    if feature_source is not None:
        features = _load_features(feature_source, index, len(surfaces))
    else:
        features = np.eye(len(surfaces))

    adjacency: list[set[int]] = [set() for _ in surfaces]
    for h, _, t in edges:
        adjacency[h].add(t)
        adjacency[t].add(h)

    return KnowledgeGraph(surfaces=surfaces, edges=edges, surface_index=index,
                          features=features, adjacency=adjacency)


def _load_features(source, index: dict[str, int], n_nodes: int) -> np.ndarray:
    if isinstance(source, (str, Path)):
        handle = io.StringIO(Path(source).read_text(encoding="utf-8"))
    else:
        handle = io.StringIO(source.read())
    reader = csv.reader(handle)
    try:
        header = next(reader)
    except StopIteration:
        return np.zeros((n_nodes, 0))
    if not header or header[0].strip().lower() != "node":
        raise GraphFormatError("feature file must start with a 'node,f1..fd' header")
    dim = len(header) - 1

    features = np.zeros((n_nodes, dim))
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        name = row[0].strip().lower()
        if name not in index:
            raise GraphFormatError(
                f"feature line {lineno}: node '{row[0]}' is not declared by any triple")
        if len(row) != dim + 1:
            raise GraphFormatError(
                f"feature line {lineno}: expected {dim} values, got {len(row) - 1}")
        try:
            features[index[name]] = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise GraphFormatError(f"feature line {lineno}: non-numeric value ({exc})")
    if not np.all(np.isfinite(features)):
        raise GraphFormatError("feature file contains non-finite values")
    return features


def neighbors(g: KnowledgeGraph, v: int) -> set[int]:
    """All nodes sharing an edge with v, in either direction, plus v."""
    if not 0 <= v < g.node_count:
        raise KeyError(f"unknown node id {v} (graph has {g.node_count} nodes)")
    return g.adjacency[v] | {v}


def link_entities(tokens: list[str], g: KnowledgeGraph) -> list[EntityMention]:
    """Greedy longest-match linking, left to right, non-overlapping.

    Tokens are lowercased here, so callers may pass raw text tokens.
    Mentions come back ordered by span start.
    """
    if not g.surface_index:
        return []
    lowered = [t.lower() for t in tokens]
    max_len = max(len(s.split()) for s in g.surface_index)
    mentions: list[EntityMention] = []
    i = 0
    while i < len(lowered):
        matched = False
        for span in range(min(max_len, len(lowered) - i), 0, -1):
            candidate = " ".join(lowered[i:i + span])
            node = g.surface_index.get(candidate)
            if node is not None:
                mentions.append(EntityMention(node_id=node, start=i, end=i + span))
                i += span
                matched = True
                break
        if not matched:
            i += 1
    return mentions
