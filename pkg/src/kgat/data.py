"""Dataset ingestion and seeded synthetic generation.

Two on-disk shapes are supported: JSONL text datasets
(``{"id":…, "text":…, "label":0|1, "attribute":"…"}`` per line) and
tabular CSVs with an ``id,attribute,label,<features…>`` header. Loaders
reject malformed rows with their location instead of coercing or
dropping them.

:func:`generate_biased` produces a text dataset whose label rates differ
across attribute groups by a controllable amount, with group- and
label-correlated marker tokens drawn from the demo knowledge graph so
the fused model has both legitimate and leaky signal to work with.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .graph import EntityMention, KnowledgeGraph, link_entities, load_triples


class DatasetFormatError(ValueError):
    """A dataset row violates the declared schema."""


@dataclass
class Record:
    """One training example; payload is a token list or a feature vector."""

    id: str
    label: int
    attribute: str
    tokens: list[str] | None = None
    features: np.ndarray | None = None
    mentions: list[EntityMention] = field(default_factory=list)

    def __post_init__(self):
        if (self.tokens is None) == (self.features is None):
            raise ValueError("record needs exactly one payload: tokens or features")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")


def tokenize(text: str) -> list[str]:
    """Whitespace tokenizer with lowercasing; the only normalization used."""
    return text.lower().split()


def load_text_dataset(path, g: KnowledgeGraph | None = None,
                      attributes: set[str] | None = None) -> list[Record]:
    """Read a JSONL text dataset, tokenize, and link entities against g."""
    records: list[Record] = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            row = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"row {lineno}: invalid JSON ({exc})")
        for key in ("id", "text", "label", "attribute"):
            if key not in row:
                raise DatasetFormatError(f"row {lineno}: missing field '{key}'")
        if row["label"] not in (0, 1):
            raise DatasetFormatError(
                f"row {lineno}: label must be 0 or 1, got {row['label']!r}")
        attribute = str(row["attribute"])
        if attributes is not None and attribute not in attributes:
            raise DatasetFormatError(
                f"row {lineno}: unknown attribute value '{attribute}'")
        tokens = tokenize(str(row["text"]))
        mentions = link_entities(tokens, g) if g is not None else []
        records.append(Record(id=str(row["id"]), label=int(row["label"]),
                              attribute=attribute, tokens=tokens, mentions=mentions))
    return records


def load_tabular_dataset(path) -> list[Record]:
    """Read a CSV with header ``id,attribute,label,<numeric features…>``."""
    import csv as _csv

    with open(path, newline="", encoding="utf-8") as handle:
        reader = _csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError("missing header row")
        if [h.strip() for h in header[:3]] != ["id", "attribute", "label"]:
            raise DatasetFormatError(
                f"header must start with id,attribute,label; got {header[:3]}")
        n_features = len(header) - 3

        records: list[Record] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetFormatError(
                    f"row {lineno}: expected {len(header)} cells, got {len(row)}")
            try:
                label = int(row[2])
            except ValueError:
                raise DatasetFormatError(f"row {lineno}: non-integer label {row[2]!r}")
            if label not in (0, 1):
                raise DatasetFormatError(f"row {lineno}: label must be 0 or 1")
            features = np.empty(n_features)
            for j, cell in enumerate(row[3:]):
                try:
                    features[j] = float(cell)
                except ValueError:
                    raise DatasetFormatError(
                        f"row {lineno}, column '{header[3 + j]}': "
                        f"non-numeric value {cell!r}")
            if not np.all(np.isfinite(features)):
                raise DatasetFormatError(f"row {lineno}: non-finite feature value")
            records.append(Record(id=row[0], attribute=row[1], label=label,
                                  features=features))
    return records


def write_jsonl(records: list[Record], path) -> None:
    """Serialize a text dataset; key order is fixed for diff-stability."""
    with open(path, "w", encoding="utf-8") as handle:
        for r in records:
            if r.tokens is None:
                raise ValueError(f"record {r.id} has no text payload")
            handle.write(json.dumps(
                {"attribute": r.attribute, "id": r.id, "label": r.label,
                 "text": " ".join(r.tokens)}, sort_keys=True) + "\n")


def link_dataset(records: list[Record], g: KnowledgeGraph) -> list[Record]:
    """Recompute entity mentions for every text record."""
    return [replace(r, mentions=link_entities(r.tokens, g)) if r.tokens is not None
            else r for r in records]


def train_test_split(records: list[Record], seed: int) -> tuple[list[Record], list[Record]]:
    """Seeded shuffled holdout, fixed 80/20."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))
    n_test = int(round(len(records) * 0.2))
    n_test = min(max(n_test, 1), len(records) - 1) if len(records) > 1 else 0
    test_idx = set(order[:n_test].tolist())
    train = [records[i] for i in order[n_test:]]
    test = [records[i] for i in order[:n_test]]
    return train, test


# -- synthetic generator -------------------------------------------------

#: Marker vocabulary for the shipped demo; every marker is a surface form
#: of the demo knowledge graph so entity linking has something to find.
@dataclass(frozen=True)
class VocabSpec:
    group_markers: dict[str, tuple[str, ...]] = field(default_factory=lambda: {
        "f": ("she", "her", "ms"),
        "m": ("he", "him", "mr"),
    })
    positive_markers: tuple[str, ...] = ("engineer", "architect", "scientist")
    negative_markers: tuple[str, ...] = ("clerk", "assistant", "receptionist")
    filler: tuple[str, ...] = ("the", "a", "works", "with", "team", "daily",
                               "report", "office")
    n_filler: int = 3
    marker_prob: float = 0.95
    content_noise: float = 0.1


@dataclass(frozen=True)
class SynthConfig:
    n: int
    beta: float
    base_rate: float = 0.5
    spread: float = 0.8
    attribute_balance: float = 0.5
    vocab: VocabSpec = field(default_factory=VocabSpec)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        for name in ("base_rate", "attribute_balance"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 <= self.base_rate - self.spread / 2 <= 1.0 \
                or not 0.0 <= self.base_rate + self.spread / 2 <= 1.0:
            raise ValueError("base_rate +/- spread/2 must stay within [0, 1]")

    def group_rates(self) -> dict[str, float]:
        """Positive rate per attribute value; gap is beta * spread."""
        lo, hi = sorted(self.vocab.group_markers)
        return {lo: self.base_rate - self.beta * self.spread / 2,
                hi: self.base_rate + self.beta * self.spread / 2}


def generate_biased(config: SynthConfig) -> list[Record]:
    """Sample a text dataset with a controlled label-rate gap across groups."""
    rng = np.random.default_rng(config.seed)
    vocab = config.vocab
    rates = config.group_rates()
    values = sorted(vocab.group_markers)
    records: list[Record] = []
    for i in range(config.n):
        attr = values[1] if rng.random() < config.attribute_balance else values[0]
        label = int(rng.random() < rates[attr])
        tokens = [vocab.filler[rng.integers(len(vocab.filler))]
                  for _ in range(vocab.n_filler)]
        content_pool = (vocab.positive_markers if label == 1
                        else vocab.negative_markers)
        if rng.random() < vocab.content_noise:
            content_pool = (vocab.negative_markers if label == 1
                            else vocab.positive_markers)
        tokens.append(content_pool[rng.integers(len(content_pool))])
        if rng.random() < vocab.marker_prob:
            markers = vocab.group_markers[attr]
            tokens.append(markers[rng.integers(len(markers))])
        rng.shuffle(tokens)
        records.append(Record(id=f"synth-{i:05d}", label=label, attribute=attr,
                              tokens=tokens))
    return records


# -- bundled demo assets --------------------------------------------------

def demo_graph_path() -> Path:
    return Path(resources.files("kgat").joinpath("assets/demo_kg.tsv"))


def default_lexicon_path() -> Path:
    return Path(resources.files("kgat").joinpath("assets/default_lexicon.csv"))


def load_demo_graph() -> KnowledgeGraph:
    """The small bundled graph of occupations and gendered terms."""
    return load_triples(demo_graph_path())
