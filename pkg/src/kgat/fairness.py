"""Bias detection: group rate metrics and embedding association tests.

Demographic parity compares P(pred=1 | group) across groups; equal
opportunity compares true-positive rates, skipping groups that have no
positive examples rather than inventing a zero. Both report the maximum
pairwise absolute gap. The WEAT statistic measures differential cosine
association between two target word sets and two attribute word sets,
with a permutation test over re-partitions of the targets.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AuditRecord:
    y_true: int
    y_pred: int
    attribute: str

    def __post_init__(self):
        if self.y_true not in (0, 1) or self.y_pred not in (0, 1):
            raise ValueError(
                f"labels must be 0/1, got y_true={self.y_true} y_pred={self.y_pred}")


@dataclass
class ParityResult:
    positive_rates: dict[str, float]
    gap: float


@dataclass
class OpportunityResult:
    tpr_by_group: dict[str, float]
    gap: float | None          # None when every group was excluded
    excluded: dict[str, str]

    @property
    def undefined(self) -> bool:
        return self.gap is None


@dataclass
class FairnessReport:
    """Everything the audit pipeline knows about one prediction set."""

    parity: ParityResult
    opportunity: OpportunityResult
    record_count: int
    adjusted_positive_rates: dict[str, float] | None = None
    adjustment_note: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "adjusted_positive_rates": self.adjusted_positive_rates,
            "adjustment_note": self.adjustment_note,
            "excluded_groups": self.opportunity.excluded,
            "opportunity_gap": self.opportunity.gap,
            "opportunity_undefined": self.opportunity.undefined,
            "parity_gap": self.parity.gap,
            "positive_rates": self.parity.positive_rates,
            "record_count": self.record_count,
            "tpr_by_group": self.opportunity.tpr_by_group,
        }


def _max_pairwise_gap(values: list[float]) -> float:
    if len(values) < 2:
        return 0.0
    return max(values) - min(values)


def demographic_parity(records: list[AuditRecord]) -> ParityResult:
    """Positive-prediction rate per group and the max pairwise gap."""
    if not records:
        raise ValueError("demographic_parity needs at least one record")
    by_group: dict[str, list[int]] = {}
    for r in records:
        by_group.setdefault(r.attribute, []).append(r.y_pred)
    rates = {g: sum(v) / len(v) for g, v in sorted(by_group.items())}
    return ParityResult(positive_rates=rates, gap=_max_pairwise_gap(list(rates.values())))


def equal_opportunity(records: list[AuditRecord]) -> OpportunityResult:
    """True-positive rate per group over records with y_true=1.

    Groups without any positive example are excluded and reported with a
    reason; if that excludes everything, the gap is explicitly undefined.
    """
    if not records:
        raise ValueError("equal_opportunity needs at least one record")
    groups: dict[str, list[AuditRecord]] = {}
    for r in records:
        groups.setdefault(r.attribute, []).append(r)
    tpr: dict[str, float] = {}
    excluded: dict[str, str] = {}
    for g, rs in sorted(groups.items()):
        positives = [r for r in rs if r.y_true == 1]
        if not positives:
            excluded[g] = "no records with y_true=1"
            log.warning("equal_opportunity: group %r has no positives, excluded", g)
            continue
        tpr[g] = sum(r.y_pred for r in positives) / len(positives)
    gap = _max_pairwise_gap(list(tpr.values())) if tpr else None
    return OpportunityResult(tpr_by_group=tpr, gap=gap, excluded=excluded)


def load_audit_csv(path) -> list[AuditRecord]:
    """Read the ``y_true,y_pred,attribute`` CSV the CLI exchanges."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        required = {"y_true", "y_pred", "attribute"}
        if reader.fieldnames is None or set(reader.fieldnames) != required:
            raise ValueError(
                f"audit CSV must have exactly the columns {sorted(required)}, "
                f"got {reader.fieldnames}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            try:
                records.append(AuditRecord(y_true=int(row["y_true"]),
                                           y_pred=int(row["y_pred"]),
                                           attribute=row["attribute"]))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"audit CSV row {lineno}: {exc}")
    return records


def write_audit_csv(records: list[AuditRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["y_true", "y_pred", "attribute"])
        for r in records:
            writer.writerow([r.y_true, r.y_pred, r.attribute])


# -- word embedding association test ----------------------------------------

@dataclass
class WeatSpec:
    """Target sets x/y, attribute sets a/b, and the embedding lookup."""

    targets_x: list[str]
    targets_y: list[str]
    attributes_a: list[str]
    attributes_b: list[str]
    embeddings: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, words in (("targets_x", self.targets_x),
                            ("targets_y", self.targets_y),
                            ("attributes_a", self.attributes_a),
                            ("attributes_b", self.attributes_b)):
            if not words:
                raise ValueError(f"WEAT set {name} is empty")
        if set(self.targets_x) & set(self.targets_y):
            raise ValueError("target sets overlap")
        if set(self.attributes_a) & set(self.attributes_b):
            raise ValueError("attribute sets overlap")
        for w in itertools.chain(self.targets_x, self.targets_y,
                                 self.attributes_a, self.attributes_b):
            if w not in self.embeddings:
                raise ValueError(f"word {w!r} has no embedding")


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for a zero-norm vector")
    return float(np.dot(a, b) / (na * nb))


def _association(word: str, spec: WeatSpec) -> float:
    emb = spec.embeddings
    w = emb[word]
    mean_a = np.mean([_cosine(w, emb[a]) for a in spec.attributes_a])
    mean_b = np.mean([_cosine(w, emb[b]) for b in spec.attributes_b])
    return mean_a - mean_b


def weat(spec: WeatSpec, permutations: int = 0,
         seed: int = 0) -> tuple[float, float]:
    """Effect size and permutation p-value for the association test.

    ``permutations=0`` enumerates every equal-size re-partition of the
    pooled targets (allowed up to 12 pooled words); a positive count
    samples that many random re-partitions with the given seed. The
    p-value is the fraction of re-partitions whose statistic exceeds the
    observed one.
    """
    pooled = spec.targets_x + spec.targets_y
    assoc = {w: _association(w, spec) for w in pooled}
    n_x = len(spec.targets_x)

    def statistic(x_words) -> float:
        x_set = set(x_words)
        return (sum(assoc[w] for w in x_set)
                - sum(assoc[w] for w in pooled if w not in x_set))

    observed = statistic(spec.targets_x)
    values = np.array([assoc[w] for w in pooled])
    std = float(values.std())
    if std == 0.0:
        raise ValueError("WEAT effect size undefined: zero variance in associations")
    effect = (float(np.mean([assoc[w] for w in spec.targets_x]))
              - float(np.mean([assoc[w] for w in spec.targets_y]))) / std

    if permutations < 0:
        raise ValueError(f"permutations must be >= 0, got {permutations}")
    if permutations == 0:
        if len(pooled) > 12:
            raise ValueError(
                f"exhaustive permutation limited to 12 pooled words, got {len(pooled)}")
        partitions = itertools.combinations(pooled, n_x)
        stats = [statistic(p) for p in partitions]
    else:
        rng = np.random.default_rng(seed)
        stats = []
        for _ in range(permutations):
            pick = rng.choice(len(pooled), size=n_x, replace=False)
            stats.append(statistic([pooled[i] for i in pick]))
    p_value = sum(s > observed for s in stats) / len(stats)
    return effect, p_value


def weat_statistic(spec: WeatSpec) -> float:
    """The raw (unnormalized) test statistic, exposed for reporting."""
    return (sum(_association(w, spec) for w in spec.targets_x)
            - sum(_association(w, spec) for w in spec.targets_y))
