"""Counterfactual augmentation: swap gendered (or other paired) terms.

A lexicon is a set of unordered token-sequence pairs; swapping replaces
every occurrence of either side with its partner, scanning left to right
and matching longer phrases first (same discipline as the entity
linker). Because pairs are unordered and share no tokens, swapping twice
returns the original token list.

Augmenting a dataset appends, for every record the swap actually
changes, a copy with swapped tokens, the same label, and the sensitive
attribute flipped through an explicit map.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from pathlib import Path

from .data import Record
from .graph import KnowledgeGraph, link_entities

Phrase = tuple[str, ...]


@dataclass
class SwapLexicon:
    """Unordered phrase pairs; no token may appear in two pairs."""

    pairs: list[tuple[Phrase, Phrase]]

    def __post_init__(self):
        # disjointness is across pairs; the two sides of one pair may
        # share tokens (e.g. "police man" / "police woman")
        token_sets: list[set[str]] = []
        for a, b in self.pairs:
            if a == b:
                raise ValueError(f"phrase {a} is paired with itself")
            if not a or not b:
                raise ValueError("empty phrase in lexicon pair")
            tokens = set(a) | set(b)
            for prev in token_sets:
                overlap = tokens & prev
                if overlap:
                    raise ValueError(
                        f"token {sorted(overlap)[0]!r} appears in two pairs")
            token_sets.append(tokens)
        self._partner: dict[Phrase, Phrase] = {}
        for a, b in self.pairs:
            self._partner[a] = b
            self._partner[b] = a
        self._max_len = max((len(p) for p in self._partner), default=0)

    def partner(self, phrase: Phrase) -> Phrase | None:
        return self._partner.get(phrase)

    @property
    def max_phrase_len(self) -> int:
        return self._max_len


def load_lexicon(source) -> SwapLexicon:
    """CSV with one ``term_a,term_b`` pair per line; ``#`` lines ignored.

    Terms may contain spaces, which makes them multi-token phrases.
    """
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    pairs: list[tuple[Phrase, Phrase]] = []
    for lineno, row in enumerate(csv.reader(io.StringIO("\n".join(lines)))):
        if len(row) != 2:
            raise ValueError(f"lexicon line {lineno + 1}: expected 2 terms, got {len(row)}")
        a = tuple(row[0].strip().lower().split())
        b = tuple(row[1].strip().lower().split())
        pairs.append((a, b))
    return SwapLexicon(pairs=pairs)


def swap_attributes(tokens: list[str], lexicon: SwapLexicon) -> list[str]:
    """Replace every paired phrase by its partner; greedy longest-first."""
    out: list[str] = []
    i = 0
    n = len(tokens)
    while i < n:
        replaced = False
        for span in range(min(lexicon.max_phrase_len, n - i), 0, -1):
            partner = lexicon.partner(tuple(tokens[i:i + span]))
            if partner is not None:
                out.extend(partner)
                i += span
                replaced = True
                break
        if not replaced:
            out.append(tokens[i])
            i += 1
    return out


def augment(dataset: list[Record], lexicon: SwapLexicon,
            attribute_flips: dict[str, str],
            g: KnowledgeGraph | None = None) -> list[Record]:
    """Append a counterfactual twin for every record the swap changes.

    Originals keep their order; counterfactual copies follow, also in
    original order. Labels are never touched. Mentions on the copies are
    re-linked against ``g`` when given (the swap moves entity surface
    forms around), otherwise left empty.
    """
    counterfactuals: list[Record] = []
    for r in dataset:
        if r.tokens is None:
            raise ValueError(f"record {r.id}: augmentation needs text payloads")
        swapped = swap_attributes(r.tokens, lexicon)
        if swapped == r.tokens:
            continue
        if r.attribute not in attribute_flips:
            raise ValueError(
                f"record {r.id}: attribute {r.attribute!r} missing from flip map")
        counterfactuals.append(replace(
            r, id=f"{r.id}-cf", tokens=swapped,
            attribute=attribute_flips[r.attribute],
            mentions=link_entities(swapped, g) if g is not None else []))
    return list(dataset) + counterfactuals
