"""Ambiguity detection, dataset statistics and hard-example upsampling.

A record is ambiguous when its short text mentions unit tokens of a type
other than its labeled type: weight tokens under a volume label, volume
tokens under a weight label, or either under a count label. Multi-word unit
tokens ("fl oz") are matched as bigrams first and consume their words, so a
volume-labeled "12 fl oz" title is not flagged for the bare "oz".
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import ProductRecord, UoMType
from .rules import UnitLexicon, tokenize


@dataclass(frozen=True)
class AmbiguityTokens:
    """Weight and volume token sets, including multi-word tokens."""

    weight: frozenset[str]
    volume: frozenset[str]

    @classmethod
    def from_lexicon(cls, lexicon: UnitLexicon) -> "AmbiguityTokens":
        return cls(weight=frozenset(lexicon.weight),
                   volume=frozenset(lexicon.volume))


def ambiguity(title_tokens: Sequence[str], uom: UoMType,
              tokens: AmbiguityTokens) -> int:
    """1 when the token sequence mentions units conflicting with `uom`."""
    has_w = False
    has_v = False
    i = 0
    n = len(title_tokens)
    while i < n:
        if i + 1 < n:
            bigram = f"{title_tokens[i]} {title_tokens[i + 1]}"
            if bigram in tokens.volume:
                has_v = True
                i += 2
                continue
            if bigram in tokens.weight:
                has_w = True
                i += 2
                continue
        if title_tokens[i] in tokens.weight:
            has_w = True
        elif title_tokens[i] in tokens.volume:
            has_v = True
        i += 1
    if uom == UoMType.VOLUME:
        return int(has_w)
    if uom == UoMType.WEIGHT:
        return int(has_v)
    return int(has_w or has_v)


def record_ambiguity(record: ProductRecord, tokens: AmbiguityTokens,
                     uom: UoMType | None = None) -> int:
    kind = uom or record.gold_uom
    if kind is None:
        raise ValueError(f"record {record.id}: no UoM label for ambiguity")
    words = [t.text for t in tokenize(record.title)]
    return ambiguity(words, kind, tokens)


def dataset_stats(records: Sequence[ProductRecord], lexicon: UnitLexicon,
                  spans: dict | None = None) -> dict:
    """Ambiguity shares overall, per type and per top category, plus the
    span-count histogram when a gold-span mapping is supplied."""
    tokens = AmbiguityTokens.from_lexicon(lexicon)
    n = len(records)
    amb_total = 0
    per_uom: dict[str, dict[str, int]] = {}
    per_cat: dict[str, dict[str, int]] = {}
    uom_counts: dict[str, int] = {}
    for rec in records:
        kind = rec.gold_uom
        label = kind.value if kind else "unlabeled"
        uom_counts[label] = uom_counts.get(label, 0) + 1
        flag = record_ambiguity(rec, tokens) if kind else 0
        amb_total += flag
        slot = per_uom.setdefault(label, {"n": 0, "ambiguous": 0})
        slot["n"] += 1
        slot["ambiguous"] += flag
        top = rec.category_path[0] if rec.category_path else ""
        cslot = per_cat.setdefault(top, {"n": 0, "ambiguous": 0})
        cslot["n"] += 1
        cslot["ambiguous"] += flag
    out = {
        "n": n,
        "uom_counts": uom_counts,
        "ambiguous": {
            "count": amb_total,
            "share": (amb_total / n) if n else 0.0,
            "per_uom": {
                k: {**v, "share": v["ambiguous"] / v["n"] if v["n"] else 0.0}
                for k, v in sorted(per_uom.items())
            },
            "per_category": {
                k: {**v, "share": v["ambiguous"] / v["n"] if v["n"] else 0.0}
                for k, v in sorted(per_cat.items())
            },
        },
    }
    if spans is not None:
        hist: dict[int, int] = {}
        matched = 0
        for rec in records:
            entry = spans.get(rec.id)
            if entry is None:
                continue
            matched += 1
            k = len(entry.spans)
            hist[k] = hist.get(k, 0) + 1
        out["span_histogram"] = {str(k): hist[k] for k in sorted(hist)}
        out["span_mix"] = {
            str(k): hist[k] / matched for k in sorted(hist)
        } if matched else {}
        out["span_records"] = matched
    return out


def hard_flags(records: Sequence[ProductRecord],
               lexicon: UnitLexicon) -> np.ndarray:
    tokens = AmbiguityTokens.from_lexicon(lexicon)
    return np.array(
        [bool(rec.gold_uom) and record_ambiguity(rec, tokens) == 1
         for rec in records], dtype=bool)


def upsample_hard(hard: np.ndarray, factor: float,
                  rng: np.random.Generator) -> np.ndarray:
    """One epoch of example indices with hard examples upsampled.

    Hard examples appear with frequency ~ min(factor * base_rate, 0.5) in
    the returned stream while every non-hard example still appears exactly
    once. factor == 1 or an all-easy dataset degrades to a plain shuffle.
    """
    if factor < 1:
        raise ValueError("upsample factor must be >= 1")
    hard = np.asarray(hard, dtype=bool)
    n = hard.size
    hard_idx = np.flatnonzero(hard)
    rest_idx = np.flatnonzero(~hard)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    if hard_idx.size == 0 or rest_idx.size == 0 or factor == 1:
        return rng.permutation(n).astype(np.int64)
    base = hard_idx.size / n
    share = min(factor * base, 0.5)
    needed = int(round(share / (1.0 - share) * rest_idx.size))
    needed = max(needed, hard_idx.size)
    reps, extra = divmod(needed, hard_idx.size)
    order = rng.permutation(hard_idx)
    pieces = [np.repeat(order, reps), order[:extra], rest_idx]
    stream = np.concatenate(pieces).astype(np.int64)
    return rng.permutation(stream)


def hard_share(stream: np.ndarray, hard: np.ndarray) -> float:
    if stream.size == 0:
        return 0.0
    return float(np.asarray(hard, dtype=bool)[stream].mean())
