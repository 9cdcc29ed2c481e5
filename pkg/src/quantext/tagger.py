"""Weak labeling: qualify the numeral spans that explain a gold total.

Given the candidates of a record and its gold (total, unit, type), the
tagger searches candidate combinations of size 3, then 2, then 1, in
lexicographic index order over the text-ordered candidates, and returns the
first combination whose value product equals the total. Products compare
exactly as decimals, with a 1e-9 relative tolerance fallback for converted
units. Combinations must be type-consistent: a count total admits only
count-cued members; a weight or volume total requires exactly one span of
its own dense type (unit-converted to the total's unit) and any remaining
members count-cued. A count total of exactly 1 qualifies the empty span
set. Records where no combination works are unqualifiable and are dropped
from extractor training.

Sidecar span file: JSONL, one object per record,

    {"id": "r1", "qualified": true,
     "spans": [{"attribute": "title", "start": 23, "end": 27}]}

with character offsets into the raw attribute text, end exclusive.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from decimal import Decimal
from typing import Iterable, Sequence

from .corpus import DataError, ProductRecord, Span, UoMType, decimals_close
from .rules import CandidateQuantity, UnitLexicon, find_candidates

MAX_COMBO = 3


@dataclass(frozen=True)
class QualifiedSpans:
    spans: tuple[CandidateQuantity, ...]
    qualified: bool
    product: Decimal | None

    def as_span_tuples(self) -> list[Span]:
        return [(c.attribute, c.start, c.end) for c in self.spans]


def qualify_spans(candidates: Sequence[CandidateQuantity],
                  total_value: Decimal, total_unit: str | None,
                  uom: UoMType, lexicon: UnitLexicon) -> QualifiedSpans:
    """First qualifying combination, favoring larger factorizations."""
    if uom == UoMType.COUNT and total_value == 1:
        return QualifiedSpans((), True, Decimal(1))
    n = len(candidates)
    total_factor = (Decimal(1) if uom == UoMType.COUNT
                    else lexicon.factor(total_unit, uom))
    for k in range(MAX_COMBO, 0, -1):
        if k > n:
            continue
        for combo in itertools.combinations(range(n), k):
            members = [candidates[i] for i in combo]
            dense = [c for c in members if c.cued_type != UoMType.COUNT]
            if uom == UoMType.COUNT:
                if dense:
                    continue
            else:
                if len(dense) != 1 or dense[0].cued_type != uom:
                    continue
            product = Decimal(1)
            for c in members:
                v = c.value
                if c.cued_type != UoMType.COUNT:
                    v = v * lexicon.factor(c.cue_unit, c.cued_type) / total_factor
                product *= v
            if decimals_close(product, total_value):
                return QualifiedSpans(tuple(members), True, product)
    return QualifiedSpans((), False, None)


def tag_record(record: ProductRecord, lexicon: UnitLexicon) -> QualifiedSpans:
    if record.gold_uom is None or record.gold_total is None:
        raise DataError(f"record {record.id}: gold labels required for tagging")
    value, unit = record.gold_total
    cands = find_candidates(record, lexicon)
    return qualify_spans(cands, value,
                         None if record.gold_uom == UoMType.COUNT else unit,
                         record.gold_uom, lexicon)


@dataclass
class TagStats:
    total: int = 0
    qualified: int = 0

    @property
    def unqualified(self) -> int:
        return self.total - self.qualified

    @property
    def unqualified_fraction(self) -> float:
        return self.unqualified / self.total if self.total else 0.0


def tag_records(records: Iterable[ProductRecord], lexicon: UnitLexicon,
                ) -> tuple[list[dict], TagStats]:
    rows = []
    stats = TagStats()
    for rec in records:
        qs = tag_record(rec, lexicon)
        stats.total += 1
        stats.qualified += int(qs.qualified)
        rows.append(span_row(rec.id, qs.qualified, qs.as_span_tuples()))
    return rows, stats


# ----------------------------------------------------------------- sidecar IO

def span_row(record_id: str, qualified: bool, spans: Sequence[Span]) -> dict:
    return {
        "id": record_id,
        "qualified": bool(qualified),
        "spans": [{"attribute": a, "start": s, "end": e} for a, s, e in spans],
    }


@dataclass(frozen=True)
class SpanEntry:
    qualified: bool
    spans: tuple[Span, ...]


def write_spans(rows: Iterable[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def load_spans(path) -> dict[str, SpanEntry]:
    out: dict[str, SpanEntry] = {}
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: invalid JSON ({e.msg})") from None
            rid = obj.get("id")
            if not isinstance(rid, str):
                raise DataError(f"{path}:{lineno}: missing record id")
            spans = []
            for s in obj.get("spans", []):
                try:
                    spans.append((str(s["attribute"]), int(s["start"]),
                                  int(s["end"])))
                except (KeyError, TypeError, ValueError):
                    raise DataError(
                        f"{path}:{lineno}: malformed span entry") from None
            out[rid] = SpanEntry(bool(obj.get("qualified", True)),
                                 tuple(spans))
    return out
