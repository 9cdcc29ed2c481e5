"""Unit lexicon, numeric candidate detection and the rule-based baseline.

A candidate is a positive numeral with a cued unit-of-measure type taken
from its immediate context: a unit token within the next two word tokens
(stopping at any intervening numeral), or a preceding "<count word> of"
bigram as in "pack of 2". Bare numerals default to count. The baseline
classifier scans short-text tokens for unit keywords with volume taking
priority over weight over count, and the baseline extractor feeds
guardrail-filtered candidates into the shared aggregation rules.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Iterable, Sequence

from .corpus import (ATTRIBUTE_NAMES, DataError, ProductRecord, UoMType,
                     normalize_text)

_NUMBER = r"\d+(?:[.,]\d+)?"
_TOKEN = re.compile(rf"{_NUMBER}|[^\W\d_]+")


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int
    is_number: bool


def tokenize(text: str) -> list[Token]:
    """Word and numeral tokens with character offsets (lowercased text)."""
    norm = normalize_text(text)
    out = []
    for m in _TOKEN.finditer(norm):
        t = m.group(0)
        out.append(Token(t, m.start(), m.end(), t[0].isdigit()))
    return out


def parse_number(text: str) -> Decimal:
    """Parse a numeral token, accepting comma as the decimal separator."""
    return Decimal(text.replace(",", "."))


_WEIGHT_UNITS = {
    "mg": "0.001", "milligram": "0.001", "milligrams": "0.001",
    "g": "1", "gm": "1", "grm": "1", "gram": "1", "grams": "1",
    "kg": "1000", "kilogram": "1000", "kilograms": "1000",
    "oz": "28.3495", "ounce": "28.3495", "ounces": "28.3495",
    "lb": "453.592", "lbs": "453.592", "pound": "453.592", "pounds": "453.592",
}

_VOLUME_UNITS = {
    "ml": "1", "millilitre": "1", "milliliter": "1",
    "millilitres": "1", "milliliters": "1",
    "l": "1000", "ltr": "1000", "litre": "1000", "liter": "1000",
    "litres": "1000", "liters": "1000",
    "fl oz": "29.5735", "fluid ounce": "29.5735", "fluid ounces": "29.5735",
    "gal": "3785.41", "gallon": "3785.41", "gallons": "3785.41",
}

_COUNT_UNITS = (
    "ct", "count", "counts", "pack", "packs", "pk", "pcs", "pc",
    "piece", "pieces", "pod", "pods", "tablet", "tablets",
    "capsule", "capsules", "pair", "pairs", "set", "sets",
    "box", "boxes", "sachet", "sachets", "unit", "units", "x",
    "lot", "lots", "carton", "cartons",
)

# Connectives accepted inside a "<count-unit> of <numeral>" cue.
_PACK_OF_WORDS = frozenset({"of", "de"})

_BASE_UNIT = {UoMType.WEIGHT: "g", UoMType.VOLUME: "ml"}


@dataclass(frozen=True)
class UnitLexicon:
    """Unit tokens per type; weight factors are grams, volume millilitres."""

    weight: dict[str, Decimal]
    volume: dict[str, Decimal]
    count: frozenset[str]

    def __post_init__(self):
        w, v, c = set(self.weight), set(self.volume), set(self.count)
        overlap = (w & v) | (w & c) | (v & c)
        if overlap:
            raise ValueError(f"unit tokens appear in multiple types: {sorted(overlap)}")

    @classmethod
    def default(cls) -> "UnitLexicon":
        return cls(
            weight={k: Decimal(v) for k, v in _WEIGHT_UNITS.items()},
            volume={k: Decimal(v) for k, v in _VOLUME_UNITS.items()},
            count=frozenset(_COUNT_UNITS),
        )

    def base_unit(self, uom: UoMType) -> str:
        return _BASE_UNIT.get(uom, "count")

    def factor(self, unit: str | None, uom: UoMType) -> Decimal:
        """Conversion factor from `unit` to the base unit of its type."""
        if uom == UoMType.COUNT:
            return Decimal(1)
        table = self.weight if uom == UoMType.WEIGHT else self.volume
        if unit is None or unit not in table:
            raise DataError(f"unknown {uom.value} unit {unit!r}")
        return table[unit]

    def type_of(self, token: str) -> UoMType | None:
        if token in self.weight:
            return UoMType.WEIGHT
        if token in self.volume:
            return UoMType.VOLUME
        if token in self.count:
            return UoMType.COUNT
        return None


def load_lexicon(path) -> UnitLexicon:
    """Load a lexicon override from CSV rows: token,type,factor."""
    weight: dict[str, Decimal] = {}
    volume: dict[str, Decimal] = {}
    count: set[str] = set()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if len(row) < 2:
                raise DataError(f"{path}:{lineno}: expected token,type[,factor]")
            token = row[0].strip().lower()
            kind = row[1].strip().lower()
            if kind == "weight":
                weight[token] = Decimal(row[2].strip())
            elif kind == "volume":
                volume[token] = Decimal(row[2].strip())
            elif kind == "count":
                count.add(token)
            else:
                raise DataError(f"{path}:{lineno}: unknown type {kind!r}")
    try:
        return UnitLexicon(weight=weight, volume=volume, count=frozenset(count))
    except ValueError as e:
        raise DataError(f"{path}: {e}") from None


@dataclass(frozen=True)
class CandidateQuantity:
    """A numeral span (end exclusive) with its context-cued type."""

    attribute: str
    start: int
    end: int
    value: Decimal
    cued_type: UoMType
    cue_unit: str | None

    def as_typed(self):
        from .aggregate import TypedQuantity
        return TypedQuantity(self.value, self.cued_type, self.cue_unit)


def cue_for_index(tokens: Sequence[Token], i: int,
                  lexicon: UnitLexicon) -> tuple[UoMType, str | None]:
    """Type cue for the numeral at tokens[i] from its immediate context."""
    if (i >= 2 and tokens[i - 1].text in _PACK_OF_WORDS
            and tokens[i - 2].text in lexicon.count):
        return UoMType.COUNT, tokens[i - 2].text
    j = i + 1
    looked = 0
    while j < len(tokens) and looked < 2:
        tok = tokens[j]
        if tok.is_number:
            break
        if j + 1 < len(tokens) and not tokens[j + 1].is_number:
            bigram = f"{tok.text} {tokens[j + 1].text}"
            if bigram in lexicon.volume:
                return UoMType.VOLUME, bigram
            if bigram in lexicon.weight:
                return UoMType.WEIGHT, bigram
        kind = lexicon.type_of(tok.text)
        if kind is UoMType.WEIGHT:
            return UoMType.WEIGHT, tok.text
        if kind is UoMType.VOLUME:
            return UoMType.VOLUME, tok.text
        if kind is UoMType.COUNT:
            return UoMType.COUNT, tok.text
        looked += 1
        j += 1
    return UoMType.COUNT, None


def find_candidates(record: ProductRecord, lexicon: UnitLexicon,
                    attributes: Sequence[str] | None = None,
                    ) -> list[CandidateQuantity]:
    """All positive numerals in text order with their cued types."""
    out: list[CandidateQuantity] = []
    for attr in ATTRIBUTE_NAMES:
        if attributes is not None and attr not in attributes:
            continue
        text = record.attributes.get(attr, "")
        if not text:
            continue
        tokens = tokenize(text)
        for i, tok in enumerate(tokens):
            if not tok.is_number:
                continue
            value = parse_number(tok.text)
            if value <= 0:
                continue
            cued, unit = cue_for_index(tokens, i, lexicon)
            out.append(CandidateQuantity(attr, tok.start, tok.end, value,
                                         cued, unit))
    return out


def cue_for_span(text: str, start: int, end: int,
                 lexicon: UnitLexicon) -> tuple[UoMType, str | None]:
    """Cue for an arbitrary character span, via its covering numeral token."""
    tokens = tokenize(text)
    for i, tok in enumerate(tokens):
        if tok.is_number and tok.start <= start < tok.end:
            return cue_for_index(tokens, i, lexicon)
    return UoMType.COUNT, None


@dataclass(frozen=True)
class Guardrails:
    """Plausible ranges per type, in base units (grams / millilitres)."""

    weight_g: tuple[Decimal, Decimal] = (Decimal("0.1"), Decimal("50000"))
    volume_ml: tuple[Decimal, Decimal] = (Decimal("1"), Decimal("20000"))
    count: tuple[Decimal, Decimal] = (Decimal("1"), Decimal("1000"))

    def admits(self, cand: CandidateQuantity, lexicon: UnitLexicon) -> bool:
        if cand.cued_type == UoMType.COUNT:
            lo, hi = self.count
            base = cand.value
        else:
            factor = lexicon.factor(cand.cue_unit, cand.cued_type)
            base = cand.value * factor
            lo, hi = (self.weight_g if cand.cued_type == UoMType.WEIGHT
                      else self.volume_ml)
        return lo <= base <= hi


_EXTRA_VOLUME_KEYWORDS = frozenset({"liquid", "fluid"})


def classify_uom_rules(record: ProductRecord, lexicon: UnitLexicon,
                       attributes: Sequence[str] | None = None) -> UoMType:
    """Keyword baseline: first hit in priority volume > weight > count."""
    from .corpus import SHORT_TEXT_ATTRIBUTES
    attrs = attributes if attributes is not None else SHORT_TEXT_ATTRIBUTES
    tokens: list[str] = []
    for attr, text in record.attributes.items():
        if attr not in attrs:
            continue
        tokens.extend(t.text for t in tokenize(text))
    bigrams = {f"{a} {b}" for a, b in zip(tokens, tokens[1:])}
    words = set(tokens) | bigrams
    if words & (set(lexicon.volume) | _EXTRA_VOLUME_KEYWORDS):
        return UoMType.VOLUME
    if words & set(lexicon.weight):
        return UoMType.WEIGHT
    return UoMType.COUNT


def extract_quantities_rules(record: ProductRecord, lexicon: UnitLexicon,
                             guardrails: Guardrails | None = None,
                             attributes: Sequence[str] | None = None):
    """Baseline extraction: guardrailed candidates through aggregation.

    Returns (total or None, predicted uom, admitted candidates).
    """
    from .aggregate import aggregate_total
    from .corpus import SHORT_TEXT_ATTRIBUTES
    guardrails = guardrails or Guardrails()
    attrs = attributes if attributes is not None else SHORT_TEXT_ATTRIBUTES
    uom = classify_uom_rules(record, lexicon, attrs)
    cands = [c for c in find_candidates(record, lexicon, attrs)
             if guardrails.admits(c, lexicon)]
    if not cands:
        return None, uom, []
    total = aggregate_total([c.as_typed() for c in cands], uom, lexicon)
    return total, uom, cands
