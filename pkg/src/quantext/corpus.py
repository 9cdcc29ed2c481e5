"""Product records, the character vocabulary, text encoding and noising.

Records carry an ordered attribute map (title, description, bullet_points,
ocr_text), a category path and optional gold labels. Text encoding is
length preserving: each character maps to exactly one vocabulary id, so
character offsets in the raw attribute text line up one-to-one with model
sequence positions (until truncation). Noising inserts and deletes words
away from gold numeric spans and remaps span offsets accordingly.

JSONL record schema (one object per line):

    {"id": "r1", "attributes": {"title": "...", ...},
     "category_path": ["grocery", "grocery/coffee"], "locale": "us",
     "gold_uom": "weight", "gold_total": {"value": 85.0, "unit": "oz"}}

gold_* fields are optional; unknown fields are ignored.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from enum import Enum
from typing import Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed input data; carries enough context to locate the line."""


class UoMType(str, Enum):
    WEIGHT = "weight"
    VOLUME = "volume"
    COUNT = "count"

    @classmethod
    def from_str(cls, s: str) -> "UoMType":
        try:
            return cls(s.lower())
        except ValueError:
            raise DataError(f"unknown uom type {s!r}") from None


CLASS_ORDER = (UoMType.WEIGHT, UoMType.VOLUME, UoMType.COUNT)
CLASS_INDEX = {u: i for i, u in enumerate(CLASS_ORDER)}

ATTRIBUTE_NAMES = ("title", "description", "bullet_points", "ocr_text")
SHORT_TEXT_ATTRIBUTES = ("title",)

_ACCENTED = "àâäçèéêëîïôöùûüñáíóúìòßœ"
_PUNCT = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~"


class CharVocab:
    """Fixed 128-entry character vocabulary.

    Index 0 is padding, index 1 the unknown character. The tail is reserved
    private-use codepoints so the table size stays a power of two.
    """

    PAD = "\x00"
    UNK = "\x01"

    def __init__(self, entries: Sequence[str] | None = None):
        if entries is None:
            base = [self.PAD, self.UNK, " "]
            base += list("abcdefghijklmnopqrstuvwxyz")
            base += list("0123456789")
            base += list(_PUNCT)
            base += list(_ACCENTED)
            base += [chr(0xE000 + i) for i in range(128 - len(base))]
            entries = base
        self.entries: tuple[str, ...] = tuple(entries)
        if len(self.entries) != 128:
            raise ValueError(f"vocabulary must have 128 entries, got {len(self.entries)}")
        if len(set(self.entries)) != len(self.entries):
            raise ValueError("vocabulary entries must be unique")
        self.pad_index = 0
        self.unknown_index = 1
        self._index = {ch: i for i, ch in enumerate(self.entries)}

    def __len__(self) -> int:
        return len(self.entries)

    def encode_char(self, ch: str) -> int:
        return self._index.get(ch, self.unknown_index)

    def char_at(self, idx: int) -> str:
        return self.entries[idx]

    def fingerprint(self) -> str:
        payload = "".join(self.entries).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


def build_vocab() -> CharVocab:
    return CharVocab()


def normalize_text(text: str) -> str:
    """Lowercase and map every whitespace character to a plain space.

    One-to-one per character, so offsets into the original string remain
    valid in the normalized string.
    """
    return "".join(" " if ch.isspace() else ch for ch in text).lower()


def encode_text(text: str, vocab: CharVocab,
                max_len: int | None = None) -> tuple[np.ndarray, int]:
    """Encode text to vocabulary ids, returning (ids, length before padding).

    When max_len is given the sequence is truncated or right-padded with the
    pad index to exactly max_len; the returned length is the pre-padding
    (post-truncation) character count.
    """
    norm = normalize_text(text)
    if max_len is not None:
        norm = norm[:max_len]
    ids = np.fromiter((vocab.encode_char(c) for c in norm), dtype=np.int64,
                      count=len(norm))
    n = len(norm)
    if max_len is not None and n < max_len:
        ids = np.concatenate([ids, np.full(max_len - n, vocab.pad_index,
                                           dtype=np.int64)])
    return ids, n


@dataclass
class ProductRecord:
    id: str
    attributes: dict[str, str]
    category_path: list[str] = field(default_factory=list)
    locale: str = "us"
    gold_uom: UoMType | None = None
    gold_total: tuple[Decimal, str] | None = None  # (value, unit token)

    @property
    def title(self) -> str:
        if "title" in self.attributes:
            return self.attributes["title"]
        return next(iter(self.attributes.values()), "")

    def to_dict(self) -> dict:
        out: dict = {
            "id": self.id,
            "attributes": dict(self.attributes),
            "category_path": list(self.category_path),
            "locale": self.locale,
        }
        if self.gold_uom is not None:
            out["gold_uom"] = self.gold_uom.value
        if self.gold_total is not None:
            value, unit = self.gold_total
            out["gold_total"] = {"value": float(value), "unit": unit}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ProductRecord":
        if not isinstance(d, dict):
            raise DataError("record must be a JSON object")
        rid = d.get("id")
        if not isinstance(rid, str) or not rid:
            raise DataError("record is missing a string 'id'")
        attrs = d.get("attributes")
        if not isinstance(attrs, dict) or not attrs:
            raise DataError(f"record {rid}: 'attributes' must be a non-empty object")
        for k, v in attrs.items():
            if not isinstance(k, str) or not isinstance(v, str):
                raise DataError(f"record {rid}: attribute {k!r} must map to a string")
        cats = d.get("category_path", [])
        if not isinstance(cats, list) or any(not isinstance(c, str) for c in cats):
            raise DataError(f"record {rid}: 'category_path' must be a list of strings")
        gold_uom = None
        if d.get("gold_uom") is not None:
            gold_uom = UoMType.from_str(str(d["gold_uom"]))
        gold_total = None
        if d.get("gold_total") is not None:
            gt = d["gold_total"]
            if not isinstance(gt, dict) or "value" not in gt or "unit" not in gt:
                raise DataError(f"record {rid}: 'gold_total' needs value and unit")
            gold_total = (parse_decimal(gt["value"], rid), str(gt["unit"]))
        return cls(id=rid, attributes=dict(attrs), category_path=list(cats),
                   locale=str(d.get("locale", "us")), gold_uom=gold_uom,
                   gold_total=gold_total)


REL_TOL = Decimal("1e-9")


def decimals_close(a: Decimal, b: Decimal, rel: Decimal = REL_TOL) -> bool:
    """Exact decimal equality with a relative-tolerance fallback."""
    if a == b:
        return True
    return abs(a - b) <= rel * max(abs(a), abs(b))


def parse_decimal(value, context: str = "") -> Decimal:
    """Parse a JSON number or numeric string into an exact Decimal."""
    try:
        if isinstance(value, bool):
            raise InvalidOperation
        if isinstance(value, (int, str)):
            d = Decimal(str(value).strip().replace(",", "."))
        elif isinstance(value, float):
            d = Decimal(repr(value))
        else:
            raise InvalidOperation
    except InvalidOperation:
        where = f" in {context}" if context else ""
        raise DataError(f"cannot parse decimal from {value!r}{where}") from None
    if not d.is_finite():
        raise DataError(f"non-finite quantity value {value!r}")
    return d


def load_jsonl(path) -> list[ProductRecord]:
    records = []
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
            try:
                records.append(ProductRecord.from_dict(obj))
            except DataError as e:
                raise DataError(f"{path}:{lineno}: {e}") from None
    return records


def write_jsonl(records: Iterable[ProductRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")


# --------------------------------------------------------------------- noise

Span = tuple[str, int, int]  # (attribute, start, end) with end exclusive

_DISTRACTOR_TOKENS = (
    "kg", "gm", "ml", "oz", "litre", "pack", "ct", "gram", "pcs", "fl",
    "lb", "net", "wt", "family", "size", "value",
)

_WORD = re.compile(r"\S+")


@dataclass(frozen=True)
class NoiseConfig:
    gibberish_rate: float = 0.04   # per word boundary
    distractor_rate: float = 0.03  # per word boundary
    delete_rate: float = 0.05     # per unprotected word


def _gibberish(rng: np.random.Generator) -> str:
    n = int(rng.integers(3, 9))
    letters = "abcdefghijklmnopqrstuvwxyz"
    return "".join(letters[int(i)] for i in rng.integers(0, 26, size=n))


def _noise_one(text: str, spans: list[tuple[int, int]], cfg: NoiseConfig,
               rng: np.random.Generator) -> tuple[str, list[tuple[int, int]]]:
    tokens = list(_WORD.finditer(text))
    span_tokens = set()
    for k, tok in enumerate(tokens):
        for s, e in spans:
            if tok.start() < e and tok.end() > s:
                span_tokens.add(k)
    # keep a window of neighbors so unit cues next to spans survive deletion
    protected = set()
    for k in span_tokens:
        protected.update(range(max(0, k - 1), min(len(tokens), k + 3)))
    deleted = set()
    for k, tok in enumerate(tokens):
        if k in protected:
            continue
        if rng.random() < cfg.delete_rate:
            deleted.add(k)
    edits: list[tuple[int, int, str]] = []  # (pos, end, replacement)
    for k in deleted:
        tok = tokens[k]
        start, end = tok.start(), tok.end()
        if end < len(text) and text[end] == " ":
            end += 1
        elif start > 0 and text[start - 1] == " ":
            start -= 1
        edits.append((start, end, ""))
    boundaries = [tok.start() for k, tok in enumerate(tokens) if k not in deleted]
    boundaries.append(len(text))
    for pos in boundaries:
        near_span = any(s - 2 <= pos <= e + 2 for s, e in spans)
        if near_span:
            continue
        r = rng.random()
        if r < cfg.gibberish_rate:
            word = _gibberish(rng)
        elif r < cfg.gibberish_rate + cfg.distractor_rate:
            word = _DISTRACTOR_TOKENS[int(rng.integers(0, len(_DISTRACTOR_TOKENS)))]
        else:
            continue
        ins = word + " " if pos < len(text) else " " + word
        edits.append((pos, pos, ins))
    edits.sort(key=lambda t: (t[0], t[1]))
    pieces = []
    cursor = 0
    shift_points: list[tuple[int, int]] = []  # (original position, delta)
    for start, end, repl in edits:
        pieces.append(text[cursor:start])
        pieces.append(repl)
        shift_points.append((end, len(repl) - (end - start)))
        cursor = end
    pieces.append(text[cursor:])
    new_text = "".join(pieces)
    new_spans = []
    for s, e in spans:
        delta = sum(d for pos, d in shift_points if pos <= s)
        new_spans.append((s + delta, e + delta))
    return new_text, new_spans


def noise_text(record: ProductRecord, gold_spans: Sequence[Span],
               cfg: NoiseConfig, rng: np.random.Generator,
               ) -> tuple[ProductRecord, list[Span]]:
    """Return a noised copy of the record with gold spans remapped.

    Insertions happen at word boundaries away from gold spans; deletions
    only touch words outside a small protective window around each span, so
    the span substrings (and their unit cues) are preserved verbatim.
    """
    new_attrs: dict[str, str] = {}
    new_spans: list[Span] = []
    for attr, text in record.attributes.items():
        here = [(s, e) for a, s, e in gold_spans if a == attr]
        new_text, mapped = _noise_one(text, here, cfg, rng)
        new_attrs[attr] = new_text
        new_spans.extend((attr, s, e) for s, e in mapped)
    noised = ProductRecord(
        id=record.id, attributes=new_attrs,
        category_path=list(record.category_path), locale=record.locale,
        gold_uom=record.gold_uom, gold_total=record.gold_total)
    return noised, new_spans
