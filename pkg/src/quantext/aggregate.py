"""Aggregation of typed quantity spans into one purchasable total.

Spans stack in text order. Weight and volume values are unit-converted when
units differ, exact duplicates are removed, then a running sum is formed
that skips any entry equal to the sum so far (this absorbs "total ..."
restatements). Count values multiply the same way: duplicates removed, then
a running product that skips entries equal to the product so far. The final
total is (weight-or-volume sum) x (count product) when the predicted type
is weight or volume, otherwise the count product alone. A weight or volume
prediction with no matching spans abstains (returns None); spans of the
other dense type under such a prediction are ignored with a warning.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from decimal import Decimal
from typing import Sequence

from .corpus import UoMType, decimals_close
from .rules import UnitLexicon

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TypedQuantity:
    """A quantity value with its cued type; unit is None for counts."""

    value: Decimal
    uom: UoMType
    unit: str | None = None


@dataclass(frozen=True)
class TotalQuantity:
    value: Decimal
    unit: str
    uom: UoMType

    def to_dict(self) -> dict:
        return {"value": float(self.value), "unit": self.unit,
                "uom": self.uom.value}


def _dedupe(values: Sequence[Decimal]) -> list[Decimal]:
    out: list[Decimal] = []
    for v in values:
        if not any(decimals_close(v, u) for u in out):
            out.append(v)
    return out


def _running_sum(values: Sequence[Decimal]) -> Decimal:
    """Sum distinct values, dropping entries equal to the sum so far."""
    total = Decimal(0)
    for v in _dedupe(values):
        if total != 0 and decimals_close(v, total):
            continue
        total += v
    return total


def _distinct_product(values: Sequence[Decimal]) -> Decimal:
    prod = Decimal(1)
    for v in _dedupe(values):
        prod *= v
    return prod


def span_uom_type(span: tuple[int, int], text: str,
                  lexicon: UnitLexicon) -> tuple[UoMType, str | None]:
    """Cue the type of a character span, sharing the candidate cue rules."""
    from .rules import cue_for_span
    return cue_for_span(text, span[0], span[1], lexicon)


def aggregate_total(quantities: Sequence[TypedQuantity], predicted: UoMType,
                    lexicon: UnitLexicon) -> TotalQuantity | None:
    """Combine typed spans under the predicted type; None means abstain."""
    counts = [q.value for q in quantities if q.uom == UoMType.COUNT]
    count_product = _distinct_product(counts)
    if predicted == UoMType.COUNT:
        return TotalQuantity(count_product, "count", UoMType.COUNT)
    matching = [q for q in quantities if q.uom == predicted]
    crossed = [q for q in quantities
               if q.uom != predicted and q.uom != UoMType.COUNT]
    if crossed:
        log.debug("ignoring %d %s span(s) under a %s prediction",
                  len(crossed), crossed[0].uom.value, predicted.value)
    if not matching:
        return None
    units = [q.unit for q in matching]
    if any(u is None for u in units):
        raise ValueError(f"{predicted.value} span without a unit cue")
    if len(set(units)) == 1:
        unit = units[0]
        values = [q.value for q in matching]
    else:
        unit = lexicon.base_unit(predicted)
        values = [q.value * lexicon.factor(q.unit, predicted) for q in matching]
    dense_sum = _running_sum(values)
    return TotalQuantity(dense_sum * count_product, unit, predicted)
