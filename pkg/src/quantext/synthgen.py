"""Seeded synthetic product-record generator.

Records are rendered from a library of title templates covering weight,
volume and count labels across three locale flavors, with 0 to 3 quantity
spans per title. Every emitted record is self-consistent by construction:
the weak labeler qualifies exactly the intended spans, aggregating those
spans reproduces the gold total, and the record's ambiguity flag matches
what the template declares. Span-count mix and the ambiguous share are hit
by quota allocation rather than independent draws, so empirical fractions
track the requested ones tightly and generation is byte-stable per seed.

The default mix puts 54% of records at zero spans, 34.5% at one, 11.3% at
two and 0.2% at three, with 21% of records ambiguous; ambiguous mass sits
in the 0- and 1-span buckets with count labels carrying roughly three times
the weight or volume share. One template pair renders the same title text
under two different category paths with different labels (a cosmetics
compact sold per piece versus a balm sold by net weight), so category
features are genuinely required to separate them.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from decimal import Decimal

import numpy as np

from .aggregate import aggregate_total
from .analyze import AmbiguityTokens, record_ambiguity
from .corpus import ProductRecord, Span, UoMType, decimals_close
from .rules import UnitLexicon, find_candidates
from .tagger import qualify_spans

DEFAULT_MIX = (0.54, 0.345, 0.113, 0.002)
DEFAULT_AMBIGUITY_SHARE = 0.21
# Ambiguous mass per span bucket at the default mix (sums to 0.21).
_AMB_MASS = (0.08, 0.13, 0.0, 0.0)
# Within 1-span ambiguous records: count / weight / volume label split.
_AMB1_SPLIT = (0.046, 0.042, 0.042)

LOCALES = ("us", "eu5", "in")
_LOCALE_WEIGHTS = {"us": 0.4, "eu5": 0.3, "in": 0.3}

BRANDS = {
    "us": ("Maxwell Ridge", "Nutrawell", "SilverPine", "Orchard Lane",
           "BrightPeak", "Cedar & Main", "TrueNorth", "GoldenBay"),
    "eu5": ("Beauté Pure", "Crème d'Or", "Müller Hof", "Niño Sol",
            "Verde Añejo", "Jardín Belle", "Höfer & Sohn", "Fleur Noël"),
    "in": ("Svadisht", "Himgiri", "Rajdhani", "Amrutva",
           "Kesariya", "Vanraj", "Shuddh Swad", "Girnar Peak"),
}

WORDS = {
    "noun_plain": ("Bamboo Cutting Board", "Ceramic Coffee Mug", "Phone Stand",
                   "Canvas Tote Bag", "Scented Soy Candle", "Wooden Photo Frame",
                   "Silicone Spatula", "Stainless Steel Peeler"),
    "noun_w": ("Ground Coffee", "Whey Protein Powder", "Rolled Oats",
               "Trail Mix", "Cocoa Powder", "Almond Flour",
               "Sea Salt Crystals", "Jasmine Rice"),
    "noun_v": ("Dish Soap", "Argan Shampoo", "Hand Sanitizer",
               "Fabric Softener", "Cold Brew Concentrate", "Body Lotion",
               "Glass Cleaner", "Beard Oil"),
    "noun_c": ("Coffee Pods", "Dishwasher Tabs", "Cotton Swabs",
               "Vitamin Gummies", "Trash Bags", "Incense Cones",
               "Ballpoint Pens", "Tea Light Candles"),
    "noun_c2": ("Microfibre Towels", "Copper Scrubbers", "Gel Pens",
                "Storage Baskets", "Velvet Hangers", "Wool Dryer Balls"),
    "noun_inw": ("Haldi Powder", "Chana Besan", "Masala Chai Blend",
                 "Multigrain Atta", "Kaju Katli", "Dry Mango Powder"),
    "noun_inv": ("Neem Shampoo", "Amla Hair Oil", "Rose Sharbat",
                 "Herbal Hair Tonic"),
    "noun_inp": ("Brass Diya", "Agarbatti Stand", "Copper Lota",
                 "Jute Storage Basket"),
    "noun_euw": ("Gâteau Mélange", "Müsli Mix", "Café Molido",
                 "Gewürz Mischung", "Harina Tostada"),
    "noun_euv": ("Gel Douche", "Eau Micellaire", "Champú Suave",
                 "Spülmittel Zitrone", "Crème Lavante"),
    "noun_eup": ("Porte-Clés Cuir", "Vela Aromática", "Löffelset aus Holz",
                 "Théière Céramique"),
    "oilkind": ("Coconut", "Sesame", "Mustard", "Groundnut"),
    "flavor": ("Citrus", "Berry", "Ginger", "Elderflower"),
    "shade": ("Rose", "Coral", "Sienna", "Mauve", "Terracotta", "Petal",
              "Dune", "Blossom"),
    "gift": ("Stationery", "Grooming", "Sewing", "Travel", "Tea Sampler"),
    "pkg": ("Canister", "Tin", "Pouch", "Jar"),
}

_WEIGHT_VALUES = {
    "g": ("25", "40", "50", "60", "75", "80", "90", "100", "120", "125",
          "150", "180", "200", "225", "250", "300", "350", "400", "450",
          "500", "600", "700", "750", "800", "900"),
    "kg": ("1", "1.5", "2", "2.5", "3", "5", "10"),
    "oz": ("4", "6", "8", "8.3", "10", "12", "14", "16", "24", "32",
           "42.5", "48", "64"),
    "lb": ("1", "2", "3", "5", "10"),
    "g_small": ("4", "4.5", "5", "6", "8", "9", "10", "12", "15"),
}
_WEIGHT_VALUES["gm"] = _WEIGHT_VALUES["g"]

_VOLUME_VALUES = {
    "ml": ("30", "50", "60", "75", "100", "120", "150", "180", "200", "236",
           "250", "300", "330", "350", "400", "450", "473", "500", "650",
           "700", "750", "800", "946", "1000"),
    "l": ("1", "1.5", "2", "2.5", "3", "5"),
    "fl oz": ("2", "4", "6", "8", "8.45", "12", "16", "20", "32", "64"),
}
_VOLUME_VALUES["ltr"] = _VOLUME_VALUES["l"]

_COUNT_VALUES = {
    "small": ("2", "3", "4", "5", "6", "8", "10", "12"),
    "mid": ("15", "16", "18", "20", "24", "25", "30", "32", "36", "40"),
    "big": ("48", "50", "60", "64", "72", "80", "90", "96", "100", "120",
            "144", "150", "180", "200"),
}

_WUNIT_POOLS = {"us": ("oz", "lb", "g"), "eu5": ("g", "kg"), "in": ("gm", "kg")}
_VUNIT_POOLS = {"us": ("ml", "fl oz"), "eu5": ("ml", "l"), "in": ("ml", "ltr")}
_CUNIT_POOLS = {"us": ("ct", "count", "pcs", "pods", "tablets", "capsules"),
                "eu5": ("pcs", "units"), "in": ("pcs", "units", "pc")}

_DESC_BASE = ("Premium quality for everyday use.",
              "Backed by our satisfaction promise.",
              "A thoughtful gift for any occasion.",
              "Designed for busy households.")
_DESC_DISTRACTOR = ("Ships within {d} days.",
                    "Trusted by over 1000 households.",
                    "A bestseller since 2019.")
_BULLETS = ("Long lasting freshness", "Easy to use at home",
            "Gentle everyday formula", "Travel friendly design",
            "Loved by families", "Crafted in small batches")
_OCR_PLAIN = ("BATCH CODE ALPHA", "STORE IN A COOL DRY PLACE",
              "BEST BEFORE SEE BASE")

_CATS = {
    "weight": (("grocery", "grocery/coffee", "grocery/coffee/ground"),
               ("grocery", "grocery/flour", "grocery/flour/baking"),
               ("health", "health/supplements", "health/supplements/protein"),
               ("petcare", "petcare/treats", "petcare/treats/dog")),
    "volume": (("home", "home/cleaning", "home/cleaning/detergent"),
               ("beauty", "beauty/haircare", "beauty/haircare/shampoo"),
               ("beverages", "beverages/juice", "beverages/juice/concentrate")),
    "count": (("grocery", "grocery/snacks", "grocery/snacks/bars"),
              ("health", "health/vitamins", "health/vitamins/gummies"),
              ("home", "home/kitchen", "home/kitchen/storage"),
              ("office", "office/supplies", "office/supplies/pens")),
    "plain": (("home", "home/kitchen", "home/kitchen/tools"),
              ("home", "home/decor", "home/decor/frames"),
              ("office", "office/supplies", "office/supplies/organizers")),
    "blush": (("beauty", "beauty/blushes", "beauty/blushes/powder"),),
    "balm": (("beauty", "beauty/skincare", "beauty/skincare/balms"),),
    "bedding": (("home", "home/bedding", "home/bedding/sheets"),),
    "jars": (("home", "home/kitchen", "home/kitchen/storage"),),
    "bottles": (("home", "home/cleaning", "home/cleaning/sprays"),),
    "kit": (("beauty", "beauty/travel", "beauty/travel/kits"),),
    "pooja": (("home", "home/pooja", "home/pooja/kits"),),
    "oil": (("grocery", "grocery/oils", "grocery/oils/cold-pressed"),),
    "tonic": (("beverages", "beverages/mixers", "beverages/mixers/tonic"),),
}


@dataclass(frozen=True)
class TemplateSpec:
    name: str
    uom: UoMType
    title: str
    slots: tuple[tuple[str, str, str], ...]
    span_slots: tuple[str, ...]
    categories: tuple[tuple[str, ...], ...]
    total_unit_slot: str | None = None
    total_unit: str | None = None
    ambig: str | None = None
    locales: tuple[str, ...] = LOCALES
    ocr: str | None = None


def _t(name, uom, title, slots, span_slots, cats, **kw) -> TemplateSpec:
    return TemplateSpec(name=name, uom=uom, title=title, slots=tuple(slots),
                        span_slots=tuple(span_slots),
                        categories=_CATS[cats] if isinstance(cats, str) else cats,
                        **kw)


TEMPLATES: tuple[TemplateSpec, ...] = (
    # --- 0 spans, not ambiguous: label is one count ------------------------
    _t("plain_item", UoMType.COUNT, "{brand} {noun}",
       [("brand", "brand", ""), ("noun", "word", "noun_plain")], (), "plain"),
    _t("gift_set", UoMType.COUNT, "{brand} {gift} Gift Set",
       [("brand", "brand", ""), ("gift", "word", "gift")], (), "plain"),
    _t("model_number", UoMType.COUNT, "{brand} {noun} Model X{num}",
       [("brand", "brand", ""), ("noun", "word", "noun_plain"),
        ("num", "int", "120:980")], (), "plain"),
    _t("warranty", UoMType.COUNT, "{brand} {noun} with {d} Year Warranty",
       [("brand", "brand", ""), ("noun", "word", "noun_plain"),
        ("d", "int", "2:9")], (), "plain"),
    _t("in_plain", UoMType.COUNT, "{brand} {noun}",
       [("brand", "brand", ""), ("noun", "word", "noun_inp")], (), "plain",
       locales=("in",)),
    _t("eu_plain", UoMType.COUNT, "{brand} {noun}",
       [("brand", "brand", ""), ("noun", "word", "noun_eup")], (), "plain",
       locales=("eu5",)),

    # --- 0 spans, ambiguous count: conflicting unit in a one-piece item ----
    _t("compact_blush", UoMType.COUNT,
       "{brand} Velvet Finish {shade} {qw} g Compact",
       [("brand", "brand", ""), ("shade", "word", "shade"),
        ("qw", "wval", "=g_small")], (), "blush", ambig="count"),
    _t("kit_with_bottle", UoMType.COUNT,
       "{brand} Travel Essentials Kit with {qv} ml Bottle",
       [("brand", "brand", ""), ("qv", "vval", "=ml")], (), "kit",
       ambig="count"),
    _t("pooja_kit", UoMType.COUNT,
       "{brand} Pooja Thali Set with {qg} gm Roli",
       [("brand", "brand", ""), ("qg", "wval", "=g_small")], (), "pooja",
       ambig="count", locales=("in",)),

    # --- 1 span, not ambiguous ---------------------------------------------
    _t("simple_weight", UoMType.WEIGHT, "{brand} {noun}, {qw} {uw}",
       [("brand", "brand", ""), ("noun", "word", "noun_w"),
        ("uw", "wunit", ""), ("qw", "wval", "uw")], ("qw",), "weight",
       total_unit_slot="uw", ocr="NET WT {qw} {uw}"),
    _t("weight_jar", UoMType.WEIGHT, "{brand} {noun} Jar, Net Wt {qw} {uw}",
       [("brand", "brand", ""), ("noun", "word", "noun_w"),
        ("uw", "wunit", ""), ("qw", "wval", "uw")], ("qw",), "weight",
       total_unit_slot="uw"),
    _t("weight_with_conc", UoMType.WEIGHT,
       "{brand} Creatine Powder {qw} {uw}, {conc} mg per Scoop",
       [("brand", "brand", ""), ("uw", "wunit", ""), ("qw", "wval", "uw"),
        ("conc", "conc", "")], ("qw",), "weight", total_unit_slot="uw"),
    _t("compact_weight", UoMType.WEIGHT,
       "{brand} Velvet Finish {shade} {qw} g Compact",
       [("brand", "brand", ""), ("shade", "word", "shade"),
        ("qw", "wval", "=g_small")], ("qw",), "balm", total_unit="g"),
    _t("in_weight", UoMType.WEIGHT, "{brand} {noun} {qw} {uw}",
       [("brand", "brand", ""), ("noun", "word", "noun_inw"),
        ("uw", "wunit", ""), ("qw", "wval", "uw")], ("qw",), "weight",
       total_unit_slot="uw", locales=("in",)),
    _t("eu_weight", UoMType.WEIGHT, "{brand} {noun} {qw} {uw}",
       [("brand", "brand", ""), ("noun", "word", "noun_euw"),
        ("uw", "wunit", ""), ("qw", "wval", "uw")], ("qw",), "weight",
       total_unit_slot="uw", locales=("eu5",)),
    _t("simple_volume", UoMType.VOLUME, "{brand} {noun}, {qv} {uv}",
       [("brand", "brand", ""), ("noun", "word", "noun_v"),
        ("uv", "vunit", "ml|l|ltr"), ("qv", "vval", "uv")], ("qv",), "volume",
       total_unit_slot="uv", ocr="NET CONTENTS {qv} {uv}"),
    _t("volume_floz", UoMType.VOLUME, "{brand} {noun} {qv} fl oz",
       [("brand", "brand", ""), ("noun", "word", "noun_v"),
        ("qv", "vval", "=fl oz")], ("qv",), "volume", total_unit="fl oz",
       locales=("us",)),
    _t("eu_volume", UoMType.VOLUME, "{brand} {noun} {qv} {uv}",
       [("brand", "brand", ""), ("noun", "word", "noun_euv"),
        ("uv", "vunit", "ml|l"), ("qv", "vval", "uv")], ("qv",), "volume",
       total_unit_slot="uv", locales=("eu5",)),
    _t("in_volume", UoMType.VOLUME, "{brand} {noun} {qv} {uv}",
       [("brand", "brand", ""), ("noun", "word", "noun_inv"),
        ("uv", "vunit", "ml|ltr"), ("qv", "vval", "uv")], ("qv",), "volume",
       total_unit_slot="uv", locales=("in",)),
    _t("simple_count", UoMType.COUNT, "{brand} {noun}, {qc} {uc}",
       [("brand", "brand", ""), ("noun", "word", "noun_c"),
        ("uc", "cunit", ""), ("qc", "cval", "mid")], ("qc",), "count",
       ocr="QTY {qc} {uc}"),
    _t("pack_of", UoMType.COUNT, "{brand} {noun} (Pack of {qc})",
       [("brand", "brand", ""), ("noun", "word", "noun_c2"),
        ("qc", "cval", "small")], ("qc",), "count"),
    _t("set_of", UoMType.COUNT, "{brand} {noun} Set of {qc}",
       [("brand", "brand", ""), ("noun", "word", "noun_c2"),
        ("qc", "cval", "small")], ("qc",), "count"),
    _t("tc_sheets", UoMType.COUNT,
       "{brand} Cotton Bedsheet, {tc} TC, Pack of {qc}",
       [("brand", "brand", ""), ("tc", "tc", ""),
        ("qc", "cval", "small")], ("qc",), "bedding"),
    _t("in_count", UoMType.COUNT, "{brand} Agarbatti Sticks {qc} {uc}",
       [("brand", "brand", ""), ("uc", "cunit", ""),
        ("qc", "cval", "mid")], ("qc",), "count", locales=("in",)),

    # --- 1 span, ambiguous -------------------------------------------------
    _t("jar_set", UoMType.COUNT,
       "{brand} Glass Storage Jars, Set of {qc} ({qv} ml Each)",
       [("brand", "brand", ""), ("qc", "cval", "small"),
        ("qv", "vval", "=ml")], ("qc",), "jars", ambig="count"),
    _t("bottle_pack", UoMType.COUNT,
       "{brand} Refillable Spray Bottles, {qv} ml Capacity, {qc} Pack",
       [("brand", "brand", ""), ("qv", "vval", "=ml"),
        ("qc", "cval", "small")], ("qc",), "bottles", ambig="count"),
    _t("in_count_ambig", UoMType.COUNT,
       "{brand} Copper Bottle Set, {qc} Units, Holds {qv} ml",
       [("brand", "brand", ""), ("qc", "cval", "small"),
        ("qv", "vval", "=ml")], ("qc",), "jars", ambig="count",
       locales=("in",)),
    _t("weight_free_vol", UoMType.WEIGHT,
       "{brand} {noun} {qw} {uw} with Free {nounv} {qv} ml",
       [("brand", "brand", ""), ("noun", "word", "noun_w"),
        ("uw", "wunit", ""), ("qw", "wval", "uw"),
        ("nounv", "word", "noun_v"), ("qv", "vval", "=ml")], ("qw",),
       "weight", total_unit_slot="uw", ambig="weight"),
    _t("weight_makes_vol", UoMType.WEIGHT,
       "{brand} Drink Mix Powder {qw} {uw}, Makes {qv} ml per Serving",
       [("brand", "brand", ""), ("uw", "wunit", ""), ("qw", "wval", "uw"),
        ("qv", "vval", "=ml")], ("qw",), "weight", total_unit_slot="uw",
       ambig="weight"),
    _t("volume_sugar", UoMType.VOLUME,
       "{brand} Sparkling {flavor} Tonic {qv} ml, {qg} g Sugar per Bottle",
       [("brand", "brand", ""), ("flavor", "word", "flavor"),
        ("qv", "vval", "=ml"), ("qg", "wval", "=g_small")], ("qv",),
       "tonic", total_unit="ml", ambig="volume"),
    _t("in_oil_dual", UoMType.VOLUME,
       "{brand} Cold Pressed {oil} Oil {qv} ml ({qg} g Net)",
       [("brand", "brand", ""), ("oil", "word", "oilkind"),
        ("qv", "vval", "=ml"), ("qg", "wval", "=g")], ("qv",), "oil",
       total_unit="ml", ambig="volume"),

    # --- 2 spans -------------------------------------------------------------
    _t("pack_weight", UoMType.WEIGHT,
       "{brand} {noun}, {qw} {uw} {pkg} ({qc} Pack)",
       [("brand", "brand", ""), ("noun", "word", "noun_w"),
        ("uw", "wunit", ""), ("qw", "wval", "uw"), ("pkg", "word", "pkg"),
        ("qc", "cval", "small")], ("qw", "qc"), "weight",
       total_unit_slot="uw"),
    _t("in_pack_weight", UoMType.WEIGHT,
       "{brand} {noun} {qw} gm (Pack of {qc})",
       [("brand", "brand", ""), ("noun", "word", "noun_inw"),
        ("qw", "wval", "=gm"), ("qc", "cval", "small")], ("qw", "qc"),
       "weight", total_unit="gm", locales=("in",)),
    _t("eu_pack_weight", UoMType.WEIGHT,
       "{brand} {noun} {qw} g ({qc}er Pack)",
       [("brand", "brand", ""), ("noun", "word", "noun_euw"),
        ("qw", "wval", "=g"), ("qc", "cval", "small")], ("qw", "qc"),
       "weight", total_unit="g", locales=("eu5",)),
    _t("lot_de", UoMType.VOLUME,
       "{brand} {noun} {qv} ml (Lot de {qc})",
       [("brand", "brand", ""), ("noun", "word", "noun_euv"),
        ("qv", "vval", "=ml"), ("qc", "cval", "small")], ("qv", "qc"),
       "volume", total_unit="ml", locales=("eu5",)),
    _t("vol_pack", UoMType.VOLUME,
       "{brand} {noun} {qv} {uv} Bottle ({qc} Pack)",
       [("brand", "brand", ""), ("noun", "word", "noun_v"),
        ("uv", "vunit", "ml|l|ltr"), ("qv", "vval", "uv"),
        ("qc", "cval", "small")], ("qv", "qc"), "volume",
       total_unit_slot="uv"),
    _t("count_count", UoMType.COUNT,
       "{brand} Snack Sachets Combo, {qa} Boxes x {qb} Sachets",
       [("brand", "brand", ""), ("qa", "cval", "small"),
        ("qb", "cval", "mid")], ("qa", "qb"), "count"),
    _t("each_restate", UoMType.VOLUME,
       "{brand} {noun} {qt} ml (Pack of {qc}), {qe} ml Each",
       [("brand", "brand", ""), ("noun", "word", "noun_v"),
        ("qc", "cval", "small"), ("qe", "vval", "=ml"),
        ("qt", "derived", "qc*qe")], ("qc", "qe"), "volume",
       total_unit="ml"),
    _t("total_restate", UoMType.WEIGHT,
       "{brand} {noun} {qw} gm (Pack of {qc}), Total {qt} gm",
       [("brand", "brand", ""), ("noun", "word", "noun_w"),
        ("qw", "wval", "=gm"), ("qc", "cval", "small"),
        ("qt", "derived", "qw*qc")], ("qw", "qc"), "weight",
       total_unit="gm"),
    _t("x_pattern", UoMType.VOLUME, "{brand} {noun} {qc} x {qv} ml",
       [("brand", "brand", ""), ("noun", "word", "noun_v"),
        ("qc", "cval", "small"), ("qv", "vval", "=ml")], ("qc", "qv"),
       "volume", total_unit="ml"),

    # --- 3 spans ------------------------------------------------------------
    _t("triple_count", UoMType.COUNT,
       "{brand} Party Favor Mega Pack, {qa} Boxes x {qb} Sets x {qd} Pieces",
       [("brand", "brand", ""), ("qa", "cval", "small"),
        ("qb", "cval", "small"), ("qd", "cval", "small")],
       ("qa", "qb", "qd"), "count"),
    _t("triple_wcc", UoMType.WEIGHT,
       "{brand} {noun} Value Bundle, {qa} Cartons x {qb} Packs x {qw} g",
       [("brand", "brand", ""), ("noun", "word", "noun_w"),
        ("qa", "cval", "small"), ("qb", "cval", "small"),
        ("qw", "wval", "=g")], ("qa", "qb", "qw"), "weight",
       total_unit="g"),
)


# Selection pools: (span_count, ambig subtype or None) -> weighted names.
_POOLS: dict[tuple[int, str | None], tuple[str, ...]] = {
    (0, None): ("plain_item", "plain_item", "gift_set", "model_number",
                "warranty", "in_plain", "eu_plain"),
    (0, "blush"): ("compact_blush",),
    (0, "count"): ("kit_with_bottle", "pooja_kit"),
    (1, None): ("simple_weight", "simple_weight", "weight_jar", "in_weight",
                "eu_weight", "weight_with_conc", "compact_weight",
                "compact_weight", "simple_volume", "simple_volume",
                "volume_floz", "eu_volume", "in_volume", "simple_count",
                "simple_count", "pack_of", "pack_of", "set_of", "tc_sheets",
                "in_count"),
    (1, "count"): ("jar_set", "bottle_pack", "in_count_ambig"),
    (1, "weight"): ("weight_free_vol", "weight_makes_vol"),
    (1, "volume"): ("volume_sugar", "in_oil_dual"),
    (2, None): ("pack_weight", "in_pack_weight", "eu_pack_weight", "lot_de",
                "vol_pack", "count_count", "each_restate", "total_restate",
                "x_pattern"),
    (3, None): ("triple_count", "triple_wcc"),
}

_BY_NAME = {t.name: t for t in TEMPLATES}


def _format_value(value: Decimal, locale: str,
                  rng: np.random.Generator) -> str:
    if value == value.to_integral_value():
        return str(int(value))
    text = format(value, "f")
    if locale == "eu5" and rng.random() < 0.5:
        text = text.replace(".", ",")
    return text


def _choice(rng: np.random.Generator, seq):
    return seq[int(rng.integers(len(seq)))]


def _sample_numeric(pool, rng, ctx) -> Decimal:
    used = ctx["used"]
    for _ in range(24):
        v = Decimal(_choice(rng, pool))
        if v not in used:
            used.add(v)
            return v
    return Decimal(_choice(rng, pool))


def _sample_slot(name: str, kind: str, arg: str, rng, ctx) -> str:
    locale = ctx["locale"]
    if kind == "brand":
        return _choice(rng, BRANDS[locale])
    if kind == "word":
        return _choice(rng, WORDS[arg])
    if kind == "wunit":
        pool = _WUNIT_POOLS[locale]
        if arg:
            allowed = set(arg.split("|"))
            pool = tuple(u for u in pool if u in allowed) or tuple(allowed)
        unit = _choice(rng, pool)
        ctx["units"][name] = unit
        return unit
    if kind == "vunit":
        pool = _VUNIT_POOLS[locale]
        if arg:
            allowed = set(arg.split("|"))
            pool = tuple(u for u in pool if u in allowed) or tuple(allowed)
        unit = _choice(rng, pool)
        ctx["units"][name] = unit
        return unit
    if kind == "cunit":
        unit = _choice(rng, _CUNIT_POOLS[locale])
        ctx["units"][name] = unit
        return unit
    if kind == "wval":
        key = arg[1:] if arg.startswith("=") else ctx["units"][arg]
        value = _sample_numeric(_WEIGHT_VALUES[key], rng, ctx)
        ctx["values"][name] = value
        return _format_value(value, locale, rng)
    if kind == "vval":
        key = arg[1:] if arg.startswith("=") else ctx["units"][arg]
        value = _sample_numeric(_VOLUME_VALUES[key], rng, ctx)
        ctx["values"][name] = value
        return _format_value(value, locale, rng)
    if kind == "cval":
        value = _sample_numeric(_COUNT_VALUES[arg or "small"], rng, ctx)
        ctx["values"][name] = value
        return str(int(value))
    if kind == "derived":
        value = Decimal(1)
        for op in arg.split("*"):
            value *= ctx["values"][op]
        ctx["values"][name] = value
        return _format_value(value, locale, rng)
    if kind == "int":
        lo, hi = arg.split(":")
        value = Decimal(int(rng.integers(int(lo), int(hi) + 1)))
        ctx["values"][name] = value
        return str(int(value))
    if kind == "conc":
        value = _sample_numeric(("500", "1000", "2000", "5000"), rng, ctx)
        ctx["values"][name] = value
        return str(int(value))
    if kind == "tc":
        value = _sample_numeric(("144", "180", "210", "300", "400", "600"),
                                rng, ctx)
        ctx["values"][name] = value
        return str(int(value))
    raise ValueError(f"unknown slot kind {kind!r}")


def _render(pattern: str, values: dict[str, str]
            ) -> tuple[str, dict[str, tuple[int, int]]]:
    parts = []
    offsets = {}
    pos = 0
    for literal, fname, _spec, _conv in string.Formatter().parse(pattern):
        parts.append(literal)
        pos += len(literal)
        if fname is not None:
            text = values[fname]
            offsets[fname] = (pos, pos + len(text))
            parts.append(text)
            pos += len(text)
    return "".join(parts), offsets


def _extra_attributes(rng: np.random.Generator, template: TemplateSpec,
                      values: dict[str, str]) -> dict[str, str]:
    attrs: dict[str, str] = {}
    if rng.random() < 0.7:
        parts = [_choice(rng, _DESC_BASE)]
        if rng.random() < 0.35:
            sentence = _choice(rng, _DESC_DISTRACTOR)
            parts.append(sentence.format(d=int(rng.integers(2, 10))))
        if rng.random() < 0.4:
            parts.append(_choice(rng, _DESC_BASE))
        attrs["description"] = " ".join(dict.fromkeys(parts))
    if rng.random() < 0.4:
        first = _choice(rng, _BULLETS)
        second = _choice(rng, _BULLETS)
        attrs["bullet_points"] = f"• {first} • {second}"
    if rng.random() < 0.3:
        if template.ocr:
            attrs["ocr_text"] = template.ocr.format(
                **{k: v.upper() for k, v in values.items()})
        else:
            attrs["ocr_text"] = _choice(rng, _OCR_PLAIN)
    return attrs


class TemplateError(RuntimeError):
    """A template failed to produce a self-consistent record."""


def instantiate(template: TemplateSpec, locale: str, rec_id: str,
                rng: np.random.Generator, lexicon: UnitLexicon,
                amb_tokens: AmbiguityTokens,
                ) -> tuple[ProductRecord, list[Span]]:
    """Render one record and verify it against the weak labeler."""
    if locale not in template.locales:
        raise ValueError(f"template {template.name} does not support {locale}")
    for _attempt in range(12):
        ctx = {"locale": locale, "values": {}, "units": {}, "used": set()}
        values = {}
        for name, kind, arg in template.slots:
            values[name] = _sample_slot(name, kind, arg, rng, ctx)
        title, offsets = _render(template.title, values)
        if len(title) > 200:
            continue
        attrs = {"title": title}
        attrs.update(_extra_attributes(rng, template, values))
        if template.span_slots:
            total = Decimal(1)
            for slot in template.span_slots:
                total *= ctx["values"][slot]
            if template.total_unit_slot:
                unit = ctx["units"][template.total_unit_slot]
            elif template.total_unit:
                unit = template.total_unit
            else:
                unit = "count"
        else:
            total = Decimal(1)
            unit = "count"
        record = ProductRecord(
            id=rec_id, attributes=attrs,
            category_path=list(_choice(rng, template.categories)),
            locale=locale, gold_uom=template.uom, gold_total=(total, unit))
        spans: list[Span] = [("title", *offsets[s]) for s in template.span_slots]
        if _self_consistent(record, spans, template, lexicon, amb_tokens):
            return record, spans
    raise TemplateError(f"template {template.name}: no consistent draw in 12 tries")


def _self_consistent(record: ProductRecord, spans: list[Span],
                     template: TemplateSpec, lexicon: UnitLexicon,
                     amb_tokens: AmbiguityTokens) -> bool:
    total, unit = record.gold_total
    candidates = find_candidates(record, lexicon)
    qualified = qualify_spans(candidates, total, unit, record.gold_uom, lexicon)
    if not qualified.qualified:
        return False
    if set(qualified.as_span_tuples()) != set(spans):
        return False
    if spans:
        chosen = [c for c in candidates
                  if (c.attribute, c.start, c.end) in set(spans)]
        agg = aggregate_total([c.as_typed() for c in chosen],
                              record.gold_uom, lexicon)
        if agg is None:
            return False
        want = total * lexicon.factor(unit if record.gold_uom != UoMType.COUNT
                                      else None, record.gold_uom)
        got = agg.value * lexicon.factor(
            agg.unit if record.gold_uom != UoMType.COUNT else None,
            record.gold_uom)
        if not decimals_close(got, want):
            return False
    flag = record_ambiguity(record, amb_tokens)
    if flag != int(template.ambig is not None):
        return False
    return True


def _allocate(total: int, weights) -> list[int]:
    """Largest-remainder allocation of `total` across weights."""
    weights = [max(0.0, float(w)) for w in weights]
    s = sum(weights)
    if s <= 0 or total <= 0:
        return [0] * len(weights)
    exact = [total * w / s for w in weights]
    base = [int(x) for x in exact]
    left = total - sum(base)
    order = sorted(range(len(weights)), key=lambda i: (base[i] - exact[i], i))
    for i in order[:left]:
        base[i] += 1
    return base


def _pick_locale(rng: np.random.Generator, locale: str) -> str:
    if locale != "mix":
        return locale
    r = rng.random()
    acc = 0.0
    for loc, w in _LOCALE_WEIGHTS.items():
        acc += w
        if r < acc:
            return loc
    return "in"


def _pool_for(bucket: int, subtype: str | None, locale: str
              ) -> list[TemplateSpec]:
    names = _POOLS[(bucket, subtype)]
    out = [_BY_NAME[n] for n in names if locale in _BY_NAME[n].locales]
    if not out:
        out = [_BY_NAME[n] for n in names]
    return out


def validate_mix(mix) -> tuple[float, float, float, float]:
    mix = tuple(float(m) for m in mix)
    if len(mix) != 4:
        raise ValueError("span mix needs exactly four fractions (0..3 spans)")
    if any(m < 0 for m in mix):
        raise ValueError("span mix fractions must be non-negative")
    if abs(sum(mix) - 1.0) > 1e-6:
        raise ValueError(f"span mix must sum to 1, got {sum(mix):.6f}")
    return mix


def generate_dataset(n: int, seed: int = 0, mix=DEFAULT_MIX,
                     ambiguity_share: float = DEFAULT_AMBIGUITY_SHARE,
                     locale: str = "mix",
                     lexicon: UnitLexicon | None = None,
                     ) -> list[tuple[ProductRecord, list[Span]]]:
    """n self-consistent records with their gold spans, byte-stable per seed."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if not 0 <= ambiguity_share <= 0.5:
        raise ValueError("ambiguity share must be within [0, 0.5]")
    if locale not in LOCALES + ("mix",):
        raise ValueError(f"unknown locale {locale!r}")
    mix = validate_mix(mix)
    lexicon = lexicon or UnitLexicon.default()
    amb_tokens = AmbiguityTokens.from_lexicon(lexicon)
    rng = np.random.default_rng(seed)

    buckets = _allocate(n, mix)
    prop = [(_AMB_MASS[k] / DEFAULT_MIX[k]) if DEFAULT_MIX[k] else 0.0
            for k in range(4)]
    denom = sum(mix[k] * prop[k] for k in range(4))
    alpha = (ambiguity_share / denom) if denom > 0 else 0.0
    jobs: list[tuple[int, str | None]] = []
    for k in range(4):
        amb_k = int(round(buckets[k] * min(alpha * prop[k], 0.95)))
        amb_k = min(amb_k, buckets[k])
        plain_k = buckets[k] - amb_k
        jobs.extend([(k, None)] * plain_k)
        if k == 0:
            blush, plain_amb = _allocate(amb_k, (0.5, 0.5))
            jobs.extend([(0, "blush")] * blush)
            jobs.extend([(0, "count")] * plain_amb)
        elif k == 1:
            c, w, v = _allocate(amb_k, _AMB1_SPLIT)
            jobs.extend([(1, "count")] * c + [(1, "weight")] * w
                        + [(1, "volume")] * v)
        elif amb_k:
            jobs.extend([(k, None)] * amb_k)

    out: list[tuple[ProductRecord, list[Span]]] = []
    for bucket, subtype in jobs:
        loc = _pick_locale(rng, locale)
        pool = _pool_for(bucket, subtype, loc)
        template = pool[int(rng.integers(len(pool)))]
        if loc not in template.locales:
            loc = template.locales[0]
        record, spans = instantiate(template, loc, "pending", rng,
                                    lexicon, amb_tokens)
        out.append((record, spans))
    order = rng.permutation(len(out))
    final = []
    for new_idx, old_idx in enumerate(order):
        record, spans = out[int(old_idx)]
        record.id = f"syn-{new_idx:05d}"
        final.append((record, spans))
    return final
