"""Two-phase training, the end-to-end predictor, and evaluation.

Phase one trains the UoM classifier on batched, optionally noised records
with hard (ambiguous) examples upsampled. Phase two trains the quantity
extractor per record against weak-labeled spans, conditioning each example
on the frozen classifier's probabilities computed from the same noised text
the extractor sees. Both phases hold out a stratified validation split,
early-stop on validation score with a fixed patience, and restore the best
epoch's weights before saving.

Strict extraction correctness means the predicted UoM type matches and the
predicted total equals the gold total within a 1e-6 relative tolerance
after converting both to base units (grams / millilitres / count).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .aggregate import TotalQuantity, aggregate_total
from .analyze import AmbiguityTokens, hard_flags, record_ambiguity, upsample_hard
from .corpus import (CLASS_INDEX, CLASS_ORDER, NoiseConfig, ProductRecord,
                     Span, UoMType, build_vocab, encode_text, noise_text)
from .model_qe import QEConfig, QuantityExtractor, collect_spans, qe_loss
from .model_uom import UoMClassifier, UoMClassifierConfig, build_category_vocabs
from .rules import Guardrails, UnitLexicon, extract_quantities_rules
from .tagger import SpanEntry

STRICT_REL_TOL = 1e-6


@dataclass
class TrainConfig:
    phase: str = "uom"
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    val_fraction: float = 0.1
    patience: int = 5
    attribute_set: str = "short_text"
    use_categories: bool = True
    upsample_factor: float = 1.0
    noise: bool = True
    gibberish_rate: float = 0.04
    distractor_rate: float = 0.03
    delete_rate: float = 0.05
    accum: int = 16
    calibrate: bool = True
    model: dict = field(default_factory=dict)

    def noise_config(self) -> NoiseConfig | None:
        if not self.noise:
            return None
        return NoiseConfig(gibberish_rate=self.gibberish_rate,
                           distractor_rate=self.distractor_rate,
                           delete_rate=self.delete_rate)

    def to_dict(self) -> dict:
        return {
            "phase": self.phase, "epochs": self.epochs,
            "batch_size": self.batch_size, "lr": self.lr, "seed": self.seed,
            "val_fraction": self.val_fraction, "patience": self.patience,
            "attribute_set": self.attribute_set,
            "use_categories": self.use_categories,
            "upsample_factor": self.upsample_factor, "noise": self.noise,
            "gibberish_rate": self.gibberish_rate,
            "distractor_rate": self.distractor_rate,
            "delete_rate": self.delete_rate, "accum": self.accum,
            "calibrate": self.calibrate, "model": dict(self.model),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


def stratified_split(keys: Sequence, val_fraction: float,
                     rng: np.random.Generator) -> tuple[list[int], list[int]]:
    """Index split that holds out ~val_fraction per distinct key."""
    if not 0 < val_fraction < 1:
        raise ValueError("val_fraction must be in (0, 1)")
    groups: dict = {}
    for i, key in enumerate(keys):
        groups.setdefault(key, []).append(i)
    train_idx: list[int] = []
    val_idx: list[int] = []
    for key in sorted(groups, key=repr):
        idx = np.array(groups[key])
        idx = idx[rng.permutation(len(idx))]
        n_val = int(round(len(idx) * val_fraction))
        if len(idx) > 1:
            n_val = min(max(n_val, 1), len(idx) - 1)
        else:
            n_val = 0
        val_idx.extend(int(i) for i in idx[:n_val])
        train_idx.extend(int(i) for i in idx[n_val:])
    return sorted(train_idx), sorted(val_idx)


def _split_keys(records: Sequence[ProductRecord],
                spans: dict[str, SpanEntry] | None) -> list[tuple]:
    keys = []
    for rec in records:
        uom = rec.gold_uom.value if rec.gold_uom else "none"
        n_spans = -1
        if spans is not None:
            entry = spans.get(rec.id)
            if entry is not None and entry.qualified:
                n_spans = len(entry.spans)
        keys.append((uom, n_spans))
    return keys


def _noised(record: ProductRecord, spans: Sequence[Span],
            cfg: NoiseConfig | None, rng: np.random.Generator,
            ) -> tuple[ProductRecord, list[Span]]:
    if cfg is None:
        return record, list(spans)
    return noise_text(record, spans, cfg, rng)


# --------------------------------------------------------------- metrics

def classification_metrics(golds: Sequence[str], preds: Sequence[str]) -> dict:
    labels = [k.value for k in CLASS_ORDER]
    per = {}
    f1s = []
    correct = sum(1 for g, p in zip(golds, preds) if g == p)
    for label in labels:
        tp = sum(1 for g, p in zip(golds, preds) if g == label and p == label)
        fp = sum(1 for g, p in zip(golds, preds) if g != label and p == label)
        fn = sum(1 for g, p in zip(golds, preds) if g == label and p != label)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        per[label] = {"precision": prec, "recall": rec, "f1": f1,
                      "support": tp + fn}
        if tp + fn:
            f1s.append(f1)
    return {
        "n": len(golds),
        "accuracy": correct / len(golds) if golds else 0.0,
        "macro_f1": sum(f1s) / len(f1s) if f1s else 0.0,
        "per_class": per,
    }


def _base_value(value: Decimal, unit: str | None, uom: UoMType,
                lexicon: UnitLexicon) -> Decimal:
    if uom == UoMType.COUNT:
        return value
    return value * lexicon.factor(unit, uom)


def strict_match(gold_uom: UoMType, gold_total: tuple[Decimal, str],
                 pred_uom: UoMType, pred_total: TotalQuantity | None,
                 lexicon: UnitLexicon) -> bool:
    if pred_total is None or pred_uom != gold_uom:
        return False
    want = _base_value(gold_total[0], gold_total[1], gold_uom, lexicon)
    got = _base_value(pred_total.value, pred_total.unit, pred_uom, lexicon)
    if want == got:
        return True
    denom = max(abs(want), abs(got))
    return denom > 0 and abs(want - got) / denom <= Decimal(str(STRICT_REL_TOL))


def extraction_metrics(rows: Sequence[dict], lexicon: UnitLexicon) -> dict:
    """rows: dicts with gold_uom, gold_total, pred_uom, pred_total, abstained."""
    n = len(rows)
    predicted = [r for r in rows if not r["abstained"]]
    correct = sum(
        1 for r in predicted
        if strict_match(r["gold_uom"], r["gold_total"], r["pred_uom"],
                        r["pred_total"], lexicon))
    zero_support = not predicted
    precision = 1.0 if zero_support else correct / len(predicted)
    recall = correct / n if n else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    return {
        "n": n,
        "predicted": len(predicted),
        "correct": correct,
        "strict_precision": precision,
        "strict_recall": recall,
        "strict_f1": f1,
        "abstention_rate": 1.0 - (len(predicted) / n) if n else 0.0,
        "zero_support": zero_support,
    }


# --------------------------------------------------------------- predictor

@dataclass
class PredictionResult:
    id: str
    uom: UoMType
    confidence: float
    spans: list
    total: TotalQuantity | None
    abstained: bool

    def to_row(self) -> dict:
        return {
            "id": self.id,
            "uom": self.uom.value,
            "confidence": round(self.confidence, 6),
            "spans": [s.to_row() for s in self.spans],
            "total": self.total.to_dict() if self.total else None,
            "abstained": self.abstained,
        }


class Predictor:
    """Full pipeline: classify the UoM type, extract spans, aggregate."""

    def __init__(self, classifier: UoMClassifier, extractor: QuantityExtractor,
                 lexicon: UnitLexicon | None = None,
                 threshold: float | None = None,
                 attributes: Sequence[str] | None = None):
        self.classifier = classifier
        self.extractor = extractor
        self.lexicon = lexicon or UnitLexicon.default()
        self.threshold = (threshold if threshold is not None
                          else extractor.decode_threshold)
        self.attributes = tuple(attributes or ("title",))

    def predict(self, record: ProductRecord) -> PredictionResult:
        cls = self.classifier.predict(record)
        uom = UoMType.from_str(cls.uom)
        probs = np.asarray(cls.probs, dtype=np.float32)
        spans = []
        for attr in self.attributes:
            text = record.attributes.get(attr, "")
            if not text.strip():
                continue
            image = self.extractor.span_image(text, probs)
            spans.extend(collect_spans(image, text, self.threshold,
                                       self.lexicon, attribute=attr))
        if not spans:
            if uom == UoMType.COUNT:
                total = TotalQuantity(Decimal(1), "count", UoMType.COUNT)
                return PredictionResult(record.id, uom, cls.confidence, [],
                                        total, abstained=False)
            return PredictionResult(record.id, uom, cls.confidence, [],
                                    None, abstained=True)
        total = aggregate_total([s.as_typed() for s in spans], uom,
                                self.lexicon)
        return PredictionResult(record.id, uom, cls.confidence, spans,
                                total, abstained=total is None)


class BaselinePredictor:
    """Rule-based reference pipeline with the same result shape."""

    def __init__(self, lexicon: UnitLexicon | None = None,
                 guardrails: Guardrails | None = None,
                 attributes: Sequence[str] | None = None):
        self.lexicon = lexicon or UnitLexicon.default()
        self.guardrails = guardrails or Guardrails()
        self.attributes = tuple(attributes) if attributes else None

    def predict(self, record: ProductRecord) -> PredictionResult:
        total, uom, _cands = extract_quantities_rules(
            record, self.lexicon, guardrails=self.guardrails,
            attributes=self.attributes)
        return PredictionResult(record.id, uom, 1.0, [], total,
                                abstained=total is None)


# --------------------------------------------------------------- evaluation

@dataclass
class EvalReport:
    mode: str
    classification: dict
    extraction: dict | None = None
    slices: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"mode": self.mode, "classification": self.classification}
        if self.extraction is not None:
            out["extraction"] = self.extraction
        if self.slices:
            out["slices"] = self.slices
        return out


def evaluate_predictions(records: Sequence[ProductRecord],
                         results: Sequence[PredictionResult],
                         lexicon: UnitLexicon, mode: str = "extraction",
                         ) -> EvalReport:
    tokens = AmbiguityTokens.from_lexicon(lexicon)
    golds = [r.gold_uom.value for r in records]
    preds = [res.uom.value for res in results]
    report = EvalReport(mode=mode,
                        classification=classification_metrics(golds, preds))
    rows = []
    flags = []
    for rec, res in zip(records, results):
        flags.append(record_ambiguity(rec, tokens))
        if mode == "extraction":
            if rec.gold_total is None:
                raise ValueError(f"record {rec.id}: extraction eval needs "
                                 "gold_total")
            rows.append({"gold_uom": rec.gold_uom,
                         "gold_total": rec.gold_total,
                         "pred_uom": res.uom, "pred_total": res.total,
                         "abstained": res.abstained})
    amb_idx = [i for i, f in enumerate(flags) if f]
    plain_idx = [i for i, f in enumerate(flags) if not f]
    for name, idx in (("ambiguous", amb_idx), ("non_ambiguous", plain_idx)):
        if not idx:
            continue
        slice_cls = classification_metrics([golds[i] for i in idx],
                                           [preds[i] for i in idx])
        report.slices[name] = {"classification": slice_cls}
        if mode == "extraction":
            report.slices[name]["extraction"] = extraction_metrics(
                [rows[i] for i in idx], lexicon)
    if mode == "extraction":
        report.extraction = extraction_metrics(rows, lexicon)
    return report


def evaluate(records: Sequence[ProductRecord], predictor,
             lexicon: UnitLexicon, mode: str = "extraction") -> EvalReport:
    results = [predictor.predict(rec) for rec in records]
    return evaluate_predictions(records, results, lexicon, mode=mode)


# --------------------------------------------------------------- phase one

@dataclass
class TrainResult:
    model: object
    history: list[dict]
    val_ids: list[str]
    report: EvalReport | None
    best_epoch: int


def train_uom(records: Sequence[ProductRecord], config: TrainConfig,
              out_path=None, lexicon: UnitLexicon | None = None,
              spans: dict[str, SpanEntry] | None = None,
              log: Callable[[str], None] = print) -> TrainResult:
    lexicon = lexicon or UnitLexicon.default()
    vocab = build_vocab()
    rng = np.random.default_rng(config.seed)
    labeled = [r for r in records if r.gold_uom is not None]
    if len(labeled) < 4:
        raise ValueError("need at least 4 labeled records to train")
    train_idx, val_idx = stratified_split(_split_keys(labeled, spans),
                                          config.val_fraction, rng)
    train_recs = [labeled[i] for i in train_idx]
    val_recs = [labeled[i] for i in val_idx]
    model_cfg = UoMClassifierConfig(
        attribute_set=config.attribute_set,
        use_categories=config.use_categories,
        seed=config.seed, **config.model)
    cat_vocabs = (build_category_vocabs(train_recs, model_cfg.category_levels)
                  if config.use_categories else None)
    model = UoMClassifier(model_cfg, vocab, cat_vocabs,
                          init_rng=np.random.default_rng(config.seed + 1))
    adam = T.Adam(model.parameters(), lr=config.lr)
    noise_cfg = config.noise_config()
    hard = hard_flags(train_recs, lexicon)
    targets_all = np.array([CLASS_INDEX[r.gold_uom] for r in train_recs])
    val_golds = [r.gold_uom.value for r in val_recs]

    history = []
    best_score = -1.0
    best_state = None
    best_epoch = -1
    for epoch in range(config.epochs):
        order = upsample_hard(hard, config.upsample_factor, rng)
        losses = []
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            batch = []
            for i in idx:
                rec, _ = _noised(train_recs[int(i)], [], noise_cfg, rng)
                batch.append(rec)
            feats = model.featurize(batch)
            probs = model.uom_forward(feats, training=True, rng=rng)
            loss = T.cross_entropy(probs, targets_all[idx])
            adam.zero_grad()
            loss.backward()
            adam.step()
            losses.append(float(loss.data))
        val_probs = model.predict_probs(val_recs)
        val_preds = [CLASS_ORDER[int(i)].value
                     for i in np.argmax(val_probs, axis=1)]
        metrics = classification_metrics(val_golds, val_preds)
        score = metrics["macro_f1"]
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                        "val_macro_f1": score,
                        "val_accuracy": metrics["accuracy"]})
        log(f"[uom] epoch {epoch}: loss {np.mean(losses):.4f} "
            f"val macro-F1 {score:.4f}")
        if score > best_score:
            best_score = score
            best_state = model.param_snapshot()
            best_epoch = epoch
        elif epoch - best_epoch >= config.patience:
            log(f"[uom] early stop at epoch {epoch} "
                f"(best epoch {best_epoch})")
            break
    if best_state is not None:
        model.load_state(best_state)
    if out_path is not None:
        model.save(out_path)
    val_probs = model.predict_probs(val_recs) if val_recs else np.zeros((0, 3))
    val_results = [
        PredictionResult(rec.id, CLASS_ORDER[int(np.argmax(p))],
                         float(np.max(p)), [], None, True)
        for rec, p in zip(val_recs, val_probs)
    ]
    report = evaluate_predictions(val_recs, val_results, lexicon, mode="uom")
    return TrainResult(model=model, history=history,
                       val_ids=[r.id for r in val_recs], report=report,
                       best_epoch=best_epoch)


# --------------------------------------------------------------- phase two

def _usable_qe_records(records, spans, log):
    """Keep records whose sidecar row is qualified with title-only spans."""
    usable = []
    dropped_unqualified = 0
    dropped_scope = 0
    missing = 0
    for rec in records:
        entry = spans.get(rec.id)
        if entry is None:
            missing += 1
            continue
        if not entry.qualified:
            dropped_unqualified += 1
            continue
        if any(attr != "title" for attr, _s, _e in entry.spans):
            dropped_scope += 1
            continue
        usable.append((rec, [tuple(s) for s in entry.spans]))
    total = len(records)
    if total:
        log(f"[qe] training set: {len(usable)} of {total} records "
            f"({dropped_unqualified} unqualified dropped, "
            f"{100.0 * dropped_unqualified / total:.1f}% shrinkage; "
            f"{dropped_scope} out-of-scope, {missing} without span rows)")
    return usable


def train_qe(records: Sequence[ProductRecord], spans: dict[str, SpanEntry],
             config: TrainConfig, uom_checkpoint, out_path=None,
             lexicon: UnitLexicon | None = None,
             log: Callable[[str], None] = print) -> TrainResult:
    lexicon = lexicon or UnitLexicon.default()
    vocab = build_vocab()
    rng = np.random.default_rng(config.seed)
    classifier = UoMClassifier.load(uom_checkpoint, vocab=vocab)
    frozen = classifier.param_snapshot()
    usable = _usable_qe_records(records, spans, log)
    if len(usable) < 4:
        raise ValueError("need at least 4 qualified records to train")
    keys = [(rec.gold_uom.value if rec.gold_uom else "none", len(sp))
            for rec, sp in usable]
    train_idx, val_idx = stratified_split(keys, config.val_fraction, rng)
    train_set = [usable[i] for i in train_idx]
    val_set = [usable[i] for i in val_idx]
    val_recs = [rec for rec, _ in val_set]

    qe_cfg = QEConfig(seed=config.seed, **config.model)
    model = QuantityExtractor(qe_cfg, vocab,
                              init_rng=np.random.default_rng(config.seed + 2))
    adam = T.Adam(model.parameters(), lr=config.lr)
    noise_cfg = config.noise_config()

    history = []
    best_score = -1.0
    best_state = None
    best_epoch = -1
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_set))
        losses = []
        pending = 0
        adam.zero_grad()
        for i in order:
            rec, gold_spans = train_set[int(i)]
            noisy, remapped = _noised(rec, gold_spans, noise_cfg, rng)
            title = noisy.attributes.get("title", "")
            ids, n = encode_text(title, vocab, max_len=qe_cfg.max_len)
            if n == 0 or any(e > n for _a, _s, e in remapped):
                continue
            probs = classifier.predict_probs([noisy])[0]
            image = model.forward(ids[:n], probs, training=True, rng=rng)
            pixels = [(s, e - 1) for _a, s, e in remapped]
            loss = qe_loss(image, pixels) * (1.0 / config.accum)
            loss.backward()
            losses.append(float(loss.data) * config.accum)
            pending += 1
            if pending >= config.accum:
                adam.step()
                adam.zero_grad()
                pending = 0
        if pending:
            adam.step()
            adam.zero_grad()
        predictor = Predictor(classifier, model, lexicon,
                              threshold=qe_cfg.decode_threshold)
        report = evaluate(val_recs, predictor, lexicon, mode="extraction")
        score = report.extraction["strict_f1"]
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                        "val_strict_f1": score})
        log(f"[qe] epoch {epoch}: loss {np.mean(losses):.4f} "
            f"val strict-F1 {score:.4f}")
        if score > best_score:
            best_score = score
            best_state = {k: v.data.copy() for k, v in model.params.items()}
            best_epoch = epoch
        elif epoch - best_epoch >= config.patience:
            log(f"[qe] early stop at epoch {epoch} (best epoch {best_epoch})")
            break
    if best_state is not None:
        model.load_state(best_state)

    threshold = qe_cfg.decode_threshold
    if config.calibrate and val_recs:
        threshold = calibrate_threshold(classifier, model, val_recs, lexicon,
                                        log=log)
    model.decode_threshold = threshold

    after = classifier.param_snapshot()
    for k in frozen:
        if not np.array_equal(frozen[k], after[k]):
            raise AssertionError(f"classifier weights changed during phase "
                                 f"two: {k}")
    if out_path is not None:
        model.save(out_path, decode_threshold=threshold)
    predictor = Predictor(classifier, model, lexicon, threshold=threshold)
    report = evaluate(val_recs, predictor, lexicon, mode="extraction")
    return TrainResult(model=model, history=history,
                       val_ids=[r.id for r in val_recs], report=report,
                       best_epoch=best_epoch)


def calibrate_threshold(classifier, extractor, records, lexicon,
                        grid=(0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7),
                        log: Callable[[str], None] = print) -> float:
    """Pick the decode threshold with the best validation strict-F1."""
    best = (-1.0, extractor.config.decode_threshold)
    for th in grid:
        predictor = Predictor(classifier, extractor, lexicon, threshold=th)
        report = evaluate(records, predictor, lexicon, mode="extraction")
        f1 = report.extraction["strict_f1"]
        if f1 > best[0] + 1e-12:
            best = (f1, th)
    log(f"[qe] calibrated decode threshold {best[1]:.2f} "
        f"(val strict-F1 {best[0]:.4f})")
    return float(best[1])


# --------------------------------------------------------------- ablation

def run_ablation(records: Sequence[ProductRecord],
                 cells: dict[str, TrainConfig],
                 lexicon: UnitLexicon | None = None,
                 log: Callable[[str], None] = print) -> list[dict]:
    """Train one classifier per cell and report held-out metrics."""
    lexicon = lexicon or UnitLexicon.default()
    rows = []
    for name, config in cells.items():
        t0 = time.time()
        result = train_uom(records, config, out_path=None, lexicon=lexicon,
                           log=log)
        rep = result.report
        amb = rep.slices.get("ambiguous", {}).get("classification", {})
        per = rep.classification["per_class"]
        wv_recall = np.mean([per["weight"]["recall"], per["volume"]["recall"]])
        rows.append({
            "cell": name,
            "val_n": rep.classification["n"],
            "accuracy": round(rep.classification["accuracy"], 4),
            "macro_f1": round(rep.classification["macro_f1"], 4),
            "ambiguous_macro_f1": round(amb.get("macro_f1", 0.0), 4),
            "ambiguous_accuracy": round(amb.get("accuracy", 0.0), 4),
            "wv_recall": round(float(wv_recall), 4),
            "best_epoch": result.best_epoch,
            "seconds": round(time.time() - t0, 1),
        })
        log(f"[ablation] {name}: macro-F1 {rows[-1]['macro_f1']:.4f} "
            f"ambiguous {rows[-1]['ambiguous_macro_f1']:.4f}")
    return rows
