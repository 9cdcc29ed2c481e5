"""End-to-end acceptance checks for the quantity-extraction pipeline.

Each test prints one "[criterion N] PASS/FAIL" line (run pytest with -s to
see them as they happen). Criteria 5, 6, 7 and 9 share one module-scoped
5,000-record two-phase training run.
"""

import hashlib
import itertools
import json
import math
import time
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quantext import tensor as T
from quantext.aggregate import TypedQuantity, aggregate_total
from quantext.analyze import AmbiguityTokens, record_ambiguity
from quantext.cli import main as cli_main, run_bench
from quantext.corpus import (CLASS_INDEX, ProductRecord, UoMType,
                             decimals_close, encode_text)
from quantext.model_qe import (QEConfig, QuantityExtractor, SpanImage,
                               collect_spans, decode_spans, qe_loss)
from quantext.model_uom import UoMClassifier, UoMClassifierConfig
from quantext.rules import CandidateQuantity
from quantext.synthgen import DEFAULT_AMBIGUITY_SHARE, DEFAULT_MIX, \
    generate_dataset
from quantext.tagger import (load_spans, qualify_spans, tag_record,
                             tag_records, write_spans)
from quantext.train import (BaselinePredictor, Predictor, TrainConfig,
                            evaluate_predictions, train_qe, train_uom)

SEED = 417
GRAD_TOL = 1e-3

W, V, C = UoMType.WEIGHT, UoMType.VOLUME, UoMType.COUNT


def _verdict(num: int, ok: bool, detail: str) -> bool:
    print(f"\n[criterion {num}] {'PASS' if ok else 'FAIL'}: {detail}",
          flush=True)
    return ok


def _quiet(_msg: str) -> None:
    pass


def _sha(path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# 1. Gradient correctness: ops and both subnetworks vs central differences.
# ---------------------------------------------------------------------------

def test_criterion_01_gradient_correctness(vocab):
    t0 = time.time()
    rng = np.random.default_rng(7)

    def leaf(shape, lo=-0.8, hi=0.8):
        return T.Tensor(rng.uniform(lo, hi, shape), requires_grad=True)

    checks = []

    x, y = leaf((2, 3)), leaf((3,))
    checks.append(("add_mul_broadcast", lambda: ((x + y) * y).sum(), [x, y]))

    s = leaf((2, 3))
    checks.append(("sub_neg_scalar",
                   lambda: (2.0 * s - (-s) + 1.0 - (1.0 - s)).mean(), [s]))

    q = leaf((2, 3), lo=0.5, hi=1.5)
    checks.append(("sqrt", lambda: q.sqrt().sum(), [q]))

    arr = rng.uniform(-1.0, 1.0, (3, 4))
    arr[np.abs(arr) < 0.1] = 0.5
    r = T.Tensor(arr, requires_grad=True)
    checks.append(("relu", lambda: (r.relu() * r.relu()).sum(), [r]))

    m = leaf((2, 6))
    checks.append(("reshape_mean_sum",
                   lambda: m.reshape((3, 4)).mean()
                   + (m.sum(axis=1) * 0.5).sum(), [m]))

    a, b, c = leaf((3, 4)), leaf((4, 2)), leaf((2,))

    def build_affine():
        h = T.affine(a, b, c)
        return (h * h).sum()

    checks.append(("matmul_affine", build_affine, [a, b, c]))

    c1, c2, cw = leaf((2, 3)), leaf((2, 2)), leaf((2, 5))
    checks.append(("concat_softmax",
                   lambda: (T.concat([c1, c2], axis=1).softmax(axis=1)
                            * cw).sum(), [c1, c2, cw]))

    tbl, ew = leaf((6, 4)), leaf((4, 4))
    eids = np.array([0, 2, 2, 5])
    checks.append(("embed", lambda: (T.embed(tbl, eids) * ew).sum(),
                   [tbl, ew]))

    xc, wc, bc = leaf((2, 8, 3)), leaf((3, 3, 4)), leaf((4,))

    def build_conv1d():
        h = T.conv1d(xc, wc, bc)
        return (h * h).sum()

    checks.append(("conv1d", build_conv1d, [xc, wc, bc]))

    xi, wi, bi = leaf((1, 6, 6, 2)), leaf((3, 3, 2, 3)), leaf((3,))

    def build_conv2d():
        h = T.conv2d(xi, wi, bi)
        return (h * h).sum()

    checks.append(("conv2d", build_conv2d, [xi, wi, bi]))

    vals = np.linspace(-1.0, 1.0, 2 * 9 * 2)
    rng.shuffle(vals)
    mp = T.Tensor(vals.reshape(2, 9, 2).copy(), requires_grad=True)
    pw = leaf((2, 5, 2))
    checks.append(("maxpool1d", lambda: (T.maxpool1d(mp, 2) * pw).sum(),
                   [mp, pw]))

    ss, ee, sw = leaf((5, 4)), leaf((5, 4)), leaf((5, 5, 4))
    checks.append(("span_outer", lambda: (T.span_outer(ss, ee) * sw).sum(),
                   [ss, ee, sw]))

    lg = leaf((4, 3))
    tgt = np.array([0, 2, 1, 1])
    wts = np.array([1.0, 2.0, 0.5, 1.0])
    msk = np.array([1.0, 1.0, 0.0, 1.0])
    checks.append(("cross_entropy",
                   lambda: T.cross_entropy(lg.softmax(axis=1), tgt,
                                           weights=wts, mask=msk), [lg]))

    # full classifier subnetwork on a short record (n <= 16)
    ucfg = UoMClassifierConfig(
        embed_dim=6, conv_widths=(3,), conv_channels=(6,), pool_window=2,
        attn_key_dim=4, hidden_dim=8, dropout=0.0, use_categories=True,
        category_levels=1, seed=11)
    rec = ProductRecord(id="g", attributes={"title": "Choco 3 oz x 2"},
                        category_path=["snacks"])
    cls = UoMClassifier(ucfg, vocab=vocab, category_vocabs=[["snacks"]])
    feats = cls.featurize([rec])
    target = np.array([CLASS_INDEX[W]])
    checks.append(("uom_subnetwork",
                   lambda: T.cross_entropy(cls.uom_forward(feats), target),
                   cls.parameters()))

    # full extractor subnetwork on a short text (n <= 16)
    # seed keeps pre-relu activations away from the kink so the central
    # difference at eps=1e-4 stays inside one linear piece
    qcfg = QEConfig(embed_dim=6, enc_widths=(3,), enc_channels=(6,),
                    branch_width=3, branch_dim=4, img_widths=(3, 3),
                    img_channels=(4, 2), dropout=0.0, max_len=16, seed=5)
    ext = QuantityExtractor(qcfg, vocab=vocab)
    ids, n = encode_text("5 x 200 gm", vocab, max_len=16)
    probs = np.array([0.5, 0.2, 0.3], dtype=np.float32)
    checks.append(("qe_subnetwork",
                   lambda: qe_loss(ext.forward(ids[:n], probs),
                                   [(0, 0), (4, 6)]),
                   ext.parameters()))

    worst = {}
    for name, build, leaves in checks:
        worst[name] = T.check_gradients(build, leaves, eps=1e-4)
    elapsed = time.time() - t0
    bad = {k: v for k, v in worst.items() if not v <= GRAD_TOL}
    ok = not bad and elapsed < 60.0
    assert _verdict(1, ok, f"{len(checks)} gradient checks incl both "
                    f"subnetworks, worst rel err "
                    f"{max(worst.values()):.2e}, {elapsed:.1f}s"), \
        (bad, elapsed)


# ---------------------------------------------------------------------------
# 2. Five worked examples: qualified spans reproduce the labeled totals.
# ---------------------------------------------------------------------------

def test_criterion_02_worked_examples_exact(lexicon):
    rows = [
        ("Maxwell House Original Roast Ground Coffee K-Cup Pods, "
         "Caffeinated, 24 ct - 8.3 oz Box",
         C, Decimal(24), "count", [Decimal(24)]),
        ("Maxwell House Original Roast Medium Ground Coffee, Caffeinated, "
         "42.5 oz Canister (2 Pack)",
         W, Decimal(85), "oz", [Decimal("42.5"), Decimal(2)]),
        ("Tansukh Panchkol Powder for Hyperacidity and Digestion, red 60 gm "
         "(Pack of 2), (total 120 gm)",
         W, Decimal(120), "gm", [Decimal(60), Decimal(2)]),
        ("Niconi Advanced Hand Sanitizer with 8 Hour Germ Protection Lemon "
         "- 200 ml (pack of 2), (100 ml each)",
         V, Decimal(200), "ml", [Decimal(2), Decimal(100)]),
    ]
    checked = []
    for i, (title, uom, total, unit, expect_values) in enumerate(rows, 1):
        rec = ProductRecord(id=f"t{i}", attributes={"title": title},
                            gold_uom=uom, gold_total=(total, unit))
        qs = tag_record(rec, lexicon)
        assert qs.qualified, title
        assert [s.value for s in qs.spans] == expect_values, title
        got = aggregate_total([s.as_typed() for s in qs.spans], uom, lexicon)
        assert got is not None and got.value == total, (title, got)
        assert got.uom == uom
        if uom != C:
            assert got.unit == unit, (title, got)
        checked.append(f"{got.value} {got.unit}")

    # span-wise labels for the fifth example; its total is only restated,
    # never factored, so qualification correctly finds no combination
    title5 = ("Nutratech Creatine Monohydrate Micronized - 200 g "
              "(Blueberry Flavor), 5000 mg Amino powder, 100 g extra")
    rec5 = ProductRecord(id="t5", attributes={"title": title5},
                         gold_uom=W, gold_total=(Decimal(300), "gm"))
    qs5 = tag_record(rec5, lexicon)
    assert not qs5.qualified
    gold_spans = [TypedQuantity(Decimal(200), W, "g"),
                  TypedQuantity(Decimal(100), W, "g")]
    got5 = aggregate_total(gold_spans, W, lexicon)
    assert got5 is not None and got5.value == Decimal(300)
    assert got5.unit == "g" and got5.uom == W
    checked.append(f"{got5.value} {got5.unit}")
    assert _verdict(2, True, "all five examples exact: " + "; ".join(checked))


# ---------------------------------------------------------------------------
# 3. Span qualification agrees with exhaustive enumeration on random inputs.
# ---------------------------------------------------------------------------

def _enumerate_combos(cands, total, unit, uom, lexicon):
    """All index combinations (size <= 3) that satisfy the labeling rules."""
    if uom == C and total == 1:
        return [()]
    total_factor = Decimal(1) if uom == C else lexicon.factor(unit, uom)
    found = []
    for k in range(1, min(3, len(cands)) + 1):
        for combo in itertools.combinations(range(len(cands)), k):
            members = [cands[i] for i in combo]
            dense = [m for m in members if m.cued_type != C]
            if uom == C:
                if dense:
                    continue
            elif len(dense) != 1 or dense[0].cued_type != uom:
                continue
            product = Decimal(1)
            for mb in members:
                v = mb.value
                if mb.cued_type != C:
                    v = v * lexicon.factor(mb.cue_unit, mb.cued_type) \
                        / total_factor
                product *= v
            if decimals_close(product, total):
                found.append(combo)
    return found


def _random_instance(rng, lexicon):
    uom = (W, V, C)[int(rng.integers(3))]
    base_unit = {W: "g", V: "ml"}.get(uom)
    big_unit = {W: "kg", V: "l"}.get(uom)
    n = int(rng.integers(0, 9))
    cands = []
    for i in range(n):
        v = Decimal(int(rng.integers(1, 13)))
        if rng.random() < 0.3:
            v /= 2
        roll = rng.random()
        if uom == C or roll < 0.5:
            ctype, unit = C, None
        elif roll < 0.85:
            ctype, unit = uom, base_unit
        else:
            ctype, unit = uom, big_unit
        cands.append(CandidateQuantity("title", 6 * i, 6 * i + 4, v,
                                       ctype, unit))
    total = None
    if n and rng.random() < 0.55:
        k = int(rng.integers(1, min(3, n) + 1))
        pick = sorted(rng.choice(n, size=k, replace=False).tolist())
        members = [cands[i] for i in pick]
        dense = [m for m in members if m.cued_type != C]
        valid = (not dense) if uom == C else (
            len(dense) == 1 and dense[0].cued_type == uom)
        if valid:
            total = Decimal(1)
            for mb in members:
                v = mb.value
                if mb.cued_type != C:
                    v = v * lexicon.factor(mb.cue_unit, mb.cued_type)
                total *= v
    if total is None:
        total = Decimal(int(rng.integers(1, 40)))
        if uom == C and rng.random() < 0.1:
            total = Decimal(1)
    return cands, total, base_unit, uom


def test_criterion_03_qualification_matches_enumeration(lexicon):
    t0 = time.time()
    rng = np.random.default_rng(SEED)
    n_nonempty = n_empty_ok = n_unqualifiable = 0
    for _ in range(1000):
        cands, total, unit, uom = _random_instance(rng, lexicon)
        got = qualify_spans(cands, total, unit, uom, lexicon)
        combos = _enumerate_combos(cands, total, unit, uom, lexicon)
        start_to_idx = {cd.start: i for i, cd in enumerate(cands)}
        if got.qualified and got.spans:
            idx = tuple(sorted(start_to_idx[s.start] for s in got.spans))
            assert idx in set(combos), (idx, combos)
            dense = [s for s in got.spans if s.cued_type != C]
            if uom == C:
                assert not dense
            else:
                assert len(dense) == 1 and dense[0].cued_type == uom
            product = Decimal(1)
            total_factor = (Decimal(1) if uom == C
                            else lexicon.factor(unit, uom))
            for s in got.spans:
                v = s.value
                if s.cued_type != C:
                    v = v * lexicon.factor(s.cue_unit, s.cued_type) \
                        / total_factor
                product *= v
            assert decimals_close(product, total)
            n_nonempty += 1
        elif got.qualified:
            assert uom == C and total == 1
            assert combos == [()]
            n_empty_ok += 1
        else:
            assert not combos, (cands, total, uom, combos)
            n_unqualifiable += 1
    elapsed = time.time() - t0
    ok = n_nonempty > 100 and n_unqualifiable > 100 and elapsed < 60.0
    assert _verdict(3, ok, f"1000 random instances: {n_nonempty} qualified "
                    f"with spans, {n_empty_ok} empty-qualified, "
                    f"{n_unqualifiable} unqualifiable, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 4. Span-image invariants: normalization, monotone non-overlapping decode,
#    count-default and abstain branches.
# ---------------------------------------------------------------------------

def test_criterion_04_span_image_invariants(vocab, lexicon):
    qcfg = QEConfig(embed_dim=8, enc_widths=(3,), enc_channels=(8,),
                    branch_width=3, branch_dim=6, img_widths=(3, 3),
                    img_channels=(4, 2), dropout=0.0, max_len=64, seed=4)
    model = QuantityExtractor(qcfg, vocab=vocab)
    texts = ["Coffee 24 ct - 8.3 oz Box (2 Pack)",
             "Sanitizer 200 ml (pack of 2), 100 ml each",
             "Plain product with no numerals at all"]
    max_dev = 0.0
    for text in texts:
        for probs in ([1.0, 0.0, 0.0], [0.2, 0.5, 0.3]):
            img = model.span_image(text, np.array(probs))
            dev = float(np.max(np.abs(img.scores.sum(axis=2) - 1.0)))
            max_dev = max(max_dev, dev)
            assert dev <= 1e-6

    # monotone decode with non-overlap, on model images and a fixture image
    mono_checked = 0
    for text in texts[:2]:
        img = model.span_image(text, np.array([0.3, 0.4, 0.3]))
        prev = None
        for th in np.linspace(0.02, 0.98, 13):
            spans = collect_spans(img, text, float(th), lexicon)
            got = {(s.start, s.end) for s in spans}
            ordered = sorted(got)
            for (s1, e1), (s2, e2) in zip(ordered, ordered[1:]):
                assert e1 < s2, "decoded spans overlap"
            if prev is not None:
                assert got <= prev, "decode not monotone in threshold"
            prev = got
            mono_checked += 1

    text = "12 x 340 gm"
    blank = np.zeros((len(text), len(text), 2), dtype=np.float32)
    blank[:, :, 0] = 1.0
    empty_img = SpanImage(n=len(text), scores=blank)
    count_default = decode_spans(empty_img, text, C, 0.5, lexicon)
    abstain_w = decode_spans(empty_img, text, W, 0.5, lexicon)
    abstain_v = decode_spans(empty_img, text, V, 0.5, lexicon)
    assert count_default == []
    assert abstain_w is None and abstain_v is None

    hot = blank.copy()
    hot[0, 1] = (0.1, 0.9)
    hot[5, 7] = (0.3, 0.7)
    hot_img = SpanImage(n=len(text), scores=hot)
    spans = decode_spans(hot_img, text, W, 0.5, lexicon)
    assert spans is not None and [s.value for s in spans] == \
        [Decimal(12), Decimal(340)]
    assert _verdict(4, True, f"depth-softmax within {max_dev:.1e}; "
                    f"{mono_checked} threshold steps monotone and "
                    f"non-overlapping; count-default and abstain branches "
                    f"exercised")


# ---------------------------------------------------------------------------
# Shared 5,000-record two-phase run for criteria 5, 6, 7 and 9.
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def big_run(tmp_path_factory, lexicon):
    out = tmp_path_factory.mktemp("accept")
    t0 = time.time()
    data = generate_dataset(5000, seed=SEED)
    records = [rec for rec, _ in data]
    rows, stats = tag_records(records, lexicon)
    spans_path = out / "tagged.spans.jsonl"
    write_spans(rows, spans_path)
    spans = load_spans(spans_path)

    uom_path = out / "uom.ckpt"
    ucfg = TrainConfig(phase="uom", epochs=8, lr=3e-3, seed=SEED,
                       upsample_factor=2.0, patience=3)
    ures = train_uom(records, ucfg, out_path=uom_path, lexicon=lexicon,
                     spans=spans, log=_quiet)
    uom_hash_before = _sha(uom_path)

    qe_path = out / "qe.ckpt"
    qcfg = TrainConfig(phase="qe", epochs=6, lr=3e-3, seed=SEED, patience=2)
    qres = train_qe(records, spans, qcfg, uom_path, out_path=qe_path,
                    lexicon=lexicon, log=_quiet)
    elapsed = time.time() - t0
    return {
        "dir": out,
        "data": data,
        "records": records,
        "spans": spans,
        "tag_stats": stats,
        "uom_path": uom_path,
        "qe_path": qe_path,
        "uom_config": ucfg,
        "classifier": ures.model,
        "extractor": qres.model,
        "uom_result": ures,
        "qe_result": qres,
        "uom_hash_before": uom_hash_before,
        "uom_hash_after": _sha(uom_path),
        "elapsed": elapsed,
    }


# ---------------------------------------------------------------------------
# 5. Desk-scale training run: dataset contract, held-out quality, budget.
# ---------------------------------------------------------------------------

def test_criterion_05_desk_scale_training(big_run, lexicon):
    data = big_run["data"]
    hist = {}
    for _, sp in data:
        hist[len(sp)] = hist.get(len(sp), 0) + 1
    for k, prop in enumerate(DEFAULT_MIX):
        assert hist.get(k, 0) == round(prop * 5000), (k, hist)
    tokens = AmbiguityTokens.from_lexicon(lexicon)
    flagged = sum(record_ambiguity(rec, tokens) for rec, _ in data)
    assert flagged == round(DEFAULT_AMBIGUITY_SHARE * 5000)

    macro = big_run["uom_result"].report.classification["macro_f1"]
    strict = big_run["qe_result"].report.extraction["strict_recall"]
    elapsed = big_run["elapsed"]
    ok = macro >= 0.95 and strict >= 0.85 and elapsed <= 600.0
    assert _verdict(5, ok, f"5000 records (span mix and 21% ambiguity "
                    f"exact), held-out macro-F1 {macro:.4f} (>= 0.95), "
                    f"strict total accuracy {strict:.4f} (>= 0.85), "
                    f"{elapsed:.0f}s (<= 600s)")


# ---------------------------------------------------------------------------
# 6. Directional comparisons: model vs baseline on the ambiguous slice,
#    upsampling, category features.
# ---------------------------------------------------------------------------

def test_criterion_06_directional_comparisons(big_run, lexicon):
    by_id = {rec.id: rec for rec in big_run["records"]}
    val_recs = [by_id[i] for i in big_run["qe_result"].val_ids]
    predictor = Predictor(big_run["classifier"], big_run["extractor"],
                          lexicon)
    baseline = BaselinePredictor(lexicon)
    model_rep = evaluate_predictions(
        val_recs, [predictor.predict(r) for r in val_recs], lexicon)
    base_rep = evaluate_predictions(
        val_recs, [baseline.predict(r) for r in val_recs], lexicon)
    model_prec = model_rep.slices["ambiguous"]["extraction"][
        "strict_precision"]
    base_prec = base_rep.slices["ambiguous"]["extraction"]["strict_precision"]
    cond_a = model_prec >= base_prec

    base_cfg = big_run["uom_config"]
    f1_cfg = TrainConfig(**{**base_cfg.to_dict(), "upsample_factor": 1.0})
    f1_run = train_uom(big_run["records"], f1_cfg, lexicon=lexicon,
                       spans=big_run["spans"], log=_quiet)

    def wv_recall(res):
        per = res.report.classification["per_class"]
        return (per["weight"]["recall"] + per["volume"]["recall"]) / 2.0

    rec_f2 = wv_recall(big_run["uom_result"])
    rec_f1 = wv_recall(f1_run)
    cond_b = rec_f2 >= rec_f1

    nocat_cfg = TrainConfig(**{**base_cfg.to_dict(), "use_categories": False})
    nocat_run = train_uom(big_run["records"], nocat_cfg, lexicon=lexicon,
                          spans=big_run["spans"], log=_quiet)

    def hard_f1(res):
        return res.report.slices["ambiguous"]["classification"]["macro_f1"]

    f1_with = hard_f1(big_run["uom_result"])
    f1_without = hard_f1(nocat_run)
    cond_c = f1_with >= f1_without

    ok = cond_a and cond_b and cond_c
    assert _verdict(6, ok,
                    f"(a) ambiguous strict precision model {model_prec:.4f} "
                    f">= baseline {base_prec:.4f}: {cond_a}; "
                    f"(b) weight+volume recall f=2 {rec_f2:.4f} >= f=1 "
                    f"{rec_f1:.4f}: {cond_b}; "
                    f"(c) hard-example F1 with categories {f1_with:.4f} >= "
                    f"without {f1_without:.4f}: {cond_c}")


# ---------------------------------------------------------------------------
# 7. Latency: mean single-record inference under 50 ms at 2 worker threads,
#    with mean and P90 reported for 2, 4 and 8 threads.
# ---------------------------------------------------------------------------

def test_criterion_07_latency(big_run, lexicon):
    predictor = Predictor(big_run["classifier"], big_run["extractor"],
                          lexicon, attributes=("title",))
    records = big_run["records"][:64]
    report = run_bench(predictor, records, (2, 4, 8), iters=100)
    assert report["attribute_config"] == "short_text"
    assert [cfg["threads"] for cfg in report["configs"]] == [2, 4, 8]
    for cfg in report["configs"]:
        assert cfg["mean_ms"] > 0 and cfg["p90_ms"] > 0
    mean2 = report["configs"][0]["mean_ms"]
    summary = ", ".join(f"{cfg['threads']}T mean {cfg['mean_ms']:.1f}ms "
                        f"p90 {cfg['p90_ms']:.1f}ms"
                        for cfg in report["configs"])
    ok = mean2 < 50.0
    assert _verdict(7, ok, f"{summary} (2-thread mean < 50 ms)")


# ---------------------------------------------------------------------------
# 8. Vocabulary contract: 128 characters with accents; round-trip property.
# ---------------------------------------------------------------------------

def test_criterion_08_vocabulary_contract(vocab):
    ok_size = len(vocab) == 128 and len(set(vocab.entries)) == 128
    ok_accents = all(
        encode_text(ch, vocab)[0][0] != vocab.unknown_index
        and vocab.char_at(int(encode_text(ch, vocab)[0][0])) == ch
        for ch in "çéñ")

    alphabet = sorted(set(vocab.entries[2:])
                      - {chr(0xE000 + i) for i in range(128)})

    @settings(max_examples=120, deadline=None)
    @given(st.text(alphabet=alphabet, max_size=48))
    def round_trip(text):
        ids, n = encode_text(text, vocab)
        assert n == len(text)
        assert "".join(vocab.char_at(int(i)) for i in ids) == text

    error = None
    try:
        round_trip()
    except Exception as e:  # property failure surfaces in the verdict
        error = e
    ok = ok_size and ok_accents and error is None
    assert _verdict(8, ok, f"128 characters, ç/é/ñ round-trip, "
                    f"120-case encode/decode property "
                    f"{'held' if error is None else 'failed'}"), error


# ---------------------------------------------------------------------------
# 9. Freeze contract: phase two leaves the classifier checkpoint unchanged.
# ---------------------------------------------------------------------------

def test_criterion_09_classifier_frozen_in_phase_two(big_run):
    before = big_run["uom_hash_before"]
    after = big_run["uom_hash_after"]
    ok = before == after
    assert _verdict(9, ok, f"classifier checkpoint sha256 {before[:16]}... "
                    f"unchanged through phase two")


# ---------------------------------------------------------------------------
# 10. Determinism: the full pipeline is byte-identical across reruns.
# ---------------------------------------------------------------------------

def _pipeline(workdir):
    data = workdir / "data.jsonl"
    assert cli_main(["synth", "--n", "300", "--seed", "77",
                     "--out", str(data)]) == 0
    tagged = workdir / "tagged.spans.jsonl"
    assert cli_main(["tag", "--in", str(data), "--out", str(tagged)]) == 0
    ucfg = workdir / "uom.json"
    ucfg.write_text(json.dumps({"epochs": 3, "lr": 3e-3, "seed": 5}))
    uom = workdir / "uom.ckpt"
    assert cli_main(["train-uom", "--in", str(data), "--spans", str(tagged),
                     "--config", str(ucfg), "--out", str(uom)]) == 0
    qcfg = workdir / "qe.json"
    qcfg.write_text(json.dumps({"epochs": 1, "lr": 3e-3, "seed": 5,
                                "calibrate": False}))
    qe = workdir / "qe.ckpt"
    assert cli_main(["train-qe", "--in", str(data), "--spans", str(tagged),
                     "--uom-checkpoint", str(uom), "--config", str(qcfg),
                     "--out", str(qe)]) == 0
    report = workdir / "eval.json"
    assert cli_main(["eval", "--mode", "extraction", "--in", str(data),
                     "--uom-checkpoint", str(uom), "--qe-checkpoint",
                     str(qe), "--out", str(report)]) == 0
    return [data, workdir / "data.spans.jsonl", tagged, uom, qe, report]


def test_criterion_10_pipeline_determinism(tmp_path):
    run_a = tmp_path / "a"
    run_b = tmp_path / "b"
    run_a.mkdir()
    run_b.mkdir()
    files_a = _pipeline(run_a)
    files_b = _pipeline(run_b)
    diffs = [fa.name for fa, fb in zip(files_a, files_b)
             if fa.read_bytes() != fb.read_bytes()]
    ok = not diffs
    assert _verdict(10, ok, "synth, tag, train and eval artifacts "
                    "byte-identical across two seeded runs"
                    + (f" (differs: {diffs})" if diffs else ""))
