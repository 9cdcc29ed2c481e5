"""Command-line entry point for the quantity-extraction pipeline.

Subcommands: synth, tag, analyze, train-uom, train-qe, eval, predict,
baseline, bench. Exit codes: 0 success, 1 usage error, 2 data error,
3 checkpoint error.

Prediction output schema (one JSON object per line):

    {"id": str, "uom": "weight"|"volume"|"count", "confidence": float,
     "spans": [{"attribute": str, "start": int, "end": int,
                "score": float, "value": float}],
     "total": {"value": float, "unit": str, "uom": str} | null,
     "abstained": bool}

Span offsets are character indices into the raw attribute text with end
exclusive. A malformed input line yields {"line": n, "error": str} in place
of a prediction and a nonzero exit once the remaining lines are processed.
"""

from __future__ import annotations

import argparse
import csv
import json
import statistics
import sys
import threading
import time
from pathlib import Path

import numpy as np

from .analyze import dataset_stats
from .checkpoint import CheckpointError
from .corpus import DataError, ProductRecord, load_jsonl, write_jsonl
from .model_qe import QuantityExtractor
from .model_uom import ATTRIBUTE_SETS, UoMClassifier
from .rules import UnitLexicon, load_lexicon
from .synthgen import (DEFAULT_AMBIGUITY_SHARE, DEFAULT_MIX, LOCALES,
                       generate_dataset)
from .tagger import load_spans, span_row, tag_records, write_spans
from .train import (BaselinePredictor, Predictor, TrainConfig, evaluate,
                    train_qe, train_uom)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CHECKPOINT = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _lexicon(args) -> UnitLexicon:
    if getattr(args, "lexicon", None):
        return load_lexicon(args.lexicon)
    return UnitLexicon.default()


def validate_prediction_row(row: dict) -> None:
    """Raise ValueError unless `row` matches the predict output schema."""
    if not isinstance(row, dict):
        raise ValueError("row must be an object")
    if "error" in row:
        if not isinstance(row.get("line"), int):
            raise ValueError("error rows need an integer 'line'")
        return
    required = {"id": str, "uom": str, "confidence": (int, float),
                "spans": list, "abstained": bool}
    for key, kind in required.items():
        if key not in row:
            raise ValueError(f"missing key {key!r}")
        if not isinstance(row[key], kind):
            raise ValueError(f"key {key!r} has wrong type")
    if row["uom"] not in ("weight", "volume", "count"):
        raise ValueError(f"bad uom {row['uom']!r}")
    for span in row["spans"]:
        for key, kind in (("attribute", str), ("start", int), ("end", int),
                          ("score", (int, float)), ("value", (int, float))):
            if not isinstance(span.get(key), kind):
                raise ValueError(f"span key {key!r} missing or wrong type")
        if span["start"] >= span["end"]:
            raise ValueError("span start must be < end (end exclusive)")
    total = row.get("total")
    if total is not None:
        for key, kind in (("value", (int, float)), ("unit", str),
                          ("uom", str)):
            if not isinstance(total.get(key), kind):
                raise ValueError(f"total key {key!r} missing or wrong type")
    if row["abstained"] and total is not None:
        raise ValueError("abstained rows must have null total")


def _write_rows(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _emit_report(report: dict, path: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


# ----------------------------------------------------------------- handlers

def _cmd_synth(args) -> int:
    try:
        mix = tuple(float(x) for x in args.mix.split(","))
    except ValueError:
        raise UsageError(f"--mix must be four comma-separated numbers, "
                         f"got {args.mix!r}")
    data = generate_dataset(args.n, seed=args.seed, mix=mix,
                            ambiguity_share=args.ambiguity_share,
                            locale=args.locale, lexicon=_lexicon(args))
    write_jsonl((rec for rec, _ in data), args.out)
    spans_out = args.spans_out or (
        str(Path(args.out).with_suffix("")) + ".spans.jsonl")
    rows = [span_row(rec.id, True, spans) for rec, spans in data]
    write_spans(rows, spans_out)
    print(f"wrote {len(data)} records to {args.out} "
          f"and gold spans to {spans_out}")
    return EXIT_OK


def _cmd_tag(args) -> int:
    records = load_jsonl(args.infile)
    rows, stats = tag_records(records, _lexicon(args))
    write_spans(rows, args.out)
    print(f"tagged {stats.total} records: {stats.qualified} qualified, "
          f"{stats.unqualified} unqualifiable "
          f"({100.0 * stats.unqualified_fraction:.1f}% shrinkage)")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    records = load_jsonl(args.infile)
    spans = load_spans(args.spans) if args.spans else None
    stats = dataset_stats(records, _lexicon(args), spans=spans)
    _emit_report(stats, args.out)
    if args.csv_dir:
        outdir = Path(args.csv_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "ambiguity_per_uom.csv", "w", newline="",
                  encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["uom", "n", "ambiguous", "share"])
            for k, v in stats["ambiguous"]["per_uom"].items():
                w.writerow([k, v["n"], v["ambiguous"], f"{v['share']:.6f}"])
        with open(outdir / "ambiguity_per_category.csv", "w", newline="",
                  encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["category", "n", "ambiguous", "share"])
            for k, v in stats["ambiguous"]["per_category"].items():
                w.writerow([k, v["n"], v["ambiguous"], f"{v['share']:.6f}"])
        if "span_histogram" in stats:
            with open(outdir / "span_histogram.csv", "w", newline="",
                      encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["spans", "records"])
                for k, v in stats["span_histogram"].items():
                    w.writerow([k, v])
    return EXIT_OK


def _train_config(args, phase: str) -> TrainConfig:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"cannot read config {args.config}: {e}")
    data.setdefault("phase", phase)
    try:
        return TrainConfig.from_dict(data)
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad training config: {e}")


def _cmd_train_uom(args) -> int:
    config = _train_config(args, "uom")
    records = load_jsonl(args.infile)
    spans = load_spans(args.spans) if args.spans else None
    result = train_uom(records, config, out_path=args.out,
                       lexicon=_lexicon(args), spans=spans)
    print(f"saved classifier to {args.out} "
          f"(best epoch {result.best_epoch}, val macro-F1 "
          f"{result.report.classification['macro_f1']:.4f})")
    return EXIT_OK


def _cmd_train_qe(args) -> int:
    config = _train_config(args, "qe")
    records = load_jsonl(args.infile)
    spans = load_spans(args.spans)
    result = train_qe(records, spans, config, args.uom_checkpoint,
                      out_path=args.out, lexicon=_lexicon(args))
    print(f"saved extractor to {args.out} "
          f"(best epoch {result.best_epoch}, val strict-F1 "
          f"{result.report.extraction['strict_f1']:.4f})")
    return EXIT_OK


def _load_predictor(args) -> Predictor:
    classifier = UoMClassifier.load(args.uom_checkpoint)
    extractor = QuantityExtractor.load(args.qe_checkpoint)
    attrs = (ATTRIBUTE_SETS["short_text"] if getattr(args, "short_text", False)
             else ("title",))
    return Predictor(classifier, extractor, _lexicon(args),
                     threshold=args.threshold, attributes=attrs)


def _cmd_eval(args) -> int:
    records = load_jsonl(args.infile)
    lexicon = _lexicon(args)
    if args.mode == "uom":
        classifier = UoMClassifier.load(args.uom_checkpoint)

        class _ClsOnly:
            def predict(self, rec):
                from .train import PredictionResult
                from .corpus import UoMType
                p = classifier.predict(rec)
                return PredictionResult(rec.id, UoMType.from_str(p.uom),
                                        p.confidence, [], None, True)

        report = evaluate(records, _ClsOnly(), lexicon, mode="uom")
    else:
        if not args.qe_checkpoint:
            raise UsageError("--qe-checkpoint is required for extraction eval")
        predictor = _load_predictor(args)
        report = evaluate(records, predictor, lexicon, mode="extraction")
    _emit_report(report.to_dict(), args.out)
    return EXIT_OK


def _predict_rows(path, predict_fn) -> tuple[list[dict], int]:
    rows = []
    bad = 0
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = ProductRecord.from_dict(json.loads(line))
                row = predict_fn(rec).to_row()
            except (json.JSONDecodeError, DataError) as e:
                row = {"line": lineno, "error": str(e)}
                bad += 1
            validate_prediction_row(row)
            rows.append(row)
    return rows, bad


def _cmd_predict(args) -> int:
    predictor = _load_predictor(args)
    rows, bad = _predict_rows(args.infile, predictor.predict)
    _write_rows(rows, args.out)
    if bad:
        print(f"{bad} malformed input line(s); see error rows in {args.out}",
              file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _cmd_baseline(args) -> int:
    lexicon = _lexicon(args)
    baseline = BaselinePredictor(lexicon)
    rows, bad = _predict_rows(args.infile, baseline.predict)
    _write_rows(rows, args.out)
    try:
        records = load_jsonl(args.infile)
    except DataError:
        records = []
    golds = [r for r in records
             if r.gold_uom is not None and r.gold_total is not None]
    if golds:
        report = evaluate(golds, baseline, lexicon, mode="extraction")
        _emit_report(report.to_dict(), args.report)
    if bad:
        return EXIT_DATA
    return EXIT_OK


def run_bench(predictor: Predictor, records, thread_counts, iters: int,
              warmup: int = 10, batch: int = 1) -> dict:
    """Latency of single-record inference under N concurrent workers."""
    iters = max(int(iters), 100)
    warmup = max(int(warmup), 10)
    configs = []
    for n_threads in thread_counts:
        latencies: list[list[float]] = [[] for _ in range(n_threads)]

        def worker(k: int):
            local = latencies[k]
            for i in range(warmup):
                predictor.predict(records[(k + i) % len(records)])
            for i in range(iters):
                recs = [records[(k * iters + i + j) % len(records)]
                        for j in range(batch)]
                t0 = time.perf_counter()
                for rec in recs:
                    predictor.predict(rec)
                local.append((time.perf_counter() - t0) * 1000.0 / batch)

        threads = [threading.Thread(target=worker, args=(k,))
                   for k in range(n_threads)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        merged = sorted(v for sub in latencies for v in sub)
        p90 = merged[max(0, int(np.ceil(0.9 * len(merged))) - 1)]
        configs.append({
            "threads": n_threads,
            "iterations": iters,
            "mean_ms": round(statistics.fmean(merged), 3),
            "p90_ms": round(p90, 3),
        })
    return {
        "batch": batch,
        "attribute_config": "short_text"
        if predictor.attributes == ("title",) else "all_text",
        "configs": configs,
    }


def _cmd_bench(args) -> int:
    try:
        threads = [int(x) for x in args.threads.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--threads must be comma-separated ints, "
                         f"got {args.threads!r}")
    if not threads or any(t < 1 for t in threads):
        raise UsageError("--threads needs positive thread counts")
    if args.batch < 1:
        raise UsageError("--batch must be >= 1")
    predictor = _load_predictor(args)
    if args.infile:
        records = load_jsonl(args.infile)
    else:
        records = [rec for rec, _ in generate_dataset(64, seed=args.seed)]
    if not records:
        raise DataError("bench needs at least one record")
    report = run_bench(predictor, records, threads, args.iters,
                       batch=args.batch)
    _emit_report(report, args.out)
    return EXIT_OK


# ----------------------------------------------------------------- parser

def build_parser() -> _Parser:
    parser = _Parser(prog="quantext",
                     description="Quantity extraction from product text")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--locale", choices=LOCALES + ("mix",), default="mix")
    p.add_argument("--ambiguity-share", type=float,
                   default=DEFAULT_AMBIGUITY_SHARE)
    p.add_argument("--mix", default=",".join(str(m) for m in DEFAULT_MIX))
    p.add_argument("--out", required=True)
    p.add_argument("--spans-out")
    p.add_argument("--lexicon")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("tag", help="weak-label gold spans from totals")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lexicon")
    p.set_defaults(func=_cmd_tag)

    p = sub.add_parser("analyze", help="ambiguity and span statistics")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--spans")
    p.add_argument("--out")
    p.add_argument("--csv-dir")
    p.add_argument("--lexicon")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("train-uom", help="train the UoM classifier")
    p.add_argument("--config")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--spans")
    p.add_argument("--lexicon")
    p.set_defaults(func=_cmd_train_uom)

    p = sub.add_parser("train-qe", help="train the quantity extractor")
    p.add_argument("--config")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--spans", required=True)
    p.add_argument("--uom-checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lexicon")
    p.set_defaults(func=_cmd_train_qe)

    p = sub.add_parser("eval", help="evaluate a trained model")
    p.add_argument("--mode", choices=("uom", "extraction"), required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--uom-checkpoint", required=True)
    p.add_argument("--qe-checkpoint")
    p.add_argument("--threshold", type=float)
    p.add_argument("--short-text", action="store_true")
    p.add_argument("--out")
    p.add_argument("--lexicon")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="run the full pipeline on JSONL")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--uom-checkpoint", required=True)
    p.add_argument("--qe-checkpoint", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--short-text", action="store_true")
    p.add_argument("--lexicon")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("baseline", help="rule-based reference pipeline")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--lexicon")
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("bench", help="latency benchmark")
    p.add_argument("--uom-checkpoint", required=True)
    p.add_argument("--qe-checkpoint", required=True)
    p.add_argument("--threads", default="2,4,8")
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--in", dest="infile")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float)
    p.add_argument("--short-text", action="store_true")
    p.add_argument("--out")
    p.add_argument("--lexicon")
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_help()
            return EXIT_USAGE
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
