import numpy as np
import pytest

from quantext.corpus import build_vocab
from quantext.rules import UnitLexicon
from quantext.synthgen import generate_dataset
from quantext.tagger import load_spans, span_row, write_spans
from quantext.train import TrainConfig, train_qe, train_uom


def _quiet(_msg: str) -> None:
    pass


@pytest.fixture(scope="session")
def lexicon():
    return UnitLexicon.default()


@pytest.fixture(scope="session")
def vocab():
    return build_vocab()


@pytest.fixture(scope="session")
def small_data():
    """400 synthetic records with their gold spans."""
    return generate_dataset(400, seed=23)


@pytest.fixture(scope="session")
def small_records(small_data):
    return [rec for rec, _ in small_data]


@pytest.fixture(scope="session")
def small_spans_path(small_data, tmp_path_factory):
    path = tmp_path_factory.mktemp("spans") / "gold.spans.jsonl"
    write_spans([span_row(rec.id, True, sp) for rec, sp in small_data], path)
    return path


@pytest.fixture(scope="session")
def small_spans(small_spans_path):
    return load_spans(small_spans_path)


@pytest.fixture(scope="session")
def mini_run(small_records, small_spans, tmp_path_factory, lexicon):
    """One small two-phase training run shared across behavioral tests."""
    out = tmp_path_factory.mktemp("mini")
    uom_path = out / "uom.ckpt"
    qe_path = out / "qe.ckpt"
    ucfg = TrainConfig(phase="uom", epochs=10, seed=0, lr=3e-3,
                       upsample_factor=2.0, patience=4)
    ures = train_uom(small_records, ucfg, out_path=uom_path, lexicon=lexicon,
                     log=_quiet)
    qcfg = TrainConfig(phase="qe", epochs=4, seed=0, lr=3e-3, patience=2)
    qres = train_qe(small_records, small_spans, qcfg, uom_path,
                    out_path=qe_path, lexicon=lexicon, log=_quiet)
    return {
        "dir": out,
        "uom_path": uom_path,
        "qe_path": qe_path,
        "classifier": ures.model,
        "extractor": qres.model,
        "uom_result": ures,
        "qe_result": qres,
    }
