"""Span-image quantity extractor conditioned on UoM class probabilities.

Text characters are embedded and encoded by a stack of width-preserving 1D
convolutions. The three class probabilities are appended to every position,
and two separate 1D convolutions produce per-position start and end feature
vectors. Suffixing each with a normalized position channel and a branch flag
gives depth d+2; their elementwise outer product over (start, end) pairs
forms an n x n x (d+2) span image. 2D convolutions reduce it to depth 2 and
a softmax over that depth scores every character span [i..j]: row i is the
span start, column j is the end, and only the upper triangle (i <= j) is
meaningful.

Training penalizes per-pixel binary cross-entropy on the upper triangle with
positive pixels (gold spans) upweighted by area/positives, capped at 1000.
Decoding thresholds the span channel, greedily keeps non-overlapping spans
by descending score, and joins survivors to numeral tokens by exact char
offsets; pixels not matching a numeral token are dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal

import numpy as np

from . import tensor as T
from .checkpoint import (Checkpoint, load_checkpoint, require_vocab,
                         save_checkpoint)
from .corpus import CharVocab, UoMType, build_vocab, encode_text
from .aggregate import TypedQuantity
from .rules import UnitLexicon, cue_for_index, parse_number, tokenize

POSITIVE_WEIGHT_CAP = 1000.0


@dataclass(frozen=True)
class QEConfig:
    embed_dim: int = 16
    enc_widths: tuple[int, ...] = (3, 5, 5, 3)
    enc_channels: tuple[int, ...] = (32, 32, 32, 32)
    branch_width: int = 3
    branch_dim: int = 16
    img_widths: tuple[int, ...] = (3, 3)
    img_channels: tuple[int, ...] = (8, 2)
    dropout: float = 0.1
    max_len: int = 256
    decode_threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if len(self.enc_widths) != len(self.enc_channels):
            raise ValueError("enc_widths and enc_channels length mismatch")
        if len(self.img_widths) != len(self.img_channels):
            raise ValueError("img_widths and img_channels length mismatch")
        if self.img_channels[-1] != 2:
            raise ValueError("final span-image depth must be 2")

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "enc_widths": list(self.enc_widths),
            "enc_channels": list(self.enc_channels),
            "branch_width": self.branch_width,
            "branch_dim": self.branch_dim,
            "img_widths": list(self.img_widths),
            "img_channels": list(self.img_channels),
            "dropout": self.dropout,
            "max_len": self.max_len,
            "decode_threshold": self.decode_threshold,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QEConfig":
        kwargs = dict(d)
        for key in ("enc_widths", "enc_channels", "img_widths", "img_channels"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class SpanImage:
    """Depth-softmaxed span scores; channel 1 is the span probability."""
    n: int
    scores: np.ndarray  # (n, n, 2) float32

    def span_scores(self) -> np.ndarray:
        return self.scores[:, :, 1]


@dataclass(frozen=True)
class DecodedSpan:
    """One extracted numeral span; start and end are inclusive char indices."""
    attribute: str
    start: int
    end: int
    score: float
    value: Decimal
    cued_type: UoMType
    cue_unit: str | None

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError("span start must not exceed end")

    def as_typed(self) -> TypedQuantity:
        return TypedQuantity(value=self.value, uom=self.cued_type,
                             unit=self.cue_unit)

    def to_row(self) -> dict:
        return {
            "attribute": self.attribute,
            "start": self.start,
            "end": self.end + 1,
            "score": round(self.score, 6),
            "value": float(self.value),
        }


def qe_loss(image: T.Tensor, positives, pos_cap: float = POSITIVE_WEIGHT_CAP
            ) -> T.Tensor:
    """Weighted mean per-pixel 2-class CE over the upper triangle.

    image: (n, n, 2) depth-softmaxed probabilities. positives: iterable of
    inclusive (start, end) pixel coordinates that are gold spans. A uniform
    image scores ln 2 regardless of the positive set.
    """
    n = image.shape[0]
    if image.shape != (n, n, 2):
        raise ValueError(f"span image must be (n, n, 2), got {image.shape}")
    targets = np.zeros((n, n), dtype=np.int64)
    npos = 0
    for (i, j) in positives:
        if not (0 <= i <= j < n):
            raise ValueError(f"invalid span pixel ({i}, {j}) for n={n}")
        if targets[i, j] == 0:
            npos += 1
        targets[i, j] = 1
    mask = np.triu(np.ones((n, n), dtype=np.float32))
    weights = np.ones((n, n), dtype=np.float64)
    if npos:
        area = n * (n + 1) / 2
        w = min(area / npos, pos_cap)
        weights += (w - 1.0) * targets
    return T.cross_entropy(image.reshape((n * n, 2)), targets.reshape(-1),
                           weights=weights.reshape(-1), mask=mask.reshape(-1))


def _numeral_token_map(text: str):
    out = {}
    for i, tok in enumerate(tokenize(text)):
        if tok.is_number:
            out[(tok.start, tok.end - 1)] = i
    return out


def collect_spans(image: SpanImage, text: str, threshold: float,
                  lexicon: UnitLexicon, attribute: str = "title"
                  ) -> list[DecodedSpan]:
    """Thresholded, greedy non-overlapping spans joined to numeral tokens."""
    scores = image.span_scores()
    n = min(image.n, len(text))
    pixels = []
    for i in range(n):
        row = scores[i]
        for j in range(i, n):
            if row[j] > threshold:
                pixels.append((float(row[j]), i, j))
    pixels.sort(key=lambda p: (-p[0], p[1], p[2] - p[1]))
    chosen: list[tuple[float, int, int]] = []
    for s, i, j in pixels:
        if all(j < ci or i > cj for _, ci, cj in chosen):
            chosen.append((s, i, j))
    tokens = tokenize(text)
    numeral_at = _numeral_token_map(text)
    spans = []
    for s, i, j in chosen:
        idx = numeral_at.get((i, j))
        if idx is None:
            continue
        value = parse_number(tokens[idx].text)
        if value <= 0:
            continue
        cued, unit = cue_for_index(tokens, idx, lexicon)
        spans.append(DecodedSpan(attribute=attribute, start=i, end=j,
                                 score=s, value=value, cued_type=cued,
                                 cue_unit=unit))
    spans.sort(key=lambda d: d.start)
    return spans


def decode_spans(image: SpanImage, text: str, uom: UoMType, threshold: float,
                 lexicon: UnitLexicon, attribute: str = "title"
                 ) -> list[DecodedSpan] | None:
    """Decoded spans; [] means the count quantity-one sentinel, None abstains."""
    spans = collect_spans(image, text, threshold, lexicon, attribute=attribute)
    if not spans:
        return [] if uom == UoMType.COUNT else None
    return spans


class QuantityExtractor:
    def __init__(self, config: QEConfig, vocab: CharVocab | None = None,
                 init_rng: np.random.Generator | None = None):
        self.config = config
        self.vocab = vocab or build_vocab()
        self.decode_threshold = config.decode_threshold
        self.params: dict[str, T.Tensor] = {}
        self._init_params(init_rng or np.random.default_rng(config.seed))

    def _add(self, name: str, arr: np.ndarray) -> T.Tensor:
        t = T.Tensor(arr.astype(np.float32), requires_grad=True)
        self.params[name] = t
        return t

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg = self.config
        self._add("embed", rng.normal(0.0, 0.1, (len(self.vocab), cfg.embed_dim)))
        cin = cfg.embed_dim
        for i, (w, cout) in enumerate(zip(cfg.enc_widths, cfg.enc_channels)):
            bound = math.sqrt(2.0 / (w * cin))
            self._add(f"enc{i}.w", rng.normal(0.0, bound, (w, cin, cout)))
            self._add(f"enc{i}.b", np.zeros(cout))
            self._add(f"encnorm{i}.g", np.ones(cout))
            self._add(f"encnorm{i}.b", np.zeros(cout))
            cin = cout
        cond_dim = cin + 3
        bscale = math.sqrt(1.0 / (cfg.branch_width * cond_dim))
        for branch in ("start", "end"):
            self._add(f"{branch}.w",
                      rng.normal(0.0, bscale,
                                 (cfg.branch_width, cond_dim, cfg.branch_dim)))
            self._add(f"{branch}.b", np.zeros(cfg.branch_dim))
        cin2 = cfg.branch_dim + 2
        for i, (w, cout) in enumerate(zip(cfg.img_widths, cfg.img_channels)):
            bound = math.sqrt(2.0 / (w * w * cin2))
            self._add(f"img{i}.w", rng.normal(0.0, bound, (w, w, cin2, cout)))
            self._add(f"img{i}.b", np.zeros(cout))
            cin2 = cout

    def parameters(self) -> list[T.Tensor]:
        return list(self.params.values())

    def params_data(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    # -- forward -----------------------------------------------------------

    def qe_encode(self, ids: np.ndarray, training: bool = False,
                  rng: np.random.Generator | None = None) -> T.Tensor:
        cfg = self.config
        x = T.embed(self.params["embed"], ids)
        for i in range(len(cfg.enc_widths)):
            x = T.conv1d(x, self.params[f"enc{i}.w"], self.params[f"enc{i}.b"])
            x = x * self.params[f"encnorm{i}.g"] + self.params[f"encnorm{i}.b"]
            x = x.relu()
            if training and cfg.dropout > 0:
                x = T.dropout(x, cfg.dropout, rng, training=True)
        return x

    def branch_se(self, encoded: T.Tensor, uom_probs: np.ndarray
                  ) -> tuple[T.Tensor, T.Tensor]:
        """Start/end position features with position and branch channels."""
        n = encoded.shape[0]
        probs = np.broadcast_to(
            np.asarray(uom_probs, dtype=np.float32).reshape(1, 3), (n, 3))
        cond = T.concat([encoded, T.Tensor(probs.copy())], axis=1)
        s = T.conv1d(cond, self.params["start.w"], self.params["start.b"])
        e = T.conv1d(cond, self.params["end.w"], self.params["end.b"])
        pos = (np.arange(n, dtype=np.float32) / n).reshape(n, 1)
        zeros = np.zeros((n, 1), dtype=np.float32)
        ones = np.ones((n, 1), dtype=np.float32)
        s = T.concat([s, T.Tensor(pos), T.Tensor(zeros)], axis=1)
        e = T.concat([e, T.Tensor(pos), T.Tensor(ones)], axis=1)
        return s, e

    def build_span_image(self, s: T.Tensor, e: T.Tensor) -> T.Tensor:
        """(n, d+2) start/end features -> (n, n, 2) depth-softmaxed image."""
        cfg = self.config
        img = T.span_outer(s, e)
        last = len(cfg.img_widths) - 1
        for i in range(len(cfg.img_widths)):
            img = T.conv2d(img, self.params[f"img{i}.w"],
                           self.params[f"img{i}.b"])
            if i != last:
                img = img.relu()
        return img.softmax(axis=2)

    def forward(self, ids: np.ndarray, uom_probs: np.ndarray,
                training: bool = False,
                rng: np.random.Generator | None = None) -> T.Tensor:
        encoded = self.qe_encode(ids, training=training, rng=rng)
        s, e = self.branch_se(encoded, uom_probs)
        return self.build_span_image(s, e)

    def span_image(self, text: str, uom_probs: np.ndarray) -> SpanImage:
        ids, n = encode_text(text, self.vocab, max_len=self.config.max_len)
        with T.no_grad():
            image = self.forward(ids[:max(n, 1)], uom_probs)
        return SpanImage(n=image.shape[0], scores=image.data)

    # -- persistence -------------------------------------------------------

    def save(self, path, decode_threshold: float | None = None) -> None:
        hyper = {
            "config": self.config.to_dict(),
            "decode_threshold": float(decode_threshold
                                      if decode_threshold is not None
                                      else self.decode_threshold),
        }
        save_checkpoint(path, "qe", self.params_data(), hyper,
                        self.vocab.fingerprint())

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(tensors)
        extra = set(tensors) - set(self.params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, "
                             f"unexpected {sorted(extra)}")
        for k, t in self.params.items():
            if tensors[k].shape != t.data.shape:
                raise ValueError(f"shape mismatch for {k}")
            t.data = tensors[k].astype(np.float32).copy()

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint,
                        vocab: CharVocab | None = None) -> "QuantityExtractor":
        vocab = vocab or build_vocab()
        require_vocab(ckpt, vocab.fingerprint())
        config = QEConfig.from_dict(ckpt.hyperparams["config"])
        model = cls(config, vocab=vocab)
        model.load_state(ckpt.tensors)
        model.decode_threshold = float(
            ckpt.hyperparams.get("decode_threshold", config.decode_threshold))
        return model

    @classmethod
    def load(cls, path, vocab: CharVocab | None = None) -> "QuantityExtractor":
        return cls.from_checkpoint(load_checkpoint(path), vocab=vocab)
