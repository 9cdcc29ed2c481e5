"""Character-level convolutional classifier for unit-of-measure type.

Each configured text attribute is encoded by a shared stack of 1D
convolution blocks (conv, scale-shift, ReLU, max-pool) over character
embeddings, followed by a global max over positions. Attribute vectors are
combined by a small attention layer, optionally concatenated with category
embeddings, and fed through a two-layer head that outputs a softmax over
(weight, volume, count).

Padding positions are masked to zero before and after every block, so a
record encoded alone and the same record inside a padded batch produce the
same activations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .checkpoint import (Checkpoint, load_checkpoint, require_vocab,
                         save_checkpoint)
from .corpus import (ATTRIBUTE_NAMES, SHORT_TEXT_ATTRIBUTES, CLASS_ORDER,
                     CharVocab, ProductRecord, build_vocab, encode_text)

ATTRIBUTE_SETS = {
    "short_text": SHORT_TEXT_ATTRIBUTES,
    "all_text": ATTRIBUTE_NAMES,
}

# Per-attribute encoding caps, chars.
ATTRIBUTE_MAX_LEN = {
    "title": 256,
    "description": 512,
    "bullet_points": 512,
    "ocr_text": 256,
}


@dataclass(frozen=True)
class UoMClassifierConfig:
    embed_dim: int = 16
    conv_widths: tuple[int, ...] = (3, 5, 3)
    conv_channels: tuple[int, ...] = (32, 32, 32)
    pool_window: int = 2
    attn_key_dim: int = 16
    hidden_dim: int = 64
    dropout: float = 0.1
    attribute_set: str = "short_text"
    use_categories: bool = True
    category_levels: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.attribute_set not in ATTRIBUTE_SETS:
            raise ValueError(f"unknown attribute_set {self.attribute_set!r}")
        if len(self.conv_widths) != len(self.conv_channels):
            raise ValueError("conv_widths and conv_channels length mismatch")

    @property
    def attributes(self) -> tuple[str, ...]:
        return ATTRIBUTE_SETS[self.attribute_set]

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "conv_widths": list(self.conv_widths),
            "conv_channels": list(self.conv_channels),
            "pool_window": self.pool_window,
            "attn_key_dim": self.attn_key_dim,
            "hidden_dim": self.hidden_dim,
            "dropout": self.dropout,
            "attribute_set": self.attribute_set,
            "use_categories": self.use_categories,
            "category_levels": self.category_levels,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UoMClassifierConfig":
        kwargs = dict(d)
        for key in ("conv_widths", "conv_channels"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class UoMPrediction:
    uom: str
    confidence: float
    probs: tuple[float, float, float]


def category_embed_dim(vocab_size: int) -> int:
    """Embedding width for a categorical feature with vocab_size known values."""
    return max(4, math.ceil(math.sqrt(max(vocab_size, 1))))


def build_category_vocabs(records: Sequence[ProductRecord],
                          levels: int) -> list[list[str]]:
    """Sorted known values per category level; index 0 is reserved unknown."""
    seen: list[set[str]] = [set() for _ in range(levels)]
    for rec in records:
        for lvl in range(min(levels, len(rec.category_path))):
            seen[lvl].add(rec.category_path[lvl])
    return [sorted(s) for s in seen]


@dataclass
class FeatureBatch:
    ids: dict[str, np.ndarray]      # attr -> (B, T) int64
    masks: dict[str, np.ndarray]    # attr -> (B, T, 1) float32
    categories: np.ndarray | None   # (B, levels) int64
    size: int


class UoMClassifier:
    def __init__(self, config: UoMClassifierConfig, vocab: CharVocab | None = None,
                 category_vocabs: Sequence[Sequence[str]] | None = None,
                 init_rng: np.random.Generator | None = None):
        self.config = config
        self.vocab = vocab or build_vocab()
        if config.use_categories:
            if category_vocabs is None:
                category_vocabs = [[] for _ in range(config.category_levels)]
            if len(category_vocabs) != config.category_levels:
                raise ValueError("category vocab count != category_levels")
        else:
            category_vocabs = []
        self.category_vocabs = [list(v) for v in category_vocabs]
        self._cat_index = [
            {tok: i + 1 for i, tok in enumerate(v)} for v in self.category_vocabs
        ]
        self.params: dict[str, T.Tensor] = {}
        self._init_params(init_rng or np.random.default_rng(config.seed))

    # -- parameter construction -------------------------------------------

    def _add(self, name: str, arr: np.ndarray) -> T.Tensor:
        t = T.Tensor(arr.astype(np.float32), requires_grad=True)
        self.params[name] = t
        return t

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg = self.config
        self._add("embed", rng.normal(0.0, 0.1, (len(self.vocab), cfg.embed_dim)))
        cin = cfg.embed_dim
        for i, (w, cout) in enumerate(zip(cfg.conv_widths, cfg.conv_channels)):
            bound = math.sqrt(2.0 / (w * cin))
            self._add(f"conv{i}.w", rng.normal(0.0, bound, (w, cin, cout)))
            self._add(f"conv{i}.b", np.zeros(cout))
            self._add(f"norm{i}.g", np.ones(cout))
            self._add(f"norm{i}.b", np.zeros(cout))
            cin = cout
        enc_dim = cin
        self._add("attn.key_w",
                  rng.normal(0.0, math.sqrt(1.0 / enc_dim),
                             (enc_dim, cfg.attn_key_dim)))
        self._add("attn.key_b", np.zeros(cfg.attn_key_dim))
        self._add("attn.scale",
                  rng.normal(0.0, math.sqrt(1.0 / cfg.attn_key_dim),
                             (cfg.attn_key_dim,)))
        feat_dim = enc_dim
        if cfg.use_categories:
            for lvl, vocab in enumerate(self.category_vocabs):
                dim = category_embed_dim(len(vocab))
                self._add(f"cat{lvl}.table",
                          rng.normal(0.0, 0.1, (len(vocab) + 1, dim)))
                feat_dim += dim
        self._add("head0.w",
                  rng.normal(0.0, math.sqrt(2.0 / feat_dim),
                             (feat_dim, cfg.hidden_dim)))
        self._add("head0.b", np.zeros(cfg.hidden_dim))
        self._add("head1.w",
                  rng.normal(0.0, math.sqrt(1.0 / cfg.hidden_dim),
                             (cfg.hidden_dim, len(CLASS_ORDER))))
        self._add("head1.b", np.zeros(len(CLASS_ORDER)))

    def parameters(self) -> list[T.Tensor]:
        return list(self.params.values())

    def param_snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    # -- featurization ------------------------------------------------------

    def category_ids(self, record: ProductRecord) -> np.ndarray:
        ids = np.zeros(self.config.category_levels, dtype=np.int64)
        for lvl in range(min(self.config.category_levels,
                             len(record.category_path))):
            ids[lvl] = self._cat_index[lvl].get(record.category_path[lvl], 0)
        return ids

    def featurize(self, records: Sequence[ProductRecord]) -> FeatureBatch:
        cfg = self.config
        ids: dict[str, np.ndarray] = {}
        masks: dict[str, np.ndarray] = {}
        for attr in cfg.attributes:
            cap = ATTRIBUTE_MAX_LEN[attr]
            encoded = []
            lens = []
            for rec in records:
                text = rec.attributes.get(attr, "")
                arr, n = encode_text(text, self.vocab, max_len=cap)
                encoded.append(arr)
                lens.append(n)
            tmax = max(1, max(lens))
            batch = np.zeros((len(records), tmax), dtype=np.int64)
            mask = np.zeros((len(records), tmax, 1), dtype=np.float32)
            for i, (arr, n) in enumerate(zip(encoded, lens)):
                batch[i, :n] = arr[:n]
                mask[i, :n, 0] = 1.0
            ids[attr] = batch
            masks[attr] = mask
        cats = None
        if cfg.use_categories:
            cats = np.stack([self.category_ids(r) for r in records])
        return FeatureBatch(ids=ids, masks=masks, categories=cats,
                            size=len(records))

    # -- forward pieces ------------------------------------------------------

    def attribute_encode(self, ids: np.ndarray, mask: np.ndarray,
                         training: bool = False,
                         rng: np.random.Generator | None = None) -> T.Tensor:
        """Encode one attribute for a batch: (B, T) ids -> (B, C) vectors."""
        cfg = self.config
        m = T.Tensor(mask)
        x = T.embed(self.params["embed"], ids) * m
        for i in range(len(cfg.conv_widths)):
            x = T.conv1d(x, self.params[f"conv{i}.w"], self.params[f"conv{i}.b"])
            x = x * self.params[f"norm{i}.g"] + self.params[f"norm{i}.b"]
            x = x.relu() * m
            if training and cfg.dropout > 0:
                x = T.dropout(x, cfg.dropout, rng, training=True)
            x = T.maxpool1d(x, cfg.pool_window)
            m = T.Tensor(_pool_mask(m.data, cfg.pool_window))
            x = x * m
        return _global_max(x)

    def encode_attributes(self, batch: FeatureBatch, training: bool = False,
                          rng: np.random.Generator | None = None) -> list[T.Tensor]:
        return [
            self.attribute_encode(batch.ids[a], batch.masks[a],
                                  training=training, rng=rng)
            for a in self.config.attributes
        ]

    def attention_pool(self, encodings: Sequence[T.Tensor]) -> T.Tensor:
        """Combine per-attribute vectors (each (B, C)) into one (B, C)."""
        cfg = self.config
        scores = []
        for enc in encodings:
            key = T.affine(enc, self.params["attn.key_w"],
                           self.params["attn.key_b"])
            s = (key * self.params["attn.scale"]).sum(axis=1, keepdims=True)
            scores.append(s)
        w = T.concat(scores, axis=1).softmax(axis=1)  # (B, A)
        b = encodings[0].shape[0]
        c = encodings[0].shape[1]
        stacked = T.concat([e.reshape((b, 1, c)) for e in encodings], axis=1)
        return (stacked * w.reshape((b, len(encodings), 1))).sum(axis=1)

    def embed_categories(self, cat_ids: np.ndarray) -> T.Tensor:
        parts = [
            T.embed(self.params[f"cat{lvl}.table"], cat_ids[:, lvl])
            for lvl in range(self.config.category_levels)
        ]
        return T.concat(parts, axis=1)

    def uom_forward(self, batch: FeatureBatch, training: bool = False,
                    rng: np.random.Generator | None = None) -> T.Tensor:
        """Class probabilities, shape (B, 3) ordered (weight, volume, count)."""
        cfg = self.config
        encs = self.encode_attributes(batch, training=training, rng=rng)
        feat = self.attention_pool(encs) if len(encs) > 1 else encs[0]
        if cfg.use_categories:
            feat = T.concat([feat, self.embed_categories(batch.categories)],
                            axis=1)
        h = T.affine(feat, self.params["head0.w"], self.params["head0.b"]).relu()
        if training and cfg.dropout > 0:
            h = T.dropout(h, cfg.dropout, rng, training=True)
        logits = T.affine(h, self.params["head1.w"], self.params["head1.b"])
        return logits.softmax(axis=1)

    # -- inference ------------------------------------------------------------

    def predict_probs(self, records: Sequence[ProductRecord]) -> np.ndarray:
        with T.no_grad():
            probs = self.uom_forward(self.featurize(records))
        return probs.data

    def predict(self, record: ProductRecord) -> UoMPrediction:
        p = self.predict_probs([record])[0]
        idx = int(np.argmax(p))
        return UoMPrediction(uom=CLASS_ORDER[idx].value,
                             confidence=float(p[idx]),
                             probs=tuple(float(v) for v in p))

    # -- persistence ------------------------------------------------------------

    def save(self, path) -> None:
        hyper = {
            "config": self.config.to_dict(),
            "category_vocabs": self.category_vocabs,
        }
        save_checkpoint(path, "uom", self.params_data(),
                        hyper, self.vocab.fingerprint())

    def params_data(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

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
                        vocab: CharVocab | None = None) -> "UoMClassifier":
        vocab = vocab or build_vocab()
        require_vocab(ckpt, vocab.fingerprint())
        config = UoMClassifierConfig.from_dict(ckpt.hyperparams["config"])
        model = cls(config, vocab=vocab,
                    category_vocabs=ckpt.hyperparams.get("category_vocabs")
                    if config.use_categories else None)
        model.load_state(ckpt.tensors)
        return model

    @classmethod
    def load(cls, path, vocab: CharVocab | None = None) -> "UoMClassifier":
        return cls.from_checkpoint(load_checkpoint(path), vocab=vocab)


def _pool_mask(mask: np.ndarray, window: int) -> np.ndarray:
    """Max-pool a (B, T, 1) validity mask to the pooled length."""
    b, t, _ = mask.shape
    m = math.ceil(t / window)
    padded = np.zeros((b, m * window, 1), dtype=mask.dtype)
    padded[:, :t] = mask
    return padded.reshape(b, m, window, 1).max(axis=2)


def _global_max(x: T.Tensor) -> T.Tensor:
    """Max over the position axis of (B, T, C), keeping gradients."""
    pooled = T.maxpool1d(x, x.shape[1])
    return pooled.reshape((x.shape[0], x.shape[2]))
