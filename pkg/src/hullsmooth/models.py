"""Bag-of-words and CNN text classifiers over (possibly virtual) embedded sequences."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Parameter
from .lexicon import PAD_ID

ARCHS = ("BOW", "CNN")


class ModelError(ValueError):
    pass


@dataclass
class ClassifierConfig:
    arch: str = "BOW"
    embed_dim: int = 300
    classes: int = 2
    hidden: int = 100
    kernel: int = 3
    dropout_embed: float = 0.3
    max_len: int = 256

    def __post_init__(self):
        self.arch = self.arch.upper()
        if self.arch not in ARCHS:
            raise ModelError(f"unknown architecture {self.arch!r}; expected one of {ARCHS}")
        if self.hidden <= 0:
            raise ModelError("hidden size must be positive")
        if self.classes < 2:
            raise ModelError("need at least two classes")
        if self.kernel % 2 != 1:
            raise ModelError("kernel width must be odd for same padding")


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Classifier:
    """Scores ``s_c(x)`` for ``C`` classes; predictions are ``argmax`` with ties to the lowest id.

    All inputs are batched: id arrays are (B, L) and scores come back as (B, C).
    ``training`` toggles embedding dropout.
    """

    def __init__(self, config: ClassifierConfig, embeddings: np.ndarray, rng: np.random.Generator):
        embeddings = np.asarray(embeddings, dtype=np.float64)
        if embeddings.ndim != 2 or embeddings.shape[1] != config.embed_dim:
            raise ModelError(f"embeddings of shape {embeddings.shape} do not match embed_dim={config.embed_dim}")
        self.config = config
        self.training = False
        d, h, c = config.embed_dim, config.hidden, config.classes
        self.params: dict[str, Parameter] = {}
        self._add("embedding", embeddings.copy())
        if config.arch == "BOW":
            self._add("fc.weight", glorot(rng, (d, h), d, h))
            self._add("fc.bias", np.zeros(h))
        else:
            k = config.kernel
            self._add("conv.weight", glorot(rng, (k, d, h), k * d, k * h))
            self._add("conv.bias", np.zeros(h))
        self._add("out.weight", glorot(rng, (h, c), h, c))
        self._add("out.bias", np.zeros(c))

    def _add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise ModelError(f"parameter {name!r} registered twice")
        self.params[name] = Parameter(value, name)

    @property
    def embedding(self) -> Parameter:
        return self.params["embedding"]

    def train(self, mode: bool = True) -> "Classifier":
        self.training = mode
        return self

    def eval(self) -> "Classifier":
        return self.train(False)

    def zero_grad(self) -> None:
        ad.zero_grad(self.params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if state[k].shape != p.value.shape:
                raise ModelError(f"shape mismatch for {k}: {state[k].shape} vs {p.value.shape}")
            p.value = np.array(state[k], dtype=np.float64)

    def _check_ids(self, ids) -> np.ndarray:
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        if ids.shape[1] == 0:
            raise ModelError("empty sequence")
        if ids.shape[1] > self.config.max_len:
            raise ModelError(f"sequence length {ids.shape[1]} exceeds max_len={self.config.max_len}")
        return ids

    def _maybe_dropout(self, x: Node, rng: np.random.Generator | None) -> Node:
        if not self.training or self.config.dropout_embed <= 0:
            return x
        if rng is None:
            raise ModelError("training mode needs a generator for dropout")
        return ad.dropout(x, self.config.dropout_embed, rng)

    def embed_discrete(self, ids, rng: np.random.Generator | None = None) -> Node:
        ids = self._check_ids(ids)
        return self._maybe_dropout(ad.gather(self.embedding, ids), rng)

    def embed_virtual(self, batch, rng: np.random.Generator | None = None, eta: Node | None = None,
                      coordinated: bool = True) -> Node:
        """Embed a ``VirtualBatch`` or ``VirtualSentence``; ``eta`` may be passed in to differentiate through it."""
        if hasattr(batch, "to_batch"):
            batch = batch.to_batch()
        if eta is None:
            eta = ad.constant(batch.eta)
        if batch.ids.shape[1] > self.config.max_len:
            raise ModelError(f"sequence length {batch.ids.shape[1]} exceeds max_len={self.config.max_len}")
        x = ad.weighted_mix(eta, self.embedding, batch.nbr_ids, batch.mask, coordinated=coordinated)
        return self._maybe_dropout(x, rng)

    def score(self, embedded: Node, mask: np.ndarray | None = None) -> Node:
        """Class scores (B, C).  ``mask`` marks real (non-PAD) positions."""
        p = self.params
        if self.config.arch == "BOW":
            pooled = ad.mean_seq(embedded, mask)
            hidden = ad.relu(ad.add(ad.matmul(pooled, p["fc.weight"]), p["fc.bias"]))
        else:
            conv = ad.relu(ad.conv1d(embedded, p["conv.weight"], p["conv.bias"]))
            hidden = ad.max_pool_seq(conv, mask)
        return ad.add(ad.matmul(hidden, p["out.weight"]), p["out.bias"])

    def forward_ids(self, ids, rng=None) -> Node:
        ids = self._check_ids(ids)
        return self.score(self.embed_discrete(ids, rng), ids != PAD_ID)

    def predict_proba(self, ids) -> np.ndarray:
        """Softmax probabilities for a (B, L) id array, evaluated without dropout."""
        was = self.training
        self.training = False
        try:
            scores = self.forward_ids(ids).value
        finally:
            self.training = was
        return softmax_np(scores)

    def predict(self, ids) -> np.ndarray:
        return argmax_lowest(self.predict_proba(ids))


def softmax_np(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def argmax_lowest(probs: np.ndarray) -> np.ndarray:
    """Argmax along the last axis; ``np.argmax`` already returns the first maximum."""
    return np.argmax(probs, axis=-1)


def pad_batch(seqs, pad_id: int = PAD_ID) -> np.ndarray:
    seqs = [np.asarray(s, dtype=np.int64) for s in seqs]
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


# Checkpoint layout (all integers little-endian):
#   magic b"HSCKPT\0\0" | u32 version | u32 config_len | config JSON (utf-8)
#   u32 n_params | per param: u16 name_len, name (utf-8), u8 ndim, u32 * ndim shape
#   then the raw float64 ('<f8') payloads, C order, in name-table order.
MAGIC = b"HSCKPT\x00\x00"
VERSION = 1


def save_checkpoint(model: Classifier, path) -> None:
    cfg = json.dumps(asdict(model.config), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg, struct.pack("<I", len(model.params))]
    for name, p in model.params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", p.value.ndim))
        parts.append(struct.pack(f"<{p.value.ndim}I", *p.value.shape))
    for p in model.params.values():
        parts.append(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> Classifier:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ModelError(f"{path}: not a checkpoint file")
    version, cfg_len = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise ModelError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    config = ClassifierConfig(**json.loads(data[off:off + cfg_len].decode("utf-8")))
    off += cfg_len
    (n,) = struct.unpack_from("<I", data, off)
    off += 4
    table = []
    for _ in range(n):
        (nl,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nl].decode("utf-8")
        off += nl
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        table.append((name, shape))
    state = {}
    for name, shape in table:
        size = int(np.prod(shape)) * 8
        state[name] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=off).reshape(shape).astype(np.float64)
        off += size
    emb = state["embedding"]
    model = Classifier(config, emb, np.random.default_rng(0))
    model.load_state(state)
    return model
