"""Monte-Carlo smoothed prediction with confidence-weighted (CBW-D) averaging."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lexicon import Lexicon
from .models import Classifier, argmax_lowest, pad_batch, softmax_np
from .seeding import derive_rng
from .simplex import sample_log_gamma
from .training import VirtualBatch, batch_scores, neighbor_arrays

SAMPLERS = ("dirichlet", "discrete", "none")


class SmoothingError(ValueError):
    pass


@dataclass
class EnsembleConfig:
    k: int = 16
    r: float = 3.0
    seed: int = 0
    alpha: float | None = None  # test-time concentration; None reuses the training alpha
    shared_noise: bool = False  # reuse one noise bank for every query about an example

    def __post_init__(self):
        if self.k < 1:
            raise SmoothingError("k must be >= 1")
        if self.r < 1:
            raise SmoothingError("r must be >= 1")


@dataclass
class EnsembleResult:
    label: int
    avg_probs: np.ndarray
    per_sample: list  # (probs, weight) pairs


def cbwd_weight(probs, r: float = 3.0) -> float:
    """Sum over non-top classes of (p_top - p_c) ** r."""
    probs = np.asarray(probs, dtype=np.float64)
    y = int(np.argmax(probs))
    diff = probs[y] - np.delete(probs, y)
    return float(np.sum(diff ** r))


def cbwd_weights(probs: np.ndarray, r: float = 3.0) -> np.ndarray:
    """Vectorized ``cbwd_weight`` over the leading axes of ``probs``."""
    top = probs.max(axis=-1, keepdims=True)
    # the top class contributes (top - top) ** r == 0
    return ((top - probs) ** r).sum(axis=-1)


def combine(probs: np.ndarray, r: float) -> tuple[np.ndarray, np.ndarray]:
    """Weighted mean of (k, C) probability rows; unweighted if every weight is zero."""
    w = cbwd_weights(probs, r)
    if len(probs) == 1:
        return probs[0].copy(), w
    total = w.sum()
    if total > 0:
        return (w[:, None] * probs).sum(axis=0) / total, w
    return probs.mean(axis=0), w


class SmoothedClassifier:
    """The deployed predictor ``g`` built on a frozen base classifier ``f``.

    ``sampler`` chooses how the k noisy copies are made: ``"dirichlet"`` draws
    a point in each word's one-hop hull, ``"discrete"`` replaces each word by a
    uniform synonym, and ``"none"`` is the base classifier itself.

    Noise is drawn as i.i.d. Gamma(alpha) log-variates (uniforms for
    ``"discrete"``) with one slot per (copy, position, neighbor), then masked
    down to each position's neighborhood; normalizing any subset of i.i.d.
    Gamma(alpha) variates gives a symmetric Dirichlet draw.  Every example
    ``i`` owns the stream ``derive_rng(seed, "smooth", i)``.  By default each
    query consumes fresh variates from that stream, as a deployed randomized
    model would; with ``cfg.shared_noise`` one bank per example is reused by
    every query (common random numbers), which makes ``g`` deterministic.
    """

    def __init__(self, model: Classifier, lexicon: Lexicon, cfg: EnsembleConfig,
                 sampler: str = "dirichlet", alpha: float = 1.0):
        if sampler not in SAMPLERS:
            raise SmoothingError(f"unknown sampler {sampler!r}")
        self.model = model
        self.lexicon = lexicon
        self.cfg = cfg
        self.sampler = sampler
        self.alpha = cfg.alpha if cfg.alpha is not None else alpha

    def stream(self, example_index: int) -> np.random.Generator:
        return derive_rng(self.cfg.seed, "smooth", example_index)

    def _bank(self, example_index: int) -> dict | None:
        if not self.cfg.shared_noise:
            return None
        return {"rng_for": lambda L: derive_rng(self.cfg.seed, "smooth", example_index, L)}

    def _draw(self, rng: np.random.Generator, shape: tuple) -> np.ndarray:
        if self.sampler == "discrete":
            return rng.random(shape)
        width = self.lexicon.table(False).width
        return sample_log_gamma(np.full(shape + (width,), float(self.alpha)), rng)

    def _noise(self, rng: np.random.Generator, n: int, length: int, bank: dict | None) -> np.ndarray:
        k = self.cfg.k
        if bank is None:
            return self._draw(rng, (n, k, length))
        if bank.get("length") != length:
            # a fresh stream per length keeps the bank independent of query order
            bank["length"] = length
            bank["noise"] = self._draw(bank["rng_for"](length), (k, length))
        return np.broadcast_to(bank["noise"][None], (n,) + bank["noise"].shape)

    def sample_probs(self, seqs: Sequence, rng: np.random.Generator, bank: dict | None = None) -> np.ndarray:
        """(n, k, C) per-copy probabilities for ``n`` sentences about one example."""
        ids = pad_batch(seqs)
        if self.sampler == "none":
            return self.model.predict_proba(ids)[:, None, :]
        n, L = ids.shape
        k = self.cfg.k
        noise = self._noise(rng, n, L, bank)
        if self.sampler == "discrete":
            table = self.lexicon.table(False)
            count = table.count[ids]
            pick = np.floor(noise * count[:, None]).astype(np.int64)
            noisy = table.ids[np.broadcast_to(ids[:, None], pick.shape), pick]
            return self.model.predict_proba(noisy.reshape(n * k, L)).reshape(n, k, -1)
        nbr, mask, two = neighbor_arrays(ids, self.lexicon, False)
        M = nbr.shape[2]
        mask_k = np.broadcast_to(mask[:, None], (n, k, L, M))
        # the mixer applies softmax over each neighborhood, so log-Gamma variates serve as eta directly
        eta = np.where(mask_k, noise[..., :M], 0.0)
        batch = VirtualBatch(
            np.repeat(ids, k, axis=0),
            np.repeat(nbr, k, axis=0),
            mask_k.reshape(n * k, L, M),
            np.repeat(two, k, axis=0),
            eta.reshape(n * k, L, M),
        )
        was = self.model.training
        self.model.training = False
        try:
            probs = softmax_np(batch_scores(self.model, batch).value)
        finally:
            self.model.training = was
        return probs.reshape(n, k, -1)

    def _combine_all(self, per: np.ndarray) -> np.ndarray:
        return np.stack([combine(p, self.cfg.r)[0] for p in per])

    def query_fn(self, example_index: int):
        """A query function for one example; its noise stream starts afresh on every call."""
        rng, bank = self.stream(example_index), self._bank(example_index)
        return lambda seqs: self._combine_all(self.sample_probs(seqs, rng, bank))

    def predict_proba(self, seqs: Sequence, example_index: int) -> np.ndarray:
        return self.query_fn(example_index)(seqs)

    def predict(self, ids, example_index: int) -> EnsembleResult:
        rng, bank = self.stream(example_index), self._bank(example_index)
        per = self.sample_probs([ids], rng, bank)[0]
        avg, w = combine(per, self.cfg.r)
        return EnsembleResult(int(argmax_lowest(avg)), avg, list(zip(per, w)))


def smooth_predict(model: Classifier, ids, lexicon: Lexicon, cfg: EnsembleConfig, alpha: float,
                   example_index: int = 0) -> EnsembleResult:
    """k Dirichlet copies over one-hop hulls, combined with CBW-D weights."""
    return SmoothedClassifier(model, lexicon, cfg, "dirichlet", alpha).predict(ids, example_index)


class BaseClassifier:
    """Adapter giving a plain classifier the same query interface as ``SmoothedClassifier``."""

    def __init__(self, model: Classifier):
        self.model = model

    def predict_proba(self, seqs: Sequence, example_index: int = 0) -> np.ndarray:
        return self.model.predict_proba(pad_batch(seqs))

    def query_fn(self, example_index: int):
        return lambda seqs: self.predict_proba(seqs, example_index)
