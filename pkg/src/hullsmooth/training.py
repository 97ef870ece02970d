"""ORIG / RAN / DNE training loops.

DNE replaces every word embedding by a Dirichlet-weighted mix over the word's
(optionally two-hop expanded) neighborhood, runs a few steps of gradient
search over the mixing weights to find worse points inside the same hull, and
trains on the initial draw together with every search iterate.
"""

from __future__ import annotations

import contextlib
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .lexicon import PAD_ID, Lexicon, Neighborhood
from .models import Classifier, argmax_lowest, pad_batch
from .seeding import derive_rng
from .simplex import (
    SimplexPoint,
    build_alpha,
    masked_softmax_np,
    safe_log,
    sample_log_gamma,
)

logger = logging.getLogger(__name__)

MODES = ("ORIG", "RAN", "DNE")
SEARCH_NORMS = ("global", "position", "raw")


class TrainingError(ValueError):
    pass


@dataclass
class TrainConfig:
    mode: str = "DNE"
    alpha: float = 0.1
    lam: float = 0.1
    adv_steps: int = 3
    adv_epsilon: float = 10.0
    lr: float = 5e-4
    weight_decay: float = 1e-4
    batch: int = 32
    grad_clip: float = 1.0
    epochs: int = 20
    seed: int = 0
    expand_hull: bool = True
    coordinated_update: bool = True
    search_norm: str = "global"

    def __post_init__(self):
        self.mode = self.mode.upper()
        if self.mode not in MODES:
            raise TrainingError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.adv_steps < 0:
            raise TrainingError("adv_steps must be >= 0")
        if self.adv_steps > 0 and not self.adv_epsilon > 0:
            raise TrainingError("adv_epsilon must be positive when adv_steps > 0")
        if not 1 <= self.epochs <= 20:
            raise TrainingError("epochs must lie in [1, 20]")
        if self.search_norm not in SEARCH_NORMS:
            raise TrainingError(f"search_norm must be one of {SEARCH_NORMS}")
        if self.mode == "DNE":
            if not self.alpha > 0:
                raise TrainingError("alpha must be positive")
            if not 0 < self.lam <= 0.5:
                raise TrainingError("lambda must lie in (0, 0.5]")


@dataclass
class VirtualBatch:
    """Padded batch of virtual sentences.

    ``ids`` is (B, L); ``nbr_ids``, ``mask``, ``two_hop`` and ``eta`` are
    (B, L, M).  Position ``l`` of row ``b`` mixes the rows
    ``nbr_ids[b, l, mask[b, l]]`` with weights ``softmax(eta[b, l, mask[b, l]])``.
    """

    ids: np.ndarray
    nbr_ids: np.ndarray
    mask: np.ndarray
    two_hop: np.ndarray
    eta: np.ndarray

    @property
    def beta(self) -> np.ndarray:
        return masked_softmax_np(self.eta, self.mask)

    @property
    def positions(self) -> np.ndarray:
        return self.ids != PAD_ID

    def __len__(self) -> int:
        return self.ids.shape[0]

    def with_eta(self, eta: np.ndarray) -> "VirtualBatch":
        return VirtualBatch(self.ids, self.nbr_ids, self.mask, self.two_hop, eta)

    def sentence(self, b: int) -> "VirtualSentence":
        L = int(self.positions[b].sum()) or self.ids.shape[1]
        nbhs, points = [], []
        for l in range(L):
            m = int(self.mask[b, l].sum())
            ids = tuple(int(x) for x in self.nbr_ids[b, l, :m])
            n1 = m - int(self.two_hop[b, l, :m].sum())
            nbhs.append(Neighborhood(ids[0], ids[:n1], ids[n1:]))
            eta = self.eta[b, l, :m].copy()
            points.append(SimplexPoint(masked_softmax_np(eta, np.ones(m, bool)), eta))
        return VirtualSentence(self.ids[b, :L].copy(), nbhs, points)

    @staticmethod
    def stack(batches: Sequence["VirtualBatch"]) -> "VirtualBatch":
        L = max(b.ids.shape[1] for b in batches)
        M = max(b.nbr_ids.shape[2] for b in batches)

        def pad(a, fill, three=True):
            widths = [(0, 0), (0, L - a.shape[1])] + ([(0, M - a.shape[2])] if three else [])
            return np.pad(a, widths, constant_values=fill)

        ids = np.concatenate([pad(b.ids, PAD_ID, False) for b in batches])
        nbr = np.concatenate([pad(b.nbr_ids, PAD_ID) for b in batches])
        mask = np.concatenate([pad(b.mask, False) for b in batches])
        # padded positions become the trivial point on {PAD}
        mask[..., 0] |= ids == PAD_ID
        two = np.concatenate([pad(b.two_hop, False) for b in batches])
        eta = np.concatenate([pad(b.eta, 0.0) for b in batches])
        return VirtualBatch(ids, nbr, mask, two, eta)


@dataclass
class VirtualSentence:
    ids: np.ndarray
    nbhs: list
    points: list

    def __post_init__(self):
        if not (len(self.ids) == len(self.nbhs) == len(self.points)):
            raise TrainingError("ids, neighborhoods and points must have equal lengths")
        for n, p in zip(self.nbhs, self.points):
            if len(n) != len(p):
                raise TrainingError(f"point of length {len(p)} does not fit neighborhood of size {len(n)}")

    def to_batch(self) -> VirtualBatch:
        L = len(self.ids)
        M = max(len(n) for n in self.nbhs)
        nbr = np.full((1, L, M), PAD_ID, dtype=np.int64)
        mask = np.zeros((1, L, M), dtype=bool)
        two = np.zeros((1, L, M), dtype=bool)
        eta = np.zeros((1, L, M))
        for l, (n, p) in enumerate(zip(self.nbhs, self.points)):
            m = len(n)
            nbr[0, l, :m] = n.ids
            mask[0, l, :m] = True
            two[0, l, len(n.one_hop):m] = True
            eta[0, l, :m] = p.eta
        return VirtualBatch(np.asarray(self.ids, dtype=np.int64)[None, :], nbr, mask, two, eta)


def neighbor_arrays(ids: np.ndarray, lexicon: Lexicon, expand: bool):
    """Neighborhood tables for a (B, L) id array, trimmed to the widest neighborhood present."""
    table = lexicon.table(expand)
    count = table.count[ids]
    M = int(count.max()) if count.size else 1
    nbr = table.ids[ids][..., :M]
    mask = np.arange(M) < count[..., None]
    two = table.two_hop[ids][..., :M]
    return nbr, mask, two


def make_virtual_batch(id_rows, lexicon: Lexicon, alpha: float, lam: float,
                       rngs: Sequence[np.random.Generator], expand: bool = True) -> VirtualBatch:
    """One Dirichlet draw per position; every row uses its own generator."""
    ids = pad_batch(id_rows)
    nbr, mask, two = neighbor_arrays(ids, lexicon, expand)
    conc = np.where(two, alpha * lam, alpha)
    if expand and not 0 < lam <= 0.5:
        raise TrainingError(f"lambda must lie in (0, 0.5], got {lam}")
    logg = np.full(mask.shape, -np.inf)
    for b, rng in enumerate(rngs):
        logg[b][mask[b]] = sample_log_gamma(conc[b][mask[b]], rng)
    beta = masked_softmax_np(logg, mask)
    return VirtualBatch(ids, nbr, mask, two, safe_log(beta))


def make_virtual(ids, lexicon: Lexicon, alpha: float, lam: float, rng: np.random.Generator,
                 expand: bool = True) -> VirtualSentence:
    ids = np.asarray(ids, dtype=np.int64)
    nbhs, points = [], []
    for w in ids:
        nbh = lexicon.neighborhood(int(w), expand)
        nbhs.append(nbh)
        if len(nbh) == 1:
            points.append(SimplexPoint.vertex(1))
            continue
        conc = build_alpha(nbh, alpha, lam).values
        logg = sample_log_gamma(conc, rng)
        beta = masked_softmax_np(logg, np.ones(len(nbh), bool))
        points.append(SimplexPoint(beta, safe_log(beta)))
    return VirtualSentence(ids, nbhs, points)


def discrete_batch(ids: np.ndarray, lexicon: Lexicon) -> VirtualBatch:
    """Virtual batch with all weight on the original word at every position."""
    nbr, mask, two = neighbor_arrays(ids, lexicon, False)
    beta = np.zeros(mask.shape)
    beta[..., 0] = 1.0
    return VirtualBatch(ids, nbr, mask, two, safe_log(beta))


def random_substitution(ids, lexicon: Lexicon, rng: np.random.Generator) -> np.ndarray:
    """Replace every word by a uniform draw from its one-hop set S(x), itself included."""
    table = lexicon.table(False)
    ids = np.asarray(ids, dtype=np.int64)
    count = table.count[ids]
    pick = np.floor(rng.random(ids.shape) * count).astype(np.int64)
    return table.ids[ids, pick]


@contextlib.contextmanager
def frozen(model: Classifier):
    """Parameters stop requiring gradients and dropout is off for the duration."""
    saved = {k: p.requires_grad for k, p in model.params.items()}
    was_training = model.training
    for p in model.params.values():
        p.requires_grad = False
    model.training = False
    try:
        yield model
    finally:
        for k, p in model.params.items():
            p.requires_grad = saved[k]
        model.training = was_training


def batch_scores(model: Classifier, batch: VirtualBatch, rng=None, eta: Node | None = None,
                 coordinated: bool = True) -> Node:
    emb = model.embed_virtual(batch, rng=rng, eta=eta, coordinated=coordinated)
    return model.score(emb, batch.positions)


def virtual_loss(model: Classifier, vs: VirtualSentence | VirtualBatch, label) -> Node:
    """Cross-entropy of the virtual sentence against ``label``."""
    batch = vs.to_batch() if isinstance(vs, VirtualSentence) else vs
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    if np.any(labels >= model.config.classes) or np.any(labels < 0):
        raise TrainingError(f"label out of range for {model.config.classes} classes")
    return ad.cross_entropy(batch_scores(model, batch), labels)


def search_batch(model: Classifier, batch: VirtualBatch, labels, steps: int, epsilon: float,
                 norm: str = "global") -> list[tuple[VirtualBatch, np.ndarray]]:
    """Gradient search over ``eta`` that lowers ``log p(label)``.

    Each step moves every row's ``eta`` by ``-epsilon * g / ||g||``, where ``g``
    is the gradient of the row's log-probability of its label and the norm runs
    over all of the row's positions (``norm="global"``), each position
    separately (``"position"``), or is skipped (``"raw"``).  A row whose
    gradient norm falls below 1e-12 stops; the returned ``active`` masks record
    which rows produced each iterate.  Model parameters are left untouched.
    """
    labels = np.asarray(labels, dtype=np.int64)
    iterates = []
    active = np.ones(len(batch), dtype=bool)
    current = batch
    with frozen(model):
        for _ in range(steps):
            eta = Node(current.eta, requires_grad=True)
            obj = ad.cross_entropy(batch_scores(model, current, eta=eta), labels)
            ad.backward(obj)
            # obj is -sum log p, so its gradient is -g
            g = np.where(current.mask, -eta.grad, 0.0)
            if norm == "raw":
                step = g
                gnorm = np.sqrt((g * g).sum(axis=(1, 2)))
            elif norm == "position":
                pn = np.sqrt((g * g).sum(axis=2, keepdims=True))
                step = np.where(pn >= 1e-12, g / np.maximum(pn, 1e-300), 0.0)
                gnorm = np.sqrt((g * g).sum(axis=(1, 2)))
            else:
                gnorm = np.sqrt((g * g).sum(axis=(1, 2)))
                step = g / np.maximum(gnorm, 1e-300)[:, None, None]
            active = active & (gnorm >= 1e-12)
            if not active.any():
                break
            new_eta = np.where(active[:, None, None] & current.mask, current.eta - epsilon * step, current.eta)
            # re-centre each position so eta stays the clamped log of beta
            beta = masked_softmax_np(new_eta, current.mask)
            current = current.with_eta(np.where(current.mask, safe_log(beta), 0.0))
            iterates.append((current, active.copy()))
    return iterates


def adversarial_search(model: Classifier, vs: VirtualSentence, label: int, steps: int,
                       epsilon: float, norm: str = "global") -> list[VirtualSentence]:
    """Search iterates for one sentence; the unmodified start if the first gradient vanishes."""
    if steps < 1:
        raise TrainingError("steps must be >= 1")
    out = [b.sentence(0) for b, act in search_batch(model, vs.to_batch(), [label], steps, epsilon, norm) if act[0]]
    return out or [vs]


class Adam:
    """Adam with L2 weight decay folded into the gradient and elementwise clipping."""

    def __init__(self, params: dict, lr: float = 5e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0, clip: float | None = None):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.weight_decay = weight_decay
        self.clip = clip
        self.t = 0
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = np.zeros_like(p.value) if p.grad is None else p.grad
            if self.clip is not None:
                g = np.clip(g, -self.clip, self.clip)
            if self.weight_decay:
                g = g + self.weight_decay * p.value
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p.value = p.value - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class EpochMetrics:
    epoch: int
    mode: str
    train_loss: float
    train_acc: float
    val_acc: float | None
    wall_ms: float
    diverged: bool = False

    def as_dict(self) -> dict:
        d = {"epoch": self.epoch, "mode": self.mode, "train_loss": self.train_loss,
             "train_acc": self.train_acc, "val_acc": self.val_acc, "wall_ms": self.wall_ms}
        if self.diverged:
            d["diverged"] = True
        return d


def _dne_batch(model, rows, labels, idx, epoch, lexicon, cfg, dropout_rng):
    rngs = [derive_rng(cfg.seed, "train", "dirichlet", epoch, int(i)) for i in idx]
    start = make_virtual_batch(rows, lexicon, cfg.alpha, cfg.lam, rngs, expand=cfg.expand_hull)
    copies, weights = [start], [np.ones(len(rows))]
    if cfg.adv_steps > 0:
        for it, act in search_batch(model, start, labels, cfg.adv_steps, cfg.adv_epsilon, cfg.search_norm):
            copies.append(it)
            weights.append(act.astype(np.float64))
    big = VirtualBatch(
        np.concatenate([c.ids for c in copies]),
        np.concatenate([c.nbr_ids for c in copies]),
        np.concatenate([c.mask for c in copies]),
        np.concatenate([c.two_hop for c in copies]),
        np.concatenate([c.eta for c in copies]),
    )
    w = np.concatenate(weights)
    scores = batch_scores(model, big, rng=dropout_rng, coordinated=cfg.coordinated_update)
    return scores, np.tile(labels, len(copies)), w / w.sum()


def train(model: Classifier, dataset, cfg: TrainConfig, lexicon: Lexicon | None = None,
          evaluate: Callable[[Classifier], float] | None = None,
          on_epoch: Callable[[EpochMetrics], None] | None = None) -> tuple[Classifier, list[EpochMetrics]]:
    """Train in place and return the model restored to its best-validation state.

    ``dataset`` is anything with an ``examples`` list of ``(ids, label)`` pairs.
    ``evaluate`` scores the model after each epoch (validation accuracy); without
    it the last epoch is kept.
    """
    examples = list(dataset.examples)
    if not examples:
        raise TrainingError("empty training set")
    if cfg.mode != "ORIG" and lexicon is None:
        raise TrainingError(f"mode {cfg.mode} needs a lexicon")
    seqs = [np.asarray(x, dtype=np.int64) for x, _ in examples]
    ys = np.array([y for _, y in examples], dtype=np.int64)
    opt = Adam(model.params, lr=cfg.lr, weight_decay=cfg.weight_decay, clip=cfg.grad_clip)
    history: list[EpochMetrics] = []
    best_state, best_acc = None, -np.inf

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = derive_rng(cfg.seed, "train", "shuffle", epoch).permutation(len(examples))
        total_loss, correct, seen = 0.0, 0, 0
        diverged = False
        for bi, start in enumerate(range(0, len(order), cfg.batch)):
            idx = order[start:start + cfg.batch]
            labels = ys[idx]
            rows = [seqs[i] for i in idx]
            drop_rng = derive_rng(cfg.seed, "train", "dropout", epoch, bi)
            model.zero_grad()
            if cfg.mode == "DNE":
                scores, y_all, w = _dne_batch(model.train(), rows, labels, idx, epoch, lexicon, cfg, drop_rng)
            else:
                if cfg.mode == "RAN":
                    rows = [random_substitution(r, lexicon, derive_rng(cfg.seed, "train", "ran", epoch, int(i)))
                            for r, i in zip(rows, idx)]
                ids = pad_batch(rows)
                scores = model.train().forward_ids(ids, rng=drop_rng)
                y_all, w = labels, np.full(len(labels), 1.0 / len(labels))
            loss = ad.cross_entropy(scores, y_all, w)
            if not np.isfinite(loss.value):
                logger.warning("non-finite loss at epoch %d batch %d; aborting epoch", epoch, bi)
                diverged = True
                break
            ad.backward(loss)
            opt.step()
            total_loss += float(loss.value) * len(idx)
            correct += int((argmax_lowest(scores.value[: len(idx)]) == labels).sum())
            seen += len(idx)
        model.eval()
        val_acc = evaluate(model) if evaluate is not None and not diverged else None
        m = EpochMetrics(epoch, cfg.mode, total_loss / max(seen, 1), correct / max(seen, 1), val_acc,
                         (time.perf_counter() - t0) * 1000.0, diverged)
        history.append(m)
        if on_epoch is not None:
            on_epoch(m)
        logger.info("epoch %d %s loss=%.4f acc=%.3f val=%s", epoch, cfg.mode, m.train_loss, m.train_acc, val_acc)
        if diverged:
            break
        score = val_acc if val_acc is not None else float(epoch)
        if score > best_acc:
            best_acc, best_state = score, model.state()
    if best_state is not None:
        model.load_state(best_state)
    model.eval()
    return model, history
