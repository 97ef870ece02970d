"""Dirichlet sampling on neighborhood simplices and convex combination of embeddings.

Gamma(a >= 1) variates come from NumPy (itself a Marsaglia-Tsang sampler).
Shapes below one use the boost identity ``G(a) = G(a + 1) * U**(1/a)``,
evaluated in log space: ``log G(a) = log G(a + 1) + log(U) / a``.  A Dirichlet
draw is then ``softmax(log G)``, which never divides by an underflowed sum, and
the log-space coordinates double as the ``eta`` vector used by the adversarial
search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lexicon import EmbeddingMatrix, Neighborhood

LOG_FLOOR = 1e-30


class SimplexError(ValueError):
    pass


@dataclass(frozen=True)
class ConcentrationVector:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise SimplexError("concentration vector must be a non-empty 1-D array")
        if not np.all(v > 0):
            raise SimplexError("concentration values must be positive")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class SimplexPoint:
    beta: np.ndarray
    eta: np.ndarray

    def __len__(self) -> int:
        return self.beta.size

    @classmethod
    def from_beta(cls, beta) -> "SimplexPoint":
        beta = np.asarray(beta, dtype=np.float64)
        return cls(beta, safe_log(beta))

    @classmethod
    def vertex(cls, m: int, j: int = 0) -> "SimplexPoint":
        beta = np.zeros(m)
        beta[j] = 1.0
        return cls.from_beta(beta)


def safe_log(beta: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(beta, LOG_FLOOR))


def softmax(eta: np.ndarray, axis: int = -1) -> np.ndarray:
    z = eta - np.max(eta, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def masked_softmax_np(eta: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over the last axis restricted to ``mask``; masked entries get zero."""
    z = np.where(mask, eta, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def build_alpha(nbh: Neighborhood, alpha: float, lam: float) -> ConcentrationVector:
    """Concentration ``alpha`` for one-hop entries and ``alpha * lam`` for two-hop ones.

    Dirichlet means are proportional to the concentrations, so each two-hop word
    gets ``lam`` times the expected weight of a one-hop word.
    """
    if not alpha > 0:
        raise SimplexError(f"alpha must be positive, got {alpha}")
    if not 0 < lam <= 0.5:
        raise SimplexError(f"lambda must lie in (0, 0.5], got {lam}")
    values = np.full(len(nbh), float(alpha))
    values[len(nbh.one_hop):] = alpha * lam
    return ConcentrationVector(values)


def sample_log_gamma(shape: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Log of independent Gamma(shape, 1) variates, elementwise over ``shape``.

    Shapes below 1 use the boost ``G(a) = G(a + 1) * U ** (1 / a)`` taken in log
    space, so draws that would underflow to 0.0 for tiny ``a`` stay finite.
    NumPy's ``standard_gamma`` supplies the Gamma(a >= 1) variates.
    """
    shape = np.asarray(shape, dtype=np.float64)
    flat = shape.ravel()
    if np.any(flat <= 0):
        raise SimplexError("gamma shape must be positive")
    boosted = flat < 1.0
    out = np.log(rng.standard_gamma(np.where(boosted, flat + 1.0, flat)))
    if np.any(boosted):
        idx = np.flatnonzero(boosted)
        # 1 - U lies in (0, 1], so the log is finite.
        u = 1.0 - rng.random(idx.size)
        out[idx] += np.log(u) / flat[idx]
    return out.reshape(shape.shape)


def sample_dirichlet_log(alpha: np.ndarray, rng: np.random.Generator, mask: np.ndarray | None = None):
    """Batched Dirichlet draws along the last axis.

    Returns ``(beta, eta)`` where ``eta`` is the clamped log of ``beta``.  Masked
    entries (``mask == False``) get zero weight and do not consume randomness.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if mask is None:
        mask = np.ones(alpha.shape, dtype=bool)
    logg = np.full(alpha.shape, -np.inf)
    logg[mask] = sample_log_gamma(alpha[mask], rng)
    beta = softmax(logg)
    beta = np.where(mask, beta, 0.0)
    return beta, safe_log(beta)


def sample_dirichlet(conc: ConcentrationVector, rng: np.random.Generator) -> SimplexPoint:
    if len(conc) == 1:
        rng.random()
        return SimplexPoint.vertex(1)
    beta, eta = sample_dirichlet_log(conc.values, rng)
    return SimplexPoint(beta, eta)


def reparameterize(eta) -> SimplexPoint:
    eta = np.asarray(eta, dtype=np.float64)
    if not np.all(np.isfinite(eta)):
        raise SimplexError("eta must be finite")
    return SimplexPoint(softmax(eta), eta.copy())


def convex_combine(point: SimplexPoint, nbh: Neighborhood, emb: EmbeddingMatrix) -> np.ndarray:
    if len(point) != len(nbh):
        raise SimplexError(f"point has {len(point)} weights but neighborhood has {len(nbh)} words")
    return point.beta @ emb.rows[list(nbh.ids)]
