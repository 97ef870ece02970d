"""Synthetic clustered lexicon and corpus.

Each cluster is a ring of ``cluster_size`` words placed on a small circle
around a random center, so each word's two nearest neighbors are its ring
neighbors; those form its synonym list.  Every cluster carries a polarity in
{-1, 0, +1} and a sentence's label is the sign of the summed polarities of its
words (zero-sum sentences are rejected).  Swapping any word for a word of the
same cluster therefore never changes the gold label.

Cluster centers are shifted by ``polarity_signal`` along one random axis in
the direction of their polarity, so embeddings carry some label information
before training, as pretrained vectors do.

Inside a cluster one "head" word carries most of the frequency mass, so the
other words are rare in training text, mirroring how substitution candidates
tend to be rarer than the words they replace.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..seeding import derive_rng
from .data import write_tsv


@dataclass
class CorpusSpec:
    vocab_size: int = 200
    n_clusters: int = 40
    cluster_size: int = 5
    sentence_len: int = 30
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 500
    embed_dim: int = 10
    center_scale: float = 1.0
    polarity_signal: float = 3.0
    radius: float = 0.25
    polar_fraction: float = 0.5
    head_mass: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.cluster_size < 2:
            raise ValueError("cluster_size must be >= 2")
        if self.n_clusters * self.cluster_size > self.vocab_size:
            raise ValueError("vocab_size must cover n_clusters * cluster_size")
        if self.n_clusters < 2:
            raise ValueError("need at least two clusters")


def word_name(cluster: int, member: int) -> str:
    return f"c{cluster:03d}m{member}"


@dataclass
class SyntheticCorpus:
    spec: CorpusSpec
    words: list
    cluster_of: dict
    polarity: np.ndarray  # per cluster
    vectors: np.ndarray  # per word, aligned with ``words``
    synonyms: dict  # word -> list of words
    splits: dict  # split -> list of (label, text)

    def gold_label(self, tokens) -> int | None:
        s = sum(self.polarity[self.cluster_of[t]] for t in tokens if t in self.cluster_of)
        if s == 0:
            return None
        return int(s > 0)


def build_corpus(spec: CorpusSpec) -> SyntheticCorpus:
    rng = derive_rng(spec.seed, "synthetic", "lexicon")
    words, cluster_of = [], {}
    vectors = []
    synonyms = {}
    K = spec.cluster_size
    n_polar = int(round(spec.polar_fraction * spec.n_clusters))
    n_polar -= n_polar % 2
    fillers = spec.vocab_size - spec.n_clusters * K
    pol = np.zeros(spec.n_clusters + fillers)
    pol[: n_polar // 2] = 1.0
    pol[n_polar // 2: n_polar] = -1.0
    pol[: spec.n_clusters] = rng.permutation(pol[: spec.n_clusters])
    axis = rng.standard_normal(spec.embed_dim)
    axis /= np.linalg.norm(axis)
    for c in range(spec.n_clusters):
        center = rng.standard_normal(spec.embed_dim) * spec.center_scale + spec.polarity_signal * pol[c] * axis
        basis, _ = np.linalg.qr(rng.standard_normal((spec.embed_dim, 2)))
        phase = rng.uniform(0, 2 * np.pi)
        for m in range(K):
            theta = phase + 2 * np.pi * m / K
            vectors.append(center + spec.radius * (np.cos(theta) * basis[:, 0] + np.sin(theta) * basis[:, 1]))
            w = word_name(c, m)
            words.append(w)
            cluster_of[w] = c
        for m in range(K):
            ring = sorted({(m - 1) % K, (m + 1) % K} - {m})
            synonyms[word_name(c, m)] = [word_name(c, j) for j in ring]
    filler_cluster = spec.n_clusters
    for f in range(fillers):
        w = f"f{f:03d}"
        words.append(w)
        cluster_of[w] = filler_cluster + f
        vectors.append(rng.standard_normal(spec.embed_dim) * spec.center_scale)

    corpus = SyntheticCorpus(spec, words, cluster_of, pol, np.array(vectors), synonyms, {})
    n_units = spec.n_clusters + fillers
    for split, n in (("train", spec.n_train), ("val", spec.n_val), ("test", spec.n_test)):
        corpus.splits[split] = _sample_split(corpus, n, derive_rng(spec.seed, "synthetic", split), n_units)
    return corpus


def _sample_split(corpus: SyntheticCorpus, n: int, rng: np.random.Generator, n_units: int) -> list:
    spec = corpus.spec
    K = spec.cluster_size
    want = {0: n // 2, 1: n - n // 2}
    rows = []
    while want[0] or want[1]:
        units = rng.integers(0, n_units, size=spec.sentence_len)
        heads = rng.random(spec.sentence_len) < spec.head_mass
        others = rng.integers(1, K, size=spec.sentence_len)
        tokens = []
        for u, h, o in zip(units, heads, others):
            if u >= spec.n_clusters:
                tokens.append(f"f{u - spec.n_clusters:03d}")
            else:
                tokens.append(word_name(int(u), 0 if h else int(o)))
        label = corpus.gold_label(tokens)
        if label is None or want[label] == 0:
            continue
        want[label] -= 1
        rows.append((label, " ".join(tokens)))
    return rows


DEFAULT_NAMES = {
    "embeddings": "embeddings.txt",
    "synonyms": "synonyms.tsv",
    "train": "train.tsv",
    "val": "val.tsv",
    "test": "test.tsv",
    "manifest": "corpus.json",
}


def generate_synthetic(spec: CorpusSpec, out_dir, names: dict | None = None) -> dict:
    """Write embeddings, synonyms, split TSVs and a manifest under ``out_dir``.

    ``names`` overrides individual file names (keys as in ``DEFAULT_NAMES``).
    Returns the written paths as strings.
    """
    corpus = build_corpus(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / v for k, v in {**DEFAULT_NAMES, **(names or {})}.items()}
    with open(paths["embeddings"], "w", encoding="utf-8", newline="\n") as fh:
        for w, v in zip(corpus.words, corpus.vectors):
            fh.write(w + " " + " ".join(f"{x:.8f}" for x in v) + "\n")
    with open(paths["synonyms"], "w", encoding="utf-8", newline="\n") as fh:
        for w in corpus.words:
            if w in corpus.synonyms:
                fh.write(f"{w}\t{','.join(corpus.synonyms[w])}\n")
    for split in ("train", "val", "test"):
        write_tsv(paths[split], corpus.splits[split])
    manifest = {
        "spec": asdict(spec),
        "cluster_polarity": {str(c): int(p) for c, p in enumerate(corpus.polarity[: spec.n_clusters])},
    }
    paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {k: str(v) for k, v in paths.items()}
