"""Vocabulary, embeddings and the synonym relation.

Neighborhoods follow one ordering convention everywhere: the center word
first, then the remaining one-hop synonyms by ascending id, then the two-hop
additions by ascending id.  Dirichlet concentration vectors, simplex points
and the padded neighbor tables all use that order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

logger = logging.getLogger(__name__)

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1


class LexiconError(ValueError):
    """Raised for malformed embedding or synonym files."""


class Vocabulary:
    """Dense token <-> id mapping.  Ids 0 and 1 are reserved for PAD and UNK."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.tokens: list[str] = [PAD_TOKEN, UNK_TOKEN]
        self.index: dict[str, int] = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token in self.index:
            raise LexiconError(f"duplicate token {token!r}")
        self.index[token] = len(self.tokens)
        self.tokens.append(token)
        return self.index[token]

    @property
    def pad_id(self) -> int:
        return PAD_ID

    @property
    def unk_id(self) -> int:
        return UNK_ID

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def lookup(self, idx: int) -> str:
        return self.tokens[idx]

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


@dataclass(frozen=True)
class EmbeddingMatrix:
    rows: np.ndarray

    def __post_init__(self):
        if self.rows.ndim != 2:
            raise LexiconError(f"embedding matrix must be 2-D, got shape {self.rows.shape}")
        if not np.all(np.isfinite(self.rows)):
            raise LexiconError("embedding matrix contains non-finite values")

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def row(self, idx: int) -> np.ndarray:
        return self.rows[idx]


@dataclass(frozen=True)
class SynonymGraph:
    """Directed substitution relation.  Self-loops are never stored."""

    adjacency: Mapping[int, frozenset]
    size: int
    dropped: int = 0

    def synonyms(self, idx: int) -> frozenset:
        return self.adjacency.get(idx, frozenset())

    def one_hop(self, idx: int) -> list[int]:
        """S(idx): the center followed by its synonyms in ascending id order."""
        return [idx] + sorted(self.synonyms(idx))

    def symmetrized(self) -> "SynonymGraph":
        adj: dict[int, set] = {k: set(v) for k, v in self.adjacency.items()}
        for head, syns in self.adjacency.items():
            for s in syns:
                adj.setdefault(s, set()).add(head)
        return SynonymGraph({k: frozenset(v) for k, v in adj.items() if v}, self.size, self.dropped)

    @classmethod
    def from_lists(cls, size: int, lists: Mapping[int, Iterable[int]], symmetric: bool = False) -> "SynonymGraph":
        adj = {}
        for head, syns in lists.items():
            clean = frozenset(int(s) for s in syns if int(s) != int(head))
            for s in clean | {int(head)}:
                if not 0 <= s < size:
                    raise LexiconError(f"synonym id {s} outside vocabulary of size {size}")
            if clean:
                adj[int(head)] = clean
        graph = cls(adj, size)
        return graph.symmetrized() if symmetric else graph


@dataclass(frozen=True)
class Neighborhood:
    center: int
    one_hop: tuple
    two_hop_only: tuple = ()

    @property
    def ids(self) -> tuple:
        return self.one_hop + self.two_hop_only

    def __len__(self) -> int:
        return len(self.one_hop) + len(self.two_hop_only)


def neighborhood(graph: SynonymGraph, center: int, expand: bool) -> Neighborhood:
    """Build S(center), and with ``expand`` the two-hop union B(center)."""
    if not 0 <= center < graph.size:
        raise LexiconError(f"center id {center} outside vocabulary of size {graph.size}")
    one_hop = graph.one_hop(center)
    if not expand:
        return Neighborhood(center, tuple(one_hop))
    first = set(one_hop)
    second = set()
    for j in one_hop:
        second.update(graph.synonyms(j))
    return Neighborhood(center, tuple(one_hop), tuple(sorted(second - first)))


def load_embeddings(path, expected_dim: int) -> tuple[Vocabulary, EmbeddingMatrix]:
    """Read ``token v1 ... vd`` lines.

    The PAD row is zero and the UNK row is the mean of all loaded rows (zero when
    the file is empty).
    """
    vocab = Vocabulary()
    vectors: list[np.ndarray] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != expected_dim:
                raise LexiconError(
                    f"{path}: line {lineno}: expected {expected_dim} values for {token!r}, got {len(values)}"
                )
            if token in vocab:
                raise LexiconError(f"{path}: line {lineno}: duplicate token {token!r}")
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise LexiconError(f"{path}: line {lineno}: {exc}") from None
            vocab.add(token)
            vectors.append(vec)
    rows = np.zeros((len(vocab), expected_dim), dtype=np.float64)
    if vectors:
        loaded = np.stack(vectors)
        rows[2:] = loaded
        rows[UNK_ID] = loaded.mean(axis=0)
    return vocab, EmbeddingMatrix(rows)


def load_synonyms(path, vocab: Vocabulary, symmetric: bool = False) -> SynonymGraph:
    """Read ``head<TAB>syn1,syn2,...`` lines; unknown tokens are dropped and counted."""
    lists: dict[int, set] = {}
    dropped = 0
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise LexiconError(f"cannot read synonym file {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            head, _, rest = line.partition("\t")
            head = head.strip()
            syns = [s.strip() for s in rest.split(",") if s.strip()]
            if head not in vocab:
                dropped += 1 + len(syns)
                continue
            hid = vocab.index[head]
            bucket = lists.setdefault(hid, set())
            for s in syns:
                if s in vocab:
                    bucket.add(vocab.index[s])
                else:
                    dropped += 1
    if dropped:
        logger.warning("dropped %d synonym entries not in vocabulary (%s)", dropped, path)
    graph = SynonymGraph.from_lists(len(vocab), lists, symmetric=symmetric)
    return SynonymGraph(graph.adjacency, graph.size, dropped)


@dataclass
class NeighborTable:
    """Padded per-word neighborhood table for vectorized batch assembly.

    ``ids[w, :count[w]]`` is the neighborhood of word ``w``; ``two_hop[w, j]``
    marks entries that came from the two-hop expansion.  Unused slots hold PAD.
    """

    ids: np.ndarray
    count: np.ndarray
    two_hop: np.ndarray

    @property
    def width(self) -> int:
        return self.ids.shape[1]


@dataclass
class Lexicon:
    """Vocabulary, embeddings and synonym graph bundled together."""

    vocab: Vocabulary
    embeddings: EmbeddingMatrix
    graph: SynonymGraph
    _tables: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.embeddings.rows.shape[0] != len(self.vocab):
            raise LexiconError(
                f"embedding rows ({self.embeddings.rows.shape[0]}) != vocabulary size ({len(self.vocab)})"
            )
        # PAD and UNK never have synonyms.
        adj = dict(self.graph.adjacency)
        if adj.pop(PAD_ID, None) is not None or adj.pop(UNK_ID, None) is not None:
            self.graph = SynonymGraph(adj, self.graph.size, self.graph.dropped)

    @classmethod
    def load(cls, embeddings_path, synonyms_path, dim: int, symmetric: bool = False) -> "Lexicon":
        vocab, emb = load_embeddings(embeddings_path, dim)
        graph = load_synonyms(synonyms_path, vocab, symmetric=symmetric)
        return cls(vocab, emb, graph)

    def __len__(self) -> int:
        return len(self.vocab)

    def neighborhood(self, center: int, expand: bool = False) -> Neighborhood:
        if center in (PAD_ID, UNK_ID):
            return Neighborhood(center, (center,))
        return neighborhood(self.graph, center, expand)

    def substitutes(self, idx: int) -> list[int]:
        """Allowed replacements for ``idx`` excluding itself."""
        if idx in (PAD_ID, UNK_ID):
            return []
        return sorted(self.graph.synonyms(idx))

    def table(self, expand: bool) -> NeighborTable:
        if expand not in self._tables:
            nbhs = [self.neighborhood(w, expand) for w in range(len(self.vocab))]
            width = max(len(n) for n in nbhs)
            ids = np.full((len(nbhs), width), PAD_ID, dtype=np.int64)
            two_hop = np.zeros((len(nbhs), width), dtype=bool)
            count = np.zeros(len(nbhs), dtype=np.int64)
            for w, n in enumerate(nbhs):
                ids[w, : len(n)] = n.ids
                two_hop[w, len(n.one_hop) : len(n)] = True
                count[w] = len(n)
            self._tables[expand] = NeighborTable(ids, count, two_hop)
        return self._tables[expand]
