import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_lexicon
from hullsmooth.lexicon import (
    PAD_ID,
    UNK_ID,
    EmbeddingMatrix,
    Lexicon,
    LexiconError,
    SynonymGraph,
    Vocabulary,
    load_embeddings,
    load_synonyms,
    neighborhood,
)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


# -- vocabulary ---------------------------------------------------------------

def test_vocabulary_reserves_pad_and_unk():
    v = Vocabulary(["good", "bad"])
    assert len(v) == 4
    assert v.lookup(PAD_ID) == "<pad>" and v.lookup(UNK_ID) == "<unk>"
    assert PAD_ID != UNK_ID
    assert v.id_of("missing") == UNK_ID


@given(st.lists(st.text(alphabet="abcdefgh", min_size=1, max_size=5), unique=True, max_size=30))
def test_vocabulary_round_trip_and_dense_ids(tokens):
    tokens = [t for t in tokens if t not in ("<pad>", "<unk>")]
    v = Vocabulary(tokens)
    assert sorted(v.index.values()) == list(range(len(v)))
    for t in v.tokens:
        assert v.lookup(v.id_of(t)) == t


def test_vocabulary_rejects_duplicates():
    with pytest.raises(LexiconError):
        Vocabulary(["a", "a"])


# -- embeddings ---------------------------------------------------------------

def test_load_embeddings_basic(tmp_path):
    p = write(tmp_path, "e.txt", "good 1.0 0.0\nbad -1.0 0.0\n")
    vocab, emb = load_embeddings(p, 2)
    assert len(vocab) == 4
    assert np.array_equal(emb.row(vocab.id_of("good")), [1.0, 0.0])
    assert np.array_equal(emb.row(PAD_ID), [0.0, 0.0])
    assert np.allclose(emb.row(UNK_ID), [0.0, 0.0])  # mean of (1,0) and (-1,0)


def test_load_embeddings_unk_is_mean(tmp_path):
    p = write(tmp_path, "e.txt", "a 1 2\nb 3 6\n")
    _, emb = load_embeddings(p, 2)
    assert np.allclose(emb.row(UNK_ID), [2.0, 4.0])


def test_load_embeddings_empty_file(tmp_path):
    vocab, emb = load_embeddings(write(tmp_path, "e.txt", ""), 2)
    assert len(vocab) == 2
    assert np.array_equal(emb.row(UNK_ID), [0.0, 0.0])


def test_load_embeddings_dimension_error_names_line(tmp_path):
    with pytest.raises(LexiconError, match="line 1"):
        load_embeddings(write(tmp_path, "e.txt", "good 1.0\n"), 2)
    with pytest.raises(LexiconError, match="line 2"):
        load_embeddings(write(tmp_path, "e.txt", "good 1.0 2.0\nbad 1 2 3\n"), 2)


def test_load_embeddings_duplicate_token(tmp_path):
    with pytest.raises(LexiconError, match="duplicate"):
        load_embeddings(write(tmp_path, "e.txt", "a 1 2\na 3 4\n"), 2)


def test_embedding_matrix_rejects_non_finite():
    with pytest.raises(LexiconError):
        EmbeddingMatrix(np.array([[0.0, np.nan]]))


# -- synonyms -----------------------------------------------------------------

@pytest.fixture
def vocab():
    return Vocabulary(["good", "great", "fine", "a", "b", "c"])


def S(graph, vocab, word):
    return {vocab.lookup(i) for i in graph.one_hop(vocab.id_of(word))}


def test_load_synonyms_basic(tmp_path, vocab):
    g = load_synonyms(write(tmp_path, "s.tsv", "good\tgreat,fine\n"), vocab)
    assert S(g, vocab, "good") == {"good", "great", "fine"}
    assert g.dropped == 0


def test_load_synonyms_drops_unknown(tmp_path, vocab):
    g = load_synonyms(write(tmp_path, "s.tsv", "good\tzzz\n"), vocab)
    assert S(g, vocab, "good") == {"good"}
    assert g.dropped == 1


def test_load_synonyms_is_directed_by_default(tmp_path, vocab):
    g = load_synonyms(write(tmp_path, "s.tsv", "a\tb\nb\tc\n"), vocab)
    assert S(g, vocab, "a") == {"a", "b"}
    assert S(g, vocab, "b") == {"b", "c"}
    assert S(g, vocab, "c") == {"c"}
    sym = load_synonyms(write(tmp_path, "s.tsv", "a\tb\nb\tc\n"), vocab, symmetric=True)
    assert S(sym, vocab, "c") == {"c", "b"}
    assert S(sym, vocab, "b") == {"a", "b", "c"}


def test_load_synonyms_empty_list_and_self_loop(tmp_path, vocab):
    g = load_synonyms(write(tmp_path, "s.tsv", "good\t\nfine\tfine\n"), vocab)
    assert S(g, vocab, "good") == {"good"}
    assert S(g, vocab, "fine") == {"fine"}
    assert all(k not in v for k, v in g.adjacency.items())


def test_load_synonyms_unreadable(tmp_path, vocab):
    with pytest.raises(LexiconError):
        load_synonyms(tmp_path / "missing.tsv", vocab)


# -- neighborhoods ------------------------------------------------------------

def chain():
    # ids: a=0, b=1, c=2 in a bare graph
    return SynonymGraph.from_lists(3, {0: [1], 1: [2]})


def test_neighborhood_chain():
    n = neighborhood(chain(), 0, expand=True)
    assert n.one_hop == (0, 1) and n.two_hop_only == (2,)
    assert neighborhood(chain(), 0, expand=False).two_hop_only == ()


def test_neighborhood_isolated_and_clique():
    g = SynonymGraph.from_lists(4, {0: [1, 2], 1: [0, 2], 2: [0, 1]})
    assert neighborhood(g, 3, True).ids == (3,)
    assert neighborhood(g, 1, True).two_hop_only == ()
    assert neighborhood(g, 1, True).one_hop == (1, 0, 2)


def test_neighborhood_rejects_bad_center():
    with pytest.raises(LexiconError):
        neighborhood(chain(), 5, True)


graphs = st.integers(2, 8).flatmap(
    lambda n: st.tuples(
        st.just(n),
        st.dictionaries(st.integers(0, n - 1), st.sets(st.integers(0, n - 1), max_size=n), max_size=n),
    )
)


@given(graphs)
def test_neighborhood_matches_set_union_oracle(g):
    n, lists = g
    graph = SynonymGraph.from_lists(n, lists)
    for center in range(n):
        def s(w):
            return {w} | set(lists.get(w, ()))
        one = s(center)
        union = set().union(*(s(j) for j in one))
        for expand in (False, True):
            nb = neighborhood(graph, center, expand)
            assert nb.one_hop[0] == center
            assert set(nb.one_hop) == one
            assert list(nb.one_hop[1:]) == sorted(nb.one_hop[1:])
            assert list(nb.two_hop_only) == sorted(nb.two_hop_only)
            assert not set(nb.one_hop) & set(nb.two_hop_only)
            assert set(nb.ids) == (union if expand else one)


def test_lexicon_strips_special_synonyms_and_tables(ring_lexicon):
    lex = ring_lexicon
    assert lex.neighborhood(PAD_ID, True).ids == (PAD_ID,)
    assert lex.neighborhood(UNK_ID, True).ids == (UNK_ID,)
    assert lex.substitutes(PAD_ID) == [] and lex.substitutes(UNK_ID) == []
    a0 = lex.vocab.id_of("a0")
    table = lex.table(True)
    assert tuple(table.ids[a0, : table.count[a0]]) == lex.neighborhood(a0, True).ids
    assert table.two_hop[a0, : table.count[a0]].tolist() == [False, False, True]
    assert lex.table(True) is table


def test_lexicon_load_is_deterministic(tmp_path):
    e = write(tmp_path, "e.txt", "x 1 0\ny 0 1\nz 1 1\n")
    s = write(tmp_path, "s.tsv", "x\tz,y\n")
    l1, l2 = Lexicon.load(e, s, 2), Lexicon.load(e, s, 2)
    assert l1.vocab.tokens == l2.vocab.tokens
    assert l1.neighborhood(2, True) == l2.neighborhood(2, True)
    assert l1.neighborhood(2, False).one_hop == (2, 3, 4)


def test_lexicon_size_mismatch():
    with pytest.raises(LexiconError):
        Lexicon(Vocabulary(["a"]), EmbeddingMatrix(np.zeros((2, 2))), SynonymGraph({}, 3))
