import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hullsmooth.lexicon import EmbeddingMatrix, Lexicon, SynonymGraph, Vocabulary
from hullsmooth.models import Classifier, ClassifierConfig

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_lexicon(words, synonyms, dim=4, seed=0, rows=None, symmetric=False):
    """Lexicon over ``words`` (ids 2..) with ``synonyms`` given as word -> list of words."""
    vocab = Vocabulary(words)
    if rows is None:
        rows = np.random.default_rng(seed).standard_normal((len(vocab), dim))
        rows[0] = 0.0
    lists = {vocab.id_of(h): [vocab.id_of(s) for s in ss] for h, ss in synonyms.items()}
    graph = SynonymGraph.from_lists(len(vocab), lists, symmetric=symmetric)
    return Lexicon(vocab, EmbeddingMatrix(np.asarray(rows, dtype=np.float64)), graph)


def make_model(lexicon, arch="BOW", classes=2, hidden=5, seed=0, dropout=0.0, kernel=3):
    cfg = ClassifierConfig(arch=arch, embed_dim=lexicon.embeddings.dim, classes=classes, hidden=hidden,
                           kernel=kernel, dropout_embed=dropout, max_len=64)
    return Classifier(cfg, lexicon.embeddings.rows, np.random.default_rng(seed))


@pytest.fixture
def ring_lexicon():
    """Two 3-word rings (a0-a1-a2, b0-b1-b2) plus an isolated word z."""
    words = ["a0", "a1", "a2", "b0", "b1", "b2", "z"]
    syn = {"a0": ["a1"], "a1": ["a0", "a2"], "a2": ["a1"], "b0": ["b1", "b2"], "b1": ["b0"], "b2": ["b0"]}
    return make_lexicon(words, syn, dim=4, seed=3)


# -- acceptance reporting -----------------------------------------------------

ACCEPTANCE: dict = {}


def record(criterion: str, passed: bool, detail: str) -> bool:
    """Remember one acceptance outcome for the end-of-run summary."""
    ACCEPTANCE[criterion] = (bool(passed), detail)
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        passed, detail = ACCEPTANCE[criterion]
        terminalreporter.write_line(f"{criterion} {'PASS' if passed else 'FAIL'}: {detail}")
