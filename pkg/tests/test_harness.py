import json
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from hullsmooth.harness import experiments
from hullsmooth.harness.cli import main
from hullsmooth.harness.config import OUTPUT_ENV, ConfigError, load_spec, parse_spec
from hullsmooth.harness.data import DataError, ingest_tsv
from hullsmooth.harness.experiments import (
    ablation_cells,
    attack_indices,
    run_ablation,
    run_experiment,
    run_grid,
    sweep_cells,
)
from hullsmooth.harness.synthetic import CorpusSpec, build_corpus, generate_synthetic
from hullsmooth.lexicon import UNK_ID, Vocabulary

TINY = """
[experiment]
name = tiny
seed = 3
output_dir = tiny

[data]
dir = data

[model]
embed_dim = 4
hidden = 8
max_len = 16

[train]
mode = DNE
alpha = 1.0
lambda = 0.5
epochs = 2
lr = 0.01
batch = 16

[ensemble]
k = 4

[attack]
ga_population = 4
ga_generations = 3
n_examples = 6

[synthetic]
vocab_size = 40
n_clusters = 8
cluster_size = 3
sentence_len = 6
n_train = 64
n_val = 16
n_test = 16
embed_dim = 4
"""


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    """A config file plus generated data under tmp_path; outputs go to tmp_path/runs."""
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "runs"))
    cfg = tmp_path / "tiny.ini"
    cfg.write_text(TINY)
    assert main(["gen-data", "--config", str(cfg)]) == 0
    return cfg


def read_rows(run_dir):
    return json.loads((Path(run_dir) / "summary.json").read_text())["rows"]


# -- ingestion ----------------------------------------------------------------

def test_ingest_parses_lowercases_and_counts(tmp_path):
    vocab = Vocabulary(["good", "movie"])
    p = tmp_path / "d.tsv"
    p.write_text("1\tGood movie\n0\tgood plot twist here\n\n1\t   \n")
    ds = ingest_tsv(p, vocab, 2, max_len=3)
    assert [x.tolist() for x, _ in ds.examples] == [[vocab.id_of("good"), vocab.id_of("movie")],
                                                  [vocab.id_of("good"), UNK_ID, UNK_ID]]
    assert ds.labels.tolist() == [1, 0]
    assert ds.stats == {"examples": 2, "tokens": 5, "oov": 2, "dropped_empty": 1}


@pytest.mark.parametrize("line, where", [("7\tgood", "line 1"), ("x\tgood", "line 1"), ("good movie", "line 1")])
def test_ingest_errors_name_the_line(tmp_path, line, where):
    p = tmp_path / "d.tsv"
    p.write_text(line + "\n")
    with pytest.raises(DataError, match=where):
        ingest_tsv(p, Vocabulary(["good"]), 2, 8)


# -- synthetic corpus ---------------------------------------------------------

def test_within_cluster_substitution_keeps_gold_label():
    corpus = build_corpus(CorpusSpec(n_train=200, n_val=10, n_test=10))
    rng = np.random.default_rng(0)
    members = {}
    for w, c in corpus.cluster_of.items():
        members.setdefault(c, []).append(w)
    for label, text in corpus.splits["train"]:
        tokens = text.split()
        assert corpus.gold_label(tokens) == label
        swapped = [rng.choice(members[corpus.cluster_of[t]]) for t in tokens]
        assert corpus.gold_label(swapped) == label
    for w, syns in corpus.synonyms.items():
        assert all(corpus.cluster_of[s] == corpus.cluster_of[w] for s in syns)


def test_default_corpus_is_balanced():
    spec = CorpusSpec()
    assert (spec.vocab_size, spec.n_clusters, spec.cluster_size, spec.n_train, spec.n_test) == (200, 40, 5, 2000, 500)
    corpus = build_corpus(spec)
    for split, rows in corpus.splits.items():
        share = Counter(label for label, _ in rows)[1] / len(rows)
        assert abs(share - 0.5) <= 0.02, split


def test_synonym_clusters_are_tight():
    corpus = build_corpus(CorpusSpec(n_train=10, n_val=10, n_test=10))
    index = {w: i for i, w in enumerate(corpus.words)}
    v = corpus.vectors
    within = [np.linalg.norm(v[index[w]] - v[index[s]]) for w, ss in corpus.synonyms.items() for s in ss]
    centers = [v[index[w]] for w in corpus.synonyms if w.endswith("m0")]
    between = [np.linalg.norm(a - b) for i, a in enumerate(centers) for b in centers[i + 1:]]
    assert max(within) < np.median(between)


def test_generated_files_are_byte_identical(tmp_path):
    spec = CorpusSpec(n_train=50, n_val=10, n_test=10)
    a = generate_synthetic(spec, tmp_path / "a")
    b = generate_synthetic(spec, tmp_path / "b")
    for key in a:
        assert Path(a[key]).read_bytes() == Path(b[key]).read_bytes()
    c = generate_synthetic(CorpusSpec(n_train=50, n_val=10, n_test=10, seed=1), tmp_path / "c")
    assert Path(a["train"]).read_bytes() != Path(c["train"]).read_bytes()


def test_corpus_spec_validation():
    for kwargs in ({"cluster_size": 1}, {"vocab_size": 10}, {"n_clusters": 1}):
        with pytest.raises(ValueError):
            CorpusSpec(**kwargs)


# -- configuration ------------------------------------------------------------

def test_seed_propagates_and_aliases_apply():
    spec = parse_spec(TINY)
    assert spec.seed == spec.train.seed == spec.ensemble.seed == spec.attack.budget.seed == spec.synthetic.seed == 3
    assert spec.train.lam == 0.5 and spec.train.mode == "DNE"
    assert spec.attack.attacks == ("pwws", "ga") and spec.attack.target == "deployed"


def test_overrides_take_precedence():
    spec = parse_spec(TINY, ["train.alpha=0.1", "ensemble.k=1", "attack.attacks=ga", "experiment.seed=9",
                             "train.expand_hull=false"])
    assert spec.train.alpha == 0.1 and spec.ensemble.k == 1 and spec.attack.attacks == ("ga",)
    assert spec.seed == spec.train.seed == 9 and spec.train.expand_hull is False


@pytest.mark.parametrize("text, overrides", [
    ("[experiment]\nname = x\n", ()),
    (TINY, ["train.bogus=1"]),
    (TINY, ["train.seed=4"]),
    (TINY, ["train.alpha=abc"]),
    (TINY, ["train.mode=SAFER"]),
    (TINY, ["nosection=1"]),
    (TINY, ["zzz.alpha=1"]),
    (TINY, ["attack.attacks=pwws, textfooler"]),
    (TINY, ["attack.target=oracle"]),
    (TINY, ["attack.n_examples=-1"]),
    (TINY + "\n[extra]\na = 1\n", ()),
])
def test_bad_configs_are_rejected(text, overrides):
    with pytest.raises(ConfigError):
        parse_spec(text, overrides)


def test_output_root_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    assert parse_spec(TINY).run_dir == tmp_path / "tiny"
    monkeypatch.delenv(OUTPUT_ENV)
    assert parse_spec(TINY).run_dir == Path("runs") / "tiny"


def test_ini_round_trip(tmp_path):
    spec = parse_spec(TINY, ["ensemble.alpha=0.5"])
    again = parse_spec(spec.to_ini())
    assert again == spec


def test_missing_data_is_reported(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(TINY)
    with pytest.raises(ConfigError, match="missing data files"):
        load_spec(cfg).check_paths()
    assert main(["train", "--config", str(cfg)]) == 2


# -- recipes ------------------------------------------------------------------

def test_ablation_and_sweep_shapes():
    spec = parse_spec(TINY)
    cells = ablation_cells(spec)
    assert [label for label, _ in cells] == ["DNE", "w/o EXPANSION", "w/o ADV-TRAIN", "w/o COORD-UPD", "w/o ENSEMBLE"]
    toggles = [(s.train.expand_hull, s.train.adv_steps, s.train.coordinated_update, s.ensemble.k) for _, s in cells]
    assert toggles == [(True, 3, True, 4), (False, 3, True, 4), (True, 0, True, 4), (True, 3, False, 4), (True, 3, True, 1)]
    assert len({s.run_dir for _, s in cells}) == 5
    sweep = sweep_cells(spec, alphas=(0.1,))
    assert [(s.train.alpha, s.train.lam) for _, s in sweep] == [(0.1, 0.02), (0.1, 0.1), (0.1, 0.5)]
    assert len(sweep_cells(spec)) == 6


def test_attack_indices_are_seeded_sorted_samples():
    spec = parse_spec(TINY)
    idx = attack_indices(spec, 100)
    assert idx == sorted(idx) and len(set(idx)) == 6 and idx == attack_indices(spec, 100)
    assert attack_indices(spec.derive(attack={"n_examples": 0}), 5) == [0, 1, 2, 3, 4]


def test_experiment_writes_reproducible_outputs(workspace):
    spec = load_spec(workspace)
    row = run_experiment(spec)
    run = spec.run_dir
    names = {p.name for p in run.iterdir()}
    assert {"config.ini", "metrics.jsonl", "model.ckpt", "attack_pwws.json", "attack_ga.json",
            "summary.json", "summary.txt", "timing.log"} <= names
    metrics = [json.loads(line) for line in (run / "metrics.jsonl").read_text().splitlines()]
    assert [m["epoch"] for m in metrics] == [0, 1]
    # summary numbers recompute from the per-example reports
    for name in ("pwws", "ga"):
        report = json.loads((run / f"attack_{name}.json").read_text())
        ex = report["examples"]
        assert report["indices"] == [e["index"] for e in ex] == attack_indices(spec, 16)
        assert row[name] == sum(not e["skipped"] and not e["success"] for e in ex) / len(ex)
        assert row["clean"] == sum(not e["skipped"] for e in ex) / len(ex)
    snapshot = {p.name: p.read_bytes() for p in run.iterdir() if p.name != "timing.log"}
    assert run_experiment(spec) == row
    assert {p.name: p.read_bytes() for p in run.iterdir() if p.name != "timing.log"} == snapshot


def test_base_target_attacks_the_bare_classifier(workspace):
    spec = load_spec(workspace, ["attack.target=base", "attack.attacks=pwws", "experiment.output_dir=base"])
    row = run_experiment(spec)
    report = json.loads((spec.run_dir / "attack_pwws.json").read_text())
    assert row["target"] == "base"
    model = experiments.load_model(spec)
    for e in report["examples"]:
        assert np.allclose(e["probs_before"], model.predict_proba([e["original_ids"]])[0], rtol=0, atol=1e-12)


def test_failed_cell_is_isolated(workspace, monkeypatch):
    spec = load_spec(workspace, ["attack.attacks=pwws"])
    real = experiments.run_experiment

    def flaky(s, label=None):
        if not s.train.coordinated_update:
            raise RuntimeError("boom")
        return real(s, label)

    monkeypatch.setattr(experiments, "run_experiment", flaky)
    rows = run_ablation(spec)
    assert [r["status"] for r in rows] == ["ok", "ok", "ok", "failed", "ok"]
    assert rows[3]["error"] == "RuntimeError: boom" and rows[3]["pwws"] is None
    assert read_rows(spec.run_dir) == rows
    assert "failed" in (spec.run_dir / "summary.txt").read_text()


def test_grid_rows_keep_cell_order(workspace):
    spec = load_spec(workspace, ["attack.attacks=pwws", "train.epochs=1"])
    cells = sweep_cells(spec, alphas=(1.0,), lambdas=(0.1, 0.5))
    rows = run_grid(spec, cells)
    assert [r["name"] for r in rows] == ["alpha=1 lambda=0.1", "alpha=1 lambda=0.5"]
    assert [r["lambda"] for r in rows] == [0.1, 0.5]


# -- CLI ----------------------------------------------------------------------

def test_cli_commands(workspace, capsys):
    cfg = str(workspace)
    quick = ["--set", "train.epochs=1", "--set", "attack.attacks=pwws"]
    assert main(["train", "--config", cfg, *quick]) == 0
    assert "checkpoint" in capsys.readouterr().out
    assert main(["eval", "--config", cfg, *quick]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["n_test"] == 16 and 0 <= result["deployed_test_acc"] <= 1
    assert main(["attack", "--config", cfg, *quick]) == 0
    assert capsys.readouterr().out.splitlines()[0].split() == ["name", "CLN", "PWWS", "GA", "status"]
    assert main(["sweep", "--config", cfg, *quick, "--set", "experiment.output_dir=sw"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 2 + 6


def test_cli_rejects_mismatched_dimensions(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text(TINY)
    assert main(["gen-data", "--config", str(cfg), "--set", "model.embed_dim=5"]) == 2
    assert "embed_dim" in capsys.readouterr().err


def test_cli_requires_a_command():
    with pytest.raises(SystemExit):
        main([])
