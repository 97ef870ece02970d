"""Experiment recipes: train, evaluate, attack, α/λ sweep and ablation.

Everything written under a run directory is a pure function of the experiment
configuration except ``timing.log``, which holds wall-clock times and timestamps.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ..attacks import evaluate_robustness
from ..lexicon import Lexicon
from ..models import Classifier, load_checkpoint, pad_batch, save_checkpoint
from ..seeding import derive_rng
from ..smoothing import BaseClassifier, SmoothedClassifier
from ..training import train
from .config import ExperimentSpec
from .data import ingest_tsv

logger = logging.getLogger(__name__)

SWEEP_ALPHAS = (0.1, 1.0)
SWEEP_LAMBDAS = (0.02, 0.1, 0.5)
ABLATIONS = (
    ("DNE", "full", {}),
    ("w/o EXPANSION", "no-expansion", {"train": {"expand_hull": False}}),
    ("w/o ADV-TRAIN", "no-adv-train", {"train": {"adv_steps": 0}}),
    ("w/o COORD-UPD", "no-coord-upd", {"train": {"coordinated_update": False}}),
    ("w/o ENSEMBLE", "no-ensemble", {"ensemble": {"k": 1}}),
)
CHECKPOINT = "model.ckpt"


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class TimingLog:
    """Append-only wall-clock log; the only non-reproducible file in a run directory."""

    def __init__(self, run_dir: Path):
        self.path = Path(run_dir) / "timing.log"

    def write(self, event: str, **fields) -> None:
        stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
        extra = " ".join(f"{k}={v}" for k, v in fields.items())
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(f"{stamp} {event} {extra}".rstrip() + "\n")


def load_lexicon(spec: ExperimentSpec) -> Lexicon:
    d = spec.data
    return Lexicon.load(d.path("embeddings"), d.path("synonyms"), spec.model.embed_dim, d.symmetric_synonyms)


def load_splits(spec: ExperimentSpec, lexicon: Lexicon) -> dict:
    return {
        split: ingest_tsv(spec.data.path(split), lexicon.vocab, spec.model.classes, spec.model.max_len, split)
        for split in ("train", "val", "test")
    }


def accuracy(model: Classifier, dataset) -> float:
    if len(dataset) == 0:
        return 0.0
    pred = model.predict(pad_batch([x for x, _ in dataset.examples]))
    return float((pred == dataset.labels).mean())


def build_victim(spec: ExperimentSpec, model: Classifier, lexicon: Lexicon, base: bool = False):
    """The deployed predictor for the configured training mode, or the bare classifier when ``base``."""
    mode = spec.train.mode
    if mode == "ORIG" or base:
        return BaseClassifier(model)
    sampler = "dirichlet" if mode == "DNE" else "discrete"
    return SmoothedClassifier(model, lexicon, spec.ensemble, sampler, alpha=spec.train.alpha)


def attack_indices(spec: ExperimentSpec, n_test: int) -> list[int]:
    """Uniform sample without replacement (sorted) or every index when n_examples is 0."""
    n = spec.attack.n_examples
    if n == 0 or n >= n_test:
        return list(range(n_test))
    pick = derive_rng(spec.seed, "attack", "indices").choice(n_test, size=n, replace=False)
    return sorted(int(i) for i in pick)


def prepare_run_dir(spec: ExperimentSpec) -> Path:
    run_dir = spec.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.ini").write_text(spec.to_ini(), encoding="utf-8")
    return run_dir


def train_model(spec: ExperimentSpec, lexicon: Lexicon | None = None, splits: dict | None = None):
    """Train, checkpoint the best-validation model and write ``metrics.jsonl``."""
    lexicon = lexicon or load_lexicon(spec)
    splits = splits or load_splits(spec, lexicon)
    run_dir = prepare_run_dir(spec)
    timing = TimingLog(run_dir)
    model = Classifier(spec.model, lexicon.embeddings.rows, derive_rng(spec.seed, "init"))
    metrics_path = run_dir / "metrics.jsonl"
    metrics_path.write_text("", encoding="utf-8")

    def on_epoch(m):
        row = m.as_dict()
        timing.write("epoch", epoch=m.epoch, wall_ms=f"{row.pop('wall_ms'):.1f}")
        with open(metrics_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row, sort_keys=True) + "\n")

    model, history = train(model, splits["train"], spec.train, lexicon,
                           evaluate=lambda m: accuracy(m, splits["val"]), on_epoch=on_epoch)
    save_checkpoint(model, run_dir / CHECKPOINT)
    return model, history


def load_model(spec: ExperimentSpec) -> Classifier:
    return load_checkpoint(spec.run_dir / CHECKPOINT)


def evaluate_model(spec: ExperimentSpec, model: Classifier, lexicon: Lexicon, splits: dict) -> dict:
    """Base-classifier accuracy on val/test plus deployed-predictor accuracy on test."""
    victim = build_victim(spec, model, lexicon)
    test = splits["test"]
    deployed = [int(np.argmax(victim.query_fn(i)([x])[0])) == y for i, (x, y) in enumerate(test.examples)]
    result = {
        "mode": spec.train.mode,
        "base_val_acc": accuracy(model, splits["val"]),
        "base_test_acc": accuracy(model, test),
        "deployed_test_acc": float(np.mean(deployed)) if deployed else 0.0,
        "n_test": len(test),
    }
    write_json(prepare_run_dir(spec) / "eval.json", result)
    return result


def attack_model(spec: ExperimentSpec, model: Classifier, lexicon: Lexicon, splits: dict) -> dict:
    """Run every configured attack on the targeted predictor; one report file per attack."""
    run_dir = prepare_run_dir(spec)
    timing = TimingLog(run_dir)
    victim = build_victim(spec, model, lexicon, base=spec.attack.target == "base")
    test = splits["test"]
    indices = attack_indices(spec, len(test))
    summaries = {}
    for name in spec.attack.attacks:
        t0 = time.perf_counter()
        report = evaluate_robustness(victim, test.examples, name, lexicon, spec.attack.budget, indices)
        report["indices"] = indices
        write_json(run_dir / f"attack_{name}.json", report)
        timing.write("attack", name=name, wall_ms=f"{(time.perf_counter() - t0) * 1000:.1f}")
        summaries[name] = report["summary"]
    return summaries


def summarize(spec: ExperimentSpec, label: str, attacks: dict, clean: float | None = None) -> dict:
    row = {
        "name": label,
        "mode": spec.train.mode,
        "alpha": spec.train.alpha,
        "lambda": spec.train.lam,
        "k": spec.ensemble.k,
        "target": spec.attack.target,
        "status": "ok",
        "error": None,
        "clean": clean,
        "pwws": None,
        "ga": None,
    }
    for name, s in attacks.items():
        row[name] = s["robust_acc"]
        row["clean"] = s["clean_acc"]
    return row


def run_experiment(spec: ExperimentSpec, label: str | None = None) -> dict:
    """Train, attack and write ``summary.json`` / ``summary.txt`` for one configuration."""
    spec.check_paths()
    lexicon = load_lexicon(spec)
    splits = load_splits(spec, lexicon)
    model, _ = train_model(spec, lexicon, splits)
    attacks = attack_model(spec, model, lexicon, splits)
    clean = None
    if not attacks:
        clean = evaluate_model(spec, model, lexicon, splits)["deployed_test_acc"]
    row = summarize(spec, label or spec.name, attacks, clean)
    write_summary(spec.run_dir, [row])
    return row


def _run_cell(args) -> dict:
    label, spec = args
    try:
        return run_experiment(spec, label)
    except Exception as exc:  # one failed cell must not sink the grid
        logger.exception("cell %s failed", label)
        row = summarize(spec, label, {})
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        return row


def run_grid(spec: ExperimentSpec, cells: list, jobs: int = 1) -> list[dict]:
    """Run ``(label, spec)`` cells, optionally in worker processes, and write one summary."""
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_cell, cells))
    else:
        rows = [_run_cell(c) for c in cells]
    run_dir = spec.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.ini").write_text(spec.to_ini(), encoding="utf-8")
    write_summary(run_dir, rows)
    return rows


def sweep_cells(spec: ExperimentSpec, alphas=SWEEP_ALPHAS, lambdas=SWEEP_LAMBDAS) -> list:
    cells = []
    for a in alphas:
        for lam in lambdas:
            label = f"alpha={a:g} lambda={lam:g}"
            sub = str(Path(spec.output_dir) / f"alpha{a:g}_lambda{lam:g}")
            cells.append((label, spec.derive(output_dir=sub, train={"mode": "DNE", "alpha": a, "lam": lam})))
    return cells


def ablation_cells(spec: ExperimentSpec) -> list:
    cells = []
    for label, slug, patch in ABLATIONS:
        patch = {**patch, "train": {"mode": "DNE", **patch.get("train", {})}}
        cells.append((label, spec.derive(output_dir=str(Path(spec.output_dir) / slug), **patch)))
    return cells


def run_sweep(spec: ExperimentSpec, alphas=SWEEP_ALPHAS, lambdas=SWEEP_LAMBDAS, jobs: int = 1) -> list[dict]:
    return run_grid(spec, sweep_cells(spec, alphas, lambdas), jobs)


def run_ablation(spec: ExperimentSpec, jobs: int = 1) -> list[dict]:
    return run_grid(spec, ablation_cells(spec), jobs)


def _pct(v) -> str:
    return "-" if v is None else f"{100 * v:.1f}"


def format_table(rows: list[dict]) -> str:
    """Aligned plain-text table with CLN / PWWS / GA columns (percent)."""
    header = ["name", "CLN", "PWWS", "GA", "status"]
    body = [[r["name"], _pct(r["clean"]), _pct(r["pwws"]), _pct(r["ga"]), r["status"]] for r in rows]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    lines = []
    for i, cells in enumerate([header] + body):
        first = cells[0].ljust(widths[0])
        rest = [c.rjust(w) for c, w in zip(cells[1:4], widths[1:4])]
        lines.append("  ".join([first, *rest, cells[4].ljust(widths[4])]).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_summary(run_dir: Path, rows: list[dict]) -> None:
    run_dir = Path(run_dir)
    write_json(run_dir / "summary.json", {"rows": rows})
    (run_dir / "summary.txt").write_text(format_table(rows), encoding="utf-8")
