"""Experiment configuration read from a single INI file.

Layout::

    [experiment]
    name = demo
    seed = 0              ; mandatory
    output_dir = demo     ; relative paths resolve under $HULLSMOOTH_OUTPUT (default ./runs)

    [data]
    dir = data            ; base for the relative paths below
    embeddings = embeddings.txt
    synonyms = synonyms.tsv
    train = train.tsv
    val = val.tsv
    test = test.tsv

    [model]    ClassifierConfig fields
    [train]    TrainConfig fields (``lambda`` is accepted for ``lam``)
    [ensemble] EnsembleConfig fields
    [attack]   AttackBudget fields plus ``attacks``, ``n_examples`` and ``target``
    [synthetic] CorpusSpec fields, used by ``gen-data``

Every command accepts ``--set section.key=value`` overrides, applied before
parsing.  All randomness derives from ``experiment.seed``; the per-component
``seed`` fields are overwritten with it.
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..attacks import ATTACKS, AttackBudget
from ..models import ClassifierConfig
from ..smoothing import EnsembleConfig
from ..training import TrainConfig
from .synthetic import CorpusSpec

OUTPUT_ENV = "HULLSMOOTH_OUTPUT"
DEFAULT_OUTPUT_ROOT = "runs"
DATA_FILES = ("embeddings", "synonyms", "train", "val", "test")
SECTIONS = ("experiment", "data", "model", "train", "ensemble", "attack", "synthetic")
TARGETS = ("deployed", "base")
KEY_ALIASES = {("train", "lambda"): "lam"}


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    dir: str = "data"
    embeddings: str = "embeddings.txt"
    synonyms: str = "synonyms.tsv"
    train: str = "train.tsv"
    val: str = "val.tsv"
    test: str = "test.tsv"
    symmetric_synonyms: bool = False

    def path(self, name: str) -> Path:
        p = Path(getattr(self, name))
        return p if p.is_absolute() else Path(self.dir) / p


@dataclass
class AttackPlan:
    """Which attacks to run, on how many test examples, against which predictor."""

    budget: AttackBudget = field(default_factory=AttackBudget)
    attacks: tuple = ("pwws", "ga")
    n_examples: int = 0  # 0 attacks the whole test split
    target: str = "deployed"  # "base" attacks the underlying classifier instead of the smoothed one

    def __post_init__(self):
        unknown = set(self.attacks) - set(ATTACKS)
        if unknown:
            raise ConfigError(f"[attack] unknown attacks {sorted(unknown)}; expected {sorted(ATTACKS)}")
        if self.n_examples < 0:
            raise ConfigError("[attack] n_examples must be >= 0")
        if self.target not in TARGETS:
            raise ConfigError(f"[attack] target must be one of {TARGETS}")


@dataclass
class ExperimentSpec:
    name: str
    seed: int
    output_dir: str
    data: DataConfig
    model: ClassifierConfig
    train: TrainConfig
    ensemble: EnsembleConfig
    attack: AttackPlan
    synthetic: CorpusSpec

    @property
    def run_dir(self) -> Path:
        p = Path(self.output_dir)
        if p.is_absolute():
            return p
        return Path(os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT_ROOT)) / p

    def check_paths(self) -> None:
        missing = [str(self.data.path(n)) for n in DATA_FILES if not self.data.path(n).exists()]
        if missing:
            raise ConfigError("missing data files: " + ", ".join(missing))

    def derive(self, name: str | None = None, output_dir: str | None = None, **sections) -> "ExperimentSpec":
        """Copy with some fields replaced; ``train={"alpha": 1.0}`` patches a section."""
        out = replace(self, name=name or self.name, output_dir=output_dir or self.output_dir)
        for section, patch in sections.items():
            current = getattr(out, section)
            if section == "attack":
                budget = replace(current.budget, **{k: v for k, v in patch.items() if hasattr(current.budget, k)})
                rest = {k: v for k, v in patch.items() if not hasattr(current.budget, k)}
                out = replace(out, attack=replace(current, budget=budget, **rest))
            else:
                out = replace(out, **{section: replace(current, **patch)})
        return out

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["experiment"] = {"name": self.name, "seed": str(self.seed), "output_dir": self.output_dir}
        cp["data"] = _stringify(asdict(self.data))
        cp["model"] = _stringify(asdict(self.model))
        cp["train"] = _stringify({k: v for k, v in asdict(self.train).items() if k != "seed"})
        cp["ensemble"] = _stringify({k: v for k, v in asdict(self.ensemble).items() if k != "seed"})
        attack = {k: v for k, v in asdict(self.attack.budget).items() if k != "seed"}
        attack["attacks"] = ", ".join(self.attack.attacks)
        attack["n_examples"] = self.attack.n_examples
        attack["target"] = self.attack.target
        cp["attack"] = _stringify(attack)
        cp["synthetic"] = _stringify({k: v for k, v in asdict(self.synthetic).items() if k != "seed"})
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _stringify(d: dict) -> dict:
    return {k: ("none" if v is None else str(v).lower() if isinstance(v, bool) else str(v)) for k, v in d.items()}


def _convert(raw: str, default, where: str):
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or default is None:
            if default is None and text.lower() in ("", "none"):
                return None
            return float(text)
        if isinstance(default, tuple):
            return tuple(t.strip() for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None
    return text


def _section_values(cp, section: str, cls, extra: dict | None = None) -> dict:
    defaults = {f.name: f.default for f in fields(cls)}
    defaults.update(extra or {})
    out = {}
    if not cp.has_section(section):
        return out
    for key, raw in cp.items(section):
        name = KEY_ALIASES.get((section, key), key)
        if name not in defaults or name == "seed":
            raise ConfigError(f"[{section}] unknown key {key!r}")
        out[name] = _convert(raw, defaults[name], f"[{section}] {key}")
    return out


def apply_overrides(cp: configparser.ConfigParser, overrides) -> None:
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        key, value = item.split("=", 1)
        if "." not in key:
            raise ConfigError(f"override {item!r} must name a section, e.g. train.alpha=0.1")
        section, name = key.strip().split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"unknown section {section!r} in override {item!r}")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, name.strip(), value.strip())


def parse_spec(text: str, overrides=(), base_dir: Path | None = None) -> ExperimentSpec:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.read_string(text)
    apply_overrides(cp, overrides)
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
    if not cp.has_option("experiment", "seed"):
        raise ConfigError("[experiment] seed is mandatory")
    exp = dict(cp.items("experiment"))
    unknown = set(exp) - {"name", "seed", "output_dir"}
    if unknown:
        raise ConfigError(f"[experiment] unknown keys {sorted(unknown)}")
    seed = _convert(exp["seed"], 0, "[experiment] seed")
    if seed < 0:
        raise ConfigError("[experiment] seed must be non-negative")
    name = exp.get("name", "experiment")

    data = DataConfig(**_section_values(cp, "data", DataConfig))
    if base_dir is not None and not Path(data.dir).is_absolute():
        data.dir = str(Path(base_dir) / data.dir)
    plan_defaults = {f.name: f.default for f in fields(AttackPlan) if f.name != "budget"}
    attack_vals = _section_values(cp, "attack", AttackBudget, plan_defaults)
    try:
        plan = AttackPlan(
            AttackBudget(seed=seed, **{k: v for k, v in attack_vals.items() if k not in plan_defaults}),
            **{k: v for k, v in attack_vals.items() if k in plan_defaults},
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        return ExperimentSpec(
            name=name,
            seed=seed,
            output_dir=exp.get("output_dir", name),
            data=data,
            model=ClassifierConfig(**_section_values(cp, "model", ClassifierConfig)),
            train=TrainConfig(seed=seed, **_section_values(cp, "train", TrainConfig)),
            ensemble=EnsembleConfig(seed=seed, **_section_values(cp, "ensemble", EnsembleConfig)),
            attack=plan,
            synthetic=CorpusSpec(seed=seed, **_section_values(cp, "synthetic", CorpusSpec)),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_spec(path, overrides=()) -> ExperimentSpec:
    """Parse an INI file; a relative ``data.dir`` resolves against the file's directory."""
    path = Path(path)
    return parse_spec(path.read_text(encoding="utf-8"), overrides, base_dir=path.parent)
