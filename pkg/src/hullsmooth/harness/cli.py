"""Command-line entry point: ``hullsmooth <command> --config FILE [--set section.key=value ...]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, load_spec
from .data import DataError
from .experiments import (
    attack_model,
    evaluate_model,
    format_table,
    load_lexicon,
    load_model,
    load_splits,
    run_ablation,
    run_sweep,
    summarize,
    train_model,
    write_summary,
)
from .synthetic import generate_synthetic


def _gen_data(spec, args):
    if spec.synthetic.embed_dim != spec.model.embed_dim:
        raise ConfigError(
            f"synthetic.embed_dim={spec.synthetic.embed_dim} but model.embed_dim={spec.model.embed_dim}"
        )
    names = {k: getattr(spec.data, k) for k in ("embeddings", "synonyms", "train", "val", "test")}
    paths = generate_synthetic(spec.synthetic, spec.data.dir, names)
    print(json.dumps(paths, indent=2, sort_keys=True))


def _train(spec, args):
    spec.check_paths()
    _, history = train_model(spec)
    last = history[-1]
    best = max((h.val_acc for h in history if h.val_acc is not None), default=None)
    print(f"trained {spec.train.mode} for {len(history)} epochs; final loss {last.train_loss:.4f}; best val {best}")
    print(f"checkpoint: {spec.run_dir / 'model.ckpt'}")


def _eval(spec, args):
    spec.check_paths()
    lexicon = load_lexicon(spec)
    result = evaluate_model(spec, load_model(spec), lexicon, load_splits(spec, lexicon))
    print(json.dumps(result, indent=2, sort_keys=True))


def _attack(spec, args):
    spec.check_paths()
    lexicon = load_lexicon(spec)
    attacks = attack_model(spec, load_model(spec), lexicon, load_splits(spec, lexicon))
    row = summarize(spec, spec.name, attacks)
    write_summary(spec.run_dir, [row])
    print(format_table([row]), end="")


def _sweep(spec, args):
    spec.check_paths()
    print(format_table(run_sweep(spec, jobs=args.jobs)), end="")


def _ablate(spec, args):
    spec.check_paths()
    print(format_table(run_ablation(spec, jobs=args.jobs)), end="")


COMMANDS = {
    "gen-data": (_gen_data, "write a synthetic lexicon and corpus into data.dir"),
    "train": (_train, "train a classifier and save the best-validation checkpoint"),
    "eval": (_eval, "clean accuracy of the saved checkpoint, base and deployed"),
    "attack": (_attack, "attack the deployed predictor built from the saved checkpoint"),
    "sweep": (_sweep, "train and attack over the alpha x lambda grid"),
    "ablate": (_ablate, "train and attack full DNE and its four ablations"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hullsmooth", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment INI file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config value (repeatable)")
        if name in ("sweep", "ablate"):
            p.add_argument("--jobs", type=int, default=1, help="cells to run in parallel")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = load_spec(args.config, args.overrides)
        COMMANDS[args.command][0](spec, args)
    except (ConfigError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
