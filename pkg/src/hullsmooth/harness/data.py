"""Labeled token-id datasets and TSV ingestion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..lexicon import UNK_ID, Vocabulary

SPLITS = ("train", "val", "test")


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    examples: list  # (np.ndarray of ids, int label)
    split: str
    class_count: int
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DataError(f"unknown split {self.split!r}")
        for ids, y in self.examples:
            if not 0 <= y < self.class_count:
                raise DataError(f"label {y} outside [0, {self.class_count})")
            if len(ids) == 0:
                raise DataError("empty example")

    def __len__(self) -> int:
        return len(self.examples)

    def __getitem__(self, i):
        return self.examples[i]

    @property
    def labels(self) -> np.ndarray:
        return np.array([y for _, y in self.examples], dtype=np.int64)

    def subset(self, indices) -> "Dataset":
        return Dataset([self.examples[i] for i in indices], self.split, self.class_count, dict(self.stats))


def ingest_tsv(path, vocab: Vocabulary, class_count: int, max_len: int, split: str = "train") -> Dataset:
    """Read ``label<TAB>text`` lines, lowercasing and splitting text on whitespace.

    Unknown tokens map to UNK and are counted; sequences are truncated to
    ``max_len``; lines with no tokens are dropped and counted.
    """
    examples = []
    oov = dropped = tokens = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise DataError(f"{path}: line {lineno}: expected 'label<TAB>text'")
            raw_label, text = line.split("\t", 1)
            try:
                label = int(raw_label)
            except ValueError:
                raise DataError(f"{path}: line {lineno}: label {raw_label!r} is not an integer") from None
            if not 0 <= label < class_count:
                raise DataError(f"{path}: line {lineno}: label {label} outside [0, {class_count})")
            ids = vocab.encode(text.lower().split())[:max_len]
            if not ids:
                dropped += 1
                continue
            tokens += len(ids)
            oov += sum(1 for i in ids if i == UNK_ID)
            examples.append((np.array(ids, dtype=np.int64), label))
    stats = {"examples": len(examples), "tokens": tokens, "oov": oov, "dropped_empty": dropped}
    return Dataset(examples, split, class_count, stats)


def write_tsv(path, rows) -> None:
    """Write ``(label, text)`` rows."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for label, text in rows:
            fh.write(f"{label}\t{text}\n")
