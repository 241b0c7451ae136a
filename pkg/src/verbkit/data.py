"""Datasets of labeled abstracts and seeded few-shot splits."""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass
from pathlib import Path

from .errors import IngestError
from .verbalizer import ClassLabel

MIN_ABSTRACT_TOKENS = 30


@dataclass(frozen=True)
class LabeledExample:
    id: str
    abstract: str
    label: int


@dataclass(frozen=True)
class Dataset:
    classes: tuple[ClassLabel, ...]
    examples: tuple[LabeledExample, ...]

    def by_class(self) -> dict[int, list[LabeledExample]]:
        groups: dict[int, list[LabeledExample]] = {c.id: [] for c in self.classes}
        for ex in self.examples:
            groups[ex.label].append(ex)
        return groups


@dataclass(frozen=True)
class FewShotSplit:
    """K train and K validation examples per class, disjoint by id."""

    seed: int
    shots: int
    train: tuple[LabeledExample, ...]
    val: tuple[LabeledExample, ...]


@dataclass(frozen=True)
class IngestReport:
    dataset: Dataset
    kept: int
    dropped_short: int


def _iter_records(path: Path, format: str):
    if format == "jsonl":
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    yield line_no, json.loads(line)
                except json.JSONDecodeError as e:
                    raise IngestError(f"{path}:{line_no}: invalid JSON ({e})") from e
    elif format == "csv":
        with open(path, encoding="utf-8", newline="") as fh:
            for line_no, row in enumerate(csv.DictReader(fh), 2):
                yield line_no, row
    else:
        raise IngestError(f"unknown dataset format {format!r} (expected jsonl or csv)")


def ingest(
    path: str | Path,
    format: str = "jsonl",
    classes: list[ClassLabel] | None = None,
) -> IngestReport:
    """Load a dataset, dropping abstracts shorter than 30 whitespace tokens.

    String labels are resolved against the declared class set; when no class
    set is given, classes are derived from the sorted label strings and ids
    are assigned densely.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"dataset file not found: {path}")
    records = []
    for line_no, rec in _iter_records(path, format):
        missing = [k for k in ("id", "abstract", "label") if k not in rec or rec[k] in (None, "")]
        if missing:
            raise IngestError(f"{path}:{line_no}: missing field(s) {missing}")
        records.append((line_no, str(rec["id"]), str(rec["abstract"]), rec["label"]))
    if not records:
        raise IngestError(f"dataset file {path} holds no records")

    if classes is None:
        names = sorted({str(label) for _, _, _, label in records})
        classes = [ClassLabel(id=i, name=name) for i, name in enumerate(names)]
    by_name = {c.name.lower(): c.id for c in classes}
    valid_ids = {c.id for c in classes}

    unknown: list[str] = []
    resolved = []
    for line_no, ex_id, abstract, label in records:
        if isinstance(label, int) or (isinstance(label, str) and label.strip().lstrip("-").isdigit()):
            label_id = int(label)
            if label_id not in valid_ids:
                unknown.append(f"{path}:{line_no}: label id {label_id}")
                continue
        else:
            key = str(label).strip().lower()
            if key not in by_name:
                unknown.append(f"{path}:{line_no}: label {label!r}")
                continue
            label_id = by_name[key]
        resolved.append((ex_id, abstract, label_id))
    if unknown:
        raise IngestError("unknown labels:\n" + "\n".join(unknown))

    kept = []
    dropped_short = 0
    for ex_id, abstract, label_id in resolved:
        if len(abstract.split()) < MIN_ABSTRACT_TOKENS:
            dropped_short += 1
            continue
        kept.append(LabeledExample(id=ex_id, abstract=abstract, label=label_id))
    dataset = Dataset(classes=tuple(classes), examples=tuple(kept))
    return IngestReport(dataset=dataset, kept=len(kept), dropped_short=dropped_short)


def sample_split(dataset: Dataset, shots: int, seed: int) -> FewShotSplit:
    """Draw K train + K validation examples per class without replacement."""
    if shots < 1:
        raise IngestError(f"shots must be >= 1, got {shots}")
    rng = random.Random(seed)
    groups = dataset.by_class()
    train: list[LabeledExample] = []
    val: list[LabeledExample] = []
    for cls in sorted(dataset.classes, key=lambda c: c.id):
        pool = groups[cls.id]
        if len(pool) < 2 * shots:
            raise IngestError(
                f"class {cls.name!r} has {len(pool)} examples; {2 * shots} needed for {shots}-shot"
            )
        chosen = rng.sample(pool, 2 * shots)
        train.extend(chosen[:shots])
        val.extend(chosen[shots:])
    return FewShotSplit(seed=seed, shots=shots, train=tuple(train), val=tuple(val))


def sample_support(dataset: Dataset, size: int, seed: int) -> tuple[LabeledExample, ...]:
    """Unlabeled-use support sample for calibration (labels are ignored)."""
    rng = random.Random(seed)
    n = min(size, len(dataset.examples))
    return tuple(rng.sample(list(dataset.examples), n))


def evaluate(predictions: list[int], gold: list[int]) -> float:
    """Exact-match accuracy."""
    if len(predictions) != len(gold):
        raise ValueError(f"length mismatch: {len(predictions)} predictions vs {len(gold)} gold")
    if not gold:
        raise ValueError("cannot evaluate zero examples")
    return sum(p == g for p, g in zip(predictions, gold)) / len(gold)


def write_dataset_jsonl(examples, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({"id": ex.id, "abstract": ex.abstract, "label": ex.label}) + "\n")


def load_classes(path: str | Path) -> list[ClassLabel]:
    """Class set file: JSON array of {id, name, query_text?}."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return [
            ClassLabel(id=int(e["id"]), name=e["name"], query_text=e.get("query_text", ""))
            for e in doc
        ]
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise IngestError(f"cannot load class set from {path}: {e}") from e
