"""Dataset ingestion, few-shot splits, accuracy."""

from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from verbkit.data import (
    Dataset,
    LabeledExample,
    evaluate,
    ingest,
    sample_split,
    sample_support,
)
from verbkit.errors import IngestError
from verbkit.verbalizer import ClassLabel

LONG = " ".join(f"tok{i}" for i in range(35))
SHORT = "only ten tokens in this abstract right here now ok"


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


class TestIngest:
    def test_short_abstracts_dropped_and_counted(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [
            {"id": "a", "abstract": LONG, "label": "x"},
            {"id": "b", "abstract": SHORT, "label": "x"},
        ])
        report = ingest(path)
        assert report.kept == 1
        assert report.dropped_short == 1

    def test_exactly_thirty_tokens_kept(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [
            {"id": "a", "abstract": " ".join(["w"] * 30), "label": "x"},
            {"id": "b", "abstract": " ".join(["w"] * 29), "label": "x"},
        ])
        report = ingest(path)
        assert report.kept == 1

    def test_seven_label_strings_make_seven_classes(self, tmp_path):
        path = tmp_path / "d.jsonl"
        names = [f"area {i}" for i in range(7)]
        write_jsonl(path, [
            {"id": str(i), "abstract": LONG, "label": names[i % 7]} for i in range(21)
        ])
        dataset = ingest(path).dataset
        assert len(dataset.classes) == 7
        assert sorted(c.id for c in dataset.classes) == list(range(7))

    def test_unknown_label_lists_offenders(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [
            {"id": "a", "abstract": LONG, "label": "known"},
            {"id": "b", "abstract": LONG, "label": "mystery"},
        ])
        with pytest.raises(IngestError, match="mystery"):
            ingest(path, classes=[ClassLabel(id=0, name="known")])

    def test_integer_labels_resolved_against_class_ids(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [{"id": "a", "abstract": LONG, "label": 1}])
        dataset = ingest(
            path, classes=[ClassLabel(id=0, name="x"), ClassLabel(id=1, name="y")]
        ).dataset
        assert dataset.examples[0].label == 1

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text("", encoding="utf-8")
        with pytest.raises(IngestError):
            ingest(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(IngestError):
            ingest(tmp_path / "absent.jsonl")

    def test_missing_fields_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [{"id": "a", "label": "x"}])
        with pytest.raises(IngestError, match="abstract"):
            ingest(path)

    def test_unknown_format_rejected(self, tmp_path):
        path = tmp_path / "d.xml"
        path.write_text("<x/>", encoding="utf-8")
        with pytest.raises(IngestError, match="format"):
            ingest(path, format="xml")

    def test_csv_format(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text(
            "id,abstract,label\n" + f'a,"{LONG}",topic\n', encoding="utf-8"
        )
        report = ingest(path, format="csv")
        assert report.kept == 1


def toy_dataset(per_class=10, classes=3) -> Dataset:
    cls = tuple(ClassLabel(id=i, name=f"c{i}") for i in range(classes))
    examples = tuple(
        LabeledExample(id=f"{c}-{j}", abstract=LONG, label=c)
        for c in range(classes)
        for j in range(per_class)
    )
    return Dataset(classes=cls, examples=examples)


class TestSampleSplit:
    def test_counts_per_class(self):
        split = sample_split(toy_dataset(), shots=5, seed=1)
        assert len(split.train) == 15
        assert len(split.val) == 15
        for c in range(3):
            assert sum(ex.label == c for ex in split.train) == 5
            assert sum(ex.label == c for ex in split.val) == 5

    def test_same_seed_same_ids(self):
        a = sample_split(toy_dataset(), shots=3, seed=42)
        b = sample_split(toy_dataset(), shots=3, seed=42)
        assert [ex.id for ex in a.train] == [ex.id for ex in b.train]
        assert [ex.id for ex in a.val] == [ex.id for ex in b.val]

    def test_different_seed_differs(self):
        a = sample_split(toy_dataset(per_class=30), shots=5, seed=1)
        b = sample_split(toy_dataset(per_class=30), shots=5, seed=2)
        assert {ex.id for ex in a.train} != {ex.id for ex in b.train}

    def test_train_and_val_disjoint(self):
        split = sample_split(toy_dataset(), shots=5, seed=7)
        assert not {ex.id for ex in split.train} & {ex.id for ex in split.val}

    def test_class_too_small_names_it(self):
        with pytest.raises(IngestError, match="c0"):
            sample_split(toy_dataset(per_class=60), shots=50, seed=1)
        sample_split(toy_dataset(per_class=100), shots=50, seed=1)

    @settings(max_examples=30, deadline=None)
    @given(
        shots=st.integers(min_value=1, max_value=5),
        seed=st.integers(min_value=0, max_value=10_000),
    )
    def test_determinism_and_balance_property(self, shots, seed):
        dataset = toy_dataset(per_class=12)
        a = sample_split(dataset, shots, seed)
        b = sample_split(dataset, shots, seed)
        assert [ex.id for ex in a.train] == [ex.id for ex in b.train]
        assert not {ex.id for ex in a.train} & {ex.id for ex in a.val}
        for c in range(3):
            assert sum(ex.label == c for ex in a.train) == shots
            assert sum(ex.label == c for ex in a.val) == shots


class TestSupportSample:
    def test_deterministic_and_capped(self):
        dataset = toy_dataset(per_class=10)
        a = sample_support(dataset, 200, seed=1)
        b = sample_support(dataset, 200, seed=1)
        assert [ex.id for ex in a] == [ex.id for ex in b]
        assert len(a) == 30  # capped at dataset size

    def test_size_respected(self):
        dataset = toy_dataset(per_class=100)
        assert len(sample_support(dataset, 200, seed=3)) == 200


class TestEvaluate:
    def test_all_correct(self):
        assert evaluate([1, 2, 0], [1, 2, 0]) == 1.0

    def test_none_correct(self):
        assert evaluate([1, 1, 1], [0, 0, 0]) == 0.0

    def test_three_of_four(self):
        assert evaluate([1, 2, 3, 4], [1, 2, 3, 0]) == 0.75

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            evaluate([1], [1, 2])

    def test_permutation_invariance(self):
        rng = random.Random(0)
        preds = [rng.randrange(3) for _ in range(50)]
        gold = [rng.randrange(3) for _ in range(50)]
        base = evaluate(preds, gold)
        order = list(range(50))
        rng.shuffle(order)
        assert evaluate([preds[i] for i in order], [gold[i] for i in order]) == base
