"""Verbalizer data model: construction, de-duplication, serialization."""

from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from verbkit.errors import SerdeError, VerbalizerError
from verbkit.verbalizer import (
    ClassLabel,
    LabelTerm,
    Source,
    Stage,
    StageFlag,
    Verbalizer,
    add_terms,
    cross_class_duplicates,
    deserialize,
    new_verbalizer,
    serialize,
)


def classes(*names: str) -> list[ClassLabel]:
    return [ClassLabel(id=i, name=n) for i, n in enumerate(names)]


class TestConstruction:
    def test_seeds_each_class_with_lowercase_name(self):
        v = new_verbalizer(classes("Cryptography", "Databases"))
        assert [t.text for t in v.terms[0]] == ["cryptography"]
        assert [t.text for t in v.terms[1]] == ["databases"]
        assert all(t.kb_score == 1.0 and t.is_seed for ts in v.terms.values() for t in ts)
        assert v.stage is Stage.RAW

    def test_empty_class_list_rejected(self):
        with pytest.raises(VerbalizerError):
            new_verbalizer([])

    def test_fifty_three_classes_get_one_seed_each(self):
        v = new_verbalizer(classes(*[f"Topic {i:02d}" for i in range(53)]))
        assert v.num_classes() == 53
        assert all(len(v.terms[cid]) == 1 for cid in range(53))

    def test_duplicate_ids_rejected(self):
        with pytest.raises(VerbalizerError):
            new_verbalizer([ClassLabel(id=0, name="A"), ClassLabel(id=0, name="B")])

    def test_sparse_ids_rejected(self):
        with pytest.raises(VerbalizerError):
            new_verbalizer([ClassLabel(id=0, name="A"), ClassLabel(id=2, name="B")])

    def test_empty_name_rejected(self):
        with pytest.raises(VerbalizerError):
            ClassLabel(id=0, name="   ")

    def test_query_text_defaults_to_lowercase_name(self):
        assert ClassLabel(id=0, name="Gamma Biology").query_text == "gamma biology"
        assert ClassLabel(id=0, name="X", query_text="custom words").query_text == "custom words"


class TestLabelTerm:
    def test_text_trimmed_and_non_empty(self):
        assert LabelTerm("  ciphertext  ", 0.5, Source.RELATED_WORDS).text == "ciphertext"
        with pytest.raises(VerbalizerError):
            LabelTerm("   ", 0.5, Source.RELATED_WORDS)

    def test_kb_score_must_be_finite(self):
        for bad in (float("nan"), float("inf")):
            with pytest.raises(VerbalizerError):
                LabelTerm("x", bad, Source.RELATED_WORDS)
        LabelTerm("x", 0.0, Source.RELATED_WORDS)  # constructible, but never retained

    def test_weight_set_iff_filtered_flag(self):
        with pytest.raises(VerbalizerError):
            LabelTerm("x", 0.5, Source.RELATED_WORDS, semantic_weight=0.7)
        with pytest.raises(VerbalizerError):
            LabelTerm(
                "x", 0.5, Source.RELATED_WORDS,
                stage_flags=frozenset({StageFlag.RETRIEVED, StageFlag.FILTERED}),
            )
        term = LabelTerm(
            "x", 0.5, Source.RELATED_WORDS, semantic_weight=0.7,
            stage_flags=frozenset({StageFlag.RETRIEVED, StageFlag.FILTERED}),
        )
        assert term.stage is Stage.FILTERED

    def test_weight_range(self):
        flags = frozenset({StageFlag.RETRIEVED, StageFlag.FILTERED})
        for bad in (0.0, -0.5, 1.5):
            with pytest.raises(VerbalizerError):
                LabelTerm("x", 0.5, Source.RELATED_WORDS, semantic_weight=bad, stage_flags=flags)


class TestAddTerms:
    def test_case_insensitive_dedup_keeps_first(self):
        v = new_verbalizer(classes("Cryptography"))
        v = add_terms(v, 0, [
            LabelTerm("cryptanalysis", 0.8, Source.RELATED_WORDS),
            LabelTerm("Cryptanalysis", 0.7, Source.RELATED_WORDS),
        ])
        kept = [t for t in v.terms[0] if not t.is_seed]
        assert len(kept) == 1
        assert kept[0].kb_score == 0.8

    def test_zero_and_negative_score_terms_dropped(self):
        v = new_verbalizer(classes("Cryptography"))
        v2 = add_terms(v, 0, [
            LabelTerm("at-threshold", 0.0, Source.RELATED_WORDS),
            LabelTerm("below", -0.1, Source.RELATED_WORDS),
        ])
        assert v2.terms[0] == v.terms[0]
        assert len(add_terms(v, 0, [LabelTerm("ok", 1.0, Source.RELATED_WORDS)]).terms[0]) == 2

    def test_ten_distinct_terms_grow_count_by_ten(self):
        v = new_verbalizer(classes("Cryptography"))
        terms = [LabelTerm(f"term-{i}", 0.5, Source.RELATED_WORDS) for i in range(10)]
        assert len(add_terms(v, 0, terms).terms[0]) == 11

    def test_unknown_class_id_rejected(self):
        v = new_verbalizer(classes("Cryptography"))
        with pytest.raises(VerbalizerError):
            add_terms(v, 5, [LabelTerm("x", 0.5, Source.RELATED_WORDS)])

    def test_dedup_is_idempotent(self):
        v = new_verbalizer(classes("Cryptography"))
        batch = [
            LabelTerm("ciphertext", 0.5, Source.RELATED_WORDS),
            LabelTerm("keys", 0.4, Source.REVERSE_DICTIONARY),
        ]
        once = add_terms(v, 0, batch)
        twice = add_terms(once, 0, batch)
        assert once == twice

    def test_seed_never_duplicated(self):
        v = new_verbalizer(classes("Cryptography"))
        v = add_terms(v, 0, [LabelTerm("CRYPTOGRAPHY", 0.9, Source.RELATED_WORDS)])
        assert len(v.terms[0]) == 1

    def test_ordering_is_stable_insertion_order(self):
        v = new_verbalizer(classes("A"))
        names = [f"t{i}" for i in range(6)]
        v = add_terms(v, 0, [LabelTerm(n, 0.5, Source.RELATED_WORDS) for n in names])
        assert [t.text for t in v.terms[0][1:]] == names


class TestInvariants:
    def test_seed_loss_rejected(self):
        cls = classes("A")
        bare = (LabelTerm("other", 0.5, Source.RELATED_WORDS),)
        with pytest.raises(VerbalizerError):
            Verbalizer(classes=tuple(cls), terms={0: bare})

    def test_cross_class_duplicates_reported(self):
        v = new_verbalizer(classes("A", "B"))
        v = add_terms(v, 0, [LabelTerm("shared", 0.5, Source.RELATED_WORDS)])
        v = add_terms(v, 1, [LabelTerm("Shared", 0.4, Source.RELATED_WORDS)])
        assert cross_class_duplicates(v) == {"shared": [0, 1]}


text_strategy = st.text(
    alphabet=st.characters(whitelist_categories=("Ll", "Lu", "Nd"), min_codepoint=48, max_codepoint=122),
    min_size=1,
    max_size=12,
).filter(lambda s: s.strip())


@st.composite
def verbalizers(draw):
    n_classes = draw(st.integers(min_value=1, max_value=4))
    names = draw(
        st.lists(text_strategy, min_size=n_classes, max_size=n_classes, unique_by=str.lower)
    )
    v = new_verbalizer([ClassLabel(id=i, name=n) for i, n in enumerate(names)])
    for cid in range(n_classes):
        texts = draw(st.lists(text_strategy, max_size=5, unique_by=str.lower))
        terms = [
            LabelTerm(
                text=t,
                kb_score=draw(st.floats(min_value=0.01, max_value=10.0, allow_nan=False)),
                source=draw(st.sampled_from([Source.RELATED_WORDS, Source.REVERSE_DICTIONARY])),
            )
            for t in texts
        ]
        v = add_terms(v, cid, terms)
    return v


class TestSerialization:
    def test_round_trip_identity_simple(self):
        v = new_verbalizer(classes("Cryptography", "Databases"))
        v = add_terms(v, 0, [LabelTerm("ciphertext", 0.8125, Source.RELATED_WORDS)])
        assert deserialize(serialize(v)) == v

    @settings(max_examples=60, deadline=None)
    @given(verbalizers())
    def test_round_trip_identity_property(self, v):
        assert deserialize(serialize(v)) == v

    def test_round_trip_preserves_custom_query_text(self):
        v = new_verbalizer([ClassLabel(id=0, name="A", query_text="alpha topic")])
        assert deserialize(serialize(v)).classes[0].query_text == "alpha topic"

    def test_weights_survive_at_full_precision(self):
        weight = 0.1 + 0.2  # not exactly representable as 0.3
        term = LabelTerm(
            "x", kb_score=1 / 3, source=Source.RELATED_WORDS, semantic_weight=weight,
            stage_flags=frozenset({StageFlag.RETRIEVED, StageFlag.FILTERED}),
        )
        v = Verbalizer(
            classes=(ClassLabel(id=0, name="A"),),
            terms={0: (LabelTerm("a", 1.0, Source.CLASS_NAME_SEED, semantic_weight=1.0,
                                 stage_flags=frozenset({StageFlag.RETRIEVED, StageFlag.FILTERED})), term)},
        )
        back = deserialize(serialize(v))
        restored = back.terms[0][1]
        assert restored.semantic_weight == weight
        assert restored.kb_score == 1 / 3

    def test_keys_sorted_and_utf8(self):
        v = new_verbalizer(classes("Topic"))
        doc = json.loads(serialize(v).decode("utf-8"))
        assert list(doc) == sorted(doc)

    def test_truncated_input_is_a_parse_error(self):
        data = serialize(new_verbalizer(classes("A")))
        with pytest.raises(SerdeError):
            deserialize(data[: len(data) // 2])

    def test_unknown_stage_flag_is_a_parse_error_naming_record(self):
        doc = json.loads(serialize(new_verbalizer(classes("A"))))
        doc["terms"]["0"][0]["stage_flags"] = ["retrieved", "polished"]
        with pytest.raises(SerdeError, match=r"terms\[0\]\[0\]"):
            deserialize(json.dumps(doc).encode("utf-8"))

    def test_unknown_stage_value_is_a_parse_error(self):
        doc = json.loads(serialize(new_verbalizer(classes("A"))))
        doc["stage"] = "shiny"
        with pytest.raises(SerdeError):
            deserialize(json.dumps(doc).encode("utf-8"))

    def test_stage_mismatch_is_a_parse_error(self):
        doc = json.loads(serialize(new_verbalizer(classes("A"))))
        doc["stage"] = "calibrated"
        with pytest.raises(SerdeError, match="does not match"):
            deserialize(json.dumps(doc).encode("utf-8"))
