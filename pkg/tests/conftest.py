"""Shared fixtures: the separable toy corpus, tiny backends, trained encoders."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable

import pytest

from verbkit.backend import TinyMaskedLM, build_vocab
from verbkit.data import Dataset, LabeledExample
from verbkit.nli import EncoderConfig, NLILabel, NLIPair, train_bi_encoder, train_cross_encoder
from verbkit.prompts import default_template
from verbkit.verbalizer import ClassLabel, LabelTerm, Source, add_terms, new_verbalizer

from .mock_kb import MockKB

TOY_CLASSES = [
    ("Alpha", ["truss", "girder"]),
    ("Beta", ["lens", "prism"]),
    ("Gamma Biology", ["enzyme", "protein"]),
]

NOISE_TERMS = ["zebra", "cloud"]


def make_toy_abstract(rng: random.Random, class_index: int, filler: list[str]) -> str:
    """Filler words with the class name and its related terms planted verbatim."""
    name, related = TOY_CLASSES[class_index]
    tokens = [rng.choice(filler) for _ in range(30)]
    for _ in range(3):
        for word in name.lower().split():
            tokens.insert(rng.randrange(len(tokens) + 1), word)
    for term in related:
        for _ in range(2):
            tokens.insert(rng.randrange(len(tokens) + 1), term)
    return " ".join(tokens)


@dataclass
class ToyWorld:
    classes: list[ClassLabel]
    train: Dataset
    test: Dataset
    raw_verbalizer: object
    vocab: list[str]
    make_backend: Callable[[], TinyMaskedLM]
    nli_pairs: list[NLIPair]
    related: dict[str, list[str]]


def build_toy_world(
    train_per_class: int = 40, test_per_class: int = 15, seed: int = 7, dim: int = 32
) -> ToyWorld:
    rng = random.Random(seed)
    filler = [f"w{i:02d}" for i in range(60)]
    classes = [ClassLabel(id=i, name=name) for i, (name, _) in enumerate(TOY_CLASSES)]
    template = default_template()

    def examples(count: int, tag: str) -> list[LabeledExample]:
        out = []
        for ci in range(len(TOY_CLASSES)):
            for j in range(count):
                out.append(
                    LabeledExample(
                        id=f"{tag}-{ci}-{j}",
                        abstract=make_toy_abstract(rng, ci, filler),
                        label=ci,
                    )
                )
        return out

    train = Dataset(classes=tuple(classes), examples=tuple(examples(train_per_class, "train")))
    test = Dataset(classes=tuple(classes), examples=tuple(examples(test_per_class, "test")))

    v = new_verbalizer(classes)
    for cls in classes:
        related = TOY_CLASSES[cls.id][1]
        v = add_terms(
            v,
            cls.id,
            [LabelTerm(text=t, kb_score=0.9, source=Source.RELATED_WORDS) for t in related]
            + [LabelTerm(text=t, kb_score=0.2, source=Source.RELATED_WORDS) for t in NOISE_TERMS],
        )

    all_texts = (
        [ex.abstract for ex in train.examples]
        + [ex.abstract for ex in test.examples]
        + [template.mask_prompt("")]
        + [c.name for c in classes]
        + [t.text for ts in v.terms.values() for t in ts]
    )
    vocab = build_vocab(all_texts)

    def make_backend() -> TinyMaskedLM:
        return TinyMaskedLM(vocab, dim=dim, hidden=64, seed=0)

    # Entailment pairs share a class's vocabulary; contradictions cross classes.
    phrases = {
        name.lower(): [name.lower()] + related for name, related in TOY_CLASSES
    }
    pairs: list[NLIPair] = []
    for words in phrases.values():
        for a in words:
            for b in words:
                if a != b:
                    pairs.append(
                        NLIPair(
                            template.context_prompt(a),
                            template.context_prompt(b),
                            NLILabel.ENTAILMENT,
                        )
                    )
    names = list(phrases)
    for i, ni in enumerate(names):
        for nj in names[i + 1 :]:
            for a in phrases[ni]:
                for b in phrases[nj]:
                    pairs.append(
                        NLIPair(
                            template.context_prompt(a),
                            template.context_prompt(b),
                            NLILabel.CONTRADICTION,
                        )
                    )
    return ToyWorld(
        classes=classes,
        train=train,
        test=test,
        raw_verbalizer=v,
        vocab=vocab,
        make_backend=make_backend,
        nli_pairs=pairs,
        related={name: rel for name, rel in TOY_CLASSES},
    )


TOY_ENCODER_CONFIG = EncoderConfig(dim=24, hidden=48, epochs=40, learning_rate=0.02, batch_size=8, seed=3)


@pytest.fixture(scope="session")
def toy() -> ToyWorld:
    return build_toy_world()


@pytest.fixture(scope="session")
def toy_encoders(toy):
    be = train_bi_encoder(toy.nli_pairs, TOY_ENCODER_CONFIG)
    ce = train_cross_encoder(toy.nli_pairs, TOY_ENCODER_CONFIG)
    return be, ce


@pytest.fixture()
def mock_kb():
    server = MockKB()
    yield server
    server.close()


@pytest.fixture()
def template():
    return default_template()
