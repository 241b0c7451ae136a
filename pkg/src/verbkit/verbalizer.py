"""Verbalizer data model: classes, label terms, weights, and stage transitions.

A verbalizer maps each class to an ordered set of label terms. Terms move
through three stages: raw (as retrieved), filtered (scored and pruned by the
semantic filter), and calibrated (pruned again against model priors). Values
are immutable; every mutating operation returns a new verbalizer.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace

from .errors import SerdeError, VerbalizerError


class Source(str, enum.Enum):
    """Where a label term came from."""

    RELATED_WORDS = "related_words"
    REVERSE_DICTIONARY = "reverse_dictionary"
    CLASS_NAME_SEED = "class_name_seed"


class StageFlag(str, enum.Enum):
    RETRIEVED = "retrieved"
    FILTERED = "filtered"
    CALIBRATED = "calibrated"


class Stage(str, enum.Enum):
    RAW = "raw"
    FILTERED = "filtered"
    CALIBRATED = "calibrated"


_STAGE_ORDER = {Stage.RAW: 0, Stage.FILTERED: 1, Stage.CALIBRATED: 2}


@dataclass(frozen=True)
class ClassLabel:
    """A classification target: dense integer id plus a human-readable name."""

    id: int
    name: str
    query_text: str = ""

    def __post_init__(self):
        if not self.name.strip():
            raise VerbalizerError(f"class {self.id}: name must be non-empty")
        if not self.query_text:
            object.__setattr__(self, "query_text", self.name.lower())


@dataclass(frozen=True)
class LabelTerm:
    """A phrase mapped to a class, with its KB score and semantic weight.

    ``semantic_weight`` is assigned by the semantic filter and must be present
    exactly when the ``filtered`` flag is. Seed terms carry weight 1.0 once
    filtered.
    """

    text: str
    kb_score: float
    source: Source
    semantic_weight: float | None = None
    stage_flags: frozenset[StageFlag] = frozenset({StageFlag.RETRIEVED})

    def __post_init__(self):
        object.__setattr__(self, "text", self.text.strip())
        if not self.text:
            raise VerbalizerError("label term text must be non-empty after trimming")
        if not math.isfinite(self.kb_score):
            raise VerbalizerError(f"term {self.text!r}: kb_score must be finite")
        filtered = StageFlag.FILTERED in self.stage_flags
        if filtered != (self.semantic_weight is not None):
            raise VerbalizerError(
                f"term {self.text!r}: semantic_weight must be set iff the 'filtered' flag is present"
            )
        if self.semantic_weight is not None and not (0.0 < self.semantic_weight <= 1.0):
            raise VerbalizerError(
                f"term {self.text!r}: semantic_weight {self.semantic_weight} outside (0, 1]"
            )

    @property
    def is_seed(self) -> bool:
        return self.source is Source.CLASS_NAME_SEED

    @property
    def stage(self) -> Stage:
        if StageFlag.CALIBRATED in self.stage_flags:
            return Stage.CALIBRATED
        if StageFlag.FILTERED in self.stage_flags:
            return Stage.FILTERED
        return Stage.RAW

    def key(self) -> str:
        """Case-insensitive identity used for de-duplication."""
        return self.text.lower()


def seed_term(cls: ClassLabel) -> LabelTerm:
    # The lowercase class name is always present so every class stays scorable.
    return LabelTerm(text=cls.name.lower(), kb_score=1.0, source=Source.CLASS_NAME_SEED)


@dataclass(frozen=True)
class Verbalizer:
    """Mapping from class ids to ordered, de-duplicated label terms."""

    classes: tuple[ClassLabel, ...]
    terms: dict[int, tuple[LabelTerm, ...]] = field(default_factory=dict)

    def __post_init__(self):
        ids = [c.id for c in self.classes]
        if not ids:
            raise VerbalizerError("verbalizer needs at least one class")
        if len(set(ids)) != len(ids):
            raise VerbalizerError("duplicate class ids")
        if sorted(ids) != list(range(len(ids))):
            raise VerbalizerError(f"class ids must be dense 0..{len(ids) - 1}, got {sorted(ids)}")
        if set(self.terms) != set(ids):
            raise VerbalizerError("terms mapping must cover exactly the class ids")
        for cid, terms in self.terms.items():
            if not terms:
                raise VerbalizerError(f"class {cid} has no terms")
            if not any(t.is_seed for t in terms):
                raise VerbalizerError(f"class {cid} lost its seed term")
            keys = [t.key() for t in terms]
            if len(set(keys)) != len(keys):
                raise VerbalizerError(f"class {cid} has duplicate term texts")
            for t in terms:
                # Retained terms sit above the retrieval threshold of zero.
                if t.kb_score <= 0.0:
                    raise VerbalizerError(f"class {cid}: term {t.text!r} has kb_score <= 0")

    @property
    def stage(self) -> Stage:
        stages = [t.stage for ts in self.terms.values() for t in ts]
        return min(stages, key=_STAGE_ORDER.__getitem__)

    def class_by_id(self, class_id: int) -> ClassLabel:
        for c in self.classes:
            if c.id == class_id:
                return c
        raise VerbalizerError(f"unknown class id {class_id}")

    def num_classes(self) -> int:
        return len(self.classes)

    def term_count(self) -> int:
        return sum(len(ts) for ts in self.terms.values())


def new_verbalizer(classes: list[ClassLabel]) -> Verbalizer:
    """Create a raw verbalizer seeded with each class's lowercase name."""
    cls = tuple(classes)
    return Verbalizer(classes=cls, terms={c.id: (seed_term(c),) for c in cls})


def add_terms(v: Verbalizer, class_id: int, terms: list[LabelTerm]) -> Verbalizer:
    """Append terms to one class.

    Case-insensitive de-duplication keeps the first occurrence; terms with a
    non-positive KB score are dropped (the retrieval threshold is zero).
    """
    if class_id not in v.terms:
        raise VerbalizerError(f"unknown class id {class_id}")
    existing = list(v.terms[class_id])
    seen = {t.key() for t in existing}
    for term in terms:
        if term.kb_score <= 0:
            continue
        if term.key() in seen:
            continue
        seen.add(term.key())
        existing.append(term)
    new_terms = dict(v.terms)
    new_terms[class_id] = tuple(existing)
    return replace(v, terms=new_terms)


def replace_terms(v: Verbalizer, terms: dict[int, tuple[LabelTerm, ...]]) -> Verbalizer:
    """Swap the full term mapping (stage transitions use this)."""
    return replace(v, terms=terms)


def cross_class_duplicates(v: Verbalizer) -> dict[str, list[int]]:
    """Report term texts that appear under more than one class."""
    owners: dict[str, list[int]] = {}
    for cid in sorted(v.terms):
        for t in v.terms[cid]:
            owners.setdefault(t.key(), []).append(cid)
    return {text: cids for text, cids in owners.items() if len(cids) > 1}


# -- serialization ----------------------------------------------------------
#
# One JSON document, UTF-8, keys sorted. Scores are stored as decimal strings
# (shortest round-trip repr) so serialize/deserialize is bit-exact.


def _fmt(x: float) -> str:
    return repr(float(x))


def _term_to_dict(t: LabelTerm) -> dict:
    return {
        "text": t.text,
        "kb_score": _fmt(t.kb_score),
        "semantic_weight": None if t.semantic_weight is None else _fmt(t.semantic_weight),
        "source": t.source.value,
        "stage_flags": sorted(f.value for f in t.stage_flags),
    }


def to_json_dict(v: Verbalizer) -> dict:
    classes = []
    for c in sorted(v.classes, key=lambda c: c.id):
        entry = {"id": c.id, "name": c.name}
        if c.query_text != c.name.lower():
            entry["query_text"] = c.query_text
        classes.append(entry)
    return {
        "stage": v.stage.value,
        "classes": classes,
        "terms": {str(cid): [_term_to_dict(t) for t in v.terms[cid]] for cid in sorted(v.terms)},
    }


def serialize(v: Verbalizer) -> bytes:
    return json.dumps(to_json_dict(v), sort_keys=True, ensure_ascii=False, indent=1).encode("utf-8")


def _parse_term(record: dict, where: str) -> LabelTerm:
    try:
        flags = frozenset(StageFlag(f) for f in record["stage_flags"])
    except ValueError as e:
        raise SerdeError(f"{where}: unknown stage flag ({e})") from e
    except (KeyError, TypeError) as e:
        raise SerdeError(f"{where}: missing or malformed stage_flags") from e
    try:
        weight = record["semantic_weight"]
        return LabelTerm(
            text=record["text"],
            kb_score=float(record["kb_score"]),
            semantic_weight=None if weight is None else float(weight),
            source=Source(record["source"]),
            stage_flags=flags,
        )
    except SerdeError:
        raise
    except (KeyError, TypeError, ValueError, VerbalizerError) as e:
        raise SerdeError(f"{where}: {e}") from e


def from_json_dict(doc: dict) -> Verbalizer:
    if not isinstance(doc, dict):
        raise SerdeError("top-level document must be a JSON object")
    try:
        raw_classes = doc["classes"]
        raw_terms = doc["terms"]
        declared_stage = Stage(doc["stage"])
    except (KeyError, TypeError, ValueError) as e:
        raise SerdeError(f"document header: {e}") from e
    classes = []
    for i, entry in enumerate(raw_classes):
        try:
            classes.append(
                ClassLabel(
                    id=int(entry["id"]),
                    name=entry["name"],
                    query_text=entry.get("query_text", ""),
                )
            )
        except (KeyError, TypeError, ValueError, VerbalizerError) as e:
            raise SerdeError(f"classes[{i}]: {e}") from e
    terms: dict[int, tuple[LabelTerm, ...]] = {}
    for cid_str, records in raw_terms.items():
        try:
            cid = int(cid_str)
        except ValueError as e:
            raise SerdeError(f"terms key {cid_str!r} is not a class id") from e
        terms[cid] = tuple(
            _parse_term(rec, f"terms[{cid_str}][{i}]") for i, rec in enumerate(records)
        )
    try:
        v = Verbalizer(classes=tuple(classes), terms=terms)
    except VerbalizerError as e:
        raise SerdeError(str(e)) from e
    if v.stage is not declared_stage:
        raise SerdeError(
            f"declared stage {declared_stage.value!r} does not match term flags ({v.stage.value!r})"
        )
    return v


def deserialize(data: bytes) -> Verbalizer:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SerdeError(f"not valid UTF-8 JSON: {e}") from e
    return from_json_dict(doc)
