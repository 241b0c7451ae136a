"""Semantic filtering of retrieved label terms.

Each term is dropped into the prompt template and compared against the
class's own prompt: the bi-encoder cosine must clear its threshold and the
cross-encoder score must fall below its threshold (lower re-rank scores mean
higher relevance). Survivors take the bi-encoder cosine as their semantic
weight. Seed terms bypass the filter with weight 1.0.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import ConfigError, FilterError
from .nli import BiEncoder, CrossEncoder
from .prompts import PromptTemplate, default_template
from .verbalizer import ClassLabel, LabelTerm, Stage, StageFlag, Verbalizer, replace_terms


@dataclass(frozen=True)
class FilterConfig:
    mu_be: float = 0.5
    mu_ce: float = 0.1
    ce_keep_below: bool = True

    def __post_init__(self):
        if not -1.0 <= self.mu_be <= 1.0:
            raise ConfigError(f"mu_be {self.mu_be} outside [-1, 1]")
        if not 0.0 <= self.mu_ce <= 1.0:
            raise ConfigError(f"mu_ce {self.mu_ce} outside [0, 1]")


@dataclass(frozen=True)
class FilterScores:
    term: LabelTerm
    be_score: float
    ce_score: float


def keep_rule(be_score: float, ce_score: float, config: FilterConfig) -> bool:
    """Strict inequalities on both sides; scores at a threshold are dropped."""
    if config.ce_keep_below:
        ce_ok = ce_score < config.mu_ce
    else:
        ce_ok = ce_score > config.mu_ce
    return be_score > config.mu_be and ce_ok


def build_filter_prompts(
    cls: ClassLabel, term: LabelTerm, template: PromptTemplate
) -> tuple[str, str]:
    """The (query, candidate) sentence pair scored by the encoders."""
    return template.context_prompt(cls.query_text), template.context_prompt(term.text)


def score_terms(
    v: Verbalizer,
    be: BiEncoder,
    ce: CrossEncoder,
    template: PromptTemplate | None = None,
) -> dict[int, list[FilterScores]]:
    """Encoder scores for every retrieved (non-seed) term, per class."""
    template = template or default_template()
    scored: dict[int, list[FilterScores]] = {}
    for cls in sorted(v.classes, key=lambda c: c.id):
        query = template.context_prompt(cls.query_text)
        q_emb = be.encode(query)
        rows = []
        for term in v.terms[cls.id]:
            if term.is_seed:
                continue
            candidate = template.context_prompt(term.text)
            be_score = float(q_emb @ be.encode(candidate))
            ce_score = ce.score(query, candidate)
            rows.append(FilterScores(term=term, be_score=be_score, ce_score=ce_score))
        scored[cls.id] = rows
    return scored


def _filtered_seed(term: LabelTerm) -> LabelTerm:
    return replace(
        term, semantic_weight=1.0, stage_flags=term.stage_flags | {StageFlag.FILTERED}
    )


def apply_filter(
    v: Verbalizer, scored: dict[int, list[FilterScores]], config: FilterConfig
) -> Verbalizer:
    """Prune by the keep rule and assign surviving weights."""
    new_terms: dict[int, tuple[LabelTerm, ...]] = {}
    for cid, terms in v.terms.items():
        by_key = {s.term.key(): s for s in scored.get(cid, [])}
        kept: list[LabelTerm] = []
        for term in terms:
            if term.is_seed:
                kept.append(_filtered_seed(term))
                continue
            s = by_key.get(term.key())
            if s is None or not keep_rule(s.be_score, s.ce_score, config):
                continue
            weight = min(s.be_score, 1.0)
            if not 0.0 < weight:
                raise FilterError(
                    f"term {term.text!r} kept with non-positive similarity {s.be_score}; "
                    "adjust mu_be"
                )
            kept.append(
                replace(
                    term,
                    semantic_weight=weight,
                    stage_flags=term.stage_flags | {StageFlag.FILTERED},
                )
            )
        new_terms[cid] = tuple(kept)
    return replace_terms(v, new_terms)


def semantic_filter(
    v: Verbalizer,
    be: BiEncoder,
    ce: CrossEncoder,
    config: FilterConfig | None = None,
    template: PromptTemplate | None = None,
) -> Verbalizer:
    """Score every retrieved term and prune; output stage is 'filtered'."""
    if v.stage is not Stage.RAW:
        raise FilterError(f"semantic filter expects a raw verbalizer, got stage {v.stage.value!r}")
    config = config or FilterConfig()
    return apply_filter(v, score_terms(v, be, ce, template), config)


def passthrough_filter(v: Verbalizer) -> Verbalizer:
    """Mark every term filtered with weight 1.0 without pruning.

    Used when the semantic filter is ablated: downstream stages require
    weighted, stage-marked terms, but nothing is removed or re-weighted.
    """
    if v.stage is not Stage.RAW:
        raise FilterError(f"passthrough filter expects a raw verbalizer, got {v.stage.value!r}")
    new_terms = {
        cid: tuple(
            replace(t, semantic_weight=1.0, stage_flags=t.stage_flags | {StageFlag.FILTERED})
            for t in terms
        )
        for cid, terms in v.terms.items()
    }
    return replace_terms(v, new_terms)
