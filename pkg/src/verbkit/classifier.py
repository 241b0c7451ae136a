"""Cloze classification with a weighted verbalizer.

The mask hidden state is projected onto each label term's embedding (the mean
of its token embeddings), scaled by the term's semantic weight, and reduced
per class into a logit; exp-normalization over class logits gives the class
distribution. Calibration rescales each term's bare-prompt probability by its
prior over a support set and prunes low scorers. The soft variant replaces
per-term projection with one trainable vector per class.
"""

from __future__ import annotations

import copy
import logging
import random
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .backend import MLMBackend, parameter_hash
from .data import FewShotSplit, LabeledExample
from .errors import BackendError, TrainingError, VerbalizerError
from .prompts import PromptTemplate, default_template
from .verbalizer import LabelTerm, Stage, StageFlag, Verbalizer, replace_terms

log = logging.getLogger(__name__)

AGGREGATIONS = ("mean", "max", "weighted_mean")

CALIBRATION_CUT = 0.5


def exp_normalize(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax along the last axis."""
    x = np.asarray(logits, dtype=np.float64)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class ClassScores:
    logits: tuple[float, ...]
    probabilities: tuple[float, ...]

    @property
    def predicted(self) -> int:
        """Argmax class id; ties go to the lowest id."""
        return int(np.argmax(self.logits))


def term_vector(backend: MLMBackend, term: LabelTerm | str) -> torch.Tensor:
    """Mean of the token embeddings of the term's tokens."""
    text = term.text if isinstance(term, LabelTerm) else term
    ids = backend.tokenize(text)
    if not ids:
        raise BackendError(f"term {text!r} tokenizes to zero tokens")
    return torch.stack([backend.token_embedding(i) for i in ids]).mean(dim=0)


class _TermIndex:
    """Token ids and weights per class, fixed for one (backend, verbalizer) pair."""

    def __init__(self, backend: MLMBackend, v: Verbalizer):
        self.class_ids = sorted(c.id for c in v.classes)
        self.token_ids: dict[int, list[list[int]]] = {}
        self.weights: dict[int, torch.Tensor] = {}
        for cid in self.class_ids:
            ids_per_term = []
            weights = []
            for term in v.terms[cid]:
                ids = backend.tokenize(term.text)
                if not ids:
                    raise BackendError(f"term {term.text!r} tokenizes to zero tokens")
                ids_per_term.append(ids)
                weights.append(1.0 if term.semantic_weight is None else term.semantic_weight)
            self.token_ids[cid] = ids_per_term
            self.weights[cid] = torch.tensor(weights, dtype=torch.get_default_dtype())


def _term_matrix(backend: MLMBackend, ids_per_term: list[list[int]]) -> torch.Tensor:
    return torch.stack(
        [torch.stack([backend.token_embedding(i) for i in ids]).mean(dim=0) for ids in ids_per_term]
    )


def _logits_tensor(
    backend: MLMBackend,
    index: _TermIndex,
    abstract: str,
    template: PromptTemplate,
    aggregation: str = "mean",
    use_weights: bool = True,
) -> torch.Tensor:
    """Differentiable class logits for one abstract."""
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"unknown aggregation {aggregation!r}; expected one of {AGGREGATIONS}")
    h = backend.mask_hidden(template.mask_prompt(abstract))
    logits = []
    for cid in index.class_ids:
        vectors = _term_matrix(backend, index.token_ids[cid])
        dots = vectors @ h
        w = index.weights[cid].to(dots.dtype)
        if not use_weights:
            w = torch.ones_like(w)
        scores = dots * w
        if aggregation == "mean":
            logits.append(scores.mean())
        elif aggregation == "max":
            logits.append(scores.max())
        else:
            logits.append(scores.sum() / w.sum())
    return torch.stack(logits)


def class_logits(
    backend: MLMBackend,
    v: Verbalizer,
    abstract: str,
    template: PromptTemplate | None = None,
    aggregation: str = "mean",
    use_weights: bool = True,
) -> ClassScores:
    """Class logits and exp-normalized probabilities for one abstract."""
    if not abstract.strip():
        raise ValueError("abstract must be non-empty")
    if v.stage is Stage.RAW:
        raise VerbalizerError("verbalizer must be filtered before classification")
    template = template or default_template()
    index = _TermIndex(backend, v)
    with torch.no_grad():
        logits = _logits_tensor(backend, index, abstract, template, aggregation, use_weights)
    logit_values = tuple(float(x) for x in logits)
    probs = exp_normalize(np.array(logit_values))
    return ClassScores(logits=logit_values, probabilities=tuple(float(p) for p in probs))


# -- calibration --------------------------------------------------------------


def calibration_keep_decisions(entries: list[tuple[float, float]], cut: float = CALIBRATION_CUT) -> list[bool]:
    """Keep decisions for one class given (probability, prior) per term.

    Ratios are normalized by the class maximum; a term survives only with a
    normalized score strictly above the cut.
    """
    ratios = [p / prior for p, prior in entries]
    top = max(ratios, default=0.0)
    if top <= 0.0:
        return [False] * len(ratios)
    return [r / top > cut for r in ratios]


@dataclass(frozen=True)
class CalibrationEntry:
    term: LabelTerm
    probability: float  # bare-prompt mask probability of the term
    prior: float  # mean mask probability over the support set

    @property
    def ratio(self) -> float:
        return self.probability / self.prior


def _vocab_probabilities(backend: MLMBackend, prompt: str) -> np.ndarray:
    logits = backend.mask_logits(prompt).detach().cpu().numpy().astype(np.float64)
    return exp_normalize(logits)


def _term_probability(probs: np.ndarray, token_ids: list[int]) -> float:
    return float(probs[token_ids].mean())


def calibration_table(
    backend: MLMBackend,
    v: Verbalizer,
    support: list[LabeledExample],
    template: PromptTemplate | None = None,
) -> dict[int, list[CalibrationEntry]]:
    """Per-term bare-prompt probability and support prior.

    The numerator is the term's mask probability under the template alone; the
    prior averages its mask probability over the support examples. Terms the
    backend cannot tokenize are omitted (and later removed unless seeded).
    """
    template = template or default_template()
    with torch.no_grad():
        bare = _vocab_probabilities(backend, template.mask_prompt(""))
        support_probs = [
            _vocab_probabilities(backend, template.mask_prompt(ex.abstract)) for ex in support
        ]
    table: dict[int, list[CalibrationEntry]] = {}
    for cid in sorted(v.terms):
        entries = []
        for term in v.terms[cid]:
            ids = backend.tokenize(term.text)
            if not ids:
                continue
            prior = float(np.mean([_term_probability(p, ids) for p in support_probs]))
            entries.append(
                CalibrationEntry(
                    term=term, probability=_term_probability(bare, ids), prior=prior
                )
            )
        table[cid] = entries
    return table


def calibrate(
    backend: MLMBackend,
    v: Verbalizer,
    support: list[LabeledExample],
    template: PromptTemplate | None = None,
    cut: float = CALIBRATION_CUT,
) -> Verbalizer:
    """Prune terms whose prior-calibrated score falls at or below the cut.

    Seed terms are never removed. Terms with a zero prior (or that the backend
    cannot tokenize) are removed with a warning.
    """
    if v.stage is not Stage.FILTERED:
        raise VerbalizerError(f"calibration expects a filtered verbalizer, got {v.stage.value!r}")
    if not support:
        raise ValueError("calibration needs a non-empty support set")
    table = calibration_table(backend, v, support, template)
    new_terms: dict[int, tuple[LabelTerm, ...]] = {}
    for cid, terms in v.terms.items():
        entries = [e for e in table[cid] if e.prior > 0.0]
        decisions = {
            e.term.key(): keep
            for e, keep in zip(entries, calibration_keep_decisions([(e.probability, e.prior) for e in entries], cut))
        }
        kept = []
        for term in terms:
            decision = decisions.get(term.key())
            if term.is_seed:
                if decision is None:
                    log.warning("seed term %r kept despite an unusable calibration score", term.text)
                kept.append(replace(term, stage_flags=term.stage_flags | {StageFlag.CALIBRATED}))
                continue
            if decision is None:
                log.warning("term %r removed: zero prior or untokenizable", term.text)
                continue
            if decision:
                kept.append(replace(term, stage_flags=term.stage_flags | {StageFlag.CALIBRATED}))
        new_terms[cid] = tuple(kept)
    return replace_terms(v, new_terms)


# -- soft verbalizer -----------------------------------------------------------


class SoftVerbalizer(torch.nn.Module):
    """One trainable vector per class, aggregated from weighted term vectors."""

    def __init__(self, vectors: torch.Tensor, class_ids: list[int]):
        super().__init__()
        self.vectors = torch.nn.Parameter(vectors)
        self.class_ids = list(class_ids)

    @classmethod
    def build(cls, backend: MLMBackend, v: Verbalizer) -> "SoftVerbalizer":
        if v.stage is Stage.RAW:
            raise VerbalizerError("soft verbalizer needs a filtered verbalizer")
        rows = []
        class_ids = sorted(c.id for c in v.classes)
        with torch.no_grad():
            for cid in class_ids:
                acc = None
                total = 0.0
                for term in v.terms[cid]:
                    w = 1.0 if term.semantic_weight is None else term.semantic_weight
                    vec = term_vector(backend, term) * w
                    acc = vec if acc is None else acc + vec
                    total += w
                rows.append(acc / total)
        return cls(torch.stack(rows), class_ids)

    def logits_tensor(self, h: torch.Tensor) -> torch.Tensor:
        return self.vectors.to(h.dtype) @ h


def soft_class_logits(
    backend: MLMBackend,
    soft: SoftVerbalizer,
    abstract: str,
    template: PromptTemplate | None = None,
) -> ClassScores:
    if not abstract.strip():
        raise ValueError("abstract must be non-empty")
    template = template or default_template()
    with torch.no_grad():
        h = backend.mask_hidden(template.mask_prompt(abstract))
        logits = soft.logits_tensor(h)
    logit_values = tuple(float(x) for x in logits)
    probs = exp_normalize(np.array(logit_values))
    return ClassScores(logits=logit_values, probabilities=tuple(float(p) for p in probs))


# -- tuning ---------------------------------------------------------------------


@dataclass(frozen=True)
class TuneConfig:
    epochs: int = 5
    learning_rate: float = 3e-5
    batch_size: int = 5
    aggregation: str = "mean"
    use_weights: bool = True
    freeze_backend: bool = False
    seed: int = 1


@dataclass
class TuneResult:
    best_epoch: int
    best_val_accuracy: float
    history: list[dict] = field(default_factory=list)


def example_loss(
    backend: MLMBackend,
    index: _TermIndex,
    example: LabeledExample,
    template: PromptTemplate,
    config: TuneConfig,
    soft: SoftVerbalizer | None = None,
) -> torch.Tensor:
    """Cross-entropy of the class distribution against the gold label."""
    if soft is None:
        logits = _logits_tensor(
            backend, index, example.abstract, template, config.aggregation, config.use_weights
        )
    else:
        logits = soft.logits_tensor(backend.mask_hidden(template.mask_prompt(example.abstract)))
    return torch.nn.functional.cross_entropy(
        logits.unsqueeze(0), torch.tensor([example.label])
    )


def _predict(backend, index, example, template, config, soft) -> int:
    with torch.no_grad():
        if soft is None:
            logits = _logits_tensor(
                backend, index, example.abstract, template, config.aggregation, config.use_weights
            )
        else:
            logits = soft.logits_tensor(backend.mask_hidden(template.mask_prompt(example.abstract)))
    return int(torch.argmax(logits))


def fine_tune(
    backend: MLMBackend,
    v: Verbalizer,
    split: FewShotSplit,
    config: TuneConfig | None = None,
    template: PromptTemplate | None = None,
    soft: SoftVerbalizer | None = None,
) -> TuneResult:
    """Tune the backend (and soft vectors) on a few-shot split.

    The checkpoint with the best validation accuracy wins; ties go to the
    earliest epoch. Deterministic for a fixed seed on CPU.
    """
    if not split.train:
        raise TrainingError("empty training split")
    config = config or TuneConfig()
    template = template or default_template()
    index = _TermIndex(backend, v)
    rng = random.Random(config.seed)
    torch.manual_seed(config.seed)

    params: list[torch.nn.Parameter] = []
    if not (soft is not None and config.freeze_backend):
        params.extend(backend.parameters())
    if soft is not None:
        params.extend(soft.parameters())
    opt = torch.optim.Adam(params, lr=config.learning_rate)

    def snapshot():
        state = {"backend": copy.deepcopy(backend.state_dict())}
        if soft is not None:
            state["soft"] = copy.deepcopy(soft.state_dict())
        return state

    def val_accuracy() -> float:
        backend.eval()
        if not split.val:
            return 0.0
        correct = sum(
            _predict(backend, index, ex, template, config, soft) == ex.label for ex in split.val
        )
        return correct / len(split.val)

    if config.epochs == 0:
        return TuneResult(best_epoch=0, best_val_accuracy=val_accuracy())

    best_state = None
    best = TuneResult(best_epoch=0, best_val_accuracy=-1.0)
    result = TuneResult(best_epoch=0, best_val_accuracy=-1.0)
    train_examples = list(split.train)
    for epoch in range(1, config.epochs + 1):
        backend.train()
        order = list(range(len(train_examples)))
        rng.shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [train_examples[i] for i in order[start : start + config.batch_size]]
            losses = [example_loss(backend, index, ex, template, config, soft) for ex in batch]
            loss = torch.stack(losses).mean()
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"loss diverged (non-finite) at epoch {epoch}, batch starting {start}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach()) * len(batch)
        val_acc = val_accuracy()
        result.history.append(
            {"epoch": epoch, "train_loss": epoch_loss / len(train_examples), "val_accuracy": val_acc}
        )
        if val_acc > best.best_val_accuracy:
            best = TuneResult(best_epoch=epoch, best_val_accuracy=val_acc)
            best_state = snapshot()
    if best_state is not None:
        backend.load_state_dict(best_state["backend"])
        if soft is not None:
            soft.load_state_dict(best_state["soft"])
    result.best_epoch = best.best_epoch
    result.best_val_accuracy = best.best_val_accuracy
    backend.eval()
    return result


def zero_shot_classify(
    backend: MLMBackend,
    v: Verbalizer,
    abstract: str,
    template: PromptTemplate | None = None,
    aggregation: str = "mean",
    use_weights: bool = True,
    verify_purity: bool = True,
) -> int:
    """Predict without any parameter update; asserts the checkpoint is untouched."""
    before = parameter_hash(backend) if verify_purity else None
    backend.eval()
    scores = class_logits(backend, v, abstract, template, aggregation, use_weights)
    if verify_purity and parameter_hash(backend) != before:
        raise BackendError("backend parameters changed during zero-shot classification")
    return scores.predicted


class Predictor:
    """Reusable inference handle: the term index is built once."""

    def __init__(
        self,
        backend: MLMBackend,
        v: Verbalizer,
        template: PromptTemplate | None = None,
        aggregation: str = "mean",
        use_weights: bool = True,
        soft: SoftVerbalizer | None = None,
    ):
        if v.stage is Stage.RAW:
            raise VerbalizerError("verbalizer must be filtered before classification")
        self.backend = backend
        self.template = template or default_template()
        self.aggregation = aggregation
        self.use_weights = use_weights
        self.soft = soft
        self.index = _TermIndex(backend, v)

    def scores(self, abstract: str) -> ClassScores:
        if not abstract.strip():
            raise ValueError("abstract must be non-empty")
        with torch.no_grad():
            if self.soft is None:
                logits = _logits_tensor(
                    self.backend, self.index, abstract, self.template,
                    self.aggregation, self.use_weights,
                )
            else:
                h = self.backend.mask_hidden(self.template.mask_prompt(abstract))
                logits = self.soft.logits_tensor(h)
        logit_values = tuple(float(x) for x in logits)
        probs = exp_normalize(np.array(logit_values))
        return ClassScores(logits=logit_values, probabilities=tuple(float(p) for p in probs))

    def predict(self, abstract: str) -> int:
        return self.scores(abstract).predicted
