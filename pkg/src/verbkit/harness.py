"""Few-shot and zero-shot evaluation protocol with per-seed aggregation."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field, replace
from typing import Callable

from .classifier import Predictor, SoftVerbalizer, TuneConfig, calibrate, fine_tune
from .data import Dataset, evaluate, sample_split, sample_support
from .errors import ConfigError
from .prompts import PromptTemplate, default_template
from .verbalizer import Stage, Verbalizer


@dataclass(frozen=True)
class RunReport:
    """Accuracies for one shot count across seeds; shots is None for zero-shot."""

    label: str
    shots: int | None
    seeds: tuple[int, ...]
    accuracies: tuple[float, ...]
    mean: float
    std: float

    @classmethod
    def from_accuracies(
        cls, label: str, shots: int | None, seeds: list[int], accuracies: list[float]
    ) -> "RunReport":
        mean = statistics.fmean(accuracies)
        std = statistics.stdev(accuracies) if len(accuracies) > 1 else 0.0
        return cls(
            label=label,
            shots=shots,
            seeds=tuple(seeds),
            accuracies=tuple(accuracies),
            mean=mean,
            std=std,
        )

    def is_consistent(self, tol: float = 1e-9) -> bool:
        """Stored mean/std match a recomputation from the per-seed list."""
        mean = statistics.fmean(self.accuracies)
        std = statistics.stdev(self.accuracies) if len(self.accuracies) > 1 else 0.0
        return abs(mean - self.mean) <= tol and abs(std - self.std) <= tol

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "shots": self.shots,
            "seeds": list(self.seeds),
            "accuracies": list(self.accuracies),
            "mean": self.mean,
            "std": self.std,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunReport":
        return cls(
            label=doc["label"],
            shots=doc["shots"],
            seeds=tuple(doc["seeds"]),
            accuracies=tuple(doc["accuracies"]),
            mean=doc["mean"],
            std=doc["std"],
        )


@dataclass(frozen=True)
class ProtocolConfig:
    label: str = "weighted"
    shots: tuple[int, ...] = (1, 5, 10, 20, 50)
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    zero_shot: bool = False
    use_weights: bool = True
    use_calibration: bool = True
    soft: bool = False
    aggregation: str = "mean"
    support_size: int = 200
    tune: TuneConfig = field(default_factory=TuneConfig)


def _predict_all(predictor: Predictor, examples) -> list[int]:
    return [predictor.predict(ex.abstract) for ex in examples]


def run_protocol(
    train_pool: Dataset,
    test: Dataset,
    v: Verbalizer,
    backend_factory: Callable[[], object],
    config: ProtocolConfig,
    template: PromptTemplate | None = None,
    on_run: Callable[[dict], None] | None = None,
) -> list[RunReport]:
    """Run the few-shot protocol (or the zero-shot one when configured).

    ``backend_factory`` must return a fresh copy of the same pretrained
    backend on every call; tuning owns its copy exclusively. ``on_run`` sees
    each (shots, seed, accuracy) record as soon as it exists, so partial
    results survive an abort.
    """
    template = template or default_template()
    if config.zero_shot:
        return [run_zero_shot(train_pool, test, v, backend_factory, config, template, on_run)]

    gold = [ex.label for ex in test.examples]
    calibrated = v
    if config.use_calibration and v.stage is Stage.FILTERED:
        calibrated = calibrate(backend_factory(), v, list(train_pool.examples), template)
    reports = []
    for shots in config.shots:
        accuracies = []
        for seed in config.seeds:
            split = sample_split(train_pool, shots, seed)
            backend = backend_factory()
            soft = SoftVerbalizer.build(backend, calibrated) if config.soft else None
            tune_cfg = replace(
                config.tune,
                seed=seed,
                aggregation=config.aggregation,
                use_weights=config.use_weights,
            )
            tuned = fine_tune(backend, calibrated, split, tune_cfg, template, soft)
            predictor = Predictor(
                backend, calibrated, template, config.aggregation, config.use_weights, soft
            )
            accuracy = evaluate(_predict_all(predictor, test.examples), gold)
            accuracies.append(accuracy)
            if on_run is not None:
                on_run(
                    {
                        "label": config.label,
                        "shots": shots,
                        "seed": seed,
                        "accuracy": accuracy,
                        "best_epoch": tuned.best_epoch,
                        "val_accuracy": tuned.best_val_accuracy,
                        "train_ids": sorted(ex.id for ex in split.train),
                        "val_ids": sorted(ex.id for ex in split.val),
                    }
                )
        reports.append(RunReport.from_accuracies(config.label, shots, list(config.seeds), accuracies))
    return reports


def run_zero_shot(
    train_pool: Dataset,
    test: Dataset,
    v: Verbalizer,
    backend_factory: Callable[[], object],
    config: ProtocolConfig,
    template: PromptTemplate | None = None,
    on_run: Callable[[dict], None] | None = None,
) -> RunReport:
    """Zero-shot evaluation; seeds only vary the calibration support sample."""
    template = template or default_template()
    backend = backend_factory()
    backend.eval()
    gold = [ex.label for ex in test.examples]
    accuracies = []
    for seed in config.seeds:
        v_run = v
        if config.use_calibration and v.stage is Stage.FILTERED:
            support = sample_support(train_pool, config.support_size, seed)
            v_run = calibrate(backend, v, list(support), template)
        predictor = Predictor(backend, v_run, template, config.aggregation, config.use_weights)
        accuracy = evaluate(_predict_all(predictor, test.examples), gold)
        accuracies.append(accuracy)
        if on_run is not None:
            on_run({"label": config.label, "shots": None, "seed": seed, "accuracy": accuracy})
    return RunReport.from_accuracies(config.label, None, list(config.seeds), accuracies)


def format_table(reports: list[RunReport]) -> str:
    """Shots down the rows, one method per column, 'mean ± std' cells."""
    if not reports:
        raise ConfigError("no run reports to tabulate")
    labels = sorted({r.label for r in reports})
    shot_rows = sorted({r.shots for r in reports if r.shots is not None})
    rows: list[tuple[str, dict[str, RunReport]]] = []
    for shots in shot_rows:
        rows.append((str(shots), {r.label: r for r in reports if r.shots == shots}))
    if any(r.shots is None for r in reports):
        rows.append(("zero-shot", {r.label: r for r in reports if r.shots is None}))

    header = ["shots"] + labels
    lines = []
    widths = [max(len(header[0]), *(len(name) for name, _ in rows))]
    cells: list[list[str]] = []
    for name, by_label in rows:
        row = [name]
        for label in labels:
            r = by_label.get(label)
            row.append(f"{100 * r.mean:.2f} ± {100 * r.std:.2f}" if r else "-")
        cells.append(row)
    for i, label in enumerate(labels, start=1):
        widths.append(max(len(label), *(len(row[i]) for row in cells)))
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for row in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)
