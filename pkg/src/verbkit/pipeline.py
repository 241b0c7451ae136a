"""Pipeline stages and the resumable orchestrator.

Every stage hashes its inputs and parameters into a manifest under the run
directory; re-running with unchanged inputs skips the stage. Stage functions
are plain callables so the service and CLI can run them individually.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import torch

from .backend import HFMaskedLM, TinyMaskedLM, build_vocab, load_backend, parameter_hash
from .classifier import (
    Predictor,
    SoftVerbalizer,
    TuneConfig,
    calibrate,
    fine_tune,
    zero_shot_classify,
)
from .config import PipelineConfig
from .data import Dataset, LabeledExample, evaluate, ingest, load_classes, sample_split
from .errors import ConfigError, IngestError, SerdeError, VerbkitError
from .filtering import FilterConfig, passthrough_filter, semantic_filter
from .harness import ProtocolConfig, RunReport, format_table, run_protocol
from .nli import (
    BiEncoder,
    CrossEncoder,
    EncoderConfig,
    binarize_pairs,
    load_encoder,
    load_raw_pairs,
    train_bi_encoder,
    train_cross_encoder,
)
from .prompts import template_by_name
from .retrieval import ClientConfig, KBClient, cached_retrieve
from .verbalizer import (
    LabelTerm,
    Source,
    Stage,
    Verbalizer,
    add_terms,
    cross_class_duplicates,
    deserialize,
    new_verbalizer,
    serialize,
)

log = logging.getLogger(__name__)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def load_verbalizer_file(path: str | Path) -> Verbalizer:
    p = Path(path)
    if not p.exists():
        raise SerdeError(f"verbalizer file not found: {p}")
    return deserialize(p.read_bytes())


def write_verbalizer_file(v: Verbalizer, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(serialize(v))


def load_support_examples(path: str | Path) -> list[LabeledExample]:
    """Support records need only an abstract; ids and labels are optional."""
    p = Path(path)
    if not p.exists():
        raise IngestError(f"support file not found: {p}")
    examples = []
    with open(p, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                abstract = rec["abstract"]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise IngestError(f"{p}:{line_no}: bad support record ({e})") from e
            examples.append(
                LabeledExample(
                    id=str(rec.get("id", line_no)), abstract=abstract, label=int(rec.get("label", 0))
                )
            )
    if not examples:
        raise IngestError(f"support file {p} holds no records")
    return examples


# -- backend construction ------------------------------------------------------


def vocab_texts(config: PipelineConfig, v: Verbalizer | None, datasets: list[Dataset]) -> list[str]:
    texts = [template_by_name(config.template).mask_prompt("")]
    if v is not None:
        texts.extend(c.name for c in v.classes)
        texts.extend(c.query_text for c in v.classes)
        texts.extend(t.text for ts in v.terms.values() for t in ts)
    for ds in datasets:
        texts.extend(ex.abstract for ex in ds.examples)
    return texts


def backend_factory(config: PipelineConfig, texts: list[str]) -> Callable[[], object]:
    """A zero-argument factory returning fresh, identical backend copies."""
    if config.backend == "tiny":
        vocab = build_vocab(texts)

        def make():
            return TinyMaskedLM(
                vocab,
                dim=config.backend_dim,
                hidden=config.backend_hidden,
                seed=config.backend_seed,
                max_length=config.max_length,
            )

        return make
    if config.backend == "hf":
        if not config.backend_model:
            raise ConfigError("backend = hf needs backend_model")
        return lambda: HFMaskedLM.from_pretrained(config.backend_model, max_length=config.max_length)
    path = Path(config.backend)
    if path.exists():
        return lambda: load_backend(path)
    raise ConfigError(f"backend {config.backend!r} is neither 'tiny', 'hf', nor a saved directory")


def _encoder_config(config: PipelineConfig) -> EncoderConfig:
    return EncoderConfig(
        dim=config.encoder_dim,
        hidden=config.encoder_hidden,
        epochs=config.encoder_epochs,
        learning_rate=config.encoder_lr,
        batch_size=config.encoder_batch,
        max_length=config.max_length,
        seed=config.encoder_seed,
    )


# -- stage implementations -----------------------------------------------------


def retrieve_stage(config: PipelineConfig, out_path: str | Path) -> dict:
    """Query both KBs per class (with cache and fallback) into a raw-terms file."""
    if not config.classes_path:
        raise ConfigError("retrieve needs classes_path")
    classes = load_classes(config.classes_path)
    client_config = ClientConfig(
        related_words_url=config.related_words_url,
        reverse_dictionary_url=config.reverse_dictionary_url,
        max_attempts=config.kb_max_attempts,
        backoff_start=config.kb_backoff,
        timeout=config.kb_timeout,
        max_in_flight=config.kb_max_in_flight,
        min_request_interval=config.kb_min_interval,
    )
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    counts: dict[str, int] = {}
    with KBClient(client_config) as client:
        for cls in sorted(classes, key=lambda c: c.id):
            if config.cache_dir:
                terms = cached_retrieve(client, cls, config.cache_dir)
            else:
                terms = client.retrieve_terms(cls)
            counts[cls.name] = len(terms)
            for term in terms:
                rows.append(
                    {
                        "class_id": cls.id,
                        "text": term.text,
                        "kb_score": term.kb_score,
                        "source": term.source.value,
                    }
                )
    tmp = out_path.with_suffix(out_path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
    tmp.replace(out_path)
    return {"classes": len(classes), "terms": len(rows), "per_class": counts, "out_path": str(out_path)}


def load_raw_terms(path: str | Path) -> dict[int, list[LabelTerm]]:
    p = Path(path)
    if not p.exists():
        raise IngestError(f"raw terms file not found: {p}")
    by_class: dict[int, list[LabelTerm]] = {}
    with open(p, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                term = LabelTerm(
                    text=rec["text"], kb_score=float(rec["kb_score"]), source=Source(rec["source"])
                )
                by_class.setdefault(int(rec["class_id"]), []).append(term)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, VerbkitError) as e:
                raise IngestError(f"{p}:{line_no}: bad raw term record ({e})") from e
    return by_class


def build_raw_verbalizer(classes, raw_terms: dict[int, list[LabelTerm]]) -> Verbalizer:
    v = new_verbalizer(classes)
    for cid in sorted(raw_terms):
        v = add_terms(v, cid, raw_terms[cid])
    return v


def filter_stage(config: PipelineConfig, raw_terms_path: str | Path, out_path: str | Path) -> dict:
    """Assemble the raw verbalizer and apply (or bypass) the semantic filter."""
    if not config.classes_path:
        raise ConfigError("filter needs classes_path")
    classes = load_classes(config.classes_path)
    raw = build_raw_verbalizer(classes, load_raw_terms(raw_terms_path))
    template = template_by_name(config.template)
    if config.use_filtering:
        if not config.be_dir or not config.ce_dir:
            raise ConfigError("filtering needs be_dir and ce_dir (or use_filtering = false)")
        be = BiEncoder.load(config.be_dir)
        ce = CrossEncoder.load(config.ce_dir)
        filter_config = FilterConfig(
            mu_be=config.mu_be, mu_ce=config.mu_ce, ce_keep_below=config.ce_keep_below
        )
        filtered = semantic_filter(raw, be, ce, filter_config, template)
    else:
        filtered = passthrough_filter(raw)
    write_verbalizer_file(filtered, out_path)
    duplicates = cross_class_duplicates(filtered)
    if duplicates:
        log.warning("terms retained under multiple classes: %s", sorted(duplicates))
    return {
        "raw_terms": raw.term_count(),
        "kept_terms": filtered.term_count(),
        "cross_class_duplicates": {k: v for k, v in sorted(duplicates.items())},
        "out_path": str(out_path),
    }


def calibrate_stage(config: PipelineConfig, verbalizer_path: str | Path, out_path: str | Path) -> dict:
    """Prune the filtered verbalizer against model priors over a support set."""
    v = load_verbalizer_file(verbalizer_path)
    if config.support_path:
        support = load_support_examples(config.support_path)
    elif config.dataset_path:
        classes = list(v.classes)
        support = list(ingest(config.dataset_path, classes=classes).dataset.examples)
    else:
        raise ConfigError("calibrate needs support_path or dataset_path")
    template = template_by_name(config.template)
    texts = [ex.abstract for ex in support] + vocab_texts(config, v, [])
    backend = backend_factory(config, texts)()
    calibrated = calibrate(backend, v, support, template, cut=config.calibration_cut)
    write_verbalizer_file(calibrated, out_path)
    return {
        "before": v.term_count(),
        "after": calibrated.term_count(),
        "support": len(support),
        "out_path": str(out_path),
    }


def train_nli_stage(config: PipelineConfig, kind: str, out_dir: str | Path) -> dict:
    """Binarize raw NLI pairs and fit one encoder."""
    if not config.pairs_path:
        raise ConfigError("train-nli needs pairs_path")
    pairs, dropped = binarize_pairs(load_raw_pairs(config.pairs_path))
    encoder_config = _encoder_config(config)
    if kind == "bi":
        encoder = train_bi_encoder(pairs, encoder_config)
    elif kind == "cross":
        encoder = train_cross_encoder(pairs, encoder_config)
    else:
        raise ConfigError(f"unknown encoder kind {kind!r} (expected 'bi' or 'cross')")
    encoder.save(out_dir)
    return {"kind": kind, "pairs_used": len(pairs), "dropped": dropped, "out_dir": str(out_dir)}


def _method_label(config: PipelineConfig) -> str:
    label = "soft" if config.soft else "weighted"
    if not config.use_semantic_scores:
        label += "+no-ss"
    if not config.use_calibration:
        label += "+no-cl"
    if not config.use_filtering:
        label += "+no-fl"
    return label


def _protocol_config(config: PipelineConfig) -> ProtocolConfig:
    return ProtocolConfig(
        label=_method_label(config),
        shots=config.shots,
        seeds=config.seeds,
        zero_shot=config.zero_shot,
        use_weights=config.use_semantic_scores,
        use_calibration=config.use_calibration,
        soft=config.soft,
        aggregation=config.aggregation,
        support_size=config.support_size,
        tune=TuneConfig(
            epochs=config.epochs,
            learning_rate=config.learning_rate,
            batch_size=config.batch_size,
            aggregation=config.aggregation,
            use_weights=config.use_semantic_scores,
            freeze_backend=config.freeze_backend,
        ),
    )


def protocol_stage(
    config: PipelineConfig,
    verbalizer_path: str | Path,
    report_path: str | Path,
    runs_path: str | Path | None = None,
) -> dict:
    """Run the full shots x seeds protocol and write the aggregated report."""
    if not config.dataset_path or not config.test_path:
        raise ConfigError("the protocol needs dataset_path and test_path")
    v = load_verbalizer_file(verbalizer_path)
    classes = list(v.classes)
    train_pool = ingest(config.dataset_path, classes=classes).dataset
    test = ingest(config.test_path, classes=classes).dataset
    factory = backend_factory(config, vocab_texts(config, v, [train_pool, test]))
    template = template_by_name(config.template)

    on_run = None
    if runs_path is not None:
        runs_path = Path(runs_path)
        runs_path.parent.mkdir(parents=True, exist_ok=True)
        runs_path.write_text("", encoding="utf-8")

        def on_run(record: dict) -> None:
            with open(runs_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    reports = run_protocol(train_pool, test, v, factory, _protocol_config(config), template, on_run)
    doc = {
        "config_hash": config.hash(),
        "label": _method_label(config),
        "reports": [r.to_dict() for r in reports],
        "created_at": _now(),
    }
    report_path = Path(report_path)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(json.dumps(doc, sort_keys=True, indent=1), encoding="utf-8")
    return {
        "report_path": str(report_path),
        "reports": [r.to_dict() for r in reports],
    }


def single_train(config: PipelineConfig, verbalizer_path: str | Path, shots: int, seed: int,
                 run_dir: str | Path) -> dict:
    """One few-shot tuning run; the tuned backend lands in the run directory."""
    if not config.dataset_path:
        raise ConfigError("train needs dataset_path")
    v = load_verbalizer_file(verbalizer_path)
    classes = list(v.classes)
    train_pool = ingest(config.dataset_path, classes=classes).dataset
    test = ingest(config.test_path, classes=classes).dataset if config.test_path else None
    template = template_by_name(config.template)
    factory = backend_factory(
        config, vocab_texts(config, v, [d for d in (train_pool, test) if d is not None])
    )
    if config.use_calibration and v.stage is Stage.FILTERED:
        v = calibrate(factory(), v, list(train_pool.examples), template, cut=config.calibration_cut)
    split = sample_split(train_pool, shots, seed)
    backend = factory()
    soft = SoftVerbalizer.build(backend, v) if config.soft else None
    tune_config = TuneConfig(
        epochs=config.epochs,
        learning_rate=config.learning_rate,
        batch_size=config.batch_size,
        aggregation=config.aggregation,
        use_weights=config.use_semantic_scores,
        freeze_backend=config.freeze_backend,
        seed=seed,
    )
    result = fine_tune(backend, v, split, tune_config, template, soft)

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    if hasattr(backend, "save"):
        backend.save(run_dir / "backend")
    if soft is not None:
        torch.save(soft.state_dict(), run_dir / "soft.pt")
    details = {
        "shots": shots,
        "seed": seed,
        "best_epoch": result.best_epoch,
        "val_accuracy": result.best_val_accuracy,
        "run_dir": str(run_dir),
        "history": result.history,
    }
    if test is not None:
        predictor = Predictor(
            backend, v, template, config.aggregation, config.use_semantic_scores, soft
        )
        gold = [ex.label for ex in test.examples]
        details["test_accuracy"] = evaluate(
            [predictor.predict(ex.abstract) for ex in test.examples], gold
        )
    manifest = {
        "seed": seed,
        "config_hash": config.hash(),
        "epoch": result.best_epoch,
        "val_acc": result.best_val_accuracy,
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True), encoding="utf-8")
    return details


def zero_shot_run(config: PipelineConfig, verbalizer_path: str | Path, dataset_path: str | Path,
                  support_path: str | Path | None = None) -> dict:
    """Zero-shot predictions over a test file; no parameter may change."""
    v = load_verbalizer_file(verbalizer_path)
    classes = list(v.classes)
    test = ingest(dataset_path, classes=classes).dataset
    template = template_by_name(config.template)
    support = load_support_examples(support_path) if support_path else []
    texts = vocab_texts(config, v, [test]) + [ex.abstract for ex in support]
    backend = backend_factory(config, texts)()
    backend.eval()
    if support and config.use_calibration and v.stage is Stage.FILTERED:
        v = calibrate(backend, v, support, template, cut=config.calibration_cut)
    before = parameter_hash(backend)
    predictor = Predictor(backend, v, template, config.aggregation, config.use_semantic_scores)
    predictions = [predictor.predict(ex.abstract) for ex in test.examples]
    if parameter_hash(backend) != before:
        raise VerbkitError("backend parameters changed during zero-shot evaluation")
    gold = [ex.label for ex in test.examples]
    return {
        "examples": len(predictions),
        "accuracy": evaluate(predictions, gold),
        "predictions": predictions,
    }


def classify_one(config: PipelineConfig, verbalizer_path: str | Path, abstract: str) -> dict:
    """Classify a single abstract with the zero-shot rule."""
    v = load_verbalizer_file(verbalizer_path)
    texts = vocab_texts(config, v, []) + [abstract]
    backend = backend_factory(config, texts)()
    backend.eval()
    predicted = zero_shot_classify(
        backend, v, abstract, template_by_name(config.template),
        aggregation=config.aggregation, use_weights=config.use_semantic_scores,
    )
    predictor = Predictor(
        backend, v, template_by_name(config.template), config.aggregation, config.use_semantic_scores
    )
    scores = predictor.scores(abstract)
    return {
        "class_id": predicted,
        "name": v.class_by_id(predicted).name,
        "probabilities": list(scores.probabilities),
    }


def eval_reports(report_dir: str | Path) -> dict:
    """Collect report files under a directory into one table."""
    report_dir = Path(report_dir)
    if not report_dir.exists():
        raise ConfigError(f"report directory not found: {report_dir}")
    reports: list[RunReport] = []
    files = sorted(report_dir.glob("**/report*.json"))
    for path in files:
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
            reports.extend(RunReport.from_dict(r) for r in doc.get("reports", []))
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ConfigError(f"bad report file {path}: {e}") from e
    if not reports:
        raise ConfigError(f"no report files under {report_dir}")
    return {"table": format_table(reports), "reports": [r.to_dict() for r in reports]}


# -- resumable orchestration ----------------------------------------------------


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _input_hashes(paths: list[str | Path]) -> dict[str, str]:
    hashes: dict[str, str] = {}
    for raw in paths:
        if not raw:
            continue
        p = Path(raw)
        if p.is_dir():
            for child in sorted(p.rglob("*")):
                if child.is_file():
                    hashes[str(child)] = _file_digest(child)
        elif p.is_file():
            hashes[str(p)] = _file_digest(p)
        else:
            hashes[str(p)] = "missing"
    return hashes


class PipelineRunner:
    """Runs retrieve, filter, calibrate, and the protocol with stage resumption."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.run_dir = Path(config.run_dir)
        self.manifest_dir = self.run_dir / "manifests"
        self.ran: list[str] = []
        self.skipped: list[str] = []

    def _stage(
        self,
        name: str,
        inputs: list[str | Path],
        params: dict,
        outputs: list[Path],
        fn: Callable[[], dict],
    ) -> dict:
        self.manifest_dir.mkdir(parents=True, exist_ok=True)
        manifest_path = self.manifest_dir / f"{name}.json"
        key = {"inputs": _input_hashes(inputs), "params": params}
        digest = hashlib.sha256(json.dumps(key, sort_keys=True).encode("utf-8")).hexdigest()
        if manifest_path.exists():
            try:
                old = json.loads(manifest_path.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                old = {}
            if old.get("digest") == digest and all(p.exists() for p in outputs):
                self.skipped.append(name)
                return old.get("details", {})
        details = fn()
        manifest = {
            "stage": name,
            "digest": digest,
            "inputs": key["inputs"],
            "params": params,
            "outputs": [str(p) for p in outputs],
            "details": details,
            "created_at": _now(),
        }
        manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=1), encoding="utf-8")
        self.ran.append(name)
        return details

    def run(self) -> dict:
        config = self.config
        self.run_dir.mkdir(parents=True, exist_ok=True)
        raw_terms = self.run_dir / "raw_terms.jsonl"
        filtered = self.run_dir / "verbalizer.filtered.json"
        calibrated = self.run_dir / "verbalizer.calibrated.json"
        report = self.run_dir / "report.json"
        runs = self.run_dir / "runs.jsonl"

        self._stage(
            "retrieve",
            inputs=[config.classes_path],
            params={
                "related_words_url": config.related_words_url,
                "reverse_dictionary_url": config.reverse_dictionary_url,
                "cache_dir": config.cache_dir,
            },
            outputs=[raw_terms],
            fn=lambda: retrieve_stage(config, raw_terms),
        )
        self._stage(
            "filter",
            inputs=[config.classes_path, raw_terms, config.be_dir, config.ce_dir],
            params={
                "mu_be": config.mu_be,
                "mu_ce": config.mu_ce,
                "ce_keep_below": config.ce_keep_below,
                "use_filtering": config.use_filtering,
                "template": config.template,
            },
            outputs=[filtered],
            fn=lambda: filter_stage(config, raw_terms, filtered),
        )
        protocol_verbalizer = filtered
        if config.use_calibration and not config.zero_shot:
            self._stage(
                "calibrate",
                inputs=[filtered, config.support_path or config.dataset_path],
                params={
                    "backend": config.backend,
                    "backend_seed": config.backend_seed,
                    "backend_dim": config.backend_dim,
                    "template": config.template,
                    "cut": config.calibration_cut,
                },
                outputs=[calibrated],
                fn=lambda: calibrate_stage(config, filtered, calibrated),
            )
            protocol_verbalizer = calibrated
        protocol_details = self._stage(
            "protocol",
            inputs=[protocol_verbalizer, config.dataset_path, config.test_path],
            params={
                "shots": list(config.shots),
                "seeds": list(config.seeds),
                "zero_shot": config.zero_shot,
                "soft": config.soft,
                "use_semantic_scores": config.use_semantic_scores,
                "use_calibration": config.use_calibration,
                "aggregation": config.aggregation,
                "epochs": config.epochs,
                "learning_rate": config.learning_rate,
                "batch_size": config.batch_size,
                "backend": config.backend,
                "backend_seed": config.backend_seed,
                "backend_dim": config.backend_dim,
                "template": config.template,
            },
            outputs=[report],
            fn=lambda: protocol_stage(config, protocol_verbalizer, report, runs),
        )
        reports = [RunReport.from_dict(r) for r in protocol_details.get("reports", [])]
        return {
            "report_path": str(report),
            "ran": self.ran,
            "skipped": self.skipped,
            "table": format_table(reports) if reports else "",
            "reports": [r.to_dict() for r in reports],
        }


def run_pipeline(config: PipelineConfig) -> dict:
    return PipelineRunner(config).run()
