"""Request and response models for the HTTP service.

Endpoints operate on server-local paths plus config overrides; the override
keys are exactly the config-file keys, so the CLI and the file format stay in
sync.
"""

from __future__ import annotations

from pydantic import BaseModel, Field

ConfigOverrides = dict[str, str | int | float | bool]


class HealthResponse(BaseModel):
    status: str
    version: str


class ClassEntry(BaseModel):
    id: int
    name: str
    query_text: str = ""


class NewVerbalizerRequest(BaseModel):
    classes: list[ClassEntry]


class VerbalizerResponse(BaseModel):
    document: dict


class RetrieveRequest(BaseModel):
    classes_path: str
    out_path: str
    cache_dir: str = ""
    config_path: str | None = None
    overrides: ConfigOverrides = Field(default_factory=dict)


class RetrieveResponse(BaseModel):
    classes: int
    terms: int
    per_class: dict[str, int]
    out_path: str


class TrainNLIRequest(BaseModel):
    pairs_path: str
    kind: str
    out_dir: str
    config_path: str | None = None
    overrides: ConfigOverrides = Field(default_factory=dict)


class TrainNLIResponse(BaseModel):
    kind: str
    pairs_used: int
    dropped: dict[str, int]
    out_dir: str


class FilterRequest(BaseModel):
    raw_terms_path: str
    out_path: str
    config_path: str | None = None
    overrides: ConfigOverrides = Field(default_factory=dict)


class FilterResponse(BaseModel):
    raw_terms: int
    kept_terms: int
    cross_class_duplicates: dict[str, list[int]]
    out_path: str


class CalibrateRequest(BaseModel):
    verbalizer_path: str
    out_path: str
    config_path: str | None = None
    overrides: ConfigOverrides = Field(default_factory=dict)


class CalibrateResponse(BaseModel):
    before: int
    after: int
    support: int
    out_path: str


class TrainRequest(BaseModel):
    verbalizer_path: str
    shots: int
    seed: int
    run_dir: str
    config_path: str | None = None
    overrides: ConfigOverrides = Field(default_factory=dict)


class TrainResponse(BaseModel):
    shots: int
    seed: int
    best_epoch: int
    val_accuracy: float
    test_accuracy: float | None = None
    run_dir: str


class ZeroShotRequest(BaseModel):
    verbalizer_path: str
    dataset_path: str
    support_path: str | None = None
    config_path: str | None = None
    overrides: ConfigOverrides = Field(default_factory=dict)


class ZeroShotResponse(BaseModel):
    examples: int
    accuracy: float
    predictions: list[int]


class ClassifyRequest(BaseModel):
    verbalizer_path: str
    abstract: str
    config_path: str | None = None
    overrides: ConfigOverrides = Field(default_factory=dict)


class ClassifyResponse(BaseModel):
    class_id: int
    name: str
    probabilities: list[float]


class RunRequest(BaseModel):
    config_path: str | None = None
    overrides: ConfigOverrides = Field(default_factory=dict)


class RunResponse(BaseModel):
    report_path: str
    ran: list[str]
    skipped: list[str]
    table: str
    reports: list[dict]


class EvalRequest(BaseModel):
    report_dir: str


class EvalResponse(BaseModel):
    table: str
    reports: list[dict]
