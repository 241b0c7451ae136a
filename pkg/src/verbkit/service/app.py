"""HTTP service wrapping the pipeline: one endpoint per stage plus classify."""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import PipelineConfig, load_config
from ..errors import ConfigError, VerbkitError
from ..pipeline import (
    calibrate_stage,
    classify_one,
    eval_reports,
    filter_stage,
    retrieve_stage,
    run_pipeline,
    single_train,
    train_nli_stage,
    zero_shot_run,
)
from ..verbalizer import ClassLabel, new_verbalizer, to_json_dict
from . import schemas


def _config(config_path: str | None, overrides: dict) -> PipelineConfig:
    return load_config(config_path, overrides)


def create_app() -> FastAPI:
    app = FastAPI(title="verbkit", version=__version__)

    @app.exception_handler(ConfigError)
    async def config_error(request: Request, exc: ConfigError):
        return JSONResponse(status_code=400, content={"detail": str(exc), "kind": "config"})

    @app.exception_handler(VerbkitError)
    async def stage_error(request: Request, exc: VerbkitError):
        return JSONResponse(status_code=500, content={"detail": str(exc), "kind": "stage"})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/verbalizer/new", response_model=schemas.VerbalizerResponse)
    def verbalizer_new(req: schemas.NewVerbalizerRequest):
        classes = [ClassLabel(id=c.id, name=c.name, query_text=c.query_text) for c in req.classes]
        return schemas.VerbalizerResponse(document=to_json_dict(new_verbalizer(classes)))

    @app.post("/retrieve", response_model=schemas.RetrieveResponse)
    def retrieve(req: schemas.RetrieveRequest):
        overrides = dict(req.overrides)
        overrides["classes_path"] = req.classes_path
        if req.cache_dir:
            overrides["cache_dir"] = req.cache_dir
        details = retrieve_stage(_config(req.config_path, overrides), req.out_path)
        return schemas.RetrieveResponse(**details)

    @app.post("/train-nli", response_model=schemas.TrainNLIResponse)
    def train_nli(req: schemas.TrainNLIRequest):
        overrides = dict(req.overrides)
        overrides["pairs_path"] = req.pairs_path
        details = train_nli_stage(_config(req.config_path, overrides), req.kind, req.out_dir)
        return schemas.TrainNLIResponse(**details)

    @app.post("/filter", response_model=schemas.FilterResponse)
    def filter_terms(req: schemas.FilterRequest):
        config = _config(req.config_path, req.overrides)
        details = filter_stage(config, req.raw_terms_path, req.out_path)
        return schemas.FilterResponse(**details)

    @app.post("/calibrate", response_model=schemas.CalibrateResponse)
    def calibrate_verbalizer(req: schemas.CalibrateRequest):
        config = _config(req.config_path, req.overrides)
        details = calibrate_stage(config, req.verbalizer_path, req.out_path)
        return schemas.CalibrateResponse(**details)

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest):
        config = _config(req.config_path, req.overrides)
        details = single_train(config, req.verbalizer_path, req.shots, req.seed, req.run_dir)
        return schemas.TrainResponse(
            shots=details["shots"],
            seed=details["seed"],
            best_epoch=details["best_epoch"],
            val_accuracy=details["val_accuracy"],
            test_accuracy=details.get("test_accuracy"),
            run_dir=details["run_dir"],
        )

    @app.post("/zero-shot", response_model=schemas.ZeroShotResponse)
    def zero_shot(req: schemas.ZeroShotRequest):
        config = _config(req.config_path, req.overrides)
        details = zero_shot_run(config, req.verbalizer_path, req.dataset_path, req.support_path)
        return schemas.ZeroShotResponse(**details)

    @app.post("/classify", response_model=schemas.ClassifyResponse)
    def classify(req: schemas.ClassifyRequest):
        config = _config(req.config_path, req.overrides)
        return schemas.ClassifyResponse(**classify_one(config, req.verbalizer_path, req.abstract))

    @app.post("/run", response_model=schemas.RunResponse)
    def run(req: schemas.RunRequest):
        config = _config(req.config_path, req.overrides)
        return schemas.RunResponse(**run_pipeline(config))

    @app.post("/eval", response_model=schemas.EvalResponse)
    def eval_dir(req: schemas.EvalRequest):
        return schemas.EvalResponse(**eval_reports(req.report_dir))

    return app


app = create_app()
