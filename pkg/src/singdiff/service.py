"""HTTP service exposing the pipeline operations.

Each endpoint takes the run configuration as the flat key-value text it
would live in on disk, so a client never has to share config files with
the server; directories and file paths in requests refer to the
service's own filesystem. Validation problems come back as 400 with a
message; threshold-style outcomes (a preparation run over its failure
budget, an oracle check over a bound) come back as 200 with ok/passed
false so the caller can distinguish them from bad requests.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .config import parse_config
from .model import TrainingError
from .pipeline import (run_eval, run_oracle_check, run_prepare, run_sample,
                       run_train)

__all__ = ["create_app", "app"]


class PrepareRequest(BaseModel):
    config_text: str
    corpus_dir: str
    out_dir: str


class PrepareResponse(BaseModel):
    ok: bool
    n_items: int
    labeling_counts: dict[str, int]
    failures: list[str]
    failed_fraction: float
    config_hash: str


class TrainRequest(BaseModel):
    config_text: str
    data_dir: str
    run_dir: str
    seed: int = 0


class TrainResponse(BaseModel):
    n_steps: int
    final_loss: float
    checkpoints: list[str]
    loss_log: str


class SampleRequest(BaseModel):
    config_text: str
    checkpoint: str
    label_path: str
    out_dir: str
    seed: int | None = None


class SampleResponse(BaseModel):
    mel_path: str
    meta_path: str
    n_frames: int


class EvalRequest(BaseModel):
    config_text: str
    ref_dir: str
    gen_dir: str


class SegmentResponse(BaseModel):
    name: str
    n_voiced: int
    f0_rmse: float | None
    s_acc: float | None


class EvalResponse(BaseModel):
    n_voiced: int
    f0_rmse: float | None
    s_acc: float | None
    segments: list[SegmentResponse]
    text: str
    kv: str


class OracleCheckRequest(BaseModel):
    config_text: str
    n_points: int = 1000
    seed: int = 0


class OracleCheckResponse(BaseModel):
    passed: bool
    report: dict[str, float]
    thresholds: dict[str, float]
    text: str


def _config(text: str):
    try:
        return parse_config(text)
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


def create_app() -> FastAPI:
    application = FastAPI(title="singdiff", version="0.1.0")

    @application.get("/health")
    def health() -> dict[str, str]:
        return {"status": "ok"}

    @application.post("/prepare", response_model=PrepareResponse)
    def prepare(req: PrepareRequest) -> PrepareResponse:
        cfg = _config(req.config_text)
        try:
            result = run_prepare(cfg, req.corpus_dir, req.out_dir)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return PrepareResponse(
            ok=result.ok,
            n_items=result.n_items,
            labeling_counts=result.manifest.labeling_counts(),
            failures=list(result.failures),
            failed_fraction=result.failed_fraction,
            config_hash=result.manifest.config_hash)

    @application.post("/train", response_model=TrainResponse)
    def train(req: TrainRequest) -> TrainResponse:
        cfg = _config(req.config_text)
        try:
            result = run_train(cfg, req.data_dir, req.run_dir, seed=req.seed)
        except (ValueError, TrainingError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return TrainResponse(
            n_steps=len(result.losses),
            final_loss=result.losses[-1],
            checkpoints=[str(p) for p in result.checkpoints],
            loss_log=str(result.loss_log))

    @application.post("/sample", response_model=SampleResponse)
    def sample(req: SampleRequest) -> SampleResponse:
        cfg = _config(req.config_text)
        try:
            result = run_sample(cfg, req.checkpoint, req.label_path,
                                req.out_dir, seed=req.seed)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return SampleResponse(mel_path=str(result.mel_path),
                              meta_path=str(result.meta_path),
                              n_frames=result.n_frames)

    @application.post("/eval", response_model=EvalResponse)
    def eval_dirs(req: EvalRequest) -> EvalResponse:
        cfg = _config(req.config_text)
        try:
            report = run_eval(cfg, req.ref_dir, req.gen_dir)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return EvalResponse(
            n_voiced=report.n_voiced,
            f0_rmse=report.f0_rmse,
            s_acc=report.s_acc,
            segments=[SegmentResponse(name=s.name, n_voiced=s.n_voiced,
                                      f0_rmse=s.f0_rmse, s_acc=s.s_acc)
                      for s in report.segments],
            text=report.format_text(),
            kv=report.to_kv())

    @application.post("/oracle-check", response_model=OracleCheckResponse)
    def oracle_check(req: OracleCheckRequest) -> OracleCheckResponse:
        cfg = _config(req.config_text)
        result = run_oracle_check(cfg, n_points=req.n_points, seed=req.seed)
        return OracleCheckResponse(passed=result.passed, report=result.report,
                                   thresholds=result.thresholds,
                                   text=result.format_text())

    return application


app = create_app()
