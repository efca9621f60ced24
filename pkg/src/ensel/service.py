"""HTTP front for the diagnosis pipeline.

Endpoints are plain ``def`` handlers so the server runs them on its thread
pool; CPU-bound requests then overlap instead of serializing on the event
loop. Every accepted diagnosis is appended to a JSONL record log (single
writer, flushed before the response goes out) with the original and overlay
images stored beside it, which is what the results and explain endpoints
read back.
"""

from __future__ import annotations

import base64
import json
import os
import threading
import uuid
from dataclasses import dataclass

from fastapi import FastAPI, Query, UploadFile
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import imaging
from .classify import ModelRegistry, load_registry
from .ensemble import EnsembleConfig, diagnose, load_config
from .errors import DecodeError, EnselError, PipelineError
from .detect import BBox
from .explain import CamResult, cam_overlay, full_image_cam
from .timing import StageTimer

MAX_UPLOAD_BYTES = 32 * 1024 * 1024

ENV_PORT = "ENSEL_PORT"
ENV_DATA_DIR = "ENSEL_DATA_DIR"
ENV_MODEL_DIR = "ENSEL_MODEL_DIR"
ENV_CONFIG = "ENSEL_CONFIG"
ENV_UI_DIR = "ENSEL_UI_DIR"


class FinalOut(BaseModel):
    label: str
    probability: float


class BoxOut(BaseModel):
    x0: int
    y0: int
    x1: int
    y1: int
    score: float


class TimingOut(BaseModel):
    decode: float = 0.0
    detect: float = 0.0
    classify: float = 0.0
    vote: float = 0.0
    visualize: float = 0.0
    encode: float = 0.0
    total: float = 0.0


class DiagnoseResponse(BaseModel):
    id: str
    final: FinalOut
    distribution: dict[str, float]
    per_model: dict[str, dict[str, float]]
    boxes: list[BoxOut]
    overlay_png_base64: str
    timing_ms: TimingOut


class ResultResponse(BaseModel):
    id: str
    final: FinalOut
    distribution: dict[str, float]
    per_model: dict[str, dict[str, float]]
    boxes: list[BoxOut]
    timing_ms: TimingOut
    filename: str
    resolution: str
    received_at: str


class ModelInfo(BaseModel):
    id: str
    role: str
    metadata: dict


class ModelsResponse(BaseModel):
    models: list[ModelInfo]


class HealthResponse(BaseModel):
    status: str
    models_loaded: int


def _timing_out(breakdown) -> TimingOut:
    s = breakdown.stages
    return TimingOut(
        decode=s.get("decode", 0.0),
        detect=s.get("detect_inference", 0.0),
        classify=s.get("classify_inference", 0.0),
        vote=s.get("vote", 0.0),
        visualize=s.get("visualization", 0.0) + s.get("cam", 0.0),
        encode=s.get("encode", 0.0),
        total=breakdown.total_ms,
    )


class RecordStore:
    """Append-only JSONL log plus an image directory.

    Appends happen under one lock and are flushed to disk before returning,
    so a record is durable before its response leaves the service.
    """

    def __init__(self, directory: str):
        self.directory = directory
        self.images_dir = os.path.join(directory, "images")
        os.makedirs(self.images_dir, exist_ok=True)
        self.log_path = os.path.join(directory, "records.jsonl")
        self._lock = threading.Lock()
        self._records: dict[str, dict] = {}
        if os.path.exists(self.log_path):
            with open(self.log_path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        rec = json.loads(line)
                        self._records[rec["id"]] = rec

    def append(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=True)
        with self._lock:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._records[record["id"]] = record

    def get(self, record_id: str) -> dict | None:
        with self._lock:
            return self._records.get(record_id)

    def image_path(self, record_id: str, kind: str) -> str:
        return os.path.join(self.images_dir, f"{record_id}.{kind}.png")


@dataclass
class ServiceState:
    registry: ModelRegistry
    config: EnsembleConfig
    store: RecordStore


def _error(status: int, message: str, **extra) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message, **extra})


def create_app(model_dir: str | None = None, config_path: str | None = None,
               data_dir: str | None = None, ui_dir: str | None = None,
               max_upload_bytes: int = MAX_UPLOAD_BYTES) -> FastAPI:
    """Build the service around one model registry and ensemble config.

    Falls back to the ENSEL_MODEL_DIR, ENSEL_CONFIG, ENSEL_DATA_DIR and
    ENSEL_UI_DIR environment variables for anything not passed explicitly.
    """
    model_dir = model_dir or os.environ.get(ENV_MODEL_DIR)
    config_path = config_path or os.environ.get(ENV_CONFIG)
    data_dir = data_dir or os.environ.get(ENV_DATA_DIR) or "ensel-data"
    ui_dir = ui_dir or os.environ.get(ENV_UI_DIR)
    if not model_dir:
        raise EnselError("model directory not set (ENSEL_MODEL_DIR)")
    if not config_path:
        raise EnselError("ensemble config not set (ENSEL_CONFIG)")

    registry = load_registry(model_dir)
    config = load_config(config_path)
    config.validate(registry)
    state = ServiceState(registry, config, RecordStore(data_dir))

    app = FastAPI(title="ensel", version="0.1.0")
    app.state.ensel = state

    @app.post("/api/diagnose", response_model=DiagnoseResponse)
    def post_diagnose(file: UploadFile):
        raw = file.file.read(max_upload_bytes + 1)
        if len(raw) > max_upload_bytes:
            return _error(413, "image exceeds the upload size limit")
        if not raw:
            return _error(400, "empty upload")
        fmt = imaging.sniff_format(raw)
        if fmt is None:
            return _error(422, "unsupported image format; send PNG or PPM")

        timer = StageTimer()
        try:
            with timer.stage("decode"):
                img = imaging.decode(raw, fmt)
        except DecodeError as exc:
            return _error(400, f"undecodable image: {exc}")

        request_id = uuid.uuid4().hex
        try:
            diag = diagnose(img, state.config, state.registry,
                            timer=timer, request_id=request_id)
            with timer.stage("encode"):
                overlay_png = imaging.encode(diag.overlay, "png")
        except PipelineError as exc:
            return _error(500, f"pipeline failed during {exc.stage}: {exc.cause}",
                          stage=exc.stage)

        breakdown = timer.breakdown(f"{img.width}x{img.height}")
        label, prob = diag.final
        record = {
            "id": request_id,
            "final": {"label": label, "probability": prob},
            "distribution": diag.fused.to_dict(),
            "per_model": {mid: d.to_dict() for mid, d in diag.per_model.items()},
            "boxes": [{"x0": b.x0, "y0": b.y0, "x1": b.x1, "y1": b.y1,
                       "score": b.score} for b in diag.boxes],
            "timing_ms": _timing_out(breakdown).model_dump(),
            "filename": file.filename or "upload",
            "resolution": f"{img.width}x{img.height}",
            "received_at": diag.created_at,
            "config": config.name,
            "members": list(config.members),
            "final_label": label,
        }
        with open(state.store.image_path(request_id, "input"), "wb") as fh:
            fh.write(imaging.encode(img, "png"))
        with open(state.store.image_path(request_id, "overlay"), "wb") as fh:
            fh.write(overlay_png)
        state.store.append(record)

        return DiagnoseResponse(
            id=request_id,
            final=FinalOut(label=label, probability=prob),
            distribution=record["distribution"],
            per_model=record["per_model"],
            boxes=[BoxOut(**b) for b in record["boxes"]],
            overlay_png_base64=base64.b64encode(overlay_png).decode("ascii"),
            timing_ms=TimingOut(**record["timing_ms"]),
        )

    @app.get("/api/results/{record_id}", response_model=ResultResponse)
    def get_result(record_id: str):
        record = state.store.get(record_id)
        if record is None:
            return _error(404, f"no result with id {record_id!r}")
        return ResultResponse(
            id=record["id"],
            final=FinalOut(**record["final"]),
            distribution=record["distribution"],
            per_model=record["per_model"],
            boxes=[BoxOut(**b) for b in record["boxes"]],
            timing_ms=TimingOut(**record["timing_ms"]),
            filename=record["filename"],
            resolution=record["resolution"],
            received_at=record["received_at"],
        )

    @app.get("/api/explain/{record_id}")
    def get_explain(record_id: str, model: str = Query(...)):
        record = state.store.get(record_id)
        if record is None:
            return _error(404, f"no result with id {record_id!r}")
        if model not in record["members"]:
            return _error(404, f"model {model!r} did not vote on this result")
        input_path = state.store.image_path(record_id, "input")
        if not os.path.exists(input_path):
            return _error(404, "stored input image is gone")
        with open(input_path, "rb") as fh:
            img = imaging.decode(fh.read(), "png")
        boxes = [BBox(b["x0"], b["y0"], b["x1"], b["y1"], score=b["score"])
                 for b in record["boxes"]]
        member = state.registry.classifier(model)
        target = record["final_label"]
        if target not in member.class_labels:
            return _error(404, f"model {model!r} has no class {target!r}")
        heat = full_image_cam(img, member, boxes, target)
        cam = CamResult(heat.values, heat, target, model)
        overlay = cam_overlay(img, cam, state.config.overlay_alpha)
        return Response(content=imaging.encode(overlay, "png"), media_type="image/png")

    @app.get("/api/models", response_model=ModelsResponse)
    def get_models():
        rows = []
        for mid in state.registry.ids():
            entry = state.registry.get(mid)
            meta = {k: v for k, v in entry.metadata.items()
                    if isinstance(v, (str, int, float, bool)) or v is None}
            rows.append(ModelInfo(id=mid, role=entry.role, metadata=meta))
        return ModelsResponse(models=rows)

    @app.get("/api/health", response_model=HealthResponse)
    def get_health():
        return HealthResponse(status="ok", models_loaded=len(state.registry.entries))

    if ui_dir and os.path.isdir(ui_dir):
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def run(port: int | None = None, host: str = "127.0.0.1", **app_kwargs) -> None:
    """Start uvicorn on the configured port (ENSEL_PORT, default 8080)."""
    import uvicorn

    if port is None:
        port = int(os.environ.get(ENV_PORT, "8080"))
    uvicorn.run(create_app(**app_kwargs), host=host, port=port)
