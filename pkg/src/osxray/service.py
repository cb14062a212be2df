"""HTTP serving surface: upload-triggered inference, diagnosis retrieval,
doctor label submission and model status.

Uploads are persisted, then an in-process job runs the diagnosis (the
response returns first). Tokens map to doctor/patient roles via a static
table; every error body carries a machine-readable code and a message.
The endpoint contract is documented in docs/api.md.
"""

from __future__ import annotations

import base64
import json
import os
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from starlette.exceptions import HTTPException as StarletteHTTPException

from .data import DatasetManifest, ImageSample, decode_pgm, encode_pgm, normalize_resize
from .errors import DomainError, FormatError
from .inference import Diagnosis, diagnose
from .metrics import ci_half_width
from .semilive import (CheckpointRegistry, LabeledSubmission, RetrainController,
                       RetrainPolicy, SubmissionQueue, maybe_trigger_retrain,
                       retrain_and_swap)

ENV_LISTEN = "OSXRAY_LISTEN"
ENV_DATA_DIR = "OSXRAY_DATA_DIR"


@dataclass
class ServiceConfig:
    checkpoint: str
    tokens: str
    data_dir: str = "data"
    listen: str = "127.0.0.1:8000"
    manifest: str = ""
    retrain: RetrainPolicy = field(default_factory=RetrainPolicy)
    ui_dir: str = ""

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str = ".") -> "ServiceConfig":
        def resolve(p):
            return p if not p or os.path.isabs(p) else os.path.join(base_dir, p)

        policy = RetrainPolicy(**raw.get("retrain", {}))
        cfg = cls(checkpoint=resolve(raw["checkpoint"]),
                  tokens=resolve(raw["tokens"]),
                  data_dir=resolve(raw.get("data_dir", "data")),
                  listen=raw.get("listen", "127.0.0.1:8000"),
                  manifest=resolve(raw.get("manifest", "")),
                  retrain=policy,
                  ui_dir=resolve(raw.get("ui_dir", "")))
        cfg.apply_env()
        return cfg

    @classmethod
    def from_file(cls, path: str) -> "ServiceConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls.from_dict(raw, base_dir=os.path.dirname(os.path.abspath(path)))

    def apply_env(self) -> None:
        self.listen = os.environ.get(ENV_LISTEN, self.listen)
        self.data_dir = os.environ.get(ENV_DATA_DIR, self.data_dir)

    def host_port(self) -> tuple[str, int]:
        host, _, port = self.listen.rpartition(":")
        return host or "127.0.0.1", int(port)


def load_tokens(path: str) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        table = json.load(fh)
    for token, role in table.items():
        if role not in ("doctor", "patient"):
            raise DomainError(f"token table maps {token!r} to unknown role {role!r}")
    return table


class SampleStore:
    """Directory-tree persistence for uploaded samples and their diagnoses.

    Records survive restarts; state moves only forward:
    received -> diagnosing -> (diagnosed | failed).
    """

    _ORDER = {"received": 0, "diagnosing": 1, "diagnosed": 2, "failed": 2}

    def __init__(self, data_dir: str):
        self.samples_dir = os.path.join(data_dir, "samples")
        self.records_dir = os.path.join(data_dir, "records")
        os.makedirs(self.samples_dir, exist_ok=True)
        os.makedirs(self.records_dir, exist_ok=True)
        self._lock = threading.Lock()
        self._records: dict[str, dict] = {}
        for name in os.listdir(self.records_dir):
            if name.endswith(".json"):
                with open(os.path.join(self.records_dir, name), encoding="utf-8") as fh:
                    record = json.load(fh)
                self._records[record["sample_id"]] = record

    def create(self, sample_id: str, pgm_bytes: bytes, uploader: str) -> dict:
        record = {"sample_id": sample_id, "state": "received", "uploader": uploader,
                  "received_at": time.time(), "diagnosis": None, "error": None}
        with open(os.path.join(self.samples_dir, f"{sample_id}.pgm"), "wb") as fh:
            fh.write(pgm_bytes)
        with self._lock:
            self._records[sample_id] = record
            self._persist(record)
        return record

    def pixels(self, sample_id: str) -> np.ndarray:
        with open(os.path.join(self.samples_dir, f"{sample_id}.pgm"), "rb") as fh:
            return decode_pgm(fh.read())

    def get(self, sample_id: str) -> dict | None:
        with self._lock:
            return self._records.get(sample_id)

    def advance(self, sample_id: str, state: str, diagnosis: dict | None = None,
                error: str | None = None) -> None:
        with self._lock:
            record = self._records[sample_id]
            if self._ORDER[state] < self._ORDER[record["state"]]:
                raise DomainError(f"cannot move sample {sample_id} from "
                                  f"{record['state']} back to {state}")
            record["state"] = state
            if diagnosis is not None:
                record["diagnosis"] = diagnosis
            if error is not None:
                record["error"] = error
            self._persist(record)

    def _persist(self, record: dict) -> None:
        path = os.path.join(self.records_dir, f"{record['sample_id']}.json")
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(record, fh)
        os.replace(tmp, path)


def attention_to_pgm_base64(attention: np.ndarray | None) -> str | None:
    if attention is None:
        return None
    pixels = np.clip(np.round(attention * 255.0), 0, 255).astype(np.uint8)
    return base64.b64encode(encode_pgm(pixels)).decode("ascii")


def diagnosis_payload(sample_id: str, result: Diagnosis) -> dict:
    return {
        "sample_id": sample_id,
        "state": "diagnosed",
        "predicted_category": result.predicted_category,
        "per_category_mean_energy": {c: round(v, 4) for c, v in
                                     result.per_category_mean_energy.items()},
        "per_member_energies": {c: [round(v, 4) for v in vals] for c, vals in
                                result.per_member_energies.items()},
        "checkpoint_version": result.checkpoint_version,
        "attention_map_pgm_base64": attention_to_pgm_base64(result.attention_map),
    }


def error_body(code: str, message: str) -> dict:
    return {"error": {"code": code, "message": message}}


def error_response(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content=error_body(code, message))


class ServiceState:
    """Everything the endpoints share; owned by the app instance."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.tokens = load_tokens(config.tokens)
        self.registry = CheckpointRegistry(config.checkpoint)
        self.registry.load()
        self.store = SampleStore(config.data_dir)
        self.queue = SubmissionQueue()
        self.controller = RetrainController()
        self.executor = ThreadPoolExecutor(max_workers=4)
        self.last_eval: dict | None = None
        self._corpus_lock = threading.Lock()
        self._corpus: dict | None = None

    def role_of(self, request: Request) -> str | None:
        header = request.headers.get("authorization", "")
        if header.lower().startswith("bearer "):
            return self.tokens.get(header[7:].strip())
        return None

    def categories(self) -> list[str]:
        return self.registry.snapshot().std.categories()

    def run_diagnosis(self, sample_id: str) -> None:
        try:
            self.store.advance(sample_id, "diagnosing")
            bundle = self.registry.snapshot()
            pixels = self.store.pixels(sample_id)
            sample = ImageSample(sample_id, pixels, "unlabeled", source="user")
            query = normalize_resize(sample, bundle.net.input_hw)
            result = diagnose(query, bundle.std, bundle.net, bundle.version)
            self.store.advance(sample_id, "diagnosed",
                               diagnosis=diagnosis_payload(sample_id, result))
        except Exception as exc:  # the record must reflect the failure
            self.store.advance(sample_id, "failed", error=str(exc))

    def training_corpus(self) -> dict:
        """Train/val/standard samples from the manifest, loaded once."""
        with self._corpus_lock:
            if self._corpus is None:
                if not self.config.manifest:
                    raise DomainError("no manifest configured; retraining disabled")
                manifest = DatasetManifest.load(self.config.manifest)
                self._corpus = {
                    "train": manifest.load_split("train"),
                    "val": manifest.load_split("val"),
                    "standard": {s.id: s for s in manifest.load_split("standard")},
                }
            return self._corpus

    def run_retrain(self) -> None:
        try:
            corpus = self.training_corpus()
            outcome = retrain_and_swap(self.config.retrain, self.queue, self.registry,
                                       corpus["train"], corpus["val"],
                                       corpus["standard"])
            accuracy = outcome.new_accuracy if outcome.action == "swapped" \
                else outcome.old_accuracy
            n_val = len(corpus["val"])
            self.last_eval = {
                "n": n_val,
                "accuracy": round(accuracy, 6),
                "ci_half_width": round(ci_half_width(accuracy, n_val), 6),
                "action": outcome.action,
                "reason": outcome.reason,
                "version": outcome.version,
            }
        except Exception as exc:
            self.last_eval = {"action": "failed", "reason": str(exc)}
        finally:
            self.controller.finish()


def create_app(config: ServiceConfig) -> FastAPI:
    app = FastAPI(title="osxray", version="0.1.0")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    state = ServiceState(config)
    app.state.service = state

    @app.exception_handler(StarletteHTTPException)
    async def http_error(request: Request, exc: StarletteHTTPException):
        return error_response(exc.status_code, "http_error", str(exc.detail))

    @app.exception_handler(RequestValidationError)
    async def validation_error(request: Request, exc: RequestValidationError):
        return error_response(400, "invalid_request", str(exc.errors()))

    @app.post("/v1/samples", status_code=202)
    async def upload_sample(request: Request):
        role = state.role_of(request)
        if role is None:
            return error_response(401, "unauthorized", "missing or unknown token")
        body = await request.body()
        try:
            decode_pgm(body)
        except FormatError as exc:
            return error_response(400, "bad_image", str(exc))
        sample_id = uuid.uuid4().hex[:12]
        state.store.create(sample_id, body, uploader=role)
        state.executor.submit(state.run_diagnosis, sample_id)
        return {"sample_id": sample_id}

    @app.get("/v1/samples/{sample_id}/diagnosis")
    async def get_diagnosis(sample_id: str):
        record = state.store.get(sample_id)
        if record is None:
            return error_response(404, "unknown_sample", f"no sample {sample_id!r}")
        if record["state"] == "failed":
            return error_response(500, "inference_failed",
                                  record.get("error") or "inference failed")
        if record["state"] != "diagnosed":
            return JSONResponse(status_code=202, content={"state": record["state"]})
        return record["diagnosis"]

    @app.post("/v1/labels", status_code=202)
    async def submit_label(request: Request, category: str = ""):
        role = state.role_of(request)
        if role is None:
            return error_response(401, "unauthorized", "missing or unknown token")
        if role != "doctor":
            return error_response(403, "forbidden",
                                  "only doctor-role tokens may submit labels")
        if category not in state.categories():
            return error_response(400, "unknown_category",
                                  f"category {category!r} is not known to the model")
        body = await request.body()
        try:
            pixels = decode_pgm(body)
        except FormatError as exc:
            return error_response(400, "bad_image", str(exc))
        submission = LabeledSubmission(uuid.uuid4().hex[:12], pixels, category,
                                       submitter=role, role=role)
        queued = state.queue.enqueue(submission, state.categories())
        if maybe_trigger_retrain(config.retrain, state.queue,
                                 state.controller) == "training_started":
            threading.Thread(target=state.run_retrain, daemon=True).start()
        return {"queued_count": queued}

    @app.get("/v1/model/status")
    async def model_status():
        bundle = state.registry.snapshot()
        return {
            "checkpoint_version": bundle.version,
            "categories": bundle.std.categories(),
            "standard_set_sizes": bundle.std.sizes(),
            "queue_length": state.queue.queued_count(),
            "training": "running" if state.controller.running else "idle",
            "last_eval": state.last_eval,
        }

    if config.ui_dir and os.path.isdir(config.ui_dir):
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=config.ui_dir, html=True), name="ui")

    return app


def run_server(config: ServiceConfig) -> None:
    import uvicorn

    host, port = config.host_port()
    uvicorn.run(create_app(config), host=host, port=port, log_level="warning")
