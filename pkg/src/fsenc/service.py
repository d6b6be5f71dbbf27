"""HTTP inference/editing API behind the interactive UI.

Upload an image, get both reconstructions back, then iterate on edits and
style mixes. Inversion records live in an in-memory LRU store; model
inference is serialized behind a lock so identical requests return
byte-identical PNGs.
"""

from __future__ import annotations

import threading
import uuid
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .checkpoint import file_sha256
from .data import image_to_png_bytes, png_bytes_to_image
from .editing import ALPHA_RANGE, EditDirection, apply_direction, edit_feature, \
    load_directions, style_mix
from .encoder import InversionResult, invert
from .metrics import psnr

__all__ = ["create_app", "MAX_UPLOAD_BYTES"]

MAX_UPLOAD_BYTES = 4 * 1024 * 1024


@dataclass
class InversionRecord:
    id: str
    inversion: InversionResult
    source_png: bytes
    x1_png: bytes
    x2_png: bytes
    psnr_x1: float
    psnr_x2: float


class RecordStore:
    """Thread-safe LRU map of inversion records."""

    def __init__(self, capacity: int = 64):
        self.capacity = capacity
        self._lock = threading.Lock()
        self._records: OrderedDict[str, InversionRecord] = OrderedDict()

    def put(self, record: InversionRecord) -> None:
        with self._lock:
            self._records[record.id] = record
            self._records.move_to_end(record.id)
            while len(self._records) > self.capacity:
                self._records.popitem(last=False)

    def get(self, record_id: str) -> InversionRecord | None:
        with self._lock:
            record = self._records.get(record_id)
            if record is not None:
                self._records.move_to_end(record_id)
            return record

    def summaries(self) -> list[dict]:
        with self._lock:
            return [{"id": r.id, "psnr_x1": r.psnr_x1, "psnr_x2": r.psnr_x2}
                    for r in self._records.values()]


def _png_response(data: bytes) -> Response:
    return Response(content=data, media_type="image/png")


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"detail": message})


class EditBody(BaseModel):
    id: str
    direction_id: str
    alpha: float


class MixBody(BaseModel):
    latent_from_id: str
    feature_from_id: str


def create_app(ckpt_path=None, directions_dir=None, capacity: int = 64,
               ui_dir=None) -> FastAPI:
    """Build the service; ``ckpt_path=None`` yields a 503-ing skeleton."""
    app = FastAPI(title="fsenc editing service", version="0.1.0")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])

    state = {"bundle": None, "hash": None, "directions": {}}
    store = RecordStore(capacity)
    model_lock = threading.Lock()

    if ckpt_path is not None:
        from .training import load_bundle
        state["bundle"] = load_bundle(ckpt_path)
        state["hash"] = file_sha256(ckpt_path)
    if directions_dir is not None:
        for d in load_directions(directions_dir):
            state["directions"][d.name] = d

    def bundle_or_none():
        return state["bundle"]

    @app.get("/api/health")
    def health():
        loaded = state["bundle"] is not None
        return {"status": "ok" if loaded else "no model",
                "checkpoint_hash": state["hash"]}

    @app.post("/api/invert")
    async def invert_endpoint(request: Request):
        bundle = bundle_or_none()
        if bundle is None:
            return _error(503, "model not loaded")
        body = await request.body()
        if len(body) > MAX_UPLOAD_BYTES:
            return _error(413, f"upload exceeds {MAX_UPLOAD_BYTES} bytes")
        if not body:
            return _error(400, "empty body; send a PNG image")
        try:
            image = png_bytes_to_image(body)
        except Exception:
            return _error(400, "body is not a decodable image")
        res = bundle.encoder.spec.input_resolution
        if tuple(image.shape[-2:]) != (res, res):
            import torch.nn.functional as F
            image = F.interpolate(image.unsqueeze(0), size=(res, res),
                                  mode="bilinear", align_corners=False)[0]

        with model_lock:
            inv = invert(bundle.encoder, bundle.generator, image, bundle.eval_noise)
        record = InversionRecord(
            id=uuid.uuid4().hex,
            inversion=inv,
            source_png=image_to_png_bytes(image),
            x1_png=image_to_png_bytes(inv.x1),
            x2_png=image_to_png_bytes(inv.x2 if inv.x2 is not None else inv.x1),
            psnr_x1=psnr(inv.x1, image),
            psnr_x2=psnr(inv.x2 if inv.x2 is not None else inv.x1, image))
        store.put(record)
        return {
            "id": record.id,
            "psnr_x1": record.psnr_x1,
            "psnr_x2": record.psnr_x2,
            "urls": {
                "source": f"/api/inversions/{record.id}/image?variant=source",
                "x1": f"/api/inversions/{record.id}/image?variant=x1",
                "x2": f"/api/inversions/{record.id}/image?variant=x2",
            },
        }

    @app.get("/api/inversions")
    def list_inversions():
        """Currently stored records, oldest first; lets the UI restore a session."""
        return store.summaries()

    @app.get("/api/inversions/{record_id}/image")
    def inversion_image(record_id: str, variant: str = "x2"):
        record = store.get(record_id)
        if record is None:
            return _error(404, f"unknown inversion {record_id!r}")
        if variant == "x1":
            return _png_response(record.x1_png)
        if variant == "x2":
            return _png_response(record.x2_png)
        if variant == "source":
            return _png_response(record.source_png)
        return _error(400, f"unknown variant {variant!r}")

    @app.get("/api/directions")
    def directions_endpoint():
        return [{"id": name, "name": name, "source": d.source,
                 "block_range": list(d.block_range)}
                for name, d in sorted(state["directions"].items())]

    @app.post("/api/edit")
    def edit_endpoint(body: EditBody):
        bundle = bundle_or_none()
        if bundle is None:
            return _error(503, "model not loaded")
        record = store.get(body.id)
        if record is None:
            return _error(404, f"unknown inversion {body.id!r}")
        direction = state["directions"].get(body.direction_id)
        if direction is None:
            return _error(404, f"unknown direction {body.direction_id!r}")
        if not ALPHA_RANGE[0] <= body.alpha <= ALPHA_RANGE[1]:
            return _error(400, f"alpha {body.alpha} outside {list(ALPHA_RANGE)}")

        inv = record.inversion
        with model_lock:
            w_edit = apply_direction(inv.w, direction, body.alpha)
            f_edit = edit_feature(inv.feature, inv.w, w_edit, bundle.eval_noise,
                                  bundle.generator)
            import torch
            with torch.no_grad():
                image = bundle.generator.synthesize_with_feature(
                    w_edit, f_edit, bundle.eval_noise)
        return _png_response(image_to_png_bytes(image))

    @app.post("/api/mix")
    def mix_endpoint(body: MixBody):
        bundle = bundle_or_none()
        if bundle is None:
            return _error(503, "model not loaded")
        rec_w = store.get(body.latent_from_id)
        if rec_w is None:
            return _error(404, f"unknown inversion {body.latent_from_id!r}")
        rec_f = store.get(body.feature_from_id)
        if rec_f is None:
            return _error(404, f"unknown inversion {body.feature_from_id!r}")
        with model_lock:
            image = style_mix(rec_w.inversion, rec_f.inversion, bundle.eval_noise,
                              bundle.generator)
        return _png_response(image_to_png_bytes(image))

    ui = _find_ui_dir(ui_dir)
    if ui is not None:
        app.mount("/", StaticFiles(directory=ui, html=True), name="ui")
    return app


def _find_ui_dir(ui_dir) -> Path | None:
    if ui_dir is not None:
        return Path(ui_dir)
    candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    return candidate if candidate.is_dir() else None
