"""HTTP inference service for interactive label editing.

Session workflow: upload an image and a rectangular hole mask, receive the
segmenter's labels and the network's label-map completion, paint label edits
inside the hole, and re-render as often as desired; every render lands in the
session history so alternatives can be compared side by side.

Raster payloads are PNG throughout: uploaded bodies are raw PNG, and PNGs
embedded in JSON responses are base64-encoded.
"""

from __future__ import annotations

import base64
import hashlib
import io
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
from fastapi import FastAPI, File, HTTPException, Request, Response, UploadFile
from PIL import Image as PILImage

from . import data
from .generator import DOWN_FACTOR, Generator, sg_forward, sp_forward
from .pipeline import ColorPrototypeSegmenter, Segmenter, composite

MAX_UPLOAD_BYTES = 8 * 1024 * 1024
DEFAULT_TTL_SECONDS = 30 * 60
DEFAULT_HISTORY_CAP = 20
THUMBNAIL_SIZE = 128


@dataclass
class ModelBundle:
    """Immutable inference assets shared by all sessions."""

    sp: Generator
    sg: Generator
    num_categories: int
    segmenter: Segmenter
    palette: tuple = data.PALETTE_8
    categories: tuple = data.TARGET_CATEGORIES

    def __post_init__(self):
        self.sp.eval()
        self.sg.eval()
        digest = hashlib.sha256()
        for model in (self.sp, self.sg):
            for name, param in sorted(model.state_dict().items()):
                digest.update(name.encode())
                digest.update(param.numpy().tobytes())
        self.digest = digest.hexdigest()


@dataclass
class Session:
    id: str
    image: torch.Tensor          # uploaded image, [-1, 1]
    mask: torch.Tensor           # [H, W] {0, 1}
    s0_labels: torch.Tensor      # segmenter output; authoritative outside the hole
    sp_labels: torch.Tensor      # network completion of the label map
    current_labels: torch.Tensor
    created_at: float
    expires_at: float
    history: list[dict] = field(default_factory=list)
    seq: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)


def _png_bytes(pil_image: PILImage.Image) -> bytes:
    buf = io.BytesIO()
    pil_image.save(buf, format="PNG")
    return buf.getvalue()


def _labels_png(labels: torch.Tensor) -> bytes:
    return _png_bytes(PILImage.fromarray(labels.cpu().numpy().astype(np.uint8), mode="L"))


def _image_png(image: torch.Tensor) -> bytes:
    return _png_bytes(PILImage.fromarray(data.to_display(image)))


def _mask_png(mask: torch.Tensor) -> bytes:
    arr = (mask.cpu().numpy() > 0.5).astype(np.uint8) * 255
    return _png_bytes(PILImage.fromarray(arr, mode="L"))


def _b64(blob: bytes) -> str:
    return base64.b64encode(blob).decode("ascii")


def _decode_upload(blob: bytes, mode: str, what: str) -> np.ndarray:
    if len(blob) > MAX_UPLOAD_BYTES:
        raise HTTPException(status_code=413, detail=f"{what} exceeds {MAX_UPLOAD_BYTES} bytes")
    try:
        with PILImage.open(io.BytesIO(blob)) as img:
            return np.asarray(img.convert(mode))
    except Exception as e:
        raise HTTPException(status_code=400, detail=f"cannot decode {what} as an image: {e}")


class SessionStore:
    """In-process session map with TTL-based lazy expiry."""

    def __init__(self, ttl_seconds: float, history_cap: int):
        self.ttl = ttl_seconds
        self.history_cap = history_cap
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(self, **kwargs) -> Session:
        now = time.time()
        session = Session(id=uuid.uuid4().hex, created_at=now, expires_at=now + self.ttl, **kwargs)
        with self._lock:
            expired = [sid for sid, s in self._sessions.items() if s.expires_at < now]
            for sid in expired:
                del self._sessions[sid]
            self._sessions[session.id] = session
        return session

    def get(self, session_id: str) -> Session:
        with self._lock:
            session = self._sessions.get(session_id)
            if session is not None and session.expires_at < time.time():
                del self._sessions[session_id]
                session = None
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown or expired session {session_id}")
        return session


def create_app(bundle: ModelBundle, ttl_seconds: float = DEFAULT_TTL_SECONDS,
               history_cap: int = DEFAULT_HISTORY_CAP,
               static_dir: Optional[str] = None) -> FastAPI:
    """API app; with `static_dir`, also hosts the built browser editor at /."""
    app = FastAPI(title="seg-inpaint editor service")
    store = SessionStore(ttl_seconds, history_cap)
    num_categories = bundle.num_categories

    def palette_payload() -> dict:
        return {
            "palette": [list(color) for color in bundle.palette[:num_categories]],
            "categories": list(bundle.categories[:num_categories]),
        }

    @app.get("/healthz")
    def healthz():
        return {"ok": True, "model_digest": bundle.digest}

    @app.post("/sessions")
    async def create_session(image: UploadFile = File(...), mask: UploadFile = File(...),
                             labels: Optional[UploadFile] = File(None)):
        image_arr = _decode_upload(await image.read(), "RGB", "image")
        mask_arr = _decode_upload(await mask.read(), "L", "mask")
        if image_arr.shape[:2] != mask_arr.shape:
            raise HTTPException(status_code=400, detail="image and mask sizes differ")
        h, w = mask_arr.shape
        if h % DOWN_FACTOR or w % DOWN_FACTOR:
            raise HTTPException(
                status_code=400, detail=f"image size {h}x{w} must be divisible by {DOWN_FACTOR}")
        img = data.from_display(image_arr)
        hole = torch.from_numpy((mask_arr > 127).astype(np.float32))
        if hole.sum() > 0 and not data.is_single_rectangle(hole):
            raise HTTPException(
                status_code=422,
                detail="mask must contain exactly one filled axis-aligned rectangle")

        if labels is not None:
            label_arr = _decode_upload(await labels.read(), "L", "labels")
            if label_arr.shape != mask_arr.shape:
                raise HTTPException(status_code=400, detail="labels and mask sizes differ")
            if int(label_arr.max(initial=0)) >= num_categories:
                raise HTTPException(
                    status_code=422,
                    detail=f"label id {int(label_arr.max())} >= C={num_categories}")
            s0_labels = torch.from_numpy(label_arr.astype(np.int64))
        else:
            s0_labels = bundle.segmenter.segment(img)

        incomplete = data.one_hot(s0_labels, num_categories, hole=hole)
        with torch.no_grad():
            probs = sp_forward(bundle.sp, incomplete, data.apply_hole(img, hole), hole)
        sp_labels = composite(probs.argmax(dim=0), s0_labels, hole)
        session = store.create(image=img, mask=hole, s0_labels=s0_labels,
                               sp_labels=sp_labels, current_labels=sp_labels.clone())
        return {
            "id": session.id,
            "labels_png": _b64(_labels_png(s0_labels)),
            "sp_labels_png": _b64(_labels_png(sp_labels)),
            **palette_payload(),
        }

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        session = store.get(session_id)
        with session.lock:
            return {
                "id": session.id,
                "image_png": _b64(_image_png(session.image)),
                "mask_png": _b64(_mask_png(session.mask)),
                "labels_png": _b64(_labels_png(session.current_labels)),
                "sp_labels_png": _b64(_labels_png(session.sp_labels)),
                "history_len": len(session.history),
                "expires_at": session.expires_at,
                **palette_payload(),
            }

    @app.get("/sessions/{session_id}/labels")
    def get_labels(session_id: str):
        session = store.get(session_id)
        with session.lock:
            return Response(content=_labels_png(session.current_labels), media_type="image/png")

    @app.put("/sessions/{session_id}/labels")
    async def put_labels(session_id: str, request: Request):
        session = store.get(session_id)
        body = await request.body()
        label_arr = _decode_upload(body, "L", "labels")
        with session.lock:
            if label_arr.shape != tuple(session.mask.shape):
                raise HTTPException(
                    status_code=422,
                    detail=f"label layer is {label_arr.shape}, session is {tuple(session.mask.shape)}")
            if int(label_arr.max(initial=0)) >= num_categories:
                raise HTTPException(
                    status_code=422,
                    detail=f"label id {int(label_arr.max())} >= C={num_categories}")
            submitted = torch.from_numpy(label_arr.astype(np.int64))
            outside = session.mask < 0.5
            violations = int((submitted[outside] != session.s0_labels[outside]).sum())
            if violations:
                raise HTTPException(
                    status_code=422,
                    detail=f"{violations} edited pixels lie outside the hole; "
                           "edits must be confined to hole pixels")
            session.current_labels = composite(submitted, session.s0_labels, session.mask)
        return {"ok": True}

    @app.post("/sessions/{session_id}/render")
    def render(session_id: str):
        session = store.get(session_id)
        with session.lock:
            with torch.no_grad():
                onehot = data.one_hot(session.current_labels, num_categories)
                masked = data.apply_hole(session.image, session.mask)
                pred = sg_forward(bundle.sg, masked, onehot, session.mask)
                image = composite(pred, session.image, session.mask)
            image_png = _image_png(image)
            thumb = PILImage.open(io.BytesIO(image_png))
            thumb.thumbnail((THUMBNAIL_SIZE, THUMBNAIL_SIZE))
            session.history.append({
                "seq": session.seq,
                "labels_png": _labels_png(session.current_labels),
                "image_png": image_png,
            })
            session.seq += 1
            if len(session.history) > store.history_cap:
                session.history = session.history[-store.history_cap:]
            return {
                "seq": session.history[-1]["seq"],
                "image_png": _b64(image_png),
                "thumbnail_png": _b64(_png_bytes(thumb)),
            }

    @app.get("/sessions/{session_id}/history")
    def get_history(session_id: str):
        session = store.get(session_id)
        with session.lock:
            return [
                {"seq": entry["seq"],
                 "labels_png": _b64(entry["labels_png"]),
                 "image_png": _b64(entry["image_png"])}
                for entry in session.history
            ]

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="editor")

    return app
