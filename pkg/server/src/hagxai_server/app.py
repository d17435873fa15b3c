"""HTTP service: /health, /score, and /detect.

Requests are validated by pydantic (structural problems answer 422 with
a machine-readable body; semantic problems answer 400).  The model runs
in eval mode with seeded weights, so identical requests produce
identical responses; a lock keeps one inference in flight per process.
"""

from __future__ import annotations

import base64
import binascii
import io
import threading

import numpy as np
from fastapi import FastAPI, HTTPException
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, Field

from .inference import DEFAULT_CONFIDENCE, run_detect, score_images
from .models import load_model


class ScoreRequest(BaseModel):
    task: str
    reference: dict
    images: list[str] = Field(min_length=0)
    seed: int = 0


class DetectRequest(BaseModel):
    image: str


def _decode_image(data: str, what: str) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
        with Image.open(io.BytesIO(raw)) as img:
            return np.asarray(img.convert("RGB"))
    except (binascii.Error, UnidentifiedImageError, OSError) as exc:
        raise HTTPException(status_code=400, detail=f"{what}: not a decodable base64 PNG ({exc})") from exc


def create_app(model_id: str, seed: int = 0) -> FastAPI:
    model = load_model(model_id, seed=seed)
    lock = threading.Lock()
    app = FastAPI(title="hagxai-server", version="0.1.0")

    @app.get("/health")
    def health():
        return {"model_id": model_id, "task": model.task, "status": "ok"}

    @app.post("/score")
    def score(request: ScoreRequest):
        if request.task != model.task:
            raise HTTPException(status_code=400, detail=f"task {request.task!r} does not match hosted task {model.task!r}")
        images = [_decode_image(data, f"images[{i}]") for i, data in enumerate(request.images)]
        try:
            with lock:
                scores = score_images(model, images, request.reference)
        except (ValueError, KeyError, TypeError) as exc:
            raise HTTPException(status_code=400, detail=f"invalid reference: {exc}") from exc
        return {"scores": scores}

    @app.post("/detect")
    def detect(request: DetectRequest):
        image = _decode_image(request.image, "image")
        with lock:
            detections = run_detect(model, image, DEFAULT_CONFIDENCE)
        return {
            "objects": [
                {
                    "bbox": list(det.bbox),
                    "score": det.score,
                    "class_label": model.class_names[det.class_index],
                    "class_probs": det.class_probs,
                }
                for det in detections
            ]
        }

    return app
