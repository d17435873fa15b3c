"""HTTP client for a model-hosting scorer.

Wire protocol (JSON over HTTP/1.1):

* ``GET  /health`` -> ``{"model_id": str, "task": str, "status": str}``
* ``POST /score``  -> ``{"task", "reference", "images": [b64 PNG], "seed"}``
  answered by ``{"scores": [float, ...]}`` in request order
* ``POST /detect`` -> ``{"image": b64 PNG}`` answered by
  ``{"objects": [{"bbox", "score", "class_label", "class_probs"}, ...]}``

Images travel as base64 PNG (lossless and debuggable; fine at the
hundred-images-per-curve scale).  Score responses are order-preserving;
retries are safe because scoring is deterministic server-side.
"""

from __future__ import annotations

import base64
import io

import numpy as np
import requests

from .errors import ScorerRequestError, ScorerTimeoutError


def encode_image_png_b64(image: np.ndarray) -> str:
    """Encode an (h, w, 3) uint8 RGB image as base64 PNG text."""
    from PIL import Image

    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) image, got {arr.shape}")
    buf = io.BytesIO()
    Image.fromarray(arr.astype(np.uint8), mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_image_png_b64(data: str) -> np.ndarray:
    """Inverse of :func:`encode_image_png_b64`."""
    from PIL import Image

    buf = io.BytesIO(base64.b64decode(data))
    return np.asarray(Image.open(buf).convert("RGB"))


class ScorerClient:
    """Client for the /health, /score, and /detect endpoints.

    Health is checked once before the first real request; the announced
    task is reused in score payloads.  Timeouts raise
    :class:`ScorerTimeoutError` after ``retries`` attempts (retrying is
    idempotent), HTTP 4xx raises :class:`ScorerRequestError` with the
    server's message attached.
    """

    def __init__(self, endpoint: str, timeout_ms: int = 60000, max_batch: int = 32, retries: int = 2, session=None):
        self.endpoint = endpoint.rstrip("/")
        self.timeout_s = timeout_ms / 1000.0
        self.max_batch = max_batch
        self.retries = retries
        self._session = session or requests.Session()
        self._health: dict | None = None

    # -- low-level ----------------------------------------------------------

    def _request(self, method: str, path: str, payload=None):
        url = f"{self.endpoint}{path}"
        last_timeout = None
        for _ in range(max(1, self.retries)):
            try:
                resp = self._session.request(method, url, json=payload, timeout=self.timeout_s)
            except requests.Timeout as exc:
                last_timeout = exc
                continue
            except requests.ConnectionError as exc:
                raise ScorerRequestError(f"cannot reach scorer at {url}: {exc}") from exc
            if 400 <= resp.status_code < 500:
                try:
                    message = resp.json()
                except ValueError:
                    message = resp.text
                raise ScorerRequestError(
                    f"scorer rejected {method} {path} with HTTP {resp.status_code}",
                    status=resp.status_code,
                    server_message=message,
                )
            if resp.status_code >= 500:
                raise ScorerRequestError(
                    f"scorer failed on {method} {path} with HTTP {resp.status_code}",
                    status=resp.status_code,
                    server_message=resp.text,
                )
            return resp.json()
        raise ScorerTimeoutError(f"scorer timed out on {method} {path} after {self.retries} attempts") from last_timeout

    # -- protocol operations -------------------------------------------------

    def health(self) -> dict:
        """Fetch (and cache) /health; raises if the service is not OK."""
        if self._health is None:
            info = self._request("GET", "/health")
            if info.get("status") not in ("ok", "ready"):
                raise ScorerRequestError(f"scorer unhealthy: {info}")
            self._health = info
        return self._health

    @property
    def task(self) -> str:
        return self.health().get("task", "classification")

    @property
    def model_id(self) -> str:
        return self.health().get("model_id", "")

    def score_batch(self, images, reference, seed: int = 0) -> list[float]:
        """Score up to ``max_batch`` images; response order matches input order."""
        images = list(images)
        if len(images) > self.max_batch:
            raise ValueError(f"batch of {len(images)} exceeds max_batch {self.max_batch}")
        if not images:
            return []
        payload = {
            "task": self.task,
            "reference": reference,
            "images": [encode_image_png_b64(im) for im in images],
            "seed": seed,
        }
        result = self._request("POST", "/score", payload)
        scores = result.get("scores")
        if not isinstance(scores, list) or len(scores) != len(images):
            raise ScorerRequestError(f"scorer returned {type(scores)} of wrong length for {len(images)} images")
        return [float(s) for s in scores]

    def score_images(self, images, reference, seed: int = 0) -> list[float]:
        """Score any number of images by chunking into max_batch requests."""
        images = list(images)
        out: list[float] = []
        for start in range(0, len(images), self.max_batch):
            out.extend(self.score_batch(images[start : start + self.max_batch], reference, seed))
        return out

    def detect(self, image) -> list[dict]:
        """Reference detections (or the top class, for classifiers) for one image."""
        result = self._request("POST", "/detect", {"image": encode_image_png_b64(image)})
        return list(result.get("objects", []))

    def curve_scorer(self, reference, seed: int = 0):
        """Batch-scoring callable suitable for the perturbation-curve runner."""

        def score(images):
            return self.score_images(images, reference, seed)

        return score


def detection_reference(objects, confidence_threshold=None) -> dict:
    """Score-request reference for detection: the original detections.

    ``objects`` is an iterable of dicts with bbox / class_probs (and
    optionally class_label); the optional threshold pins the server-side
    confidence cutoff so runs are comparable.
    """
    ref = {
        "objects": [
            {
                "bbox": list(o["bbox"]),
                "class_probs": list(o.get("class_probs", [])),
                "class_label": o.get("class_label", ""),
            }
            for o in objects
        ]
    }
    if confidence_threshold is not None:
        ref["confidence_threshold"] = float(confidence_threshold)
    return ref


def classification_reference(class_index: int) -> dict:
    """Score-request reference for classification: the predicted class."""
    return {"class_index": int(class_index)}
