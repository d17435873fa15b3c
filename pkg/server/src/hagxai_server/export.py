"""Explanation-bundle export: one archive per image.

Archive layout (shared file schema with the explanation toolkit):
``manifest.json`` plus ``act_b{i}.npy`` per captured branch and
``grad_o{j}.npy`` per detected object, all NPY format 1.0, little-endian
float32, C-order.  Activations are captured post-activation; the
manifest records that convention.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib import format as npy_format
from PIL import Image

from .inference import DEFAULT_CONFIDENCE, object_gradients
from .models import load_model

EXPORTER_VERSION = "hagxai-server/0.1.0"


@dataclass
class ExportJob:
    model_id: str
    layer_name: str | None
    image_paths: list = field(default_factory=list)
    out_dir: Path = Path("bundles")
    confidence: float = DEFAULT_CONFIDENCE
    device: str = "cpu"
    seed: int = 0


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    npy_format.write_array(buf, np.ascontiguousarray(arr, dtype="<f4"), version=(1, 0))
    return buf.getvalue()


def export_image_bundle(model, image: np.ndarray, image_id: str, layer_name: str, out_dir: Path, confidence: float, model_id: str) -> Path:
    branch_specs = model.capture_branches(layer_name)
    detections, activations, gradients = object_gradients(model, image, confidence)

    out = Path(out_dir) / image_id
    out.mkdir(parents=True, exist_ok=True)
    h, w = image.shape[:2]
    branch_index_map = {branch_id: i for i, (branch_id, _) in enumerate(branch_specs)}
    manifest = {
        "image_id": image_id,
        "image_h": int(h),
        "image_w": int(w),
        "layer_name": layer_name,
        "branches": [
            {"branch_id": branch_id, "shape": list(activations[branch_id].shape), "layer_name": branch_layer}
            for branch_id, branch_layer in branch_specs
        ],
        "objects": [
            {
                "object_id": j,
                "branch_index": branch_index_map[det.branch_index],
                "score": det.score,
                "bbox": list(det.bbox),
                "class_label": model.class_names[det.class_index],
            }
            for j, det in enumerate(detections)
        ],
        "model_id": model_id,
        "exporter_version": EXPORTER_VERSION,
        "capture": "post-activation",
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for i, (branch_id, _) in enumerate(branch_specs):
        (out / f"act_b{i}.npy").write_bytes(_npy_bytes(activations[branch_id]))
    for j, grad in enumerate(gradients):
        (out / f"grad_o{j}.npy").write_bytes(_npy_bytes(grad))
    return out


def export_bundles(job: ExportJob) -> list[Path]:
    """Run detection and per-object backprop for every image in the job."""
    model = load_model(job.model_id, seed=job.seed)
    layer = job.layer_name or model.default_layer
    model.capture_branches(layer)  # fail fast on unresolvable layers
    written = []
    for path in job.image_paths:
        path = Path(path)
        image = np.asarray(Image.open(path).convert("RGB"))
        try:
            written.append(
                export_image_bundle(model, image, path.stem, layer, Path(job.out_dir), job.confidence, job.model_id)
            )
        except Exception as exc:
            raise RuntimeError(f"export failed for image {path.stem!r}: {exc}") from exc
    return written
