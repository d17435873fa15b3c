"""Untrained gradient-based saliency methods over explanation bundles.

Four methods share one skeleton — per detected object, combine the
object's gradient stack with its branch's activation stack into a single
map, rectify, max-min normalize, upsample to image resolution, then sum
the per-object maps:

* ``gc``    — channel weights are global-average-pooled gradients
* ``gcpp``  — per-position coefficients reweight rectified gradients
              before the spatial pooling
* ``fgc``   — no pooling: elementwise gradient x activation product
* ``fgcpp`` — like ``fgc`` with the gradients rectified first

The returned map is the plain object sum (values can exceed 1 where
normalized object maps overlap).  Rendering helpers re-normalize for
display only; metric code consumes the raw sum, and the metadata records
that no post-sum normalization was applied.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bundles import ExplanationBundle
from .errors import DataError
from .tensor_ops import max_min_normalize, resize_bilinear

METHODS = ("gc", "gcpp", "fgc", "fgcpp", "hag")


@dataclass
class SaliencyMap:
    """A per-pixel importance map at image resolution."""

    image_id: str
    map: np.ndarray  # float32 (image_h, image_w)
    method: str
    metadata: dict = field(default_factory=dict)

    def display_map(self) -> np.ndarray:
        """Max-min normalized copy for rendering."""
        return max_min_normalize(self.map)


def _combine_gc(activations: np.ndarray, gradients: np.ndarray) -> np.ndarray:
    grads = gradients.astype(np.float64)
    weights = grads.mean(axis=(0, 1))
    return np.tensordot(activations.astype(np.float64), weights, axes=([2], [0]))


def _combine_gcpp(activations: np.ndarray, gradients: np.ndarray) -> np.ndarray:
    acts = activations.astype(np.float64)
    grads = gradients.astype(np.float64)
    act_sums = acts.sum(axis=(0, 1))  # per channel
    denom = 2.0 * grads**2 + act_sums[None, None, :] * grads**3
    alpha = np.divide(grads**2, denom, out=np.zeros_like(grads), where=denom != 0)
    weights = (alpha * np.maximum(grads, 0.0)).mean(axis=(0, 1))
    return np.tensordot(acts, weights, axes=([2], [0]))


def _combine_fgc(activations: np.ndarray, gradients: np.ndarray) -> np.ndarray:
    return (gradients.astype(np.float64) * activations.astype(np.float64)).sum(axis=2)


def _combine_fgcpp(activations: np.ndarray, gradients: np.ndarray) -> np.ndarray:
    rect = np.maximum(gradients.astype(np.float64), 0.0)
    return (rect * activations.astype(np.float64)).sum(axis=2)


_COMBINERS = {"gc": _combine_gc, "gcpp": _combine_gcpp, "fgc": _combine_fgc, "fgcpp": _combine_fgcpp}


def object_saliency(bundle: ExplanationBundle, object_index: int, method: str) -> np.ndarray:
    """Normalized saliency contribution of one object, at image resolution.

    Values lie in [0, 1]; the full method output is the sum of these over
    all objects.
    """
    combine = _COMBINERS[method]
    obj = bundle.objects[object_index]
    branch = bundle.branches[obj.branch_index]
    raw = combine(branch.activations, obj.gradients)
    rectified = np.maximum(raw, 0.0).astype(np.float32)
    normalized = max_min_normalize(rectified)
    return resize_bilinear(normalized, bundle.image_h, bundle.image_w)


def _explain(bundle: ExplanationBundle, method: str) -> SaliencyMap:
    if method not in _COMBINERS:
        raise ValueError(f"unknown method {method!r}; expected one of {sorted(_COMBINERS)}")
    total = np.zeros((bundle.image_h, bundle.image_w), dtype=np.float64)
    if not bundle.objects:
        warnings.warn(f"{bundle.image_id}: bundle has no objects; saliency is all zeros", stacklevel=3)
    for index, _ in sorted(enumerate(bundle.objects), key=lambda pair: pair[1].object_id):
        total += object_saliency(bundle, index, method).astype(np.float64)
    layer_names = sorted({b.layer_name for b in bundle.branches})
    metadata = {
        "method": method,
        "layer_name": layer_names[0] if len(layer_names) == 1 else layer_names,
        "objects": [
            {"object_id": o.object_id, "score": o.score, "bbox": list(o.bbox), "class_label": o.class_label}
            for o in bundle.objects
        ],
        "post_sum_normalization": "none",
    }
    return SaliencyMap(image_id=bundle.image_id, map=total.astype(np.float32), method=method, metadata=metadata)


def grad_cam(bundle: ExplanationBundle) -> SaliencyMap:
    """Channel weights are the global average pool of each object's gradients."""
    return _explain(bundle, "gc")


def grad_cam_pp(bundle: ExplanationBundle) -> SaliencyMap:
    """Position-wise coefficients sharpen the pooled weights.

    The coefficient at each position is ``g^2 / (2 g^2 + sum(A) * g^3)``
    (per channel, with the activation summed spatially), taken as zero
    where the denominator vanishes; it multiplies the rectified gradient
    before the spatial pooling.
    """
    return _explain(bundle, "gcpp")


def fullgrad_cam(bundle: ExplanationBundle) -> SaliencyMap:
    """No gradient pooling: elementwise gradient-activation product."""
    return _explain(bundle, "fgc")


def fullgrad_cam_pp(bundle: ExplanationBundle) -> SaliencyMap:
    """Like :func:`fullgrad_cam` with gradients rectified first."""
    return _explain(bundle, "fgcpp")


def save_saliency(sal: SaliencyMap, out_dir, write_png: bool = False, colormap: str = "viridis") -> Path:
    """Persist a saliency map as NPY + metadata JSON (+ optional PNGs).

    ``<image_id>__<method>.npy`` holds the raw map; the sibling JSON holds
    the method, layer, and object metadata.  With ``write_png`` a
    grayscale 8-bit PNG of the display-normalized map is written, plus a
    colormapped rendering whose colormap name is recorded in the
    metadata.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{sal.image_id}__{sal.method}"
    np.save(out_dir / f"{stem}.npy", sal.map.astype(np.float32))
    metadata = dict(sal.metadata)
    metadata["image_id"] = sal.image_id
    metadata["method"] = sal.method
    if write_png:
        from PIL import Image

        display = sal.display_map()
        gray = (display * 255.0 + 0.5).astype(np.uint8)
        Image.fromarray(gray, mode="L").save(out_dir / f"{stem}.png")
        import matplotlib

        rgba = (matplotlib.colormaps[colormap](display) * 255.0 + 0.5).astype(np.uint8)
        Image.fromarray(rgba[:, :, :3], mode="RGB").save(out_dir / f"{stem}_heatmap.png")
        metadata["heatmap_colormap"] = colormap
    (out_dir / f"{stem}.json").write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out_dir / f"{stem}.npy"


def load_saliency_dir(in_dir) -> list[SaliencyMap]:
    """Load every saliency artifact written by :func:`save_saliency`."""
    in_dir = Path(in_dir)
    out = []
    for npy_path in sorted(in_dir.glob("*.npy")):
        meta_path = npy_path.with_suffix(".json")
        if not meta_path.exists():
            raise DataError(f"saliency file {npy_path} has no metadata JSON")
        metadata = json.loads(meta_path.read_text(encoding="utf-8"))
        out.append(
            SaliencyMap(
                image_id=metadata["image_id"],
                map=np.load(npy_path).astype(np.float32),
                method=metadata["method"],
                metadata=metadata,
            )
        )
    return out
