"""Built-in models with deterministic seeded weights.

Three small CPU models cover the hosting surfaces: a classifier, a
one-stage multi-branch detector (two scale branches, leaky-ReLU
activations), and a two-stage detector (proposals from an objectness map
over a single backbone feature).  They are reference hosts for the
export/scoring protocol, not trained vision models; real models can be
added to the registry as long as they expose the same methods.

Each model provides:

* ``task`` / ``class_names`` / ``default_layer``
* ``forward_full(x)`` -> dict of branch feature tensors (kept in the
  autograd graph) plus whatever the head needs
* ``detections(state, threshold)`` -> list of :class:`Detection`
* ``detection_score(state, det)`` -> differentiable scalar in [0, 1]
* ``capture_branches(layer_name)`` -> branch (id, name) pairs validated
  against the requested capture layer
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

MAX_DETECTIONS = 10
NMS_IOU = 0.5


@dataclass
class Detection:
    """One detected object with everything needed to recompute its score."""

    branch_index: int
    cell: tuple[int, int]
    class_index: int
    score: float
    objectness: float
    bbox: tuple[float, float, float, float]
    class_probs: list[float]


def _box_iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    ix0, iy0 = max(ax0, bx0), max(ay0, by0)
    ix1, iy1 = min(ax1, bx1), min(ay1, by1)
    inter = max(0.0, ix1 - ix0) * max(0.0, iy1 - iy0)
    if inter == 0.0:
        return 0.0
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def _nms(detections: list[Detection]) -> list[Detection]:
    kept: list[Detection] = []
    for det in sorted(detections, key=lambda d: -d.score):
        if all(_box_iou(det.bbox, k.bbox) <= NMS_IOU for k in kept):
            kept.append(det)
        if len(kept) >= MAX_DETECTIONS:
            break
    return kept


def _anchor_box(cell, stride, side, image_hw):
    r, c = cell
    h, w = image_hw
    cx, cy = (c + 0.5) * stride, (r + 0.5) * stride
    half = side / 2.0
    x0, y0 = max(cx - half, 0.0), max(cy - half, 0.0)
    x1, y1 = min(cx + half, float(w)), min(cy + half, float(h))
    return (x0, y0, x1, y1)


class TinyClassifier(nn.Module):
    task = "classification"
    class_names = ("car", "truck", "bus", "person")
    default_layer = "features.last"

    def __init__(self, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.features = nn.Sequential(
            nn.Conv2d(3, 8, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(8, 16, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(16, 16, 3, padding=1),
            nn.ReLU(),
        )
        self.classifier = nn.Linear(16, len(self.class_names))
        self.eval()

    def capture_branches(self, layer_name: str):
        if layer_name not in (self.default_layer, "features"):
            raise KeyError(f"layer {layer_name!r} does not resolve to a capture point (use {self.default_layer!r})")
        return [(0, self.default_layer)]

    def forward_full(self, x: torch.Tensor) -> dict:
        feats = self.features(x)
        pooled = feats.mean(dim=(2, 3))
        logits = self.classifier(pooled)
        return {"features": {0: feats}, "logits": logits, "image_hw": (x.shape[2], x.shape[3])}

    @torch.no_grad()
    def detections(self, state: dict, threshold: float) -> list[Detection]:
        probs = F.softmax(state["logits"][0], dim=0)
        k = int(torch.argmax(probs))
        h, w = state["image_hw"]
        return [
            Detection(
                branch_index=0,
                cell=(0, 0),
                class_index=k,
                score=float(probs[k]),
                objectness=float(probs[k]),
                bbox=(0.0, 0.0, float(w), float(h)),
                class_probs=[float(p) for p in probs],
            )
        ]

    def detection_score(self, state: dict, det: Detection) -> torch.Tensor:
        return F.softmax(state["logits"][0], dim=0)[det.class_index]


class TinyOneStageDetector(nn.Module):
    """Two scale branches (strides 4 and 8) with leaky-ReLU neck convs."""

    task = "detection"
    class_names = ("car", "truck", "bus", "person")
    default_layer = "neck"
    strides = (4, 8)
    anchor_scale = 3.5

    def __init__(self, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.stem = nn.Sequential(
            nn.Conv2d(3, 8, 3, stride=2, padding=1),
            nn.LeakyReLU(0.1),
            nn.Conv2d(8, 16, 3, stride=2, padding=1),
            nn.LeakyReLU(0.1),
        )
        self.down = nn.Sequential(nn.Conv2d(16, 16, 3, stride=2, padding=1), nn.LeakyReLU(0.1))
        self.neck = nn.ModuleDict(
            {
                "b0": nn.Sequential(nn.Conv2d(16, 12, 3, padding=1), nn.LeakyReLU(0.1)),
                "b1": nn.Sequential(nn.Conv2d(16, 12, 3, padding=1), nn.LeakyReLU(0.1)),
            }
        )
        n_out = 1 + len(self.class_names)
        self.heads = nn.ModuleDict({"b0": nn.Conv2d(12, n_out, 1), "b1": nn.Conv2d(12, n_out, 1)})
        # the default init leaves features (and hence class posteriors)
        # nearly flat; amplify so the seeded model produces detections
        # whose scores actually depend on the input
        with torch.no_grad():
            for module in self.modules():
                if isinstance(module, nn.Conv2d):
                    module.weight *= 2.5
            for head in self.heads.values():
                head.weight[1:] *= 3.2  # x8 total on class logits
                head.bias[0] = 0.5  # objectness prior
        self.eval()

    def capture_branches(self, layer_name: str):
        if layer_name != "neck":
            raise KeyError(f"layer {layer_name!r} does not resolve to a capture point (use 'neck')")
        return [(0, "neck.b0"), (1, "neck.b1")]

    def forward_full(self, x: torch.Tensor) -> dict:
        base = self.stem(x)
        feats = {0: self.neck["b0"](base), 1: self.neck["b1"](self.down(base))}
        outs = {0: self.heads["b0"](feats[0]), 1: self.heads["b1"](feats[1])}
        return {"features": feats, "head_outs": outs, "image_hw": (x.shape[2], x.shape[3])}

    @torch.no_grad()
    def detections(self, state: dict, threshold: float) -> list[Detection]:
        found = []
        for branch, out in state["head_outs"].items():
            obj = torch.sigmoid(out[0, 0])
            probs = F.softmax(out[0, 1:], dim=0)
            best_prob, best_class = probs.max(dim=0)
            score = obj * best_prob
            stride = self.strides[branch]
            for r, c in (score > threshold).nonzero(as_tuple=False).tolist():
                found.append(
                    Detection(
                        branch_index=branch,
                        cell=(r, c),
                        class_index=int(best_class[r, c]),
                        score=float(score[r, c]),
                        objectness=float(obj[r, c]),
                        bbox=_anchor_box((r, c), stride, self.anchor_scale * stride, state["image_hw"]),
                        class_probs=[float(p) for p in probs[:, r, c]],
                    )
                )
        return _nms(found)

    def detection_score(self, state: dict, det: Detection) -> torch.Tensor:
        out = state["head_outs"][det.branch_index]
        r, c = det.cell
        obj = torch.sigmoid(out[0, 0, r, c])
        probs = F.softmax(out[0, 1:, r, c], dim=0)
        return obj * probs[det.class_index]


class TinyTwoStageDetector(nn.Module):
    """Proposals from an objectness map, classified from pooled backbone features."""

    task = "detection"
    class_names = ("car", "truck", "bus", "person")
    default_layer = "backbone.last"
    stride = 4
    anchor_scale = 6.0
    max_proposals = 12

    def __init__(self, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.backbone = nn.Sequential(
            nn.Conv2d(3, 8, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(8, 16, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(16, 16, 3, padding=1),
            nn.ReLU(),
        )
        self.rpn_obj = nn.Conv2d(16, 1, 1)
        self.head = nn.Linear(16, len(self.class_names))
        self.eval()

    def capture_branches(self, layer_name: str):
        if layer_name not in (self.default_layer, "backbone"):
            raise KeyError(f"layer {layer_name!r} does not resolve to a capture point (use {self.default_layer!r})")
        return [(0, self.default_layer)]

    def forward_full(self, x: torch.Tensor) -> dict:
        feats = self.backbone(x)
        obj = torch.sigmoid(self.rpn_obj(feats))[0, 0]
        return {"features": {0: feats}, "objectness": obj, "image_hw": (x.shape[2], x.shape[3])}

    def _pooled_probs(self, state: dict, cell) -> torch.Tensor:
        feats = state["features"][0]
        fh, fw = feats.shape[2], feats.shape[3]
        r, c = cell
        half = int(round(self.anchor_scale / 2))
        r0, r1 = max(r - half, 0), min(r + half + 1, fh)
        c0, c1 = max(c - half, 0), min(c + half + 1, fw)
        pooled = feats[0, :, r0:r1, c0:c1].mean(dim=(1, 2))
        return F.softmax(self.head(pooled), dim=0)

    @torch.no_grad()
    def detections(self, state: dict, threshold: float) -> list[Detection]:
        obj = state["objectness"]
        flat = obj.flatten()
        top = torch.topk(flat, min(self.max_proposals, flat.numel()))
        found = []
        for value, flat_idx in zip(top.values.tolist(), top.indices.tolist()):
            if value <= threshold:
                continue
            r, c = divmod(flat_idx, obj.shape[1])
            probs = self._pooled_probs(state, (r, c))
            k = int(torch.argmax(probs))
            found.append(
                Detection(
                    branch_index=0,
                    cell=(r, c),
                    class_index=k,
                    score=float(probs[k]),
                    objectness=value,
                    bbox=_anchor_box((r, c), self.stride, self.anchor_scale * self.stride, state["image_hw"]),
                    class_probs=[float(p) for p in probs],
                )
            )
        return _nms(found)

    def detection_score(self, state: dict, det: Detection) -> torch.Tensor:
        return self._pooled_probs(state, det.cell)[det.class_index]


REGISTRY = {
    "tiny-cls": TinyClassifier,
    "tiny-det": TinyOneStageDetector,
    "tiny-det2": TinyTwoStageDetector,
}


def load_model(model_id: str, seed: int = 0):
    if model_id not in REGISTRY:
        raise KeyError(f"unknown model {model_id!r}; available: {sorted(REGISTRY)}")
    return REGISTRY[model_id](seed=seed)
