"""Inference helpers: image conversion, per-object gradients, and scoring.

The deletion/insertion score for detection follows the pairing rule of
perturbation-based detector evaluation: each reference object is matched
to the best current detection by IoU x class-probability cosine x
objectness, and the per-object maxima are averaged.  Classification
scores are the softmax probability of the reference class.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from .models import Detection, _box_iou

DEFAULT_CONFIDENCE = 0.25


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """(h, w, 3) uint8 RGB -> (1, 3, h, w) float tensor in [0, 1]."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) RGB image, got shape {arr.shape}")
    x = torch.from_numpy(arr.astype(np.float32) / 255.0)
    return x.permute(2, 0, 1).unsqueeze(0)


def run_detect(model, image: np.ndarray, threshold: float = DEFAULT_CONFIDENCE) -> list[Detection]:
    with torch.no_grad():
        state = model.forward_full(image_to_tensor(image))
        return model.detections(state, threshold)


def object_gradients(model, image: np.ndarray, threshold: float = DEFAULT_CONFIDENCE):
    """Forward once, then backpropagate each detection's score to its branch.

    Returns (detections, activations, gradients) where activations maps
    branch index -> (h, w, c) float32 and gradients is one (h, w, c)
    float32 stack per detection.  Gradient state is independent per
    object (no accumulation between objects).
    """
    x = image_to_tensor(image)
    state = model.forward_full(x)
    detections = model.detections(state, threshold)
    activations = {
        branch: feats.detach()[0].permute(1, 2, 0).numpy().astype(np.float32)
        for branch, feats in state["features"].items()
    }
    gradients = []
    for det in detections:
        score = model.detection_score(state, det)
        feats = state["features"][det.branch_index]
        (grad,) = torch.autograd.grad(score, feats, retain_graph=True)
        gradients.append(grad[0].permute(1, 2, 0).numpy().astype(np.float32))
    return detections, activations, gradients


def score_with_perturbed_activation(model, image: np.ndarray, det: Detection, branch: int, index, delta: float) -> float:
    """Recompute one detection's score with a single activation element shifted.

    ``index`` is (row, col, channel) in the captured (h, w, c) layout.
    Used by the finite-difference verification of exported gradients.
    """
    r, c, ch = index
    state = model.forward_full(image_to_tensor(image))
    bump = torch.zeros_like(state["features"][branch])
    bump[0, ch, r, c] = delta
    state["features"] = dict(state["features"])
    state["features"][branch] = state["features"][branch] + bump
    state = _rebuild_head_state(model, state, branch)
    with torch.no_grad():
        return float(model.detection_score(state, det))


def _rebuild_head_state(model, state: dict, branch: int) -> dict:
    """Re-run whatever consumes the captured features of one branch."""
    from .models import TinyClassifier, TinyOneStageDetector, TinyTwoStageDetector

    if isinstance(model, TinyOneStageDetector):
        outs = dict(state["head_outs"])
        outs[branch] = model.heads[f"b{branch}"](state["features"][branch])
        state["head_outs"] = outs
    elif isinstance(model, TinyClassifier):
        pooled = state["features"][0].mean(dim=(2, 3))
        state["logits"] = model.classifier(pooled)
    elif isinstance(model, TinyTwoStageDetector):
        pass  # detection_score pools directly from state["features"]
    else:
        raise TypeError(f"unsupported model type {type(model)}")
    return state


def _cosine(a, b) -> float:
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def detection_similarity_score(reference_objects: list[dict], detections: list[Detection]) -> float:
    """Mean over reference objects of the best-matching detection product."""
    if not reference_objects:
        raise ValueError("detection scoring needs at least one reference object")
    if not detections:
        return 0.0
    total = 0.0
    for ref in reference_objects:
        best = 0.0
        for det in detections:
            iou = _box_iou(tuple(ref["bbox"]), det.bbox)
            if iou == 0.0:
                continue
            sim = _cosine(ref["class_probs"], det.class_probs)
            best = max(best, iou * sim * det.objectness)
        total += best
    return total / len(reference_objects)


def score_images(model, images: list[np.ndarray], reference: dict) -> list[float]:
    """One deletion/insertion score per image, order-preserving."""
    scores = []
    if model.task == "classification":
        class_index = int(reference["class_index"])
        if not 0 <= class_index < len(model.class_names):
            raise ValueError(f"class_index {class_index} out of range")
        for image in images:
            with torch.no_grad():
                state = model.forward_full(image_to_tensor(image))
                probs = torch.softmax(state["logits"][0], dim=0)
            scores.append(float(probs[class_index]))
    else:
        objects = reference.get("objects")
        if not objects:
            raise ValueError("detection reference must carry a non-empty objects list")
        for obj in objects:
            if "bbox" not in obj or len(obj.get("class_probs") or []) != len(model.class_names):
                raise ValueError("each reference object needs bbox and class_probs of model arity")
        threshold = float(reference.get("confidence_threshold", DEFAULT_CONFIDENCE))
        for image in images:
            detections = run_detect(model, image, threshold)
            scores.append(detection_similarity_score(objects, detections))
    return scores
