"""Model registry and inference behavior."""

import numpy as np
import pytest
import torch

from conftest import synthetic_image
from hagxai_server.inference import object_gradients, run_detect, score_images
from hagxai_server.models import _box_iou, load_model


class TestRegistry:
    def test_known_models(self):
        for mid, task in (("tiny-cls", "classification"), ("tiny-det", "detection"), ("tiny-det2", "detection")):
            assert load_model(mid).task == task

    def test_unknown_model(self):
        with pytest.raises(KeyError):
            load_model("resnet-production")

    def test_seeded_weights_reproducible(self):
        a = load_model("tiny-det")
        b = load_model("tiny-det")
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)


class TestDetection:
    def test_one_stage_detects(self, image):
        detections = run_detect(load_model("tiny-det"), image)
        assert detections
        for det in detections:
            assert 0.0 <= det.score <= 1.0
            x0, y0, x1, y1 = det.bbox
            assert 0 <= x0 < x1 <= image.shape[1]
            assert 0 <= y0 < y1 <= image.shape[0]
            assert det.branch_index in (0, 1)

    def test_two_stage_detects(self, image):
        detections = run_detect(load_model("tiny-det2"), image)
        assert detections
        assert all(det.branch_index == 0 for det in detections)

    def test_classifier_single_slot(self, image):
        detections = run_detect(load_model("tiny-cls"), image)
        assert len(detections) == 1
        det = detections[0]
        assert det.bbox == (0.0, 0.0, float(image.shape[1]), float(image.shape[0]))
        assert abs(sum(det.class_probs) - 1.0) < 1e-5

    def test_nms_no_heavy_overlap(self, image):
        detections = run_detect(load_model("tiny-det"), image)
        for i, a in enumerate(detections):
            for b in detections[i + 1 :]:
                assert _box_iou(a.bbox, b.bbox) <= 0.5 + 1e-6

    def test_detection_determinism(self, image):
        model = load_model("tiny-det")
        first = run_detect(model, image)
        second = run_detect(model, image)
        assert [(d.cell, d.score) for d in first] == [(d.cell, d.score) for d in second]


class TestGradients:
    @pytest.mark.parametrize("model_id", ["tiny-cls", "tiny-det", "tiny-det2"])
    def test_gradient_shapes_match_activations(self, model_id, image):
        model = load_model(model_id)
        detections, activations, gradients = object_gradients(model, image)
        assert len(gradients) == len(detections)
        for det, grad in zip(detections, gradients):
            assert grad.shape == activations[det.branch_index].shape
            assert grad.dtype == np.float32
            assert np.abs(grad).max() > 0


class TestScoring:
    def test_classification_score_is_reference_prob(self, image):
        model = load_model("tiny-cls")
        scores = score_images(model, [image], {"class_index": 2})
        with torch.no_grad():
            state = model.forward_full(torch.from_numpy(image.astype(np.float32) / 255).permute(2, 0, 1).unsqueeze(0))
            expected = float(torch.softmax(state["logits"][0], dim=0)[2])
        assert scores[0] == pytest.approx(expected, abs=1e-6)

    def test_detection_self_match_is_high(self, image):
        # reference = the model's own detections on the unmodified image:
        # every object matches itself with IoU 1 and class-sim 1
        model = load_model("tiny-det")
        detections = run_detect(model, image)
        reference = {"objects": [{"bbox": list(d.bbox), "class_probs": d.class_probs} for d in detections]}
        score = score_images(model, [image], reference)[0]
        mean_obj = float(np.mean([d.objectness for d in detections]))
        assert score == pytest.approx(mean_obj, abs=0.05)

    def test_black_image_scores_lower(self, image):
        model = load_model("tiny-det")
        detections = run_detect(model, image)
        reference = {"objects": [{"bbox": list(d.bbox), "class_probs": d.class_probs} for d in detections]}
        original, blacked = score_images(model, [image, np.zeros_like(image)], reference)
        assert blacked < original

    def test_detection_reference_requires_objects(self, image):
        with pytest.raises(ValueError, match="objects"):
            score_images(load_model("tiny-det"), [image], {"objects": []})

    def test_classification_class_bounds(self, image):
        with pytest.raises(ValueError, match="range"):
            score_images(load_model("tiny-cls"), [image], {"class_index": 99})
