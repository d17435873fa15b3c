"""Shared synthetic-bundle builders for the test suite."""

import numpy as np
import pytest

from hagxai.bundles import BranchTensors, ExplanationBundle, ObjectSlot


def make_bundle(
    rng,
    image_id="img",
    n_objects=2,
    channels=3,
    branch_shapes=((8, 8),),
    image_hw=None,
    grad_scale=1.0,
    nonneg_grads=False,
):
    """Random but valid bundle; objects are spread across branches round-robin."""
    if image_hw is None:
        image_hw = branch_shapes[0]
    image_h, image_w = image_hw
    branches = []
    for bi, (h, w) in enumerate(branch_shapes):
        acts = rng.normal(size=(h, w, channels)).astype(np.float32)
        branches.append(BranchTensors(branch_id=bi, activations=acts, layer_name=f"layer_b{bi}"))
    objects = []
    for oi in range(n_objects):
        bi = oi % len(branch_shapes)
        h, w = branch_shapes[bi]
        grads = rng.normal(scale=grad_scale, size=(h, w, channels)).astype(np.float32)
        if nonneg_grads:
            grads = np.abs(grads)
        x0 = float(rng.uniform(0, image_w * 0.4))
        y0 = float(rng.uniform(0, image_h * 0.4))
        x1 = float(rng.uniform(x0 + 1, image_w))
        y1 = float(rng.uniform(y0 + 1, image_h))
        objects.append(
            ObjectSlot(
                object_id=oi,
                branch_index=bi,
                gradients=grads,
                score=float(rng.uniform(0.3, 1.0)),
                bbox=(x0, y0, x1, y1),
                class_label=f"class{oi % 2}",
            )
        )
    return ExplanationBundle(
        image_id=image_id,
        image_h=image_h,
        image_w=image_w,
        branches=branches,
        objects=objects,
        model_id="synthetic",
        exporter_version="test",
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
