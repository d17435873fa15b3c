"""Walkthrough: explaining a detection-style export with all five methods.

Builds a synthetic two-branch explanation bundle (the kind a model host
exports for one image at one layer), runs the four untrained methods and
the untrained learnable method on it, and writes grayscale + colormapped
renderings next to this script.

    python3 demos/explain_synthetic_bundle.py
"""

from pathlib import Path

import numpy as np

from hagxai import BranchTensors, ExplanationBundle, HagParams, ObjectSlot, hag_forward
from hagxai.explainers import fullgrad_cam, fullgrad_cam_pp, grad_cam, grad_cam_pp, save_saliency

OUT = Path(__file__).parent / "output" / "explain"


def blob(h, w, cy, cx, sigma):
    yy, xx = np.mgrid[0:h, 0:w]
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))


def synthetic_bundle():
    # two scale branches: a coarse 16x16 and a fine 32x32, as a multi-scale
    # detector would expose; three channels each
    rng = np.random.default_rng(42)
    coarse = np.stack([blob(16, 16, 5, 5, 2.5) + 0.1 * rng.random((16, 16)) for _ in range(3)], axis=2)
    fine = np.stack([blob(32, 32, 22, 24, 4.0) + 0.1 * rng.random((32, 32)) for _ in range(3)], axis=2)

    # object 0 lives on the coarse branch, object 1 on the fine one; each
    # gradient highlights its own object's region
    grad0 = np.stack([blob(16, 16, 5, 5, 2.0) * rng.uniform(0.5, 1.0) for _ in range(3)], axis=2)
    grad1 = np.stack([blob(32, 32, 22, 24, 3.0) * rng.uniform(0.5, 1.0) for _ in range(3)], axis=2)

    return ExplanationBundle(
        image_id="demo",
        image_h=64,
        image_w=64,
        branches=[
            BranchTensors(0, coarse.astype(np.float32), "neck.small"),
            BranchTensors(1, fine.astype(np.float32), "neck.large"),
        ],
        objects=[
            ObjectSlot(0, 0, grad0.astype(np.float32), score=0.91, bbox=(8, 8, 32, 32), class_label="car"),
            ObjectSlot(1, 1, grad1.astype(np.float32), score=0.78, bbox=(36, 32, 60, 56), class_label="truck"),
        ],
    )


def main():
    bundle = synthetic_bundle()
    print(f"bundle: {len(bundle.branches)} branches, {len(bundle.objects)} objects, image {bundle.image_h}x{bundle.image_w}")

    for name, method in (("gc", grad_cam), ("gcpp", grad_cam_pp), ("fgc", fullgrad_cam), ("fgcpp", fullgrad_cam_pp)):
        sal = method(bundle)
        path = save_saliency(sal, OUT, write_png=True)
        print(f"  {name:>5}: map sum={sal.map.sum():8.2f}, peak={sal.map.max():.3f}  -> {path.name}")

    # untrained learnable method: starts as a smoothed, area-normalized
    # variant of the rectified-gradient explainer
    sal = hag_forward(bundle, HagParams.init("detection"), task="detection")
    path = save_saliency(sal, OUT, write_png=True)
    print(f"  {'hag':>5}: map sum={sal.map.sum():8.2f}, peak={sal.map.max():.3f}  -> {path.name}")
    print(f"renderings in {OUT}")


if __name__ == "__main__":
    main()
