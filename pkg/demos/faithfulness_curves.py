"""Walkthrough: deletion/insertion faithfulness with an analytic scorer.

A synthetic "model" scores an image by how much of a ground-truth region
is visible.  A saliency map that matches the region produces a steeply
falling deletion curve and a steeply rising insertion curve; a random
map does not.  The gap shows up directly in the AUCs.

    python3 demos/faithfulness_curves.py
"""

from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from hagxai import PerturbationConfig, auc, deletion_curve, insertion_curve

OUT = Path(__file__).parent / "output" / "faithfulness"
H = W = 40


def main():
    rng = np.random.default_rng(11)
    mask = np.zeros((H, W), dtype=bool)
    mask[10:26, 14:34] = True
    image = np.zeros((H, W, 3), dtype=np.uint8)
    image[mask] = 220

    def scorer(images):
        return [float(im[mask].astype(np.float64).sum() / (255.0 * mask.sum() * 3)) for im in images]

    good = mask.astype(np.float32) + 0.01 * rng.random((H, W)).astype(np.float32)
    random_sal = rng.random((H, W)).astype(np.float32)

    cfg = PerturbationConfig(steps=50, step_area_fraction=0.02, fill_mode="black", seed=0)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5), sharey=True)
    OUT.mkdir(parents=True, exist_ok=True)
    for sal, label in ((good, "matching saliency"), (random_sal, "random saliency")):
        d = deletion_curve(image, sal, scorer, cfg)
        i = insertion_curve(image, sal, scorer, cfg)
        print(f"{label:18s}: d-AUC={auc(d):.3f} (lower is better), i-AUC={auc(i):.3f} (higher is better)")
        axes[0].plot(d.fractions, d.scores, label=label)
        axes[1].plot(i.fractions, i.scores, label=label)
    axes[0].set_title("deletion")
    axes[1].set_title("insertion")
    for ax in axes:
        ax.set_xlabel("fraction modified")
        ax.legend(fontsize=8)
    axes[0].set_ylabel("model score")
    fig.tight_layout()
    fig.savefig(OUT / "curves.svg")
    print(f"plot written to {OUT / 'curves.svg'}")


if __name__ == "__main__":
    main()
