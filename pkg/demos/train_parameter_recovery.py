"""Walkthrough: recovering hidden saliency parameters from targets alone.

Generates attention-like targets with a hidden parameter setting, trains
from the standard initialization, and shows that the optimizer recovers
the generator's behavior (loss near zero, slope ratios matched).  This
is the same experiment the acceptance suite runs at full scale.

    python3 demos/train_parameter_recovery.py
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from conftest import make_bundle  # synthetic-bundle builder shared with the tests

from hagxai import GaussianKernelSpec, HagParams, TrainConfig, hag_forward, train
from hagxai.training import evaluate, write_history_csv

OUT = Path(__file__).parent / "output" / "training"


def main():
    rng = np.random.default_rng(0)
    truth = HagParams(
        grad_slope_pos=0.9,
        grad_slope_neg=-0.4,
        act_slope_pos=1.2,
        act_slope_neg=0.5,
        grad_kernel=GaussianKernelSpec(size=21, amplitude=1.3, variance=2.5),
        global_kernel=GaussianKernelSpec(size=21, amplitude=0.8, variance=1.2),
    )
    dataset = []
    for i in range(60):
        bundle = make_bundle(rng, image_id=f"s{i}", n_objects=2, branch_shapes=((16, 16),))
        dataset.append((bundle, hag_forward(bundle, truth, task="detection").map.astype(np.float64)))
    print(f"dataset: {len(dataset)} synthetic samples at 16x16")

    config = TrainConfig.for_task("detection", max_epochs=60, batch_size=15, seed=1)
    params, record = train(dataset, config)

    val = [dataset[i] for i in record.val_indices]
    loss, mean_pcc = evaluate([(b, np.asarray(t)) for b, t in val], params, "detection")
    print(f"stopped after {len(record.epochs)} epochs; val loss {loss:.2e}, val PCC {mean_pcc:.4f}")

    # area normalization makes the pipeline scale-free, so slopes are
    # identified up to a common positive factor: compare ratios
    print(f"hidden slope ratios : grad {truth.grad_slope_neg / truth.grad_slope_pos:+.4f}, "
          f"act {truth.act_slope_neg / truth.act_slope_pos:+.4f}")
    print(f"learned slope ratios: grad {params.grad_slope_neg / params.grad_slope_pos:+.4f}, "
          f"act {params.act_slope_neg / params.act_slope_pos:+.4f}")
    print(f"hidden kernel variances : grad {truth.grad_kernel.variance:.2f}, global {truth.global_kernel.variance:.2f}")
    print(f"learned kernel variances: grad {params.grad_kernel.variance:.2f}, global {params.global_kernel.variance:.2f}")

    OUT.mkdir(parents=True, exist_ok=True)
    write_history_csv(record, OUT / "loss_history.csv")
    print(f"loss history written to {OUT / 'loss_history.csv'}")


if __name__ == "__main__":
    main()
