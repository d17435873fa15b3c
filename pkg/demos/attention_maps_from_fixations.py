"""Walkthrough: from raw eye fixations to normalized attention maps.

Simulates two participants looking at two regions of an image, writes
the fixation CSV, loads it back through the public reader, and compares
smoothing bandwidths.

    python3 demos/attention_maps_from_fixations.py
"""

from pathlib import Path

import numpy as np

from hagxai import build_attention_map, load_fixations
from hagxai.attention import group_fixations, save_attention_maps

OUT = Path(__file__).parent / "output" / "attention"
H, W = 120, 160


def simulate_fixations(path: Path):
    rng = np.random.default_rng(7)
    rows = ["image_id,participant_id,x,y,duration_ms"]
    for pid in ("p1", "p2"):
        # one cluster on a "vehicle" at (40, 110), one on a distractor at (80, 40)
        for _ in range(12):
            x = rng.normal(110, 6)
            y = rng.normal(40, 6)
            rows.append(f"scene,{pid},{x:.1f},{y:.1f},{rng.integers(80, 400)}")
        for _ in range(5):
            x = rng.normal(40, 5)
            y = rng.normal(80, 5)
            rows.append(f"scene,{pid},{x:.1f},{y:.1f},{rng.integers(80, 400)}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


def main():
    csv_path = OUT / "fixations.csv"
    simulate_fixations(csv_path)

    records = load_fixations(csv_path, image_sizes={"scene": (H, W)})
    grouped = group_fixations(records)
    print(f"loaded {len(records)} fixations for {len(grouped)} image(s)")

    maps = []
    for sigma in (8.0, 16.0):
        am = build_attention_map(grouped["scene"], H, W, sigma_px=sigma)
        peak = np.unravel_index(np.argmax(am.map), am.map.shape)
        print(f"  sigma={sigma:5.1f}px: peak at {peak}, mass above 0.5 = {(am.map > 0.5).sum()} px")
        maps.append(am)

    # wider smoothing spreads the same fixations over more pixels
    assert (maps[1].map > 0.5).sum() > (maps[0].map > 0.5).sum()

    save_attention_maps([maps[0]], OUT)
    print(f"attention map + index written to {OUT}")


if __name__ == "__main__":
    main()
