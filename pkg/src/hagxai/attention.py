"""Human attention maps from eye-fixation records.

Fixations pooled over all participants are binned onto the image grid,
smoothed with a Gaussian (truncated at three standard deviations), and
max-min normalized to [0, 1].  The resulting maps serve both as
plausibility ground truth and as training targets.

Fixation coordinates must already be expressed in model-input pixel
space; mapping from screen/presentation coordinates is the data
producer's responsibility.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DataError
from .tensor_ops import max_min_normalize

FIXATION_FIELDS = ("image_id", "participant_id", "x", "y", "duration_ms")


@dataclass(frozen=True)
class FixationRecord:
    """One eye fixation in image pixel coordinates."""

    image_id: str
    participant_id: str
    x: float
    y: float
    duration_ms: float | None = None


@dataclass
class AttentionMap:
    """Smoothed, normalized fixation density for one image."""

    image_id: str
    map: np.ndarray  # float32 (h, w), values in [0, 1]
    sigma_px: float


def load_fixations(path, image_sizes=None) -> list[FixationRecord]:
    """Read fixation records from a CSV file.

    The file must carry the header ``image_id,participant_id,x,y,duration_ms``
    (UTF-8, one fixation per row).  ``duration_ms`` may be empty.  Rows
    with negative coordinates are rejected; when ``image_sizes`` maps
    image ids to ``(h, w)``, the upper bounds are enforced too.  Errors
    name the offending row and column.  An empty file yields an empty
    list.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        return []
    records: list[FixationRecord] = []
    reader = csv.DictReader(text.splitlines())
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != list(FIXATION_FIELDS):
        raise DataError(
            f"{path}: expected header {','.join(FIXATION_FIELDS)}, got {reader.fieldnames}"
        )
    for row_no, row in enumerate(reader, start=2):
        if row.get(None):
            raise DataError(f"{path}: row {row_no}: too many columns")
        try:
            x = float(row["x"])
            y = float(row["y"])
        except (TypeError, ValueError) as exc:
            col = "x" if _bad_float(row.get("x")) else "y"
            raise DataError(f"{path}: row {row_no}: column {col!r} is not a number") from exc
        duration = None
        raw_duration = (row.get("duration_ms") or "").strip()
        if raw_duration:
            try:
                duration = float(raw_duration)
            except ValueError as exc:
                raise DataError(f"{path}: row {row_no}: column 'duration_ms' is not a number") from exc
        image_id = (row["image_id"] or "").strip()
        if not image_id:
            raise DataError(f"{path}: row {row_no}: column 'image_id' is empty")
        if x < 0 or y < 0:
            col = "x" if x < 0 else "y"
            raise DataError(f"{path}: row {row_no}: column {col!r} out of bounds (negative)")
        if image_sizes is not None and image_id in image_sizes:
            h, w = image_sizes[image_id]
            if x >= w:
                raise DataError(f"{path}: row {row_no}: column 'x' out of bounds (>= width {w})")
            if y >= h:
                raise DataError(f"{path}: row {row_no}: column 'y' out of bounds (>= height {h})")
        records.append(FixationRecord(image_id, (row["participant_id"] or "").strip(), x, y, duration))
    return records


def _bad_float(value) -> bool:
    try:
        float(value)
        return False
    except (TypeError, ValueError):
        return True


def group_fixations(records) -> dict[str, list[FixationRecord]]:
    """Group records by image id, preserving file order within groups."""
    grouped: dict[str, list[FixationRecord]] = {}
    for rec in records:
        grouped.setdefault(rec.image_id, []).append(rec)
    return grouped


def build_attention_map(records, h: int, w: int, sigma_px: float, weight_by_duration: bool = False) -> AttentionMap:
    """Smooth pooled fixations into a normalized attention map.

    Each fixation contributes a unit impulse (or its duration in ms when
    ``weight_by_duration`` is set) at its nearest pixel; the impulse grid
    is convolved with a unit-amplitude Gaussian of standard deviation
    ``sigma_px`` truncated at +-3 sigma, then max-min normalized so any
    nonempty fixation set peaks at exactly 1.  An empty record list
    yields the all-zeros map.
    """
    if not sigma_px > 0:
        raise ValueError(f"sigma_px must be > 0, got {sigma_px}")
    records = list(records)
    image_ids = {r.image_id for r in records}
    if len(image_ids) > 1:
        raise DataError(f"records span multiple images: {sorted(image_ids)}")
    image_id = records[0].image_id if records else ""

    grid = np.zeros((h, w), dtype=np.float64)
    for rec in records:
        row = min(max(int(round(rec.y)), 0), h - 1)
        col = min(max(int(round(rec.x)), 0), w - 1)
        if weight_by_duration and rec.duration_ms is not None:
            grid[row, col] += rec.duration_ms
        else:
            grid[row, col] += 1.0

    if grid.any():
        radius = int(math.ceil(3.0 * sigma_px))
        offsets = np.arange(-radius, radius + 1, dtype=np.float64)
        profile = np.exp(-(offsets**2) / (2.0 * sigma_px**2))
        smooth = ndimage.correlate1d(grid, profile, axis=0, mode="constant", cval=0.0)
        smooth = ndimage.correlate1d(smooth, profile, axis=1, mode="constant", cval=0.0)
        smooth = max_min_normalize(smooth.astype(np.float32))
    else:
        smooth = np.zeros((h, w), dtype=np.float32)
    return AttentionMap(image_id=image_id, map=smooth, sigma_px=float(sigma_px))


def save_attention_maps(maps, out_dir) -> Path:
    """Persist maps as ``<image_id>.npy`` plus an ``index.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = {}
    for am in maps:
        np.save(out_dir / f"{am.image_id}.npy", am.map.astype(np.float32))
        h, w = am.map.shape
        index[am.image_id] = {"h": int(h), "w": int(w), "sigma_px": am.sigma_px}
    index_path = out_dir / "index.json"
    index_path.write_text(json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return index_path


def load_attention_maps(in_dir) -> dict[str, AttentionMap]:
    """Load maps written by :func:`save_attention_maps`."""
    in_dir = Path(in_dir)
    index_path = in_dir / "index.json"
    if not index_path.exists():
        raise DataError(f"attention index not found: {index_path}")
    index = json.loads(index_path.read_text(encoding="utf-8"))
    out = {}
    for image_id, meta in index.items():
        arr = np.load(in_dir / f"{image_id}.npy")
        if arr.shape != (meta["h"], meta["w"]):
            raise DataError(f"{image_id}: stored shape {arr.shape} disagrees with index {meta}")
        out[image_id] = AttentionMap(image_id=image_id, map=arr.astype(np.float32), sigma_px=float(meta["sigma_px"]))
    return out
