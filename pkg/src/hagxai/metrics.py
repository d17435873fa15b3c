"""Plausibility and faithfulness metrics plus the statistical analyses.

Plausibility compares a saliency map against a human attention map with
PCC (relative similarity) and an L2-based absolute measure.  Faithfulness
perturbs the input image in saliency order and integrates the model-score
curve (deletion / insertion AUC).  The statistics cover image-level
correlation with significance and the stratified condition comparison.

Note on the absolute measure: :func:`rmse` divides the L2 norm by the
pixel count ``h*w`` (not by ``sqrt(h*w)``), so it is not the conventional
root-mean-square error.  The definition is kept as-is because every
reported number downstream depends on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DataError, UndefinedResultError


def pcc(u1, u2) -> float:
    """Pearson correlation between two equally-shaped maps.

    Computed as the cosine of the mean-subtracted flattened maps, in
    float64.  Raises :class:`UndefinedResultError` when either map is
    constant (zero variance).
    """
    a = np.asarray(u1, dtype=np.float64).ravel()
    b = np.asarray(u2, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {np.shape(u1)} vs {np.shape(u2)}")
    a = a - a.mean()
    b = b - b.mean()
    na = math.sqrt(float(a @ a))
    nb = math.sqrt(float(b @ b))
    if na == 0.0 or nb == 0.0:
        which = "first" if na == 0.0 else "second"
        raise UndefinedResultError(f"{which} map is constant; correlation undefined", flag="constant-map")
    return float(a @ b) / (na * nb)


def rmse(u1, u2) -> float:
    """L2 distance divided by the element count (see module note)."""
    a = np.asarray(u1, dtype=np.float64)
    b = np.asarray(u2, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm((a - b).ravel()) / a.size)


@dataclass(frozen=True)
class PerturbationConfig:
    """Protocol parameters for deletion/insertion runs.

    ``steps * step_area_fraction`` must not exceed 1; with 100 steps of
    1% the area limit is exhausted exactly.  Detection runs restrict the
    modified area to the union of the detected boxes (``bbox_union``).
    """

    steps: int = 100
    step_area_fraction: float = 0.01
    area_limit_mode: str = "whole_image"  # or "bbox_union"
    fill_mode: str = "random_color"  # or "black"
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.steps * self.step_area_fraction > 1.0 + 1e-12:
            raise ValueError("steps * step_area_fraction must be <= 1")
        if self.area_limit_mode not in ("whole_image", "bbox_union"):
            raise ValueError(f"unknown area_limit_mode {self.area_limit_mode!r}")
        if self.fill_mode not in ("random_color", "black"):
            raise ValueError(f"unknown fill_mode {self.fill_mode!r}")


@dataclass
class Curve:
    """Ordered (fraction modified, model score) samples from one run."""

    samples: list  # of (fraction, score) tuples
    direction: str  # "deletion" or "insertion"
    error: str | None = None

    @property
    def fractions(self) -> np.ndarray:
        return np.array([f for f, _ in self.samples], dtype=np.float64)

    @property
    def scores(self) -> np.ndarray:
        return np.array([s for _, s in self.samples], dtype=np.float64)


@dataclass(frozen=True)
class ConditionLabel:
    """Human-rated presentation condition for one image (consumed, never computed)."""

    image_id: str
    occlusion: bool
    degradation: bool


def _ranked_pixels(saliency: np.ndarray, allowed_mask: np.ndarray) -> np.ndarray:
    """Flat pixel indices inside the mask, by saliency descending.

    Ties break by row-major index: a stable sort on the negated values
    keeps equal-saliency pixels in row-major order.
    """
    flat = saliency.ravel()
    allowed = np.flatnonzero(allowed_mask.ravel())
    order = np.argsort(-flat[allowed], kind="stable")
    return allowed[order]


def _bbox_union_mask(h: int, w: int, bboxes) -> np.ndarray:
    mask = np.zeros((h, w), dtype=bool)
    for x0, y0, x1, y1 in bboxes:
        r0, r1 = int(np.floor(y0)), int(np.ceil(y1))
        c0, c1 = int(np.floor(x0)), int(np.ceil(x1))
        mask[max(r0, 0) : min(r1, h), max(c0, 0) : min(c1, w)] = True
    return mask


def _step_pixel_counts(limit: int, steps: int, fraction: float) -> list[int]:
    """Pixels to modify per step; cumulative counts follow floor(limit * f * i).

    When ``steps * fraction == 1`` the schedule exhausts the limit exactly.
    """
    counts = []
    prev = 0
    for i in range(1, steps + 1):
        cum = int(math.floor(limit * fraction * i + 1e-9))
        counts.append(cum - prev)
        prev = cum
    return counts


def perturbation_curve(image, saliency, scorer, cfg: PerturbationConfig, direction: str, bboxes=None) -> Curve:
    """Score a sequence of progressively perturbed variants of one image.

    Pixels are ranked by saliency descending (ties by row-major index).
    Deletion replaces ranked pixels on the original image; insertion
    reveals ranked pixels onto a black canvas.  Sample 0 is the
    unmodified (deletion) or fully black (insertion) image, and each of
    ``cfg.steps`` steps modifies the next slice of the ranked pixels so
    the area limit is exhausted exactly when ``steps * fraction == 1``.

    The scorer is called with the full list of step images (order
    preserved) and must return one float per image.  On scorer failure
    the curve is returned with the samples gathered so far and the error
    attached instead of raised.
    """
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"image must be (h, w, 3), got {img.shape}")
    img = img.astype(np.uint8, copy=True)
    sal = np.asarray(saliency, dtype=np.float32)
    h, w = img.shape[:2]
    if sal.shape != (h, w):
        raise ValueError(f"saliency shape {sal.shape} does not match image {(h, w)}")

    if cfg.area_limit_mode == "bbox_union":
        if not bboxes:
            raise DataError("bbox_union area limit requires reference bounding boxes")
        allowed = _bbox_union_mask(h, w, bboxes)
        if not allowed.any():
            raise DataError("bounding-box union covers no pixels")
    else:
        allowed = np.ones((h, w), dtype=bool)

    limit = int(allowed.sum())
    ranked = _ranked_pixels(sal, allowed)
    counts = _step_pixel_counts(limit, cfg.steps, cfg.step_area_fraction)
    rng = np.random.default_rng(cfg.seed)

    if direction == "deletion":
        canvas = img.copy()
    elif direction == "insertion":
        canvas = np.zeros_like(img)
    else:
        raise ValueError(f"unknown direction {direction!r}")

    flat_canvas = canvas.reshape(-1, 3)
    flat_img = img.reshape(-1, 3)

    samples: list[tuple[float, float]] = []
    pending = [(0.0, canvas.copy())]
    taken = 0
    for i, count in enumerate(counts, start=1):
        idx = ranked[taken : taken + count]
        taken += count
        if direction == "deletion":
            if cfg.fill_mode == "random_color":
                flat_canvas[idx] = rng.integers(0, 256, size=(len(idx), 3), dtype=np.uint8)
            else:
                flat_canvas[idx] = 0
        else:
            flat_canvas[idx] = flat_img[idx]
        pending.append((i * cfg.step_area_fraction, canvas.copy()))

    error = None
    try:
        scores = scorer([im for _, im in pending])
        if len(scores) != len(pending):
            raise DataError(f"scorer returned {len(scores)} scores for {len(pending)} images")
        samples = [(f, float(s)) for (f, _), s in zip(pending, scores)]
    except Exception as exc:  # keep partial samples, attach the failure
        error = f"{type(exc).__name__}: {exc}"
    return Curve(samples=samples, direction=direction, error=error)


def deletion_curve(image, saliency, scorer, cfg: PerturbationConfig, bboxes=None) -> Curve:
    """Deletion pass: salient pixels filled with random colors (or black)."""
    return perturbation_curve(image, saliency, scorer, cfg, "deletion", bboxes)


def insertion_curve(image, saliency, scorer, cfg: PerturbationConfig, bboxes=None) -> Curve:
    """Insertion pass: salient pixels revealed onto a black canvas."""
    return perturbation_curve(image, saliency, scorer, cfg, "insertion", bboxes)


def auc(curve: Curve) -> float:
    """Trapezoidal area under the curve, normalized by the fraction span."""
    fr = curve.fractions
    sc = curve.scores
    if len(fr) < 2:
        raise ValueError("AUC needs at least 2 curve samples")
    span = fr[-1] - fr[0]
    trapezoid = getattr(np, "trapezoid", np.trapz)
    return float(trapezoid(sc, fr) / span)


def pearson_with_p(x, y) -> tuple[float, float]:
    """Pearson r with a two-tailed p-value from the t distribution.

    The t statistic is ``r * sqrt((n-2) / (1-r^2))`` with ``n-2`` degrees
    of freedom.
    """
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise ValueError("x and y must be 1-D with equal length")
    n = len(xa)
    if n < 3:
        raise ValueError("need at least 3 points")
    r = pcc(xa.reshape(1, -1), ya.reshape(1, -1))
    r = max(min(r, 1.0), -1.0)
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    p = 2.0 * stats.t.sf(abs(t), df=n - 2)
    return r, float(p)


def welch_t_test(a, b) -> tuple[float, float]:
    """Welch unequal-variance t test with a two-tailed p-value."""
    aa = np.asarray(a, dtype=np.float64)
    bb = np.asarray(b, dtype=np.float64)
    if aa.ndim != 1 or bb.ndim != 1 or len(aa) < 2 or len(bb) < 2:
        raise ValueError("each group needs at least 2 observations")
    va = aa.var(ddof=1)
    vb = bb.var(ddof=1)
    if va == 0.0 and vb == 0.0:
        raise UndefinedResultError("both groups have zero variance", flag="zero-variance")
    na, nb = len(aa), len(bb)
    se2 = va / na + vb / nb
    t = (aa.mean() - bb.mean()) / math.sqrt(se2)
    df = se2**2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    p = 2.0 * stats.t.sf(abs(t), df=df)
    return float(t), float(p)


@dataclass
class ConditionTable:
    """Per-condition means of plausibility/faithfulness metrics.

    ``cells`` maps (occlusion, degradation) to {method: {metric: mean}};
    ``marginals`` maps condition name ("occlusion"/"degradation") to
    {method: {metric: (mean_yes, mean_no)}} which is the familiar Y/N
    presentation.
    """

    cells: dict = field(default_factory=dict)
    marginals: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        """Flatten marginals into one row per (condition, method, metric)."""
        out = []
        for condition, per_method in sorted(self.marginals.items()):
            for method, metrics in sorted(per_method.items()):
                for metric, (yes, no) in sorted(metrics.items()):
                    out.append(
                        {
                            "condition": condition,
                            "method": method,
                            "metric": metric,
                            "mean_yes": yes,
                            "mean_no": no,
                        }
                    )
        return out


def stratified_eval(per_image_results, labels) -> ConditionTable:
    """Aggregate per-image metric rows by rated presentation condition.

    ``per_image_results`` is an iterable of mappings with at least
    ``image_id`` and ``method`` keys plus numeric metric columns;
    ``labels`` is an iterable of :class:`ConditionLabel`.  Every result
    image must be labeled.
    """
    label_by_image = {lab.image_id: lab for lab in labels}
    results = list(per_image_results)
    missing = sorted({r["image_id"] for r in results} - set(label_by_image))
    if missing:
        raise DataError(f"missing condition labels for images: {', '.join(missing)}")

    buckets: dict = {}
    for row in results:
        lab = label_by_image[row["image_id"]]
        key = (lab.occlusion, lab.degradation)
        method = row["method"]
        for metric, value in row.items():
            if metric in ("image_id", "method") or value is None:
                continue
            buckets.setdefault(key, {}).setdefault(method, {}).setdefault(metric, []).append(float(value))

    table = ConditionTable()
    for key, per_method in buckets.items():
        table.cells[key] = {
            method: {metric: float(np.mean(vals)) for metric, vals in metrics.items()}
            for method, metrics in per_method.items()
        }
        table.counts[key] = {method: len(next(iter(metrics.values()))) for method, metrics in per_method.items()}

    for condition, pick in (("occlusion", 0), ("degradation", 1)):
        per_method: dict = {}
        for key, methods in buckets.items():
            for method, metrics in methods.items():
                for metric, vals in metrics.items():
                    slot = per_method.setdefault(method, {}).setdefault(metric, ([], []))
                    (slot[0] if key[pick] else slot[1]).extend(vals)
        table.marginals[condition] = {
            method: {
                metric: (
                    float(np.mean(yes)) if yes else float("nan"),
                    float(np.mean(no)) if no else float("nan"),
                )
                for metric, (yes, no) in metrics.items()
            }
            for method, metrics in per_method.items()
        }
    return table
