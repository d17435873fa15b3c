"""Human-attention-guided saliency: forward pass, loss, and exact gradients.

The method inserts eight learnable scalars into the rectified
gradient-activation pipeline: a two-slope activation for the gradient
stack (initialized to ReLU), a two-slope activation for the activation
stack (initialized to the identity), and amplitude/variance pairs for
two Gaussian smoothing kernels — one applied per channel to the
activated gradients, one applied to the final summed map.  Per object
the smoothed-gradient/activation product is channel-summed, rectified,
normalized by its activated area (detection) and upsampled; the object
sum is then smoothed by the global kernel.

Everything here computes in float64 internally: the training loop needs
loss surfaces smooth enough for central-difference verification of the
analytic parameter gradient, which this module provides via a recorded
tape (Gaussian smoothing is separable, so each convolution and its
variance sensitivity cost a handful of 1-D passes).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .bundles import BranchTensors, ExplanationBundle, ObjectSlot
from .errors import DataError
from .explainers import SaliencyMap
from .tensor_ops import (
    DEFAULT_EPSILON,
    GaussianKernelSpec,
    _resize_axis_plan,
    max_min_normalize,
    resize_bilinear,
)

PARAM_NAMES = (
    "grad_slope_pos",
    "grad_slope_neg",
    "act_slope_pos",
    "act_slope_neg",
    "grad_amplitude",
    "grad_variance",
    "global_amplitude",
    "global_variance",
)

KERNEL_SIZE = {"detection": 21, "classification": 9}
VARIANCE_INIT = {"detection": 3.0, "classification": 1.0}
PARAMS_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class HagParams:
    """The eight trainable scalars plus fixed kernel geometry.

    Kernel sizes are not trainable; fresh parameters start at the
    identity/ReLU configuration so the untrained model reproduces the
    rectified-gradient explainer.
    """

    grad_slope_pos: float
    grad_slope_neg: float
    act_slope_pos: float
    act_slope_neg: float
    grad_kernel: GaussianKernelSpec
    global_kernel: GaussianKernelSpec

    @classmethod
    def init(cls, task: str) -> "HagParams":
        if task not in KERNEL_SIZE:
            raise ValueError(f"unknown task {task!r}; expected detection or classification")
        size = KERNEL_SIZE[task]
        variance = VARIANCE_INIT[task]
        return cls(
            grad_slope_pos=1.0,
            grad_slope_neg=0.0,
            act_slope_pos=1.0,
            act_slope_neg=1.0,
            grad_kernel=GaussianKernelSpec(size=size, amplitude=1.0, variance=variance),
            global_kernel=GaussianKernelSpec(size=size, amplitude=1.0, variance=variance),
        )

    def to_vector(self) -> np.ndarray:
        return np.array(
            [
                self.grad_slope_pos,
                self.grad_slope_neg,
                self.act_slope_pos,
                self.act_slope_neg,
                self.grad_kernel.amplitude,
                self.grad_kernel.variance,
                self.global_kernel.amplitude,
                self.global_kernel.variance,
            ],
            dtype=np.float64,
        )

    def with_vector(self, vec) -> "HagParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (8,):
            raise ValueError(f"parameter vector must have 8 entries, got shape {vec.shape}")
        return HagParams(
            grad_slope_pos=float(vec[0]),
            grad_slope_neg=float(vec[1]),
            act_slope_pos=float(vec[2]),
            act_slope_neg=float(vec[3]),
            grad_kernel=replace(self.grad_kernel, amplitude=float(vec[4]), variance=float(vec[5])),
            global_kernel=replace(self.global_kernel, amplitude=float(vec[6]), variance=float(vec[7])),
        )


def save_params(params: HagParams, task: str, path, seed: int | None = None) -> Path:
    """Serialize trained parameters to JSON."""
    payload = {
        "task": task,
        "kernel_size": params.grad_kernel.size,
        "grad_slopes": [params.grad_slope_pos, params.grad_slope_neg],
        "act_slopes": [params.act_slope_pos, params.act_slope_neg],
        "grad_kernel": {"A": params.grad_kernel.amplitude, "v": params.grad_kernel.variance},
        "global_kernel": {"A": params.global_kernel.amplitude, "v": params.global_kernel.variance},
        "seed": seed,
        "schema_version": PARAMS_SCHEMA_VERSION,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_params(path) -> tuple[HagParams, str, int | None]:
    """Load parameters saved by :func:`save_params`; returns (params, task, seed)."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("schema_version") != PARAMS_SCHEMA_VERSION:
        raise DataError(f"{path}: unsupported params schema {payload.get('schema_version')}")
    size = int(payload["kernel_size"])
    params = HagParams(
        grad_slope_pos=float(payload["grad_slopes"][0]),
        grad_slope_neg=float(payload["grad_slopes"][1]),
        act_slope_pos=float(payload["act_slopes"][0]),
        act_slope_neg=float(payload["act_slopes"][1]),
        grad_kernel=GaussianKernelSpec(size=size, amplitude=float(payload["grad_kernel"]["A"]), variance=float(payload["grad_kernel"]["v"])),
        global_kernel=GaussianKernelSpec(size=size, amplitude=float(payload["global_kernel"]["A"]), variance=float(payload["global_kernel"]["v"])),
    )
    return params, payload.get("task", "detection"), payload.get("seed")


def default_normalization(task: str) -> str:
    """Detection normalizes each object by its activated area; classification does not."""
    if task not in KERNEL_SIZE:
        raise ValueError(f"unknown task {task!r}")
    return "area" if task == "detection" else "none"


def unify_branches(bundle: ExplanationBundle) -> ExplanationBundle:
    """Resize all branch tensors (and gradients) to the maximum branch resolution.

    Used before training so multi-scale bundles share one spatial grid.
    Single-branch bundles pass through unchanged.
    """
    target = bundle.max_branch_shape
    if all(b.activations.shape[:2] == target for b in bundle.branches):
        return bundle
    branches = [
        BranchTensors(b.branch_id, _resize_stack(b.activations, target), b.layer_name)
        for b in bundle.branches
    ]
    objects = [
        ObjectSlot(o.object_id, o.branch_index, _resize_stack(o.gradients, target), o.score, o.bbox, o.class_label)
        for o in bundle.objects
    ]
    return ExplanationBundle(
        bundle.image_id, bundle.image_h, bundle.image_w, branches, objects, bundle.model_id, bundle.exporter_version
    )


def _resize_stack(stack: np.ndarray, target_hw) -> np.ndarray:
    h, w = target_hw
    out = np.empty((h, w, stack.shape[2]), dtype=np.float32)
    for c in range(stack.shape[2]):
        out[:, :, c] = resize_bilinear(stack[:, :, c], h, w)
    return out


# --- separable Gaussian machinery (float64) ---------------------------------


def _profile_and_derivative(spec: GaussianKernelSpec):
    """Unit 1-D profile u(x) and du/d(variance); variance enters as 2|v|+eps."""
    center = (spec.size - 1) / 2.0
    offsets = np.arange(spec.size, dtype=np.float64) - center
    denom = 2.0 * abs(spec.variance) + spec.epsilon
    u = np.exp(-(offsets**2) / denom)
    sign = np.sign(spec.variance)
    du = u * (offsets**2 / denom**2) * 2.0 * sign
    return u, du


def _smooth(x: np.ndarray, profile: np.ndarray, axis: int) -> np.ndarray:
    return ndimage.correlate1d(x, profile, axis=axis, mode="constant", cval=0.0)


def _smooth2(x: np.ndarray, profile: np.ndarray) -> np.ndarray:
    return _smooth(_smooth(x, profile, 0), profile, 1)


def _smooth2_with_jvp(x: np.ndarray, u: np.ndarray, du: np.ndarray):
    """Unit-amplitude separable smoothing plus its variance directional derivative."""
    t0 = _smooth(x, u, 0)
    smoothed = _smooth(t0, u, 1)
    jvp = _smooth(_smooth(x, du, 0), u, 1) + _smooth(t0, du, 1)
    return smoothed, jvp


class _ResizePlan:
    """Cached corner-aligned bilinear resize with its adjoint."""

    def __init__(self, in_hw, out_hw):
        self.in_hw = tuple(in_hw)
        self.out_hw = tuple(out_hw)
        self.identity = self.in_hw == self.out_hw
        if not self.identity:
            self.r_lo, self.r_hi, wr = _resize_axis_plan(in_hw[0], out_hw[0])
            self.c_lo, self.c_hi, wc = _resize_axis_plan(in_hw[1], out_hw[1])
            self.wr = wr[:, None]
            self.wc = wc[None, :]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if self.identity:
            return x
        top = x[self.r_lo][:, self.c_lo] * (1 - self.wc) + x[self.r_lo][:, self.c_hi] * self.wc
        bottom = x[self.r_hi][:, self.c_lo] * (1 - self.wc) + x[self.r_hi][:, self.c_hi] * self.wc
        return top * (1 - self.wr) + bottom * self.wr

    def adjoint(self, g: np.ndarray) -> np.ndarray:
        if self.identity:
            return g
        out = np.zeros(self.in_hw, dtype=np.float64)
        for rows, w_row in ((self.r_lo, 1 - self.wr), (self.r_hi, self.wr)):
            for cols, w_col in ((self.c_lo, 1 - self.wc), (self.c_hi, self.wc)):
                np.add.at(out, (rows[:, None], cols[None, :]), g * w_row * w_col)
        return out


def _forward_engine(
    bundle: ExplanationBundle,
    params: HagParams,
    task: str,
    normalization: str | None = None,
    out_hw=None,
    need_tape: bool = False,
    area_epsilon: float = DEFAULT_EPSILON,
):
    """Float64 forward pass; optionally records the tape for the backward pass."""
    if normalization is None:
        normalization = default_normalization(task)
    if normalization not in ("area", "maxmin", "none"):
        raise ValueError(f"unknown normalization {normalization!r}")
    if task == "classification" and len(bundle.objects) > 1:
        raise DataError(f"{bundle.image_id}: classification bundles must carry exactly one object")
    if out_hw is None:
        out_hw = (bundle.image_h, bundle.image_w)

    gp, gn = params.grad_slope_pos, params.grad_slope_neg
    ap, an = params.act_slope_pos, params.act_slope_neg
    u_g, du_g = _profile_and_derivative(params.grad_kernel)
    u_G, du_G = _profile_and_derivative(params.global_kernel)
    amp_g = params.grad_kernel.amplitude
    amp_G = params.global_kernel.amplitude

    total = np.zeros(out_hw, dtype=np.float64)
    object_tapes = []
    plans: dict = {}
    for _, obj in sorted(enumerate(bundle.objects), key=lambda pair: pair[1].object_id):
        branch = bundle.branches[obj.branch_index]
        acts = branch.activations.astype(np.float64)
        grads = obj.gradients.astype(np.float64)

        pos_d = np.maximum(grads, 0.0)
        neg_d = np.minimum(grads, 0.0)
        activated_grad = gp * pos_d + gn * neg_d
        smooth_unit, smooth_jvp = _smooth2_with_jvp(activated_grad, u_g, du_g)
        smoothed_grad = amp_g * smooth_unit

        pos_a = np.maximum(acts, 0.0)
        neg_a = np.minimum(acts, 0.0)
        activated_act = ap * pos_a + an * neg_a

        combined = np.sum(smoothed_grad * activated_act, axis=2)
        rectified = np.maximum(combined, 0.0)

        if normalization == "area":
            mass = float(rectified.sum())
            normalized = rectified / (mass + area_epsilon)
        elif normalization == "maxmin":
            normalized = max_min_normalize(rectified.astype(np.float32)).astype(np.float64)
            mass = float("nan")
        else:
            normalized = rectified
            mass = float("nan")

        key = (rectified.shape, tuple(out_hw))
        plan = plans.get(key)
        if plan is None:
            plan = plans[key] = _ResizePlan(rectified.shape, out_hw)
        total += plan.forward(normalized)

        if need_tape:
            object_tapes.append(
                {
                    "pos_d": pos_d,
                    "neg_d": neg_d,
                    "pos_a": pos_a,
                    "neg_a": neg_a,
                    "smooth_unit": smooth_unit,
                    "smooth_jvp": smooth_jvp,
                    "smoothed_grad": smoothed_grad,
                    "activated_act": activated_act,
                    "combined": combined,
                    "rectified": rectified,
                    "mass": mass,
                    "plan": plan,
                }
            )

    global_unit, global_jvp = _smooth2_with_jvp(total, u_G, du_G)
    saliency = amp_G * global_unit

    tape = None
    if need_tape:
        tape = {
            "objects": object_tapes,
            "object_sum": total,
            "global_unit": global_unit,
            "global_jvp": global_jvp,
            "u_g": u_g,
            "u_G": u_G,
            "amp_g": amp_g,
            "amp_G": amp_G,
            "normalization": normalization,
            "area_epsilon": area_epsilon,
        }
    return saliency, tape


def hag_forward(
    bundle: ExplanationBundle,
    params: HagParams,
    task: str = "detection",
    normalization: str | None = None,
    out_hw=None,
) -> SaliencyMap:
    """Run the learnable saliency pipeline and return the map.

    ``normalization`` defaults per task ("area" for detection, "none"
    for classification); "maxmin" swaps the per-object area
    normalization for plain max-min rescaling, which together with
    size-1 (delta) kernels and ReLU/identity slopes collapses the
    pipeline onto the rectified-gradient explainer.  ``out_hw`` is the
    resolution at which objects are summed and the global kernel is
    applied; it defaults to the image resolution.
    """
    if not bundle.objects:
        warnings.warn(f"{bundle.image_id}: bundle has no objects; saliency is all zeros", stacklevel=2)
    saliency, _ = _forward_engine(bundle, params, task, normalization, out_hw)
    metadata = {
        "method": "hag",
        "task": task,
        "normalization": normalization or default_normalization(task),
        "layer_name": bundle.branches[0].layer_name if bundle.branches else "",
        "objects": [
            {"object_id": o.object_id, "score": o.score, "bbox": list(o.bbox), "class_label": o.class_label}
            for o in bundle.objects
        ],
        "post_sum_normalization": "none",
    }
    return SaliencyMap(image_id=bundle.image_id, map=saliency.astype(np.float32), method="hag", metadata=metadata)


def _loss_parts(saliency: np.ndarray, target: np.ndarray):
    """Loss value, gradient w.r.t. the saliency map, and a degeneracy flag.

    The loss is (1 - correlation) plus the mean squared error.  When
    either map is constant the correlation term is undefined; it is
    replaced by 0 (contributing 1) and flagged.
    """
    s = np.asarray(saliency, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if s.shape != t.shape:
        raise ValueError(f"shape mismatch: saliency {s.shape} vs target {t.shape}")
    n = s.size
    diff = s - t
    mse = float(np.sum(diff * diff)) / n
    grad = 2.0 * diff / n

    a = s - s.mean()
    b = t - t.mean()
    norm_a = float(np.sqrt(np.sum(a * a)))
    norm_b = float(np.sqrt(np.sum(b * b)))
    if norm_a == 0.0 or norm_b == 0.0:
        return 1.0 + mse, grad, True
    dot = float(np.sum(a * b))
    pcc_value = dot / (norm_a * norm_b)
    g_a = b / (norm_a * norm_b) - dot * a / (norm_a**3 * norm_b)
    grad -= g_a - g_a.mean()
    return (1.0 - pcc_value) + mse, grad, False


def hag_loss(saliency, target) -> float:
    """Dissimilarity between a saliency map and its attention target.

    ``(1 - PCC) + mean squared error``; accepts arrays or objects with a
    ``map`` attribute.  A constant saliency map makes the correlation
    term undefined — it contributes 0 and a warning is emitted.
    """
    s = getattr(saliency, "map", saliency)
    t = getattr(target, "map", target)
    loss, _, flagged = _loss_parts(s, t)
    if flagged:
        warnings.warn("constant map: correlation term undefined, substituted 0", stacklevel=2)
    return loss


def hag_loss_and_grad(
    bundle: ExplanationBundle,
    params: HagParams,
    target,
    task: str = "detection",
    normalization: str | None = None,
) -> tuple[float, np.ndarray, bool]:
    """Loss and its exact gradient in the eight parameters for one sample.

    The backward pass replays the recorded tape: subgradients are 0 at
    the piecewise-linear kinks and at zero kernel variance.  Returns
    ``(loss, gradient vector, degenerate_pcc_flag)``.
    """
    t = np.asarray(getattr(target, "map", target), dtype=np.float64)
    if normalization is None:
        normalization = default_normalization(task)
    if normalization == "maxmin":
        raise ValueError("gradients are defined for 'area' and 'none' normalization only")
    saliency, tape = _forward_engine(bundle, params, task, normalization, out_hw=t.shape, need_tape=True)
    loss, d_saliency, flagged = _loss_parts(saliency, t)

    grad = np.zeros(8, dtype=np.float64)
    # global kernel: saliency = amp_G * smooth_unit(object_sum)
    grad[6] = float(np.sum(d_saliency * tape["global_unit"]))
    grad[7] = tape["amp_G"] * float(np.sum(d_saliency * tape["global_jvp"]))
    d_sum = tape["amp_G"] * _smooth2(d_saliency, tape["u_G"])

    eps = tape["area_epsilon"]
    for ot in tape["objects"]:
        d_normalized = ot["plan"].adjoint(d_sum)
        if normalization == "area":
            denom = ot["mass"] + eps
            inner = float(np.sum(d_normalized * ot["rectified"]))
            d_rectified = d_normalized / denom - inner / (denom * denom)
        else:
            d_rectified = d_normalized
        d_combined = np.where(ot["combined"] > 0.0, d_rectified, 0.0)

        d_smoothed_grad = d_combined[:, :, None] * ot["activated_act"]
        d_activated_act = d_combined[:, :, None] * ot["smoothed_grad"]

        grad[2] += float(np.sum(d_activated_act * ot["pos_a"]))
        grad[3] += float(np.sum(d_activated_act * ot["neg_a"]))

        grad[4] += float(np.sum(d_smoothed_grad * ot["smooth_unit"]))
        grad[5] += tape["amp_g"] * float(np.sum(d_smoothed_grad * ot["smooth_jvp"]))

        d_activated_grad = tape["amp_g"] * _smooth2(d_smoothed_grad, tape["u_g"])
        grad[0] += float(np.sum(d_activated_grad * ot["pos_d"]))
        grad[1] += float(np.sum(d_activated_grad * ot["neg_d"]))

    return loss, grad, flagged


def hag_grad(bundle, params, target, task="detection", normalization=None) -> np.ndarray:
    """Gradient of :func:`hag_loss` in the eight parameters (see PARAM_NAMES)."""
    _, grad, _ = hag_loss_and_grad(bundle, params, target, task, normalization)
    return grad
