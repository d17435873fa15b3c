"""Dense 2-D/3-D float tensors and the elementary numeric kernels.

Conventions used throughout the package:

* a *map* is a ``float32`` ndarray of shape ``(h, w)``, row-major;
* a *stack* is a ``float32`` ndarray of shape ``(h, w, channels)``
  (channel-last, interleaved per pixel);
* every public operation returns finite values (no NaN/Inf) and works on
  immutable inputs, so calls are safe from concurrent workers;
* sums that feed normalizations or metrics accumulate in float64 even
  when the data is float32.

Convolution is implemented as correlation with zero padding outside the
map.  The distinction is vacuous for the symmetric Gaussian kernels used
by the saliency methods, and fixing correlation makes results for
arbitrary kernels reproducible bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

DEFAULT_EPSILON = 1e-8


def as_map2d(values) -> np.ndarray:
    """Validate and convert an array-like to a float32 (h, w) map."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"map must be 2-D with positive extent, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("map contains NaN or Inf")
    return arr


def as_stack3d(values) -> np.ndarray:
    """Validate and convert an array-like to a float32 (h, w, channels) stack."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ValueError(f"stack must be 3-D with positive extent, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("stack contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class GaussianKernelSpec:
    """Square Gaussian kernel with learnable amplitude and variance.

    The kernel value at offset (dx, dy) from the center is
    ``amplitude * exp(-(dx^2 + dy^2) / (2*|variance| + epsilon))``.
    The center is fixed at the middle pixel, ``(size - 1) / 2`` per side.
    Amplitude and variance may be any finite real (variance only enters
    through its absolute value); ``size`` must be odd.  A ``size`` of 1
    with amplitude 1 is the identity (delta) kernel.
    """

    size: int
    amplitude: float = 1.0
    variance: float = 1.0
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.size < 1 or self.size % 2 == 0:
            raise ValueError(f"kernel size must be odd and >= 1, got {self.size}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        for name in ("amplitude", "variance"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def profile(self) -> np.ndarray:
        """Unit-amplitude 1-D profile; the 2-D kernel is its outer product."""
        center = (self.size - 1) / 2.0
        offsets = np.arange(self.size, dtype=np.float64) - center
        denom = 2.0 * abs(self.variance) + self.epsilon
        return np.exp(-(offsets**2) / denom)


def gaussian_kernel(spec: GaussianKernelSpec) -> np.ndarray:
    """Evaluate the kernel on its size x size grid as a float32 map.

    The unit-amplitude kernel is quantized to float32 before scaling, so
    scaling the amplitude by a constant scales every entry exactly.
    """
    profile = spec.profile()
    unit = np.outer(profile, profile).astype(np.float32)
    return np.float32(spec.amplitude) * unit


def max_min_normalize(map2d) -> np.ndarray:
    """Affinely rescale a map so its minimum is 0 and maximum is 1.

    A constant map has no salient region and normalizes to all zeros
    (this also avoids the zero division of the degenerate case).
    """
    arr = as_map2d(map2d)
    lo = float(arr.min())
    hi = float(arr.max())
    if hi == lo:
        return np.zeros_like(arr)
    return ((arr - lo) / np.float32(hi - lo)).astype(np.float32)


def area_normalize(map2d, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Divide a map by (its total mass + epsilon).

    Used to normalize each detected object's saliency by its activated
    area so small objects are not dominated by large ones.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    arr = as_map2d(map2d)
    total = float(np.sum(arr, dtype=np.float64))
    return (arr / np.float32(total + epsilon)).astype(np.float32)


def _ensure_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{op}: result overflowed to non-finite values")
    return arr


def piecewise_linear(values, slope_pos: float, slope_neg: float) -> np.ndarray:
    """Two-slope piecewise linear activation.

    Maps each element ``t`` to ``slope_pos * max(t, 0) + slope_neg * min(t, 0)``.
    Slopes (1, 0) give ReLU, (1, 1) the identity, (1, -1) absolute value.
    Accepts maps or stacks; the output has the input's shape.
    """
    arr = np.asarray(values, dtype=np.float32)
    out = np.float32(slope_pos) * np.maximum(arr, 0) + np.float32(slope_neg) * np.minimum(arr, 0)
    return _ensure_finite(out.astype(np.float32), "piecewise_linear")


def convolve_same(map2d, kernel) -> np.ndarray:
    """Correlate a map with an odd-sized kernel, zero-padded, same-size output.

    ``out[i, j] = sum_ab kernel[a, b] * padded[i + a - ch, j + b - cw]``
    with the kernel center at ``((kh-1)/2, (kw-1)/2)``.  Lifting to a
    stack applies the same kernel to each channel independently.
    """
    arr = np.asarray(map2d, dtype=np.float32)
    k = np.asarray(kernel, dtype=np.float32)
    if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
        raise ValueError(f"kernel sides must be odd, got shape {k.shape}")
    if arr.ndim == 2:
        out = ndimage.correlate(arr, k, mode="constant", cval=0.0)
    elif arr.ndim == 3:
        out = ndimage.correlate(arr, k[:, :, None], mode="constant", cval=0.0)
    else:
        raise ValueError(f"expected a 2-D map or 3-D stack, got shape {arr.shape}")
    return _ensure_finite(out.astype(np.float32), "convolve_same")


def _resize_axis_plan(n_in: int, n_out: int):
    """Corner-aligned sampling plan for one axis: lo/hi indices and hi-weight."""
    if n_out == 1:
        pos = np.zeros(1)
    else:
        pos = np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)
    lo = np.floor(pos).astype(np.intp)
    lo = np.clip(lo, 0, max(n_in - 2, 0))
    hi = np.minimum(lo + 1, n_in - 1)
    w_hi = pos - lo
    return lo, hi, w_hi


def resize_bilinear(map2d, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with corner-aligned sampling.

    Output pixel (i, j) samples the input at
    ``(i * (h-1) / (out_h-1), j * (w-1) / (out_w-1))``; an axis of output
    extent 1 samples at position 0.  Resizing to the input size is the
    exact identity.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output extent must be >= 1, got ({out_h}, {out_w})")
    arr = as_map2d(map2d)
    h, w = arr.shape
    if (out_h, out_w) == (h, w):
        return arr.copy()
    work = arr.astype(np.float64)
    r_lo, r_hi, wr = _resize_axis_plan(h, out_h)
    c_lo, c_hi, wc = _resize_axis_plan(w, out_w)
    wr = wr[:, None]
    wc = wc[None, :]
    top = work[r_lo][:, c_lo] * (1 - wc) + work[r_lo][:, c_hi] * wc
    bottom = work[r_hi][:, c_lo] * (1 - wc) + work[r_hi][:, c_hi] * wc
    out = top * (1 - wr) + bottom * wr
    return out.astype(np.float32)
