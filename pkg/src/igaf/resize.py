"""Separable Catmull-Rom bicubic resampling.

Half-pixel-centre coordinate mapping, edge-clamped taps and no antialiasing
filter on downscale, so a factor-``s`` downsample samples the cubic
interpolant at the LR pixel centres. Not differentiable: it only touches
inputs and targets, never the learned graph.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

A = -0.5


def cubic_kernel(t: np.ndarray, a: float = A) -> np.ndarray:
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def _taps(n_in: int, n_out: int):
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(np.int64)
    frac = src - base
    idx = [np.clip(base + off, 0, n_in - 1) for off in (-1, 0, 1, 2)]
    wts = [cubic_kernel(frac - off) for off in (-1, 0, 1, 2)]
    return idx, wts


def _resample_axis(arr: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    idx, wts = _taps(arr.shape[axis], n_out)
    shape = [1] * arr.ndim
    shape[axis] = n_out
    anchor = np.take(arr, idx[1], axis=axis)
    out = anchor.copy()
    # offsets from the anchor tap: constants stay bit-exact
    for i, w in zip(idx, wts):
        out += w.reshape(shape) * (np.take(arr, i, axis=axis) - anchor)
    return out


def bicubic_resize(x, out_h: int, out_w: int):
    """Resize the two trailing axes of ``x`` to ``(out_h, out_w)``.

    Accepts a :class:`Tensor` (returns a Tensor, no gradient) or a plain
    array (returns an array). Arithmetic is done in float64 and cast back.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be >= 1, got {out_h}x{out_w}")
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if arr.ndim < 2 or min(arr.shape[-2:]) < 1:
        raise ValueError(f"cannot resize array of shape {arr.shape}")
    dtype = arr.dtype if arr.dtype.kind == "f" else np.dtype(np.float64)
    out = _resample_axis(arr.astype(np.float64), arr.ndim - 2, out_h)
    out = _resample_axis(out, arr.ndim - 1, out_w).astype(dtype)
    return Tensor(out) if isinstance(x, Tensor) else out
