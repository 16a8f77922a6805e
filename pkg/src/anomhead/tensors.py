"""Dense float32 map containers and the image-space primitives built on them.

A *feature map* is an ``(H, W, C)`` float32 array, row-major with the channel
axis last; a *score map* is an ``(H, W)`` float32 array.  All operations here
are pure functions: they validate their inputs, do their accumulation in
float64, and round once to float32 on the way out, so results are bit-identical
across runs for identical inputs.
"""

import math

import numpy as np

from .errors import InvalidArgumentError, ShapeError

__all__ = [
    "as_feature_map",
    "as_score_map",
    "aggregate_neighborhood",
    "resize_bilinear",
    "concat_channels",
    "gaussian_kernel_1d",
    "gaussian_filter",
]


def as_feature_map(arr) -> np.ndarray:
    """Validate and return an (H, W, C) float32, C-contiguous feature map.

    Accepts anything array-like; casts to float32 if needed.  Rejects empty
    dimensions and non-finite entries.
    """
    out = np.ascontiguousarray(arr, dtype=np.float32)
    if out.ndim != 3:
        raise ShapeError(f"feature map must be (H, W, C), got shape {out.shape}")
    if min(out.shape) < 1:
        raise ShapeError(f"feature map has an empty dimension: {out.shape}")
    if not np.isfinite(out).all():
        raise InvalidArgumentError("feature map contains NaN or Inf entries")
    return out


def as_score_map(arr) -> np.ndarray:
    """Validate and return an (H, W) float32, C-contiguous score map."""
    out = np.ascontiguousarray(arr, dtype=np.float32)
    if out.ndim != 2:
        raise ShapeError(f"score map must be (H, W), got shape {out.shape}")
    if min(out.shape) < 1:
        raise ShapeError(f"score map has an empty dimension: {out.shape}")
    if not np.isfinite(out).all():
        raise InvalidArgumentError("score map contains NaN or Inf entries")
    return out


def aggregate_neighborhood(fmap, patch_size: int) -> np.ndarray:
    """Average each location's square neighborhood, clipped to the map bounds.

    Every output entry is the mean of the input entries inside the
    ``patch_size x patch_size`` window centered on it; windows are clipped at
    the borders, so border entries average fewer neighbors (no zero padding).

    Args:
        fmap: (H, W, C) feature map.
        patch_size: odd window side length, >= 1.

    Returns:
        (H, W, C) float32 map of the same shape.
    """
    fmap = as_feature_map(fmap)
    if patch_size < 1 or patch_size % 2 == 0:
        raise InvalidArgumentError(f"patch_size must be odd and >= 1, got {patch_size}")
    if patch_size == 1:
        return fmap.copy()

    r = patch_size // 2
    h, w, _ = fmap.shape
    src = fmap.astype(np.float64)
    acc = np.zeros(src.shape, dtype=np.float64)
    cnt = np.zeros((h, w, 1), dtype=np.float64)
    # Fixed (dy, dx) accumulation order keeps the float64 sums reproducible.
    for dy in range(-r, r + 1):
        y0, y1 = max(0, -dy), min(h, h - dy)
        if y0 >= y1:
            continue
        for dx in range(-r, r + 1):
            x0, x1 = max(0, -dx), min(w, w - dx)
            if x0 >= x1:
                continue
            acc[y0:y1, x0:x1] += src[y0 + dy:y1 + dy, x0 + dx:x1 + dx]
            cnt[y0:y1, x0:x1] += 1.0
    return (acc / cnt).astype(np.float32)


def _axis_coords(n_in: int, n_out: int):
    """Source coordinates, neighbor indices and weights for one resize axis."""
    scale = n_in / n_out
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    pos = np.clip(pos, 0.0, n_in - 1.0)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def resize_bilinear(arr, out_h: int, out_w: int) -> np.ndarray:
    """Bilinearly resample a map to (out_h, out_w).

    Uses the pixel-center convention (align-corners false): output pixel j
    samples the source at ``(j + 0.5) * in/out - 0.5``, clamped to the valid
    range.  Accepts (H, W, C) feature maps or (H, W) score maps; channels are
    preserved.  Resizing to the input size returns an identical copy.
    """
    squeeze = False
    if np.ndim(arr) == 2:
        arr = as_score_map(arr)[:, :, None]
        squeeze = True
    else:
        arr = as_feature_map(arr)
    if out_h < 1 or out_w < 1:
        raise InvalidArgumentError(f"output dims must be >= 1, got ({out_h}, {out_w})")

    h, w, _ = arr.shape
    if (out_h, out_w) == (h, w):
        out = arr.copy()
        return out[:, :, 0] if squeeze else out

    y0, y1, fy = _axis_coords(h, out_h)
    x0, x1, fx = _axis_coords(w, out_w)
    src = arr.astype(np.float64)
    rows = src[y0] * (1.0 - fy)[:, None, None] + src[y1] * fy[:, None, None]
    out = rows[:, x0] * (1.0 - fx)[None, :, None] + rows[:, x1] * fx[None, :, None]
    out = out.astype(np.float32)
    return out[:, :, 0] if squeeze else out


def concat_channels(maps) -> np.ndarray:
    """Concatenate feature maps along the channel axis, in list order."""
    maps = [as_feature_map(m) for m in maps]
    if not maps:
        raise InvalidArgumentError("concat_channels needs at least one map")
    h, w = maps[0].shape[:2]
    for i, m in enumerate(maps):
        if m.shape[:2] != (h, w):
            raise ShapeError(
                f"map {i} has spatial dims {m.shape[:2]}, expected ({h}, {w})"
            )
    if len(maps) == 1:
        return maps[0].copy()
    return np.concatenate(maps, axis=2)


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian kernel truncated at radius ceil(4*sigma), float64."""
    if not (sigma > 0):
        raise InvalidArgumentError(f"sigma must be > 0, got {sigma}")
    radius = math.ceil(4.0 * sigma)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def _convolve_axis1(src: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Correlate a float64 (H, W) array with a 1-D kernel along axis 1."""
    r = (len(kernel) - 1) // 2
    w = src.shape[1]
    padded = np.pad(src, ((0, 0), (r, r)), mode="symmetric")
    out = np.zeros_like(src)
    for i, kv in enumerate(kernel):
        out += kv * padded[:, i:i + w]
    return out


def gaussian_filter(smap, sigma: float) -> np.ndarray:
    """Smooth a score map with a separable Gaussian (rows, then columns).

    The kernel is truncated at radius ceil(4*sigma) and normalized to sum 1;
    borders are handled by reflecting the map at its edges (edge value
    included).  A constant map comes back unchanged to within float rounding,
    and the global maximum never increases.
    """
    smap = as_score_map(smap)
    kernel = gaussian_kernel_1d(sigma)
    tmp = _convolve_axis1(smap.astype(np.float64), kernel)
    out = _convolve_axis1(np.ascontiguousarray(tmp.T), kernel).T
    return out.astype(np.float32)
