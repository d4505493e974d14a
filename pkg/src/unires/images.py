"""Image representation, bicubic resampling, channel statistics and color
matching, plus lossless PNG I/O.

Images are numpy float64 arrays of shape (channels, height, width) with
samples nominally in [0, 1]. ``channels`` is 1 or 3.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

EPS_STD = 1e-6


def ensure_image(img: np.ndarray) -> np.ndarray:
    """Validate the (C, H, W) image convention and return a float64 view."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError(f"image must be (C, H, W), got shape {img.shape}")
    c, h, w = img.shape
    if c not in (1, 3):
        raise ValueError(f"channels must be 1 or 3, got {c}")
    if h < 1 or w < 1:
        raise ValueError(f"empty image: {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite samples")
    return img


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray  # (C,)
    std: np.ndarray   # (C,) population (biased)


def channel_stats(img: np.ndarray) -> ChannelStats:
    img = ensure_image(img)
    flat = img.reshape(img.shape[0], -1)
    return ChannelStats(mean=flat.mean(axis=1), std=flat.std(axis=1))


def _catmull_rom(x: np.ndarray) -> np.ndarray:
    """Cubic convolution kernel with a = -0.5 (Catmull-Rom)."""
    x = np.abs(x)
    x2 = x * x
    x3 = x2 * x
    out = np.zeros_like(x)
    m1 = x <= 1.0
    out[m1] = (1.5 * x3 - 2.5 * x2 + 1.0)[m1]
    m2 = (x > 1.0) & (x < 2.0)
    out[m2] = (-0.5 * x3 + 2.5 * x2 - 4.0 * x + 2.0)[m2]
    return out


def _resample_axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-output-pixel source indices (edge-clamped) and Catmull-Rom weights."""
    scale = n_in / n_out
    # center-aligned mapping; reduces to src = i for equal sizes
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    base = np.floor(src).astype(np.int64)
    offs = np.arange(-1, 3)
    idx = base[:, None] + offs[None, :]
    w = _catmull_rom(src[:, None] - idx)
    w /= w.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, n_in - 1)
    return idx, w


def resample_bicubic(img: np.ndarray, out_height: int, out_width: int) -> np.ndarray:
    """Separable Catmull-Rom resampling with edge clamping, output in [0, 1]."""
    img = ensure_image(img)
    if out_height < 1 or out_width < 1:
        raise ValueError("output dimensions must be >= 1")
    _, h, w = img.shape
    iy, wy = _resample_axis_weights(h, out_height)
    ix, wx = _resample_axis_weights(w, out_width)
    rows = (img[:, iy, :] * wy[None, :, :, None]).sum(axis=2)
    out = (rows[:, :, ix] * wx[None, None, :, :]).sum(axis=3)
    return np.clip(out, 0.0, 1.0)


def adain_correct(generated: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Match per-channel mean/std of ``generated`` to ``reference``; clamp to [0, 1]."""
    generated = ensure_image(generated)
    reference = ensure_image(reference)
    if generated.shape[0] != reference.shape[0]:
        raise ValueError(
            f"channel mismatch: {generated.shape[0]} vs {reference.shape[0]}")
    g = channel_stats(generated)
    r = channel_stats(reference)
    scale = r.std / np.maximum(g.std, EPS_STD)
    out = (generated - g.mean[:, None, None]) * scale[:, None, None] \
        + r.mean[:, None, None]
    return np.clip(out, 0.0, 1.0)


def save_image(img: np.ndarray, path: str | os.PathLike, *, bits: int = 16) -> None:
    """Write a PNG (8- or 16-bit). 3-channel images are stored as RGB."""
    import cv2
    img = ensure_image(img)
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = 255 if bits == 8 else 65535
    dtype = np.uint8 if bits == 8 else np.uint16
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval).astype(dtype)
    hwc = q.transpose(1, 2, 0)
    if hwc.shape[2] == 3:
        hwc = cv2.cvtColor(hwc, cv2.COLOR_RGB2BGR)
    else:
        hwc = hwc[:, :, 0]
    if not cv2.imwrite(str(path), hwc):
        raise IOError(f"failed to write image: {path}")


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Read a PNG back into a (C, H, W) float64 array in [0, 1]."""
    import cv2
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"cannot read image: {path}")
    maxval = 65535.0 if raw.dtype == np.uint16 else 255.0
    if raw.ndim == 2:
        chw = raw[None, :, :].astype(np.float64)
    elif raw.ndim == 3 and raw.shape[2] in (3, 4):
        rgb = cv2.cvtColor(raw[:, :, :3], cv2.COLOR_BGR2RGB)
        chw = rgb.transpose(2, 0, 1).astype(np.float64)
    else:
        raise IOError(f"unsupported image layout: shape {raw.shape}")
    return chw / maxval
