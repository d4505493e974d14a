"""Synthetic degradation operators and recipe-driven LQ generation.

Each operator is a pure function of the image (plus an explicit RNG for the
stochastic ones). A :class:`DegradationRecipe` is an ordered list of
operators plus a seed; applying it derives one independent RNG stream per
op, so the result depends only on (image, recipe).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .images import ensure_image, resample_bicubic

TASKS = ("SR", "MD", "DD", "DN")

DOWNSAMPLE_FACTORS = (2, 4, 8, 16)

# ITU-T T.81 Annex K.1 luminance quantization table
_JPEG_LUMA_Q = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


@dataclass(frozen=True)
class ShakeKernel:
    """Normalized nonnegative 2D blur kernel of odd size."""

    taps: np.ndarray

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 2 or taps.shape[0] != taps.shape[1]:
            raise ValueError(f"kernel must be square, got {taps.shape}")
        n = taps.shape[0]
        if n % 2 == 0 or not (3 <= n <= 63):
            raise ValueError(f"kernel size must be odd in [3, 63], got {n}")
        if np.any(taps < 0):
            raise ValueError("kernel taps must be nonnegative")
        if abs(taps.sum() - 1.0) > 1e-9:
            raise ValueError("kernel taps must sum to 1")
        object.__setattr__(self, "taps", taps)

    @property
    def size(self) -> int:
        return self.taps.shape[0]


@dataclass(frozen=True)
class DegradationOp:
    kind: str
    params: dict = field(default_factory=dict)

    _VALID = {
        "gaussian_blur": ("sigma",),
        "shake_blur": ("intensity", "size"),
        "shot_noise": ("scale",),
        "read_noise": ("sigma",),
        "jpeg_like": ("quality",),
        "downsample_up": ("factor",),
    }

    def __post_init__(self):
        if self.kind not in self._VALID:
            raise ValueError(f"unknown degradation kind: {self.kind}")
        expected = self._VALID[self.kind]
        if set(self.params) != set(expected):
            raise ValueError(
                f"{self.kind} expects params {expected}, got {tuple(self.params)}")
        p = self.params
        if self.kind == "gaussian_blur" and p["sigma"] < 0:
            raise ValueError("sigma must be >= 0")
        if self.kind == "shot_noise" and p["scale"] < 0:
            raise ValueError("scale must be >= 0")
        if self.kind == "read_noise" and p["sigma"] < 0:
            raise ValueError("sigma must be >= 0")
        if self.kind == "jpeg_like" and not (1 <= p["quality"] <= 100):
            raise ValueError("quality must be in [1, 100]")
        if self.kind == "downsample_up" and p["factor"] not in DOWNSAMPLE_FACTORS:
            raise ValueError(f"factor must be one of {DOWNSAMPLE_FACTORS}")


@dataclass(frozen=True)
class DegradationRecipe:
    ops: tuple
    seed: int

    def __post_init__(self):
        ops = tuple(self.ops)
        if len(ops) < 1:
            raise ValueError("recipe needs at least one op")
        object.__setattr__(self, "ops", ops)

    def kinds(self) -> set:
        return {op.kind for op in self.ops}


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel radius ceil(3*sigma), edge clamp."""
    img = ensure_image(img)
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return img.copy()
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    pad = np.pad(img, ((0, 0), (radius, radius), (0, 0)), mode="edge")
    rows = np.zeros_like(img)
    for i, kv in enumerate(k):
        rows += kv * pad[:, i:i + img.shape[1], :]
    pad = np.pad(rows, ((0, 0), (0, 0), (radius, radius)), mode="edge")
    out = np.zeros_like(img)
    for i, kv in enumerate(k):
        out += kv * pad[:, :, i:i + img.shape[2]]
    return np.clip(out, 0.0, 1.0)


def shake_blur_kernel(rng: np.random.Generator, intensity: float, size: int) -> ShakeKernel:
    """Camera-shake kernel from a seeded damped-momentum trajectory.

    The trajectory takes ceil(intensity * 4 * size) sub-pixel steps with
    AR(1)-correlated velocity (streak-like, as physical shake), is
    re-centered on its centroid (a shake kernel carries no net
    translation), then splatted bilinearly onto the grid and normalized.
    intensity 0 gives the center delta.
    """
    if size % 2 == 0 or not (3 <= size <= 63):
        raise ValueError(f"size must be odd in [3, 63], got {size}")
    if not (0.0 <= intensity <= 1.0):
        raise ValueError("intensity must be in [0, 1]")
    n_steps = int(math.ceil(intensity * 4.0 * size))
    center = (size - 1) / 2.0
    pos = np.zeros(2)
    vel = np.zeros(2)
    pts = [pos.copy()]
    for _ in range(n_steps):
        vel = 0.95 * vel + rng.normal(0.0, 0.5, size=2)
        pos = pos + vel
        pts.append(pos.copy())
    track = np.array(pts)
    track = track - track.mean(axis=0) + center
    grid = np.zeros((size, size), dtype=np.float64)
    for y, x in track:
        y = min(max(y, 0.0), size - 1.0)
        x = min(max(x, 0.0), size - 1.0)
        y0, x0 = int(y), int(x)
        fy, fx = y - y0, x - x0
        y1, x1 = min(y0 + 1, size - 1), min(x0 + 1, size - 1)
        grid[y0, x0] += (1 - fy) * (1 - fx)
        grid[y0, x1] += (1 - fy) * fx
        grid[y1, x0] += fy * (1 - fx)
        grid[y1, x1] += fy * fx
    grid /= grid.sum()
    return ShakeKernel(taps=grid)


def apply_kernel(img: np.ndarray, kernel: ShakeKernel) -> np.ndarray:
    """2D convolution with edge clamping, per channel."""
    img = ensure_image(img)
    taps = kernel.taps
    r = kernel.size // 2
    pad = np.pad(img, ((0, 0), (r, r), (r, r)), mode="edge")
    out = np.zeros_like(img)
    h, w = img.shape[1:]
    for dy in range(kernel.size):
        for dx in range(kernel.size):
            t = taps[dy, dx]
            if t != 0.0:
                out += t * pad[:, dy:dy + h, dx:dx + w]
    return np.clip(out, 0.0, 1.0)


def add_noise(img: np.ndarray, shot_scale: float, read_sigma: float,
              rng: np.random.Generator) -> np.ndarray:
    """Signal-dependent shot noise plus Gaussian read-out noise."""
    img = ensure_image(img)
    if shot_scale < 0 or read_sigma < 0:
        raise ValueError("noise parameters must be >= 0")
    n1 = rng.standard_normal(img.shape)
    n2 = rng.standard_normal(img.shape)
    out = img + np.sqrt(np.maximum(img, 0.0) * shot_scale) * n1 + read_sigma * n2
    return np.clip(out, 0.0, 1.0)


def jpeg_quant_table(quality: int) -> np.ndarray:
    """Luminance quantization table scaled by the libjpeg quality rule."""
    if not (1 <= quality <= 100):
        raise ValueError("quality must be in [1, 100]")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    table = np.floor((_JPEG_LUMA_Q * scale + 50.0) / 100.0)
    return np.clip(table, 1.0, 255.0)


def jpeg_like(img: np.ndarray, quality: int) -> np.ndarray:
    """JPEG-style 8x8 block DCT quantization per channel (no entropy coding)."""
    from scipy.fft import dctn, idctn
    img = ensure_image(img)
    table = jpeg_quant_table(quality)
    c, h, w = img.shape
    ph = (8 - h % 8) % 8
    pw = (8 - w % 8) % 8
    x = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="edge") * 255.0 - 128.0
    hh, ww = x.shape[1:]
    blocks = x.reshape(c, hh // 8, 8, ww // 8, 8).transpose(0, 1, 3, 2, 4)
    coef = dctn(blocks, type=2, axes=(-2, -1), norm="ortho")
    # DCT-II ortho differs from the JPEG FDCT by a factor of 4 overall scale
    # folded into the table; apply the table on the ortho coefficients scaled
    # to JPEG convention.
    coef = np.rint(coef * 4.0 / table) * table / 4.0
    rec = idctn(coef, type=2, axes=(-2, -1), norm="ortho")
    out = rec.transpose(0, 1, 3, 2, 4).reshape(c, hh, ww)[:, :h, :w]
    return np.clip((out + 128.0) / 255.0, 0.0, 1.0)


def downsample_up(img: np.ndarray, factor: int) -> np.ndarray:
    """Bicubic down by ``factor`` then bicubic back up to the original size."""
    img = ensure_image(img)
    if factor not in DOWNSAMPLE_FACTORS:
        raise ValueError(f"factor must be one of {DOWNSAMPLE_FACTORS}")
    _, h, w = img.shape
    small = resample_bicubic(img, max(1, h // factor), max(1, w // factor))
    return resample_bicubic(small, h, w)


def recipe_streams(recipe: DegradationRecipe) -> list[np.random.Generator]:
    """One independent RNG stream per op, derived from the recipe seed."""
    children = np.random.SeedSequence(recipe.seed).spawn(len(recipe.ops))
    return [np.random.default_rng(s) for s in children]


def apply_op(img: np.ndarray, op: DegradationOp, rng: np.random.Generator) -> np.ndarray:
    p = op.params
    if op.kind == "gaussian_blur":
        return gaussian_blur(img, p["sigma"])
    if op.kind == "shake_blur":
        kernel = shake_blur_kernel(rng, p["intensity"], p["size"])
        return apply_kernel(img, kernel)
    if op.kind == "shot_noise":
        return add_noise(img, p["scale"], 0.0, rng)
    if op.kind == "read_noise":
        return add_noise(img, 0.0, p["sigma"], rng)
    if op.kind == "jpeg_like":
        return jpeg_like(img, p["quality"])
    if op.kind == "downsample_up":
        return downsample_up(img, p["factor"])
    raise ValueError(f"unknown degradation kind: {op.kind}")


def apply_recipe(hq: np.ndarray, recipe: DegradationRecipe) -> np.ndarray:
    """Apply ops in order; deterministic given (hq, recipe)."""
    img = ensure_image(hq)
    for op, rng in zip(recipe.ops, recipe_streams(recipe)):
        img = apply_op(img, op, rng)
    return img


def sample_task_recipe(task: str, rng: np.random.Generator) -> DegradationRecipe:
    """Draw a degradation recipe from the family of the given training task."""
    seed = int(rng.integers(0, 2**63 - 1))
    if task == "SR":
        factor = int(rng.choice([2, 4]))
        ops = (
            DegradationOp("downsample_up", {"factor": factor}),
            DegradationOp("read_noise", {"sigma": float(rng.uniform(0.02, 0.06))}),
            DegradationOp("jpeg_like", {"quality": int(rng.integers(30, 81))}),
        )
    elif task == "MD":
        ops = (DegradationOp("shake_blur", {
            "intensity": float(rng.uniform(0.3, 1.0)),
            "size": int(rng.choice([7, 9, 11])),
        }),)
    elif task == "DD":
        ops = (DegradationOp("gaussian_blur", {"sigma": float(rng.uniform(1.0, 4.0))}),)
    elif task == "DN":
        ops = (
            DegradationOp("shot_noise", {"scale": float(rng.uniform(0.01, 0.1))}),
            DegradationOp("read_noise", {"sigma": float(rng.uniform(0.02, 0.1))}),
        )
    else:
        raise ValueError(f"unknown task: {task}")
    return DegradationRecipe(ops=ops, seed=seed)


def sample_complex_recipe(rng: np.random.Generator, dominating: str) -> DegradationRecipe:
    """A recipe mixing >= 2 distinct degradation kinds, led by ``dominating``."""
    if dominating not in TASKS:
        raise ValueError(f"unknown dominating kind: {dominating}")
    lead = sample_task_recipe(dominating, rng)
    others = [t for t in TASKS if t != dominating]
    extra_task = str(rng.choice(others))
    extra = _mild_recipe(extra_task, rng)
    seed = int(rng.integers(0, 2**63 - 1))
    return DegradationRecipe(ops=lead.ops + extra.ops, seed=seed)


def _mild_recipe(task: str, rng: np.random.Generator) -> DegradationRecipe:
    """Weakened variant used as the secondary degradation in complex recipes."""
    seed = int(rng.integers(0, 2**63 - 1))
    if task == "SR":
        ops = (DegradationOp("downsample_up", {"factor": 2}),)
    elif task == "MD":
        ops = (DegradationOp("shake_blur", {
            "intensity": float(rng.uniform(0.1, 0.3)), "size": 7}),)
    elif task == "DD":
        ops = (DegradationOp("gaussian_blur", {"sigma": float(rng.uniform(0.5, 1.5))}),)
    else:
        ops = (DegradationOp("read_noise", {"sigma": float(rng.uniform(0.02, 0.05))}),)
    return DegradationRecipe(ops=ops, seed=seed)


# ---------------------------------------------------------------------------
# Recipe text serialization: "<seed>\t<kind>(k=v,...);<kind>(...)"

def format_recipe(recipe: DegradationRecipe) -> str:
    parts = []
    for op in recipe.ops:
        # repr round-trips floats exactly (shortest representation)
        inner = ",".join(f"{k}={op.params[k]!r}" for k in sorted(op.params))
        parts.append(f"{op.kind}({inner})")
    return f"{recipe.seed}\t" + ";".join(parts)


def parse_recipe(text: str) -> DegradationRecipe:
    try:
        seed_s, ops_s = text.strip().split("\t", 1)
        ops = []
        for part in ops_s.split(";"):
            kind, rest = part.split("(", 1)
            rest = rest.rstrip(")")
            params = {}
            for kv in rest.split(","):
                k, v = kv.split("=")
                if k in ("size", "factor", "quality"):
                    params[k] = int(v)
                else:
                    params[k] = float(v)
            ops.append(DegradationOp(kind, params))
        return DegradationRecipe(ops=tuple(ops), seed=int(seed_s))
    except (ValueError, KeyError) as exc:
        raise ValueError(f"malformed recipe record: {text!r}") from exc
