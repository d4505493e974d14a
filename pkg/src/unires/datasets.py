"""Self-contained data generation: procedural HQ scenes, per-task LQ/HQ
training pairs, the complex-degradation test set, and manifest I/O.

Manifest format: one record per line, tab-separated
``lq_path<TAB>hq_path<TAB>dominating_kind<TAB>recipe_id``. Recipes live in
a sibling ``recipes.txt`` with ``recipe_id<TAB><recipe record>`` lines.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .degrade import (DegradationRecipe, TASKS, apply_recipe, format_recipe,
                      parse_recipe, sample_complex_recipe, sample_task_recipe)
from .images import load_image, save_image


def _soft_disk(h: int, w: int, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    return np.clip(r - d + 0.5, 0.0, 1.0)  # ~1px anti-aliased edge


def _soft_box(h: int, w: int, y0, y1, x0, x1) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    inside_y = np.clip(np.minimum(yy - y0, y1 - yy) + 0.5, 0.0, 1.0)
    inside_x = np.clip(np.minimum(xx - x0, x1 - xx) + 0.5, 0.0, 1.0)
    return inside_y * inside_x


def _soft_stroke(h: int, w: int, p0, p1, thickness: float) -> np.ndarray:
    """Anti-aliased line segment of the given half-thickness."""
    yy, xx = np.mgrid[0:h, 0:w]
    d = np.array(p1) - np.array(p0)
    len_sq = float(d @ d) + 1e-12
    t = np.clip(((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / len_sq, 0.0, 1.0)
    dist = np.sqrt((yy - p0[0] - t * d[0]) ** 2 + (xx - p0[1] - t * d[1]) ** 2)
    return np.clip(thickness - dist + 0.5, 0.0, 1.0)


def synth_scene(rng: np.random.Generator, size: int = 64,
                channels: int = 3) -> np.ndarray:
    """One procedural HQ image: gradient background, anti-aliased shapes,
    and a band-limited texture layer."""
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w]
    theta = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(theta) * xx + np.sin(theta) * yy)
    ramp = (ramp - ramp.min()) / (np.ptp(ramp) + 1e-12)
    c0 = rng.uniform(0.1, 0.9, size=channels)
    c1 = rng.uniform(0.1, 0.9, size=channels)
    img = c0[:, None, None] + (c1 - c0)[:, None, None] * ramp[None]

    for _ in range(int(rng.integers(6, 13))):
        color = rng.uniform(0.05, 0.95, size=channels)
        kind = rng.random()
        if kind < 0.4:
            mask = _soft_disk(h, w, rng.uniform(0, h), rng.uniform(0, w),
                              rng.uniform(size / 16, size / 3))
        elif kind < 0.75:
            y0, x0 = rng.uniform(0, h, 2)
            mask = _soft_box(h, w, y0, y0 + rng.uniform(size / 8, size / 2),
                             x0, x0 + rng.uniform(size / 8, size / 2))
        else:
            p0 = rng.uniform(0, h, 2)
            p1 = p0 + rng.uniform(-h / 2, h / 2, 2)
            mask = _soft_stroke(h, w, p0, p1, rng.uniform(0.6, 1.6))
        img = img * (1 - mask[None]) + color[:, None, None] * mask[None]

    # band-limited texture: low-pass filtered white noise in Fourier space
    noise = rng.standard_normal((h, w))
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.rfftfreq(w)[None, :]
    keep = np.sqrt(fy ** 2 + fx ** 2) < rng.uniform(0.1, 0.3)
    tex = np.fft.irfft2(np.fft.rfft2(noise) * keep, s=(h, w))
    tex = tex / (np.abs(tex).max() + 1e-12) * rng.uniform(0.01, 0.04)
    img = img + tex[None]
    return np.clip(img, 0.0, 1.0)


def synth_corpus(n: int, seed: int, size: int = 64) -> list[np.ndarray]:
    streams = np.random.SeedSequence(seed).spawn(n)
    return [synth_scene(np.random.default_rng(s), size) for s in streams]


def make_task_dataset(hq_images: list[np.ndarray], pairs_per_task: int,
                      seed: int) -> dict:
    """Per-task lists of (lq, hq) pairs for training."""
    out = {t: [] for t in TASKS}
    rng = np.random.default_rng(seed)
    for task in TASKS:
        for i in range(pairs_per_task):
            hq = hq_images[int(rng.integers(len(hq_images)))]
            recipe = sample_task_recipe(task, rng)
            out[task].append((apply_recipe(hq, recipe), hq))
    return out


def make_complex_testset(hq_images: list[np.ndarray], n: int,
                         rng: np.random.Generator) -> list[tuple]:
    """(lq, hq, recipe, dominating_kind) tuples, balanced across the four
    dominating kinds (round-robin when n is not a multiple of 4)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out = []
    for i in range(n):
        dominating = TASKS[i % len(TASKS)]
        hq = hq_images[int(rng.integers(len(hq_images)))]
        recipe = sample_complex_recipe(rng, dominating)
        out.append((apply_recipe(hq, recipe), hq, recipe, dominating))
    return out


@dataclass(frozen=True)
class ManifestEntry:
    lq_path: str
    hq_path: str
    dominating_kind: str
    recipe_id: str


def write_dataset(items: list[tuple], out_dir: str | os.PathLike) -> Path:
    """Write (lq, hq, recipe, kind) tuples as images + manifest + recipes.

    Returns the manifest path.
    """
    out = Path(out_dir)
    (out / "lq").mkdir(parents=True, exist_ok=True)
    (out / "hq").mkdir(parents=True, exist_ok=True)
    manifest_lines = []
    recipe_lines = []
    for i, (lq, hq, recipe, kind) in enumerate(items):
        rid = f"r{i:05d}"
        lq_path = out / "lq" / f"{rid}.png"
        hq_path = out / "hq" / f"{rid}.png"
        save_image(lq, lq_path)
        save_image(hq, hq_path)
        manifest_lines.append(
            f"{lq_path.as_posix()}\t{hq_path.as_posix()}\t{kind}\t{rid}")
        recipe_lines.append(f"{rid}\t{format_recipe(recipe)}")
    (out / "recipes.txt").write_text("\n".join(recipe_lines) + "\n")
    manifest = out / "manifest.tsv"
    manifest.write_text("\n".join(manifest_lines) + "\n")
    return manifest


def read_manifest(path: str | os.PathLike) -> list[ManifestEntry]:
    entries = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"malformed manifest line: {line!r}")
        entries.append(ManifestEntry(*parts))
    return entries


def read_recipes(path: str | os.PathLike) -> dict[str, DegradationRecipe]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rid, rest = line.split("\t", 1)
        out[rid] = parse_recipe(rest)
    return out


def load_pairs(manifest_path: str | os.PathLike) -> list[tuple]:
    """(lq, hq, dominating_kind) arrays for every manifest entry."""
    return [(load_image(e.lq_path), load_image(e.hq_path), e.dominating_kind)
            for e in read_manifest(manifest_path)]
