"""Constrained grid enumeration over combination weights and the per-image
search loop, plus preset and feature-predicted weight modes.

Candidates all share one sampler seed so score differences reflect the
weights, not noise draws. Evaluations may run on several threads; scores
are collected first and reduced in enumeration order, so the result is
independent of the degree of parallelism.
"""

from __future__ import annotations

import itertools
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .combine import BASE_SLOTS, WeightVector, restore
from .diffusion import NoiseSchedule, SamplerConfig
from .quality import mean_gradient_magnitude, noise_std_estimate

SUM_TOL = 1e-5
NEG_TOL = -1e-5


@dataclass(frozen=True)
class GridSpec:
    gamma: float = -0.2
    delta: float = 1.2
    interval: float = 0.2
    slots: tuple = BASE_SLOTS
    max_negatives: int = 1

    def __post_init__(self):
        if self.gamma > self.delta:
            raise ValueError("gamma must be <= delta")
        if self.interval <= 0:
            raise ValueError("interval must be > 0")
        steps = (self.delta - self.gamma) / self.interval
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("(delta - gamma) must be a multiple of interval")
        if self.max_negatives < 0:
            raise ValueError("max_negatives must be >= 0")
        object.__setattr__(self, "slots", tuple(self.slots))

    @property
    def K(self) -> int:
        return len(self.slots)

    def values(self) -> np.ndarray:
        n = int(round((self.delta - self.gamma) / self.interval))
        return np.round(self.gamma + self.interval * np.arange(n + 1), 12)


def enumerate_grid(spec: GridSpec) -> list[WeightVector]:
    """All lattice vectors with sum 1 (tol 1e-5) and at most
    ``max_negatives`` negative entries, in lexicographic order."""
    values = spec.values()
    out = []
    for combo in itertools.product(values, repeat=spec.K):
        arr = np.array(combo)
        if abs(arr.sum() - 1.0) >= SUM_TOL:
            continue
        if np.count_nonzero(arr < NEG_TOL) > spec.max_negatives:
            continue
        out.append(WeightVector(slots=spec.slots, weights=arr))
    return out


@dataclass(frozen=True)
class RestoreContext:
    """Everything needed to run restore() during a search."""

    model: object
    sched: NoiseSchedule
    sampler: SamplerConfig = SamplerConfig()
    downlq_factor: int = 4
    color_correct: bool = True
    threads: int = 1

    def restore(self, lq: np.ndarray, w: WeightVector) -> np.ndarray:
        return restore(lq, w, self.model, self.sampler, self.sched,
                       downlq_factor=self.downlq_factor,
                       color_correct=self.color_correct)


@dataclass(frozen=True, eq=False)
class SearchResult:
    best_w: WeightVector
    best_score: float
    best_image: np.ndarray
    evaluated: int
    per_candidate_scores: list | None = None


def reduced_search(lq: np.ndarray, candidates: list[WeightVector], quality_fn,
                   ctx: RestoreContext, *, keep_scores: bool = False) -> SearchResult:
    """Argmax of quality over an explicit candidate list.

    Ties break toward the earliest candidate; non-finite scores are skipped
    with a warning; the search fails only if every candidate is non-finite.
    """
    if not candidates:
        raise ValueError("no candidates to search")

    def score_one(w: WeightVector) -> float:
        return float(quality_fn(ctx.restore(lq, w)))

    if ctx.threads > 1:
        with ThreadPoolExecutor(max_workers=ctx.threads) as pool:
            scores = list(pool.map(score_one, candidates))
    else:
        scores = [score_one(w) for w in candidates]

    best_i = -1
    best_score = -np.inf
    for i, s in enumerate(scores):
        if not np.isfinite(s):
            warnings.warn(f"skipping candidate {i}: non-finite score {s}")
            continue
        if s > best_score:
            best_i, best_score = i, s
    if best_i < 0:
        raise RuntimeError("quality function returned non-finite scores "
                           "for every candidate")
    best_w = candidates[best_i]
    return SearchResult(best_w=best_w, best_score=best_score,
                        best_image=ctx.restore(lq, best_w),
                        evaluated=len(candidates),
                        per_candidate_scores=scores if keep_scores else None)


def grid_search(lq: np.ndarray, spec: GridSpec, quality_fn,
                ctx: RestoreContext, *, keep_scores: bool = False) -> SearchResult:
    """Full search over the enumerated constraint grid."""
    return reduced_search(lq, enumerate_grid(spec), quality_fn, ctx,
                          keep_scores=keep_scores)


PRESETS = {
    # average of the per-image optima over the complex-degradation benchmark
    "average_optimal": {"BR": 0.07, "SR": 0.12, "MD": 0.07, "DD": 0.06,
                        "DN": -0.15, "DownLQ": 0.83},
    # single most frequent per-image optimum
    "most_popular": {"DN": -0.2, "DownLQ": 1.2},
}


def preset_weights(name: str) -> WeightVector:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    table = PRESETS[name]
    w = np.array([table.get(s, 0.0) for s in BASE_SLOTS])
    return WeightVector(slots=BASE_SLOTS, weights=w)


def tally_weights(results: list[SearchResult], top_k: int = 8) -> list[WeightVector]:
    """Most frequent optimal vectors from a calibration run, ties broken by
    first appearance."""
    counts: dict = {}
    order: dict = {}
    for i, res in enumerate(results):
        key = (res.best_w.slots, tuple(np.round(res.best_w.weights, 9)))
        counts[key] = counts.get(key, 0) + 1
        order.setdefault(key, i)
    ranked = sorted(counts, key=lambda k: (-counts[k], order[k]))
    return [WeightVector(slots=k[0], weights=np.array(k[1]))
            for k in ranked[:top_k]]


# --- weight prediction without search -------------------------------------

def degradation_features(lq: np.ndarray) -> dict:
    """Hand-crafted degradation descriptors for weight prediction."""
    from .images import resample_bicubic

    noise = noise_std_estimate(lq)
    g_full = mean_gradient_magnitude(lq)
    _, h, w = lq.shape
    half = resample_bicubic(lq, max(1, h // 2), max(1, w // 2))
    g_half = mean_gradient_magnitude(half)
    # blurry images lose little gradient energy when halved
    blur = g_half / (g_full + 1e-8) - 1.0
    spectrum = np.abs(np.fft.rfft2(lq.mean(axis=0)))
    total = spectrum.sum() + 1e-12
    hi = spectrum.copy()
    hi[:h // 4, :] = 0.0
    hi[-(h // 4):, :] = 0.0
    res_deficit = 1.0 - float(hi.sum() / total)
    return {"noise": float(noise * 10.0), "blur": float(max(blur, 0.0)),
            "res_deficit": res_deficit}


def _default_weight_predictor(lq: np.ndarray) -> WeightVector:
    feats = degradation_features(lq)
    if feats["noise"] >= max(feats["blur"], feats["res_deficit"]):
        return preset_weights("most_popular")
    return preset_weights("average_optimal")


_WEIGHT_PREDICTORS = {"default": _default_weight_predictor}


def register_weight_predictor(name: str, fn) -> None:
    _WEIGHT_PREDICTORS[name] = fn


def predict_weights(lq: np.ndarray, predictor: str = "default") -> WeightVector:
    """Predict combination weights directly from the LQ image.

    A predictor may return a WeightVector or a raw (slots-aligned) array;
    raw predictions off the sum-1 constraint are projected back by a
    uniform shift.
    """
    if predictor not in _WEIGHT_PREDICTORS:
        raise ValueError(f"no weight predictor registered as {predictor!r}")
    raw = _WEIGHT_PREDICTORS[predictor](lq)
    if isinstance(raw, WeightVector):
        return raw
    arr = np.asarray(raw, dtype=np.float64)
    if arr.shape != (len(BASE_SLOTS),):
        raise ValueError(f"raw prediction must have shape ({len(BASE_SLOTS)},)")
    arr = arr + (1.0 - arr.sum()) / len(arr)
    return WeightVector(slots=BASE_SLOTS, weights=arr)
