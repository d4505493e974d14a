"""Weighted combination of per-slot noise predictions and the end-to-end
restore pipeline.

A "slot" names one expert prediction: the four explicit tasks, blind
restoration (LQ-conditioned, null task), DownLQ (super-resolution on a
down-then-up resampled LQ), the optional positive/negative prompt slots,
and a fully unconditional slot used by classifier-free guidance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .degrade import downsample_up
from .diffusion import NoiseSchedule, SamplerConfig, ddim_sample
from .images import adain_correct, ensure_image
from .conditions import Condition

BASE_SLOTS = ("BR", "SR", "MD", "DD", "DN", "DownLQ")
PROMPT_SLOTS = ("Pos", "Neg")
ALL_SLOTS = BASE_SLOTS + PROMPT_SLOTS + ("Uncond",)

DEFAULT_DOWNLQ_FACTOR = 4

WEIGHT_SUM_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Ordered (slot, weight) pairs summing to one."""

    slots: tuple
    weights: np.ndarray

    def __post_init__(self):
        slots = tuple(self.slots)
        weights = np.asarray(self.weights, dtype=np.float64)
        if len(slots) != len(weights):
            raise ValueError("slots and weights length mismatch")
        if len(set(slots)) != len(slots):
            raise ValueError(f"duplicate slots: {slots}")
        for s in slots:
            if s not in ALL_SLOTS:
                raise ValueError(f"unknown slot: {s}")
        if not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite")
        if abs(weights.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights must sum to 1, got {weights.sum()!r}")
        object.__setattr__(self, "slots", slots)
        object.__setattr__(self, "weights", weights)

    def __getitem__(self, slot: str) -> float:
        try:
            return float(self.weights[self.slots.index(slot)])
        except ValueError:
            return 0.0

    def as_dict(self) -> dict:
        return dict(zip(self.slots, self.weights.tolist()))


def one_hot(slot: str, slots: tuple = BASE_SLOTS) -> WeightVector:
    if slot not in slots:
        raise ValueError(f"slot {slot} not in {slots}")
    w = np.zeros(len(slots))
    w[slots.index(slot)] = 1.0
    return WeightVector(slots=slots, weights=w)


def parse_weights(text: str, slots: tuple = BASE_SLOTS) -> WeightVector:
    """Parse the CLI form ``SLOT=value,SLOT=value``; omitted slots are 0."""
    w = np.zeros(len(slots))
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            name, value = part.split("=")
        except ValueError:
            raise ValueError(f"malformed weight entry: {part!r}") from None
        name = name.strip()
        if name not in slots:
            raise ValueError(f"unknown slot {name!r}; expected one of {slots}")
        w[slots.index(name)] = float(value)
    return WeightVector(slots=slots, weights=w)


def format_weights(w: WeightVector) -> str:
    return ",".join(f"{s}={v:g}" for s, v in zip(w.slots, w.weights))


def make_downlq_condition(lq: np.ndarray,
                          factor: int = DEFAULT_DOWNLQ_FACTOR) -> Condition:
    """Super-resolution condition on the down-then-up resampled LQ."""
    return Condition(lq=downsample_up(lq, factor), task="SR")


def slot_conditions(lq: np.ndarray, slots: tuple,
                    downlq_factor: int = DEFAULT_DOWNLQ_FACTOR) -> dict:
    """Precompute the per-slot conditions for one LQ image."""
    conds = {}
    for s in slots:
        if s == "BR":
            conds[s] = Condition(lq=lq, task=None)
        elif s in ("SR", "MD", "DD", "DN"):
            conds[s] = Condition(lq=lq, task=s)
        elif s == "DownLQ":
            conds[s] = make_downlq_condition(lq, downlq_factor)
        elif s == "Pos":
            conds[s] = Condition(lq=lq, task="POS")
        elif s == "Neg":
            conds[s] = Condition(lq=lq, task="NEG")
        elif s == "Uncond":
            conds[s] = Condition(lq=None, task=None)
        else:
            raise ValueError(f"unknown slot: {s}")
    return conds


def _slot_predict_fn(model, slot: str):
    if hasattr(model, "predict"):
        return model.predict
    try:
        return model[slot].predict
    except (KeyError, TypeError):
        raise ValueError(f"no predictor available for slot {slot}") from None


def combine(model, z_t: np.ndarray, t: int, lq: np.ndarray, w: WeightVector,
            *, downlq_factor: int = DEFAULT_DOWNLQ_FACTOR,
            conditions: dict | None = None) -> np.ndarray:
    """Weighted sum of per-slot noise predictions at one sampling step.

    ``model`` is either a single predictor applied under each slot's
    condition, or a mapping from slot name to predictor. Slots with weight
    exactly 0 are skipped. Summation follows slot declaration order.
    """
    if conditions is None:
        conditions = slot_conditions(lq, w.slots, downlq_factor)
    out = np.zeros_like(z_t, dtype=np.float64)
    for slot, wk in zip(w.slots, w.weights):
        if wk == 0.0:
            continue
        pred = _slot_predict_fn(model, slot)(z_t, t, conditions[slot])
        out += wk * pred
    return out


def cfg_weights(guidance: float, cond_slot: str = "SR") -> WeightVector:
    """Two-slot classifier-free guidance weights summing to one."""
    return WeightVector(slots=(cond_slot, "Uncond"),
                        weights=np.array([guidance, 1.0 - guidance]))


def with_prompt_extension(w: WeightVector, pos: float = 1.0,
                          neg: float = -1.0) -> WeightVector:
    """Add positive/negative prompt slots on top of a base vector.

    Default +1/-1 additions cancel, so the result still sums to one.
    """
    if abs(pos + neg) > WEIGHT_SUM_TOL:
        raise ValueError("prompt-slot additions must cancel (pos + neg = 0)")
    slots = w.slots + PROMPT_SLOTS
    weights = np.concatenate([w.weights, [pos, neg]])
    return WeightVector(slots=slots, weights=weights)


def restore(lq: np.ndarray, w: WeightVector, model, cfg: SamplerConfig,
            sched: NoiseSchedule, *,
            downlq_factor: int = DEFAULT_DOWNLQ_FACTOR,
            color_correct: bool = True) -> np.ndarray:
    """Full restoration: DDIM sampling with combined predictions, clamp to
    [0, 1], then color correction toward the LQ input."""
    lq = ensure_image(lq)
    conds = slot_conditions(lq, w.slots, downlq_factor)

    def predict_fn(z_t, t):
        return combine(model, z_t, t, lq, w, conditions=conds)

    out = ddim_sample(predict_fn, lq.shape, cfg, sched)
    out = np.clip(out, 0.0, 1.0)
    if color_correct:
        out = adain_correct(out, lq)
    return out
