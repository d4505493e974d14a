"""Run configuration: flat ``section.key=value`` text files with flag
overrides.

Unknown keys are rejected so typos fail loudly. ``dump()`` round-trips to
an equivalent config.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .degrade import DOWNSAMPLE_FACTORS


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    working_resolution: int = 64
    threads: int = 1
    schedule_T: int = 1000
    schedule_beta_start: float = 1e-4
    schedule_beta_end: float = 0.02
    sampler_ddim_steps: int = 50
    sampler_eta: float = 0.0
    train_steps: int = 4000
    train_batch_size: int = 16
    train_lr: float = 1e-3
    train_lr_min: float = 1e-5  # > 0 enables cosine decay to this value
    train_task_probs: tuple = (0.32, 0.28, 0.18, 0.22)
    train_drop_lq: float = 0.1
    train_drop_task: float = 0.1
    train_pos_neg_prob: float = 0.0
    grid_gamma: float = -0.2
    grid_delta: float = 1.2
    grid_interval: float = 0.2
    grid_max_negatives: int = 1
    grid_slots: tuple = ("BR", "SR", "MD", "DD", "DN", "DownLQ")
    quality_metric: str = "proxy"
    downlq_factor: int = 4

    def __post_init__(self):
        if abs(sum(self.train_task_probs) - 1.0) > 1e-9:
            raise ValueError("task probabilities must sum to 1")
        if self.downlq_factor not in DOWNSAMPLE_FACTORS:
            raise ValueError(f"downlq.factor must be in {DOWNSAMPLE_FACTORS}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


# file key (section.name) -> dataclass field; a few keys are top-level
_TOP_LEVEL = ("seed", "working_resolution", "threads")
_KEY_MAP = {(f.name if f.name in _TOP_LEVEL else f.name.replace("_", ".", 1)): f.name
            for f in fields(RunConfig)}


def _parse_value(field_name: str, raw: str):
    proto = getattr(RunConfig(), field_name)
    if isinstance(proto, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(proto, int):
        return int(raw)
    if isinstance(proto, float):
        return float(raw)
    if isinstance(proto, tuple):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        if field_name == "grid_slots":
            return tuple(parts)
        return tuple(float(p) for p in parts)
    return raw


def load_config(path: str | os.PathLike) -> RunConfig:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _KEY_MAP:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        name = _KEY_MAP[key]
        values[name] = _parse_value(name, raw)
    return RunConfig(**values)


def dump_config(cfg: RunConfig) -> str:
    inverse = {v: k for k, v in _KEY_MAP.items()}
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{inverse[f.name]}={v}")
    return "\n".join(lines) + "\n"


def with_overrides(cfg: RunConfig, **kwargs) -> RunConfig:
    kwargs = {k: v for k, v in kwargs.items() if v is not None}
    return replace(cfg, **kwargs) if kwargs else cfg


def resolve_threads(flag_value: int | None) -> int | None:
    """--threads wins; UNIRES_THREADS is the fallback; else config/default."""
    if flag_value is not None:
        return flag_value
    env = os.environ.get("UNIRES_THREADS")
    return int(env) if env else None
