"""Noise schedules, forward diffusion, the noise-prediction loss, and the
DDIM reverse sampler.

The sampler is generic over a prediction callable ``predict_fn(z_t, t)``
returning the estimated noise; conditioning is closed over by the caller.
Diffusion states are unclamped float64 arrays; clamping to [0, 1] happens
only at decode time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray       # (T,) beta_t, t = 1..T
    alphas: np.ndarray      # (T,) 1 - beta_t
    alpha_bars: np.ndarray  # (T,) running product of alphas

    @property
    def T(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int) -> float:
        """alpha_bar at step t with the convention alpha_bar(0) = 1."""
        if t == 0:
            return 1.0
        if not (1 <= t <= self.T):
            raise IndexError(f"step {t} outside 1..{self.T}")
        return float(self.alpha_bars[t - 1])


def make_schedule(T: int = 1000, beta_start: float = 1e-4,
                  beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    if T == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    return NoiseSchedule(betas=betas, alphas=alphas,
                         alpha_bars=np.cumprod(alphas))


def forward_diffuse(x0: np.ndarray, t: int, eps: np.ndarray,
                    sched: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {eps.shape}")
    ab = sched.alpha_bar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def training_loss(predictor, x0: np.ndarray, cond, sched: NoiseSchedule,
                  rng: np.random.Generator) -> float:
    """Single-draw Monte Carlo noise-prediction MSE.

    ``predictor`` exposes ``predict(x_t, t, cond)``; ``cond`` is passed
    through opaquely.
    """
    t = int(rng.integers(1, sched.T + 1))
    eps = rng.standard_normal(x0.shape)
    x_t = forward_diffuse(x0, t, eps, sched)
    pred = predictor.predict(x_t, t, cond)
    return float(np.mean((eps - pred) ** 2))


def ddim_step(z_t: np.ndarray, eps_hat: np.ndarray, t: int, t_prev: int,
              sched: NoiseSchedule, eta: float = 0.0,
              rng: np.random.Generator | None = None) -> np.ndarray:
    """One DDIM update from step t to t_prev (t > t_prev >= 0)."""
    if not t > t_prev >= 0:
        raise ValueError(f"need t > t_prev >= 0, got {t}, {t_prev}")
    ab_t = sched.alpha_bar(t)
    ab_p = sched.alpha_bar(t_prev)
    x0_hat = (z_t - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
    sigma = 0.0
    if eta > 0.0:
        sigma = eta * np.sqrt((1.0 - ab_p) / (1.0 - ab_t)) \
            * np.sqrt(1.0 - ab_t / ab_p)
    out = np.sqrt(ab_p) * x0_hat \
        + np.sqrt(max(1.0 - ab_p - sigma * sigma, 0.0)) * eps_hat
    if eta > 0.0:
        if rng is None:
            raise ValueError("eta > 0 requires an rng")
        out = out + sigma * rng.standard_normal(z_t.shape)
    return out


def ddim_timesteps(T: int, ddim_steps: int) -> list[int]:
    """Descending subsequence floor(T*i/steps), i = steps..1, ending at 0."""
    if not (1 <= ddim_steps <= T):
        raise ValueError("need 1 <= ddim_steps <= T")
    ts = sorted({T * i // ddim_steps for i in range(ddim_steps + 1)}, reverse=True)
    if ts[-1] != 0:
        ts.append(0)
    return ts


@dataclass(frozen=True)
class SamplerConfig:
    ddim_steps: int = 50
    eta: float = 0.0
    seed: int = 0


def ddim_sample(predict_fn, shape: tuple, cfg: SamplerConfig,
                sched: NoiseSchedule) -> np.ndarray:
    """Run the DDIM reverse process from pure noise; returns unclamped z_0."""
    rng = np.random.default_rng(cfg.seed)
    z = rng.standard_normal(shape)
    ts = ddim_timesteps(sched.T, cfg.ddim_steps)
    for t, t_prev in zip(ts[:-1], ts[1:]):
        eps_hat = predict_fn(z, t)
        z = ddim_step(z, eps_hat, t, t_prev, sched, eta=cfg.eta,
                      rng=rng if cfg.eta > 0 else None)
    return z
