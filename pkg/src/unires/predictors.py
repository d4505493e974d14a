"""Noise predictors: the analytic Gaussian oracle used to validate sampler
and combiner math, and a small trainable conditional denoiser.

A predictor exposes ``predict(z_t, t, cond) -> eps_hat`` on numpy arrays.
The denoiser conditions on the LQ image by channel concatenation (plus a
presence plane so a dropped image is distinguishable from a black one) and
on the task by a learned embedding with a dedicated null slot.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .conditions import (Condition, NULL_CONDITION, TASK_VOCAB,  # noqa: F401
                         task_index)
from .diffusion import NoiseSchedule, forward_diffuse

_CHECKPOINT_MAGIC = b"UNIRES\x00\x01"

_torch_configured = False


def _configure_torch() -> None:
    # single-threaded kernels keep results identical across worker counts
    global _torch_configured
    if not _torch_configured:
        torch.set_num_threads(1)
        _torch_configured = True


@dataclass(frozen=True, eq=False)
class AnalyticGaussianPredictor:
    """Exact noise predictor for x0 ~ N(mu, sigma0_sq I).

    Realizes the optimum of the noise-prediction objective in closed form,
    independent of any conditioning.
    """

    mu: np.ndarray
    sigma0_sq: float = 0.0
    sched: NoiseSchedule = None

    def __post_init__(self):
        if self.sigma0_sq < 0:
            raise ValueError("sigma0_sq must be >= 0")
        if not np.all(np.isfinite(self.mu)):
            raise ValueError("mu must be finite")

    def predict(self, z_t: np.ndarray, t: int, cond=None) -> np.ndarray:
        if z_t.shape != self.mu.shape:
            raise ValueError(f"shape mismatch: {z_t.shape} vs {self.mu.shape}")
        ab = self.sched.alpha_bar(t)
        denom = ab * self.sigma0_sq + 1.0 - ab
        return math.sqrt(1.0 - ab) * (z_t - math.sqrt(ab) * self.mu) / denom

    def posterior_mean(self, z_t: np.ndarray, t: int) -> np.ndarray:
        """E[x0 | x_t] under the Gaussian data model."""
        ab = self.sched.alpha_bar(t)
        denom = ab * self.sigma0_sq + 1.0 - ab
        return (math.sqrt(ab) * self.sigma0_sq * z_t + (1.0 - ab) * self.mu) / denom


def _timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype,
                                                        device=t.device) / half)
    ang = t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


class TinyCondDenoiser(nn.Module):
    """Small UNet-style conditional noise predictor.

    Input is [z_t, lq (zeros when dropped), presence plane]. Timestep and
    task embeddings are fused into one vector that modulates every stage
    through per-stage feature-wise affine (FiLM) layers applied after
    GroupNorm: the full-resolution stages need timestep knowledge to decide
    how much to trust z_t versus the conditioning image, and a bottleneck-
    only injection cannot reach them.

    The network head predicts the residual v = sqrt(abar) eps
    - sqrt(1 - abar) x0, and the output layer assembles the noise estimate
    eps_hat = sqrt(1 - abar) z_t + sqrt(abar) v_hat. The exposed quantity
    (and the training target) is still the noise: this internal
    parameterization only moves the analytically-known component of eps
    out of the learning problem, so network error enters eps_hat scaled by
    sqrt(abar) instead of being amplified by 1/sqrt(abar) in the x0
    estimate at high t.
    """

    NORM_GROUPS = 8

    def __init__(self, channels: int = 3, widths: tuple[int, int, int] = (32, 48, 64),
                 emb_dim: int = 64, working_resolution: int = 64,
                 schedule_T: int = 1000, beta_start: float = 1e-4,
                 beta_end: float = 0.02):
        super().__init__()
        _configure_torch()
        self.channels = channels
        self.widths = tuple(widths)
        self.emb_dim = emb_dim
        self.working_resolution = working_resolution
        self.schedule_T = schedule_T
        self.beta_start = beta_start
        self.beta_end = beta_end
        w1, w2, w3 = self.widths
        for w in self.widths:
            if w % self.NORM_GROUPS:
                raise ValueError(
                    f"widths must be multiples of {self.NORM_GROUPS}, got {w}")
        gn = lambda w: nn.GroupNorm(self.NORM_GROUPS, w)
        cin = 2 * channels + 1
        self.conv_in = nn.Conv2d(cin, w1, 3, padding=1)
        self.norm_in = gn(w1)
        self.down1 = nn.Conv2d(w1, w2, 3, stride=2, padding=1)
        self.norm_d1 = gn(w2)
        self.down2 = nn.Conv2d(w2, w3, 3, stride=2, padding=1)
        self.norm_d2 = gn(w3)
        self.mid1a = nn.Conv2d(w3, w3, 3, padding=1)
        self.mid1b = nn.Conv2d(w3, w3, 3, padding=1)
        self.norm_m1 = gn(w3)
        self.mid2a = nn.Conv2d(w3, w3, 3, padding=1)
        self.mid2b = nn.Conv2d(w3, w3, 3, padding=1)
        self.norm_m2 = gn(w3)
        self.up1 = nn.Conv2d(w3, w2, 3, padding=1)
        self.norm_u1 = gn(w2)
        self.up2 = nn.Conv2d(w2, w1, 3, padding=1)
        self.norm_u2 = gn(w1)
        self.conv_out = nn.Conv2d(w1, channels, 3, padding=1)
        self.time_mlp = nn.Sequential(nn.Linear(emb_dim, emb_dim), nn.SiLU(),
                                      nn.Linear(emb_dim, emb_dim))
        self.task_emb = nn.Embedding(len(TASK_VOCAB) + 1, emb_dim)
        # one scale/shift pair per modulated stage; zero init makes the
        # modulation start as identity
        self.films = nn.ModuleList(
            nn.Linear(emb_dim, 2 * w) for w in (w1, w2, w3, w3, w3, w2, w1))
        for f in self.films:
            nn.init.zeros_(f.weight)
            nn.init.zeros_(f.bias)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)
        from .diffusion import make_schedule
        sched = make_schedule(schedule_T, beta_start, beta_end)
        self.register_buffer(
            "alpha_bars", torch.from_numpy(sched.alpha_bars).float())

    def _mod(self, h: torch.Tensor, stage: int, emb: torch.Tensor) -> torch.Tensor:
        scale, shift = self.films[stage](emb).chunk(2, dim=1)
        return h * (1.0 + scale[:, :, None, None]) + shift[:, :, None, None]

    def forward(self, z_t: torch.Tensor, t: torch.Tensor, lq: torch.Tensor,
                present: torch.Tensor, task_idx: torch.Tensor) -> torch.Tensor:
        emb = self.time_mlp(_timestep_embedding(t.to(z_t.dtype), self.emb_dim))
        emb = emb + self.task_emb(task_idx)
        x = torch.cat([z_t, lq, present], dim=1)
        h1 = F.silu(self._mod(self.norm_in(self.conv_in(x)), 0, emb))
        h2 = F.silu(self._mod(self.norm_d1(self.down1(h1)), 1, emb))
        h3 = F.silu(self._mod(self.norm_d2(self.down2(h2)), 2, emb))
        h3 = h3 + F.silu(self._mod(
            self.norm_m1(self.mid1b(F.silu(self.mid1a(h3)))), 3, emb))
        h3 = h3 + F.silu(self._mod(
            self.norm_m2(self.mid2b(F.silu(self.mid2a(h3)))), 4, emb))
        u2 = F.silu(self._mod(self.norm_u1(self.up1(
            F.interpolate(h3, scale_factor=2, mode="nearest"))), 5, emb)) + h2
        u1 = F.silu(self._mod(self.norm_u2(self.up2(
            F.interpolate(u2, scale_factor=2, mode="nearest"))), 6, emb)) + h1
        v_hat = self.conv_out(u1)
        idx = t.round().long().clamp(1, self.schedule_T) - 1
        ab = self.alpha_bars.to(z_t.dtype)[idx][:, None, None, None]
        return torch.sqrt(1.0 - ab) * z_t + torch.sqrt(ab) * v_hat

    def _pack(self, z_t: np.ndarray, cond: Condition, dtype=torch.float32):
        c = self.channels
        if z_t.shape[0] != c:
            raise ValueError(f"expected {c} channels, got {z_t.shape[0]}")
        zt = torch.from_numpy(np.ascontiguousarray(z_t)).to(dtype)[None]
        if cond.lq is not None:
            if cond.lq.shape != z_t.shape:
                raise ValueError(
                    f"lq shape {cond.lq.shape} != z_t shape {z_t.shape}")
            lq = torch.from_numpy(np.ascontiguousarray(cond.lq)).to(dtype)[None]
            present = torch.ones((1, 1) + z_t.shape[1:], dtype=dtype)
        else:
            lq = torch.zeros_like(zt)
            present = torch.zeros((1, 1) + z_t.shape[1:], dtype=dtype)
        idx = torch.tensor([task_index(cond.task)], dtype=torch.long)
        return zt, lq, present, idx

    def predict(self, z_t: np.ndarray, t: int, cond: Condition) -> np.ndarray:
        zt, lq, present, idx = self._pack(z_t, cond)
        with torch.no_grad():
            out = self.forward(zt, torch.tensor([float(t)]), lq, present, idx)
        return out[0].double().numpy()


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 4000
    batch_size: int = 32
    lr: float = 2e-4
    lr_min: float | None = None  # enables cosine decay down to this value
    task_probs: tuple = (0.32, 0.28, 0.18, 0.22)  # SR, MD, DD, DN
    drop_lq: float = 0.1
    drop_task: float = 0.1
    pos_neg_prob: float = 0.0  # per-sign probability for the prompt extension
    seed: int = 0
    log_every: int = 50


@dataclass
class TrainHistory:
    steps: list = field(default_factory=list)
    losses: list = field(default_factory=list)


def _draw_batch(dataset: dict, cfg: TrainConfig, sched: NoiseSchedule,
                rng: np.random.Generator, channels: int, res: int):
    """Assemble one training minibatch as torch tensors."""
    from .degrade import TASKS

    probs = np.asarray(cfg.task_probs, dtype=np.float64)
    zt = np.empty((cfg.batch_size, channels, res, res), dtype=np.float64)
    lqb = np.zeros_like(zt)
    present = np.zeros((cfg.batch_size, 1, res, res), dtype=np.float64)
    eps = np.empty_like(zt)
    ts = np.empty(cfg.batch_size, dtype=np.int64)
    idx = np.zeros(cfg.batch_size, dtype=np.int64)
    for i in range(cfg.batch_size):
        task = TASKS[rng.choice(len(TASKS), p=probs)]
        pairs = dataset[task]
        lq, hq = pairs[rng.integers(len(pairs))]
        x0 = hq
        cond_img: np.ndarray | None = lq
        cond_task: str | None = task
        u = rng.random()
        if cfg.pos_neg_prob > 0 and u < cfg.pos_neg_prob:
            cond_task = "POS"
        elif cfg.pos_neg_prob > 0 and u < 2 * cfg.pos_neg_prob:
            cond_task = "NEG"
            x0, cond_img = lq, hq
        else:
            if rng.random() < cfg.drop_lq:
                cond_img = None
            if rng.random() < cfg.drop_task:
                cond_task = None
        t = int(rng.integers(1, sched.T + 1))
        e = rng.standard_normal(x0.shape)
        zt[i] = forward_diffuse(x0, t, e, sched)
        eps[i] = e
        ts[i] = t
        idx[i] = task_index(cond_task)
        if cond_img is not None:
            lqb[i] = cond_img
            present[i] = 1.0
    to = lambda a: torch.from_numpy(a).float()
    return (to(zt), torch.from_numpy(ts).float(), to(lqb), to(present),
            torch.from_numpy(idx), to(eps))


def train(model: TinyCondDenoiser, dataset: dict, sched: NoiseSchedule,
          cfg: TrainConfig) -> TrainHistory:
    """Minibatch noise-prediction training; mutates ``model`` in place.

    ``dataset`` maps each task in {SR, MD, DD, DN} to a list of (lq, hq)
    numpy pairs at the working resolution.
    """
    from .degrade import TASKS

    _configure_torch()
    for task in TASKS:
        if not dataset.get(task):
            raise ValueError(f"dataset missing pairs for task {task}")
    if abs(sum(cfg.task_probs) - 1.0) > 1e-9:
        raise ValueError("task probabilities must sum to 1")
    rng = np.random.default_rng(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    lr_sched = None
    if cfg.lr_min is not None:
        lr_sched = torch.optim.lr_scheduler.CosineAnnealingLR(
            opt, T_max=cfg.steps, eta_min=cfg.lr_min)
    history = TrainHistory()
    res = model.working_resolution
    for step in range(1, cfg.steps + 1):
        zt, ts, lqb, present, idx, eps = _draw_batch(
            dataset, cfg, sched, rng, model.channels, res)
        opt.zero_grad()
        pred = model(zt, ts, lqb, present, idx)
        loss = F.mse_loss(pred, eps)
        if not torch.isfinite(loss):
            raise RuntimeError(f"non-finite training loss at step {step}")
        loss.backward()
        opt.step()
        if lr_sched is not None:
            lr_sched.step()
        if step % cfg.log_every == 0 or step == 1:
            history.steps.append(step)
            history.losses.append(float(loss.detach()))
    for p in model.parameters():
        if not torch.all(torch.isfinite(p)):
            raise RuntimeError("non-finite parameters after training")
    return history


def gradient_check(model: TinyCondDenoiser, probe, n_params: int = 32,
                   h: float = 1e-4, seed: int = 0) -> float:
    """Max relative error of autograd vs central finite differences.

    ``probe`` is the tuple of batch tensors produced by the training loop;
    the comparison runs in float64.
    """
    m = TinyCondDenoiser(model.channels, model.widths, model.emb_dim,
                         model.working_resolution, model.schedule_T,
                         model.beta_start, model.beta_end).double()
    m.load_state_dict({k: v.double() for k, v in model.state_dict().items()})
    zt, ts, lqb, present, idx, eps = [x.double() if x.dtype.is_floating_point
                                      else x for x in probe]

    def loss_value() -> torch.Tensor:
        return F.mse_loss(m(zt, ts, lqb, present, idx), eps)

    m.zero_grad()
    loss_value().backward()
    params = [p for p in m.parameters() if p.grad is not None]
    rng = np.random.default_rng(seed)
    worst = 0.0
    flat = [(p, i) for p in params for i in
            rng.choice(p.numel(), size=min(4, p.numel()), replace=False)]
    rng.shuffle(flat)
    for p, i in flat[:n_params]:
        i = int(i)
        orig = p.data.view(-1)[i].item()
        with torch.no_grad():
            p.data.view(-1)[i] = orig + h
            lp = loss_value().item()
            p.data.view(-1)[i] = orig - h
            lm = loss_value().item()
            p.data.view(-1)[i] = orig
        fd = (lp - lm) / (2 * h)
        an = p.grad.view(-1)[i].item()
        denom = max(abs(fd), abs(an), 1e-8)
        worst = max(worst, abs(fd - an) / denom)
    return worst


def save_checkpoint(model: TinyCondDenoiser, path, *,
                    schedule_defaults: dict | None = None) -> None:
    """Versioned binary container: JSON header + raw float32 LE blocks."""
    state = model.state_dict()
    header = {
        "format_version": 1,
        "channels": model.channels,
        "widths": list(model.widths),
        "emb_dim": model.emb_dim,
        "working_resolution": model.working_resolution,
        "task_vocab": list(TASK_VOCAB),
        "schedule_defaults": schedule_defaults or
            {"T": model.schedule_T, "beta_start": model.beta_start,
             "beta_end": model.beta_end},
        "train_schedule": {"T": model.schedule_T,
                           "beta_start": model.beta_start,
                           "beta_end": model.beta_end},
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in state.items()],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for v in state.values():
            f.write(v.detach().cpu().float().numpy().astype("<f4").tobytes())


def load_checkpoint(path) -> tuple[TinyCondDenoiser, dict]:
    """Load and validate a checkpoint; returns (model, header)."""
    with open(path, "rb") as f:
        magic = f.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"not a model checkpoint: {path}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header.get("format_version") != 1:
            raise ValueError(f"unsupported checkpoint version: {header}")
        if header["task_vocab"] != list(TASK_VOCAB):
            raise ValueError("checkpoint task vocabulary does not match code")
        ts = header["train_schedule"]
        model = TinyCondDenoiser(header["channels"], tuple(header["widths"]),
                                 header["emb_dim"],
                                 header["working_resolution"],
                                 ts["T"], ts["beta_start"], ts["beta_end"])
        state = model.state_dict()
        expect = [{"name": k, "shape": list(v.shape)} for k, v in state.items()]
        if header["tensors"] != expect:
            raise ValueError("checkpoint tensor layout does not match code")
        new_state = {}
        for entry in header["tensors"]:
            n = int(np.prod(entry["shape"])) if entry["shape"] else 1
            raw = f.read(4 * n)
            if len(raw) != 4 * n:
                raise ValueError("truncated checkpoint")
            arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"])
            new_state[entry["name"]] = torch.from_numpy(arr.copy())
        model.load_state_dict(new_state)
    return model, header
