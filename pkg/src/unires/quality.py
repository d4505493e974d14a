"""Image quality: full-reference PSNR/SSIM and a hand-crafted no-reference
sharpness-minus-noise score usable as the search objective.

Quality functions register by name; the weight search receives one by name
through configuration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .images import ensure_image

PSNR_CAP_DB = 100.0

# sharpness-vs-noise trade-off of the no-reference proxy, frozen after
# calibration on the synthetic corpus
PROXY_NOISE_LAMBDA = 2.0

_LAPLACIAN = np.array([[0.0, 1.0, 0.0],
                       [1.0, -4.0, 1.0],
                       [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class QualityScore:
    value: float
    metric_name: str

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"non-finite quality score ({self.metric_name})")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB on [0, 1] data, capped at 100."""
    a = ensure_image(a)
    b = ensure_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _ssim_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Single-scale SSIM, 11x11 Gaussian window sigma 1.5, channel-averaged."""
    a = ensure_image(a)
    b = ensure_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape[1], a.shape[2]) < 11:
        raise ValueError("images too small for an 11x11 SSIM window")
    from scipy.ndimage import correlate
    c1 = 0.01 ** 2
    c2 = 0.03 ** 2
    win = _ssim_window()
    vals = []
    for ac, bc in zip(a, b):
        mu_a = correlate(ac, win, mode="nearest")
        mu_b = correlate(bc, win, mode="nearest")
        var_a = correlate(ac * ac, win, mode="nearest") - mu_a ** 2
        var_b = correlate(bc * bc, win, mode="nearest") - mu_b ** 2
        cov = correlate(ac * bc, win, mode="nearest") - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def noise_std_estimate(img: np.ndarray) -> float:
    """MAD-of-Laplacian noise level estimate."""
    from scipy.ndimage import correlate
    img = ensure_image(img)
    lap = np.stack([correlate(c, _LAPLACIAN, mode="nearest") for c in img])
    return float(np.median(np.abs(lap)) / 0.6745 / np.sqrt(20.0))


def mean_gradient_magnitude(img: np.ndarray) -> float:
    from scipy.ndimage import correlate1d
    img = ensure_image(img)
    gy = np.stack([correlate1d(c, [-0.5, 0.0, 0.5], axis=0, mode="nearest")
                   for c in img])
    gx = np.stack([correlate1d(c, [-0.5, 0.0, 0.5], axis=1, mode="nearest")
                   for c in img])
    return float(np.mean(np.sqrt(gx ** 2 + gy ** 2)))


def sharpness_noise_proxy(img: np.ndarray) -> QualityScore:
    """No-reference score: mean gradient magnitude minus a noise penalty."""
    img = ensure_image(img)
    if min(img.shape[1], img.shape[2]) < 8:
        raise ValueError("image too small for the no-reference proxy")
    value = mean_gradient_magnitude(img) \
        - PROXY_NOISE_LAMBDA * noise_std_estimate(img)
    return QualityScore(value=value, metric_name="proxy")


def make_quality_fn(name: str, reference: np.ndarray | None = None):
    """Resolve a quality function by name.

    ``proxy`` is no-reference; ``psnr`` and ``ssim`` require a reference.
    """
    if name == "proxy":
        return lambda img: sharpness_noise_proxy(img).value
    if name in ("psnr", "ssim"):
        if reference is None:
            raise ValueError(f"{name} requires a reference image")
        fn = psnr if name == "psnr" else ssim
        return lambda img: fn(img, reference)
    raise ValueError(f"unknown quality metric: {name}")
