"""Training objective and image quality metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

PSNR_INF = float("inf")


@dataclass
class LossConfig:
    epsilon: float = 1e-3
    lambda_: float = 1.0
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    dynamic_range: float = 1.0
    per_pixel_charbonnier: bool = False

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.lambda_ < 0:
            raise ValueError("lambda must be non-negative")

    @property
    def c1(self) -> float:
        return (0.01 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (0.03 * self.dynamic_range) ** 2

    def to_dict(self) -> dict:
        return asdict(self)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalised 1-d Gaussian; the 2-d window is its outer product."""
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def charbonnier(x: Tensor, y: Tensor, eps: float = 1e-3, per_pixel: bool = False) -> Tensor:
    """Mean over the batch of sqrt(||x_i - y_i||^2 + eps^2), with the norm taken over a whole image.

    ``per_pixel=True`` gives the common variant mean(sqrt((x - y)^2 + eps^2)).
    """
    if x.shape != y.shape:
        raise ShapeError(f"charbonnier: shape mismatch {x.shape} vs {y.shape}")
    e = x.dtype.type(eps)
    d2 = ad.square(ad.sub(x, y))
    if per_pixel:
        return ad.mean(ad.sqrt(ad.add_scalar(d2, e * e)))
    per_sample = ad.sum_axes(d2, tuple(range(1, x.ndim)))
    return ad.mean(ad.sqrt(ad.add_scalar(per_sample, e * e)))


def ssim_map(x: Tensor, y: Tensor, cfg: LossConfig | None = None) -> Tensor:
    """Local SSIM index at every valid window position, per channel."""
    cfg = cfg or LossConfig()
    if x.shape != y.shape:
        raise ShapeError(f"ssim: shape mismatch {x.shape} vs {y.shape}")
    h, w = x.shape[-2:]
    if h < cfg.ssim_window or w < cfg.ssim_window:
        raise ShapeError(f"ssim: image {h}x{w} is smaller than the {cfg.ssim_window}px window", ["h", "w"])
    g = gaussian_window(cfg.ssim_window, cfg.ssim_sigma)

    def blur(t):
        return ad.depthwise_filter_valid(t, g)

    mu_x, mu_y = blur(x), blur(y)
    mu_xx, mu_yy, mu_xy = ad.square(mu_x), ad.square(mu_y), ad.mul(mu_x, mu_y)
    var_x = ad.sub(blur(ad.square(x)), mu_xx)
    var_y = ad.sub(blur(ad.square(y)), mu_yy)
    cov = ad.sub(blur(ad.mul(x, y)), mu_xy)
    num = ad.mul(ad.add_scalar(ad.mul_scalar(mu_xy, 2.0), cfg.c1), ad.add_scalar(ad.mul_scalar(cov, 2.0), cfg.c2))
    den = ad.mul(ad.add_scalar(ad.add(mu_xx, mu_yy), cfg.c1), ad.add_scalar(ad.add(var_x, var_y), cfg.c2))
    return ad.div(num, den)


def ssim_mean(x: Tensor, y: Tensor, cfg: LossConfig | None = None) -> Tensor:
    return ad.mean(ssim_map(x, y, cfg))


def total_loss(x: Tensor, y: Tensor, cfg: LossConfig | None = None) -> Tensor:
    """Charbonnier + lambda * (1 - mean SSIM)."""
    cfg = cfg or LossConfig()
    char = charbonnier(x, y, cfg.epsilon, cfg.per_pixel_charbonnier)
    if cfg.lambda_ == 0:
        return char
    dissim = ad.add_scalar(ad.mul_scalar(ssim_mean(x, y, cfg), -1.0), 1.0)
    return ad.add(char, ad.mul_scalar(dissim, cfg.lambda_))


def psnr(x, y, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give ``PSNR_INF``."""
    a = x.data if isinstance(x, Tensor) else np.asarray(x)
    b = y.data if isinstance(y, Tensor) else np.asarray(y)
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0:
        return PSNR_INF
    return 10 * math.log10(max_val**2 / mse)


def ssim_value(x, y, cfg: LossConfig | None = None) -> float:
    """Mean SSIM as a plain float, computed in double precision."""
    a = x.data if isinstance(x, Tensor) else np.asarray(x)
    b = y.data if isinstance(y, Tensor) else np.asarray(y)
    return ssim_mean(Tensor(a.astype(np.float64)), Tensor(b.astype(np.float64)), cfg).item()
