"""Desk-scale experiments shared by the acceptance suite and ``scripts/``."""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .data import ImagePairRecord, save_png
from .losses import LossConfig, psnr, ssim_value
from .network import SDWNetConfig, count_params, init_params, sdwnet_forward
from .synthetic import make_pair
from .trainer import TrainConfig, train


@dataclass
class OverfitResult:
    psnr_input: float
    psnr_output: float
    ssim_output: float
    losses: list[float]
    seconds: float
    params: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def gain(self) -> float:
        return self.psnr_output - self.psnr_input

    def window_means(self, window: int = 50) -> list[float]:
        n = len(self.losses) // window
        return [float(np.mean(self.losses[i * window : (i + 1) * window])) for i in range(n)]


def desk_pair(size: int = 96, seed: int = 3, blur_length: int = 9) -> tuple[np.ndarray, np.ndarray]:
    return make_pair(np.random.default_rng(seed), size, size, blur_length)


def overfit_pair(blur: np.ndarray, sharp: np.ndarray, model_cfg: SDWNetConfig | None = None,
                 steps: int = 500, loss_cfg: LossConfig | None = None, seed: int = 0,
                 lr: float = 4e-4) -> OverfitResult:
    """Train on a single fixed pair (no cropping, no augmentation) and score the result.

    ``blur`` and ``sharp`` must already sit on the 8-bit grid; they go through PNG files.
    """
    model_cfg = model_cfg or SDWNetConfig(depth=4, width=16)
    loss_cfg = loss_cfg or LossConfig()
    h = blur.shape[-1]
    cfg = TrainConfig(batch_size=1, patch_size=h, max_steps=steps, lr=lr, seed=seed, augment=False)
    with tempfile.TemporaryDirectory() as tmp:
        rec = ImagePairRecord(str(Path(tmp) / "blur.png"), str(Path(tmp) / "sharp.png"))
        save_png(blur, rec.blur_path)
        save_png(sharp, rec.sharp_path)
        t0 = time.perf_counter()
        res = train(model_cfg, cfg, [rec], loss_cfg)
        seconds = time.perf_counter() - t0
    b32, s32 = blur.astype(np.float32), sharp.astype(np.float32)
    out = sdwnet_forward(Tensor(b32), res.params, model_cfg).data
    return OverfitResult(
        psnr_input=psnr(b32, s32),
        psnr_output=psnr(out, s32),
        ssim_output=ssim_value(out, s32),
        losses=[r["loss"] for r in res.log],
        seconds=seconds,
        params=count_params(res.params),
    )


def lambda_sweep(lambdas=(0.0, 0.5, 1.0, 2.0), steps: int = 500, size: int = 96, seed: int = 3,
                 model_cfg: SDWNetConfig | None = None) -> dict[float, OverfitResult]:
    blur, sharp = desk_pair(size, seed)
    return {lam: overfit_pair(blur, sharp, model_cfg, steps, replace(LossConfig(), lambda_=lam))
            for lam in lambdas}


def ablation_variants(base: SDWNetConfig | None = None) -> dict[str, SDWNetConfig]:
    base = base or SDWNetConfig(depth=4, width=16)
    return {
        "base": base,
        "relu": replace(base, activation="relu"),
        "transposed_conv": replace(base, upsample="transposed_conv"),
        "uniform_last_rates": replace(base, last_rates=base.inner_rates),
        "no_wrm": replace(base, wrm_enabled=False),
    }


def init_output_delta(cfg_a: SDWNetConfig, cfg_b: SDWNetConfig, seed: int = 0, size: int = 32) -> float:
    """Max output difference of two freshly initialised models with a non-zero tail."""
    x = Tensor(np.random.default_rng(seed).uniform(0.3, 0.7, (1, 3, size, size)))
    outs = []
    for cfg in (cfg_a, cfg_b):
        p = init_params(cfg, seed, "double")
        p.tail.weight.data[...] = 1e-4 * np.random.default_rng(seed + 1).standard_normal(p.tail.weight.shape)
        outs.append(sdwnet_forward(x, p, cfg).data)
    return float(np.max(np.abs(outs[0] - outs[1])))
