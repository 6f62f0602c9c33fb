"""Optimisation loop: AdamW, cosine schedule, batching, checkpoints, evaluation."""

from __future__ import annotations

import json
import logging
import math
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .checkpoint import Checkpoint, assign_parameters, load_checkpoint, save_checkpoint
from .data import AugmentSpec, DataError, ImagePairRecord, augment, load_png
from .losses import LossConfig, psnr, ssim_value, total_loss
from .network import SDWNetConfig, SDWNetParams, init_params, sdwnet_forward

log = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"loss became non-finite ({value}) at step {step}")
        self.step = step
        self.value = value


@dataclass
class TrainConfig:
    batch_size: int = 8
    patch_size: int = 416
    epochs: int = 1
    max_steps: int | None = None
    lr: float = 4e-4
    eta_min: float = 1e-6
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    precision: str = "single"
    augment: bool = True
    workers: int = 0
    log_every: int = 1
    eval_every: int = 0
    ckpt_every: int = 0

    def __post_init__(self):
        for f in ("batch_size", "patch_size", "epochs"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be positive")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")
        if self.precision not in ad.DTYPES:
            raise ValueError(f"precision must be one of {tuple(ad.DTYPES)}")
        if self.workers < 0:
            raise ValueError("workers must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


# -------------------------------------------------------------- schedule


@dataclass
class CosineSchedule:
    eta0: float = 4e-4
    eta_min: float = 1e-6
    total: int = 1

    def __post_init__(self):
        if self.eta_min > self.eta0:
            raise ValueError("eta_min must not exceed eta0")
        if self.total < 1:
            raise ValueError("schedule length must be >= 1")


def lr_at(t: int, sched: CosineSchedule) -> float:
    if not 0 <= t <= sched.total:
        raise ValueError(f"step {t} outside [0, {sched.total}]")
    if t == sched.total:
        return sched.eta_min
    return sched.eta_min + (sched.eta0 - sched.eta_min) * (1 + math.cos(math.pi * t / sched.total)) / 2


# -------------------------------------------------------------- optimiser


@dataclass
class AdamWState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adamw_step(named_params: Sequence[tuple[str, Parameter]], state: AdamWState, lr: float,
               weight_decay: float) -> None:
    """One decoupled-weight-decay Adam update, in place.

    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
    """
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    for name, p in named_params:
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ad.ShapeError(f"adamw_step: grad shape {g.shape} != parameter {name} shape {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if weight_decay:
            update = update + weight_decay * p.data
        p.data -= (lr * update).astype(p.data.dtype)


# ------------------------------------------------------------ checkpoints


def checkpoint_tensors(params: SDWNetParams, state: AdamWState | None = None) -> dict[str, np.ndarray]:
    out = {name: p.data for name, p in params.named_parameters()}
    if state is not None and state.m:
        for name, _ in params.named_parameters():
            out[f"adamw.m.{name}"] = state.m[name]
            out[f"adamw.v.{name}"] = state.v[name]
    return out


def write_training_checkpoint(path, params: SDWNetParams, model_cfg: SDWNetConfig, step: int,
                              train_cfg: TrainConfig | None = None, loss_cfg: LossConfig | None = None,
                              state: AdamWState | None = None) -> None:
    meta = {"step": step, "model": model_cfg.to_dict()}
    if train_cfg is not None:
        meta["train"] = train_cfg.to_dict()
    if loss_cfg is not None:
        meta["loss"] = loss_cfg.to_dict()
    if state is not None:
        meta["adamw"] = {"t": state.t, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps}
    save_checkpoint(path, checkpoint_tensors(params, state), meta)


def model_from_checkpoint(ckpt: Checkpoint | str | Path, precision: str = "single",
                          expect_cfg: SDWNetConfig | None = None) -> tuple[SDWNetConfig, SDWNetParams]:
    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt)
    cfg = SDWNetConfig(**ckpt.header["model"])
    params = init_params(expect_cfg or cfg, 0, precision)
    assign_parameters(params.named_parameters(), ckpt)
    return (expect_cfg or cfg), params


def restore_adamw(ckpt: Checkpoint, params: SDWNetParams) -> AdamWState:
    info = ckpt.header.get("adamw")
    if info is None:
        raise DataError("checkpoint carries no optimiser state; use it as an initialisation instead")
    state = AdamWState(t=info["t"], beta1=info["beta1"], beta2=info["beta2"], eps=info["eps"])
    for name, p in params.named_parameters():
        if f"adamw.m.{name}" in ckpt.tensors:
            state.m[name] = ckpt.tensors[f"adamw.m.{name}"].astype(p.data.dtype)
            state.v[name] = ckpt.tensors[f"adamw.v.{name}"].astype(p.data.dtype)
    return state


# -------------------------------------------------------------- batching


@lru_cache(maxsize=64)
def _load_cached(path: str, precision: str, mtime_ns: int) -> np.ndarray:
    return load_png(path, ad.DTYPES[precision]).data


def _load(path: str, precision: str) -> np.ndarray:
    try:
        mtime = os.stat(path).st_mtime_ns
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    return _load_cached(path, precision, mtime)


def _sample(rec: ImagePairRecord, cfg: TrainConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    blur = _load(rec.blur_path, cfg.precision)
    sharp = _load(rec.sharp_path, cfg.precision)
    if blur.shape != sharp.shape:
        raise DataError(f"{rec.blur_path}: pair members differ in size")
    _, _, h, w = blur.shape
    L = cfg.patch_size
    if h < L or w < L:
        raise DataError(f"{rec.blur_path}: {w}x{h} image is smaller than patch size {L}")
    y = int(rng.integers(h - L + 1))
    x = int(rng.integers(w - L + 1))
    b = Tensor(blur[:, :, y : y + L, x : x + L])
    s = Tensor(sharp[:, :, y : y + L, x : x + L])
    if cfg.augment:
        b, s = augment(b, s, AugmentSpec.random(rng))
    return b.data, s.data


def _batch_plan(n_records: int, cfg: TrainConfig, step: int, steps_per_epoch: int) -> list[int]:
    epoch, k = divmod(step, steps_per_epoch)
    perm = np.random.default_rng([cfg.seed, 1, epoch]).permutation(n_records)
    return [int(i) for i in perm[k * cfg.batch_size : (k + 1) * cfg.batch_size]]


def _make_batch(records, cfg: TrainConfig, step: int, steps_per_epoch: int) -> tuple[Tensor, Tensor]:
    # every sample draws from its own (seed, step, slot) stream, so the batch
    # does not depend on which thread builds it
    idx = _batch_plan(len(records), cfg, step, steps_per_epoch)
    pairs = [_sample(records[i], cfg, np.random.default_rng([cfg.seed, 2, step, slot]))
             for slot, i in enumerate(idx)]
    return Tensor(np.concatenate([p[0] for p in pairs])), Tensor(np.concatenate([p[1] for p in pairs]))


# ------------------------------------------------------------- evaluation


def evaluate(params: SDWNetParams, cfg: SDWNetConfig, records: Sequence[ImagePairRecord],
             loss_cfg: LossConfig | None = None, workers: int = 0, precision: str = "single",
             report_path=None) -> dict:
    """Per-image PSNR/SSIM of the restored images plus dataset means."""
    if not records:
        raise DataError("evaluation manifest is empty")
    dtype = ad.DTYPES[precision]

    def one(rec):
        blur = load_png(rec.blur_path, dtype)
        sharp = load_png(rec.sharp_path, dtype)
        if blur.shape != sharp.shape:
            raise DataError(f"{rec.blur_path}: pair members differ in size")
        out = sdwnet_forward(blur, params, cfg)
        return {
            "blur": rec.blur_path,
            "sharp": rec.sharp_path,
            "psnr": psnr(out, sharp),
            "ssim": ssim_value(out, sharp, loss_cfg),
            "psnr_input": psnr(blur, sharp),
        }

    if workers > 0:
        with ThreadPoolExecutor(workers) as ex:
            rows = list(ex.map(one, records))
    else:
        rows = [one(r) for r in records]
    report = {
        "count": len(rows),
        "mean_psnr": float(np.mean([r["psnr"] for r in rows])),
        "mean_ssim": float(np.mean([r["ssim"] for r in rows])),
        "mean_psnr_input": float(np.mean([r["psnr_input"] for r in rows])),
        "images": rows,
    }
    if report_path is not None:
        Path(report_path).parent.mkdir(parents=True, exist_ok=True)
        Path(report_path).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return report


# --------------------------------------------------------------- training


@dataclass
class TrainResult:
    params: SDWNetParams
    state: AdamWState
    log: list[dict]
    checkpoint: Path | None
    steps: int


def total_steps(n_records: int, cfg: TrainConfig) -> tuple[int, int]:
    steps_per_epoch = math.ceil(n_records / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch if cfg.max_steps is None else cfg.max_steps
    return steps_per_epoch, total


def train(model_cfg: SDWNetConfig, train_cfg: TrainConfig, records: Sequence[ImagePairRecord],
          loss_cfg: LossConfig | None = None, out_dir=None, val_records: Sequence[ImagePairRecord] = (),
          resume=None, init=None) -> TrainResult:
    """Run the optimisation loop; deterministic for a fixed seed.

    ``resume`` continues from a checkpoint's weights, optimiser moments and
    step counter. ``init`` only loads weights and starts a fresh schedule.
    """
    loss_cfg = loss_cfg or LossConfig()
    if not records:
        raise DataError("training manifest is empty")
    records = list(records)
    steps_per_epoch, T = total_steps(len(records), train_cfg)
    sched = CosineSchedule(train_cfg.lr, min(train_cfg.eta_min, train_cfg.lr), max(T, 1))

    params = init_params(model_cfg, train_cfg.seed, train_cfg.precision)
    state = AdamWState(beta1=train_cfg.beta1, beta2=train_cfg.beta2, eps=train_cfg.eps)
    start = 0
    if resume is not None:
        ck = load_checkpoint(resume)
        assign_parameters(params.named_parameters(), ck)
        state = restore_adamw(ck, params)
        start = ck.step
    elif init is not None:
        assign_parameters(params.named_parameters(), load_checkpoint(init))

    out_dir = Path(out_dir) if out_dir is not None else None
    log_f = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_f = open(out_dir / "metrics.jsonl", "a" if resume is not None else "w", encoding="utf-8")
    named = list(params.named_parameters())
    history: list[dict] = []
    pool = ThreadPoolExecutor(train_cfg.workers) if train_cfg.workers > 0 else None

    def save(step):
        path = out_dir / f"ckpt_{step:06d}.sdw"
        write_training_checkpoint(path, params, model_cfg, step, train_cfg, loss_cfg, state)
        log.info("wrote %s", path)

    try:
        pending: deque = deque()
        for step in range(start, T):
            # bounded prefetch: each worker assembles a whole upcoming batch
            while pool is not None and len(pending) < train_cfg.workers + 1 and step + len(pending) < T:
                k = step + len(pending)
                pending.append(pool.submit(_make_batch, records, train_cfg, k, steps_per_epoch))
            if pool is not None:
                blur, sharp = pending.popleft().result()
            else:
                blur, sharp = _make_batch(records, train_cfg, step, steps_per_epoch)

            params.zero_grad()
            with ad.Tape() as tape:
                out = sdwnet_forward(blur, params, model_cfg)
                loss = total_loss(out, sharp, loss_cfg)
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLossError(step + 1, value)
            ad.backward(loss, tape)
            lr = lr_at(step, sched)
            adamw_step(named, state, lr, train_cfg.weight_decay)

            done = step + 1
            row = {"step": done, "lr": lr, "loss": value}
            if train_cfg.eval_every and val_records and (done % train_cfg.eval_every == 0 or done == T):
                rep = evaluate(params, model_cfg, val_records, loss_cfg, precision=train_cfg.precision)
                row["psnr"], row["ssim"] = rep["mean_psnr"], rep["mean_ssim"]
            history.append(row)
            if log_f is not None and (done % train_cfg.log_every == 0 or done == T or "psnr" in row):
                log_f.write(json.dumps(row) + "\n")
            if out_dir is not None and train_cfg.ckpt_every and done % train_cfg.ckpt_every == 0:
                save(done)
    finally:
        if pool is not None:
            pool.shutdown(wait=True, cancel_futures=True)
        if log_f is not None:
            log_f.close()

    final = None
    steps_done = max(T, start)
    if out_dir is not None:
        final = out_dir / "last.sdw"
        write_training_checkpoint(final, params, model_cfg, steps_done, train_cfg, loss_cfg, state)
    return TrainResult(params, state, history, final, steps_done)
