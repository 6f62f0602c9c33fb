"""Synthetic blurry/sharp pairs for tests and desk experiments.

Sharp images are random piecewise-constant scenes (rectangles, discs,
stripes) over a smooth gradient; blur averages shifted copies along a random
direction, mimicking frame-averaged motion blur.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import ImagePairRecord, save_png, write_pair_manifest


def sharp_scene(rng: np.random.Generator, h: int, w: int, shapes: int = 14) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = rng.uniform(0.2, 0.8, size=(3, 1, 1))
    tilt = rng.uniform(-0.3, 0.3, size=(3, 2))
    img = base + tilt[:, :1, None] * (yy / h - 0.5) + tilt[:, 1:, None] * (xx / w - 0.5)
    for _ in range(shapes):
        colour = rng.uniform(0, 1, size=(3, 1))
        kind = rng.integers(3)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        if kind == 0:
            hh, ww = rng.uniform(0.05, 0.35) * h, rng.uniform(0.05, 0.35) * w
            mask = (np.abs(yy - cy) < hh / 2) & (np.abs(xx - cx) < ww / 2)
        elif kind == 1:
            r = rng.uniform(0.04, 0.2) * min(h, w)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        else:
            period = rng.uniform(4, 12)
            theta = rng.uniform(0, np.pi)
            proj = (yy - cy) * np.cos(theta) + (xx - cx) * np.sin(theta)
            r = rng.uniform(0.1, 0.3) * min(h, w)
            mask = (np.sin(2 * np.pi * proj / period) > 0) & ((yy - cy) ** 2 + (xx - cx) ** 2 < r * r)
        img[:, mask] = colour
    return np.clip(img, 0, 1)


def motion_blur(img: np.ndarray, length: int, angle: float) -> np.ndarray:
    """Mean of ``length`` copies shifted along ``angle`` (radians), edges replicated."""
    c, h, w = img.shape
    pad = length
    padded = np.pad(img, ((0, 0), (pad, pad), (pad, pad)), mode="edge")
    acc = np.zeros_like(img)
    offsets = np.linspace(-(length - 1) / 2, (length - 1) / 2, length)
    for t in offsets:
        dy = int(round(t * np.sin(angle)))
        dx = int(round(t * np.cos(angle)))
        acc += padded[:, pad + dy : pad + dy + h, pad + dx : pad + dx + w]
    return acc / length


def make_pair(rng: np.random.Generator, h: int, w: int, blur_length: int = 9) -> tuple[np.ndarray, np.ndarray]:
    """(blur, sharp), each (1, 3, h, w) float64 quantised to 8-bit levels."""
    sharp = sharp_scene(rng, h, w)
    blur = motion_blur(sharp, blur_length, rng.uniform(0, np.pi))
    q = lambda a: np.floor(np.clip(a, 0, 1) * 255 + 0.5)[None] / 255.0  # noqa: E731
    return q(blur), q(sharp)


def write_synthetic_dataset(out_dir, count: int, h: int, w: int, seed: int = 0,
                            blur_length: int = 9) -> Path:
    """Write ``count`` PNG pairs and a pair manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    recs = []
    for i in range(count):
        blur, sharp = make_pair(rng, h, w, blur_length)
        bp, sp = out_dir / "blur" / f"{i:04d}.png", out_dir / "sharp" / f"{i:04d}.png"
        save_png(blur, bp)
        save_png(sharp, sp)
        recs.append(ImagePairRecord(f"blur/{i:04d}.png", f"sharp/{i:04d}.png", w, h))
    manifest = out_dir / "pairs.jsonl"
    write_pair_manifest(manifest, recs)
    return manifest
