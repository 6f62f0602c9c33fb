"""Paired-image datasets: PNG I/O, sliding-window crops, augmentation, manifests.

Manifests are JSON lines, one record per line. A pair manifest needs at least
``blur`` and ``sharp`` keys; a patch manifest has exactly
``{"blur", "sharp", "src", "x", "y"}``. Relative paths resolve against the
directory holding the manifest.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .autodiff import Tensor


class DataError(Exception):
    """Unreadable, missing or inconsistent input data."""


# ------------------------------------------------------------------ PNG I/O


def load_png(path, dtype=np.float32) -> Tensor:
    """Read an 8-bit RGB PNG as a (1, 3, h, w) tensor scaled by 1/255."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise DataError(f"{path}: not a PNG file (format {im.format})")
            if im.mode != "RGB":
                raise DataError(f"{path}: expected 8-bit RGB, got mode {im.mode}")
            arr = np.asarray(im, dtype=np.uint8)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except (OSError, SyntaxError) as e:
        raise DataError(f"{path}: cannot read image ({e})") from None
    return Tensor((arr.transpose(2, 0, 1)[None].astype(np.float64) / 255.0).astype(dtype))


def to_uint8(t) -> np.ndarray:
    """(h, w, 3) uint8 from a (1, 3, h, w) or (3, h, w) tensor, rounding half away from zero."""
    a = t.data if isinstance(t, Tensor) else np.asarray(t)
    if a.ndim == 4:
        if a.shape[0] != 1:
            raise ValueError(f"expected a single image, got batch of {a.shape[0]}")
        a = a[0]
    if a.ndim != 3 or a.shape[0] != 3:
        raise ValueError(f"expected 3 channels, got shape {a.shape}")
    v = np.clip(a.astype(np.float64), 0.0, 1.0) * 255.0
    return np.floor(v + 0.5).astype(np.uint8).transpose(1, 2, 0)


def save_png(t, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(t), mode="RGB").save(path, format="PNG")


def png_size(path) -> tuple[int, int]:
    """(width, height) without decoding pixels."""
    try:
        with Image.open(path) as im:
            return im.size
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except OSError as e:
        raise DataError(f"{path}: cannot read image ({e})") from None


# ---------------------------------------------------------------- manifests


@dataclass
class ImagePairRecord:
    blur_path: str
    sharp_path: str
    width: int | None = None
    height: int | None = None


@dataclass(frozen=True)
class PatchRecord:
    blur: str
    sharp: str
    src: str
    x: int
    y: int


def read_jsonl(path) -> list[dict]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise DataError(f"{path}: no such manifest") from None
    out = []
    for i, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise DataError(f"{path}:{i}: invalid JSON ({e.msg})") from None
    return out


def write_jsonl(path, rows: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=False) + "\n")


def _resolve(base: Path, p: str) -> str:
    return p if os.path.isabs(p) else str(base / p)


def read_pair_manifest(path) -> list[ImagePairRecord]:
    base = Path(path).parent
    recs = []
    for i, row in enumerate(read_jsonl(path), 1):
        if "blur" not in row or "sharp" not in row:
            raise DataError(f"{path}:{i}: record needs 'blur' and 'sharp' keys")
        recs.append(ImagePairRecord(_resolve(base, row["blur"]), _resolve(base, row["sharp"]),
                                    row.get("width"), row.get("height")))
    return recs


def write_pair_manifest(path, records: Sequence[ImagePairRecord]) -> None:
    rows = []
    for r in records:
        row = {"blur": r.blur_path, "sharp": r.sharp_path}
        if r.width is not None:
            row["width"], row["height"] = r.width, r.height
        rows.append(row)
    write_jsonl(path, rows)


def read_patch_manifest(path) -> list[PatchRecord]:
    return [PatchRecord(r["blur"], r["sharp"], r["src"], int(r["x"]), int(r["y"])) for r in read_jsonl(path)]


def write_patch_manifest(path, records: Sequence[PatchRecord]) -> None:
    write_jsonl(path, ({"blur": r.blur, "sharp": r.sharp, "src": r.src, "x": r.x, "y": r.y} for r in records))


# ------------------------------------------------------------ sliding crops


@dataclass
class PatchGrid:
    origins: list[tuple[int, int]]
    patch_size: int
    stride: int
    width: int
    height: int

    def __len__(self) -> int:
        return len(self.origins)


def _axis_positions(dim: int, L: int, s: int) -> list[int]:
    pos = [k * s for k in range((dim - L) // s + 1)]
    if pos[-1] + L < dim:
        pos.append(dim - L)  # compensate the uncovered border
    return pos


def plan_slide_crop(W: int, H: int, L: int, s: int) -> PatchGrid:
    """Crop origins (x, y) for L x L tiles at stride s, plus border-aligned tiles.

    Sorted row-major (by y, then x).
    """
    if s < 1:
        raise ValueError(f"stride must be >= 1, got {s}")
    if s > L:
        # k*s tiles would leave uncovered gaps between them
        raise ValueError(f"stride {s} exceeds patch size {L}")
    if L < 1 or L > W or L > H:
        raise ValueError(f"patch size {L} does not fit a {W}x{H} image")
    xs, ys = _axis_positions(W, L, s), _axis_positions(H, L, s)
    origins = sorted({(x, y) for y in ys for x in xs}, key=lambda o: (o[1], o[0]))
    return PatchGrid(origins, L, s, W, H)


def crop_dataset(manifest_in, out_dir, L: int, s: int, workers: int = 0) -> list[PatchRecord]:
    """Cut every pair in ``manifest_in`` into L x L patches under ``out_dir``.

    Writes ``blur/`` and ``sharp/`` PNGs and ``out_dir/manifest.jsonl``.
    Records are ordered by source path, then origin.
    """
    out_dir = Path(out_dir)
    pairs = sorted(read_pair_manifest(manifest_in), key=lambda r: r.blur_path)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(job):
        idx, rec = job
        blur, sharp = load_png(rec.blur_path), load_png(rec.sharp_path)
        if blur.shape != sharp.shape:
            raise DataError(f"{rec.blur_path}: size {blur.shape[-2:]} differs from "
                            f"{rec.sharp_path} {sharp.shape[-2:]}")
        _, _, h, w = blur.shape
        grid = plan_slide_crop(w, h, L, s)
        stem = Path(rec.blur_path).stem
        rows = []
        for x, y in grid.origins:
            name = f"{idx:05d}_{stem}_x{x}_y{y}.png"
            for kind, img in (("blur", blur), ("sharp", sharp)):
                save_png(img.data[:, :, y : y + L, x : x + L], out_dir / kind / name)
            rows.append(PatchRecord(f"blur/{name}", f"sharp/{name}", rec.blur_path, x, y))
        return rows

    jobs = list(enumerate(pairs))
    if workers > 0:
        with ThreadPoolExecutor(workers) as ex:
            chunks = list(ex.map(one, jobs))
    else:
        chunks = [one(j) for j in jobs]
    records = [r for chunk in chunks for r in chunk]
    write_patch_manifest(out_dir / "manifest.jsonl", records)
    return records


# ------------------------------------------------------------- augmentation


@dataclass(frozen=True)
class AugmentSpec:
    rotation: int = 0  # degrees, counter-clockwise quarter turns
    hflip: bool = False
    vflip: bool = False
    channel_perm: tuple[int, int, int] = (0, 1, 2)
    seed: int | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.rotation not in (0, 90, 180, 270):
            raise ValueError(f"rotation must be a quarter turn, got {self.rotation}")
        if sorted(self.channel_perm) != [0, 1, 2]:
            raise ValueError(f"channel_perm must permute (0, 1, 2), got {self.channel_perm}")

    @classmethod
    def random(cls, rng: np.random.Generator, allow_rotation: bool = True) -> "AugmentSpec":
        rot = int(rng.integers(4)) * 90 if allow_rotation else 0
        hflip, vflip = bool(rng.integers(2)), bool(rng.integers(2))
        perm = tuple(int(i) for i in rng.permutation(3))
        return cls(rot, hflip, vflip, perm)


def _apply(a: np.ndarray, spec: AugmentSpec) -> np.ndarray:
    if spec.rotation:
        a = np.rot90(a, spec.rotation // 90, axes=(-2, -1))
    if spec.hflip:
        a = a[..., ::-1]
    if spec.vflip:
        a = a[..., ::-1, :]
    # output channel k takes input channel perm[k]
    a = a[..., list(spec.channel_perm), :, :]
    return np.ascontiguousarray(a)


def augment(blur: Tensor, sharp: Tensor, spec: AugmentSpec) -> tuple[Tensor, Tensor]:
    """Apply rotation, then flips, then channel permutation to both images."""
    h, w = blur.shape[-2:]
    if spec.rotation in (90, 270) and h != w:
        raise ValueError(f"quarter-turn rotation needs a square patch, got {h}x{w}")
    if blur.shape != sharp.shape:
        raise ValueError(f"pair shapes differ: {blur.shape} vs {sharp.shape}")
    return Tensor(_apply(blur.data, spec)), Tensor(_apply(sharp.data, spec))
