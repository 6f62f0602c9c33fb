"""Single-level orthonormal 2-D Haar transform, per channel.

For each non-overlapping 2x2 block ``[[a, b], [c, d]]``::

    LL = ( a + b + c + d) / 2
    LH = (-a + b - c + d) / 2      horizontal variation
    HL = (-a - b + c + d) / 2      vertical variation
    HH = ( a - b - c + d) / 2

The analysis matrix is orthonormal, so the inverse is its transpose and the
transform preserves energy.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .autodiff import ShapeError, Tensor, _record

# sign of (a, b, c, d) in each subband
_SIGNS = {
    "ll": (1, 1, 1, 1),
    "lh": (-1, 1, -1, 1),
    "hl": (-1, -1, 1, 1),
    "hh": (1, -1, -1, 1),
}
BANDS = ("ll", "lh", "hl", "hh")


class SubbandSet(NamedTuple):
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor


def _corners(x: np.ndarray):
    return x[..., 0::2, 0::2], x[..., 0::2, 1::2], x[..., 1::2, 0::2], x[..., 1::2, 1::2]


def _analyse(x: np.ndarray, band: str) -> np.ndarray:
    sa, sb, sc, sd = _SIGNS[band]
    a, b, c, d = _corners(x)
    return (sa * a + sb * b + sc * c + sd * d) * x.dtype.type(0.5)


def _synthesise(bands: dict[str, np.ndarray]) -> np.ndarray:
    ref = bands["ll"]
    n, c, h2, w2 = ref.shape
    out = np.empty((n, c, 2 * h2, 2 * w2), dtype=ref.dtype)
    half = ref.dtype.type(0.5)
    for k, (r, q) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        acc = sum(_SIGNS[b][k] * bands[b] for b in BANDS)
        out[..., r::2, q::2] = acc * half
    return out


def dwt_haar(x: Tensor) -> SubbandSet:
    """Split ``x`` into four half-resolution subbands."""
    if x.ndim != 4:
        raise ShapeError(f"dwt_haar: expected a 4-d tensor, got {x.shape}", ["ndim"])
    h, w = x.shape[-2:]
    odd = [a for a, n in (("h", h), ("w", w)) if n % 2]
    if odd:
        raise ShapeError(f"dwt_haar: spatial size {h}x{w} must be even (pad first)", odd)

    def band_op(band):
        def bw(g):
            return (_synthesise({b: g if b == band else np.zeros_like(g) for b in BANDS}),)

        return _record(_analyse(x.data, band), (x,), bw, f"dwt_{band}")

    return SubbandSet(*(band_op(b) for b in BANDS))


def idwt_haar(s: SubbandSet) -> Tensor:
    """Reassemble a tensor from its four subbands."""
    parts = tuple(s)
    shape = parts[0].shape
    if len(shape) != 4:
        raise ShapeError(f"idwt_haar: subbands must be 4-d, got {shape}", ["ndim"])
    for name, p in zip(BANDS, parts):
        if p.shape != shape:
            bad = [a for a, u, v in zip("nchw", p.shape, shape) if u != v]
            raise ShapeError(f"idwt_haar: subband {name} has shape {p.shape}, expected {shape}", bad)
    out = _synthesise({b: p.data for b, p in zip(BANDS, parts)})

    def bw(g):
        return tuple(_analyse(g, b) for b in BANDS)

    return _record(out, parts, bw, "idwt_haar")
