"""SDWNet: dilated-convolution blocks plus a wavelet reconstruction branch.

Layout of one forward pass::

    I_blur -> head 7x7 conv (stride 2) -> act = F0
    F0 -> DCB_1 -> ... -> DCB_d = Fn
    merged = spatial_conv(Fn) + WRM(Fn) + F0
    merged -> x2 upsample -> tail 3x3 conv = R
    X = clamp(I_blur + R, 0, 1)
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import ConvSpec, Parameter, ShapeError, Tensor
from .wavelet import SubbandSet, dwt_haar, idwt_haar

ACTIVATIONS = ("elu", "relu")
UPSAMPLES = ("bilinear", "transposed_conv")


@dataclass
class SDWNetConfig:
    depth: int = 16
    width: int = 32
    inner_rates: tuple[int, ...] = (1, 2, 4, 8)
    last_rates: tuple[int, ...] = (1, 3, 5, 7)
    activation: str = "elu"
    upsample: str = "bilinear"
    wrm_enabled: bool = True
    downsample_in_head: bool = True

    def __post_init__(self):
        self.inner_rates = tuple(int(r) for r in self.inner_rates)
        self.last_rates = tuple(int(r) for r in self.last_rates)
        if self.depth < 1 or self.width < 1:
            raise ValueError("depth and width must be >= 1")
        for rates in (self.inner_rates, self.last_rates):
            if len(rates) != 4 or any(r < 1 for r in rates):
                raise ValueError(f"a rate schedule needs four positive integers, got {rates}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.upsample not in UPSAMPLES:
            raise ValueError(f"upsample must be one of {UPSAMPLES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["inner_rates"] = list(self.inner_rates)
        d["last_rates"] = list(self.last_rates)
        return d


def activate(x: Tensor, kind: str | None) -> Tensor:
    if kind == "elu":
        return ad.elu(x)
    if kind == "relu":
        return ad.relu(x)
    if kind in (None, "none"):
        return x
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class Conv:
    weight: Parameter
    bias: Parameter
    spec: ConvSpec

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, self.spec)


@dataclass
class TransposedConv:
    weight: Parameter
    bias: Parameter
    stride: int = 2
    padding: int = 1

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


@dataclass
class DCBParams:
    branches: list[Conv]
    fuse: Conv
    activation: str = "elu"

    def __post_init__(self):
        if len(self.branches) != 4:
            raise ValueError("a DCB has exactly four branches")
        w = self.branches[0].spec.in_channels
        if self.fuse.spec.in_channels != 4 * w:
            raise ValueError("fuse conv must take 4*width channels")

    @property
    def rates(self) -> tuple[int, ...]:
        return tuple(b.spec.dilation for b in self.branches)


@dataclass
class WRMParams:
    convs: list[Conv]
    activation: str | None = "elu"


@dataclass
class SDWNetParams:
    head: Conv
    blocks: list[DCBParams]
    spatial: Conv
    tail: Conv
    wrm: WRMParams | None = None
    upsample: TransposedConv | None = None

    def named_parameters(self) -> Iterator[tuple[str, Parameter]]:
        yield from _conv_params("head", self.head)
        for i, blk in enumerate(self.blocks):
            for j, br in enumerate(blk.branches):
                yield from _conv_params(f"blocks.{i}.branch{j}", br)
            yield from _conv_params(f"blocks.{i}.fuse", blk.fuse)
        if self.wrm is not None:
            for j, c in enumerate(self.wrm.convs):
                yield from _conv_params(f"wrm.conv{j}", c)
        yield from _conv_params("spatial", self.spatial)
        if self.upsample is not None:
            yield from _conv_params("upsample", self.upsample)
        yield from _conv_params("tail", self.tail)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def _conv_params(prefix: str, conv) -> Iterator[tuple[str, Parameter]]:
    yield f"{prefix}.weight", conv.weight
    yield f"{prefix}.bias", conv.bias


def _make_conv(rng, name: str, spec: ConvSpec, dtype, zero: bool = False) -> Conv:
    shape = (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w)
    fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w
    w = np.zeros(shape, dtype) if zero else ad.init_conv_weight(rng, shape, fan_in, dtype)
    return Conv(
        Parameter(w, name=f"{name}.weight"),
        Parameter(np.zeros(spec.out_channels, dtype), name=f"{name}.bias"),
        spec,
    )


def make_dcb(rng, name: str, width: int, rates, activation: str, dtype) -> DCBParams:
    branches = [
        _make_conv(rng, f"{name}.branch{j}", ConvSpec.same(width, width, 3, r), dtype)
        for j, r in enumerate(rates)
    ]
    fuse = _make_conv(rng, f"{name}.fuse", ConvSpec.same(4 * width, width, 3, 1), dtype)
    return DCBParams(branches, fuse, activation)


def init_params(cfg: SDWNetConfig, seed: int = 0, precision: str = "single") -> SDWNetParams:
    """Fresh weights: He-normal convs, zero biases, zero tail (identity start)."""
    dtype = ad.DTYPES[precision]
    rng = np.random.default_rng(seed)
    w = cfg.width
    stride = 2 if cfg.downsample_in_head else 1
    head = _make_conv(rng, "head", ConvSpec(3, w, 7, 7, 1, stride, 3), dtype)
    blocks = []
    for i in range(cfg.depth):
        rates = cfg.last_rates if i == cfg.depth - 1 else cfg.inner_rates
        blocks.append(make_dcb(rng, f"blocks.{i}", w, rates, cfg.activation, dtype))
    wrm = None
    if cfg.wrm_enabled:
        convs = [_make_conv(rng, f"wrm.conv{j}", ConvSpec.same(w, w), dtype) for j in range(3)]
        wrm = WRMParams(convs, cfg.activation)
    spatial = _make_conv(rng, "spatial", ConvSpec.same(w, w), dtype)
    upsample = None
    if cfg.downsample_in_head and cfg.upsample == "transposed_conv":
        shape = (w, w, 4, 4)
        upsample = TransposedConv(
            Parameter(ad.init_conv_weight(rng, shape, w * 4, dtype), name="upsample.weight"),
            Parameter(np.zeros(w, dtype), name="upsample.bias"),
        )
    tail = _make_conv(rng, "tail", ConvSpec.same(w, 3), dtype, zero=True)
    return SDWNetParams(head, blocks, spatial, tail, wrm, upsample)


def dcb_branches(x: Tensor, p: DCBParams) -> Tensor:
    """Parallel dilated convolutions, activated and concatenated on channels."""
    return ad.concat_channels([activate(b(x), p.activation) for b in p.branches])


def dcb_forward(x: Tensor, p: DCBParams) -> Tensor:
    w = p.branches[0].spec.in_channels
    if x.ndim != 4 or x.shape[1] != w:
        raise ShapeError(f"dcb_forward: expected {w} channels, got shape {x.shape}", ["c"])
    return ad.add(x, p.fuse(dcb_branches(x, p)))


def dc_module_forward(x: Tensor, blocks: list[DCBParams]) -> Tensor:
    if not blocks:
        raise ValueError("the DC module needs at least one block")
    for blk in blocks:
        x = dcb_forward(x, blk)
    return x


def _conv_stack(x: Tensor, p: WRMParams) -> Tensor:
    for j, conv in enumerate(p.convs):
        x = conv(x)
        if j < len(p.convs) - 1:
            x = activate(x, p.activation)
    return x


def wrm_forward(x: Tensor, p: WRMParams) -> Tensor:
    """DWT, one shared conv stack per subband, inverse DWT. Odd sizes are padded and cropped back."""
    xe, (h, w) = ad.pad_to_even(x)
    bands = dwt_haar(xe)
    n = x.shape[0]
    # the four subbands share weights, so run them as one batch
    rec = _conv_stack(ad.concat(list(bands), axis=0), p)
    out = idwt_haar(SubbandSet(*(ad.narrow(rec, 0, k * n, n) for k in range(4))))
    return ad.crop_hw(out, h, w)


def sdwnet_forward(i_blur: Tensor, p: SDWNetParams, cfg: SDWNetConfig) -> Tensor:
    if i_blur.ndim != 4 or i_blur.shape[1] != 3:
        raise ShapeError(f"sdwnet_forward: expected an (n, 3, h, w) image, got {i_blur.shape}", ["c"])
    x = i_blur
    if cfg.downsample_in_head:
        x, (h, w) = ad.pad_to_even(x)
    f0 = activate(p.head(x), cfg.activation)
    fn = dc_module_forward(f0, p.blocks)
    merged = ad.add(p.spatial(fn), f0)
    if p.wrm is not None:
        merged = ad.add(merged, wrm_forward(fn, p.wrm))
    if cfg.downsample_in_head:
        merged = p.upsample(merged) if p.upsample is not None else ad.bilinear_upsample2x(merged)
    r = p.tail(merged)
    if cfg.downsample_in_head:
        r = ad.crop_hw(r, h, w)
    return ad.clamp(ad.add(i_blur, r), 0.0, 1.0)


class SDWNet:
    """Convenience bundle of a config and its parameters."""

    def __init__(self, cfg: SDWNetConfig, params: SDWNetParams | None = None, seed: int = 0,
                 precision: str = "single"):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed, precision)

    def __call__(self, x: Tensor) -> Tensor:
        return sdwnet_forward(x, self.params, self.cfg)

    def named_parameters(self):
        return self.params.named_parameters()

    def parameters(self) -> list[Parameter]:
        return self.params.parameters()


def count_params(p: SDWNetParams) -> int:
    return sum(int(t.data.size) for t in p.parameters())


def layer_table(p: SDWNetParams) -> list[tuple[str, tuple[int, ...], int]]:
    return [(name, t.shape, int(t.data.size)) for name, t in p.named_parameters()]
