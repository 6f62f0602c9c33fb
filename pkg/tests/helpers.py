"""Shared oracles for the test-suite."""

import numpy as np

from sdwnet import autodiff as ad
from sdwnet.gradcheck import numerical_grad, rel_error


def direct_conv2d(x, w, b, stride=1, dilation=1, padding=0):
    """Nested-loop cross-correlation, written independently of the library."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for bi in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else float(b[oc])
                    for ic in range(c):
                        for ki in range(kh):
                            for kj in range(kw):
                                yi = i * stride + ki * dilation - padding
                                xj = j * stride + kj * dilation - padding
                                if 0 <= yi < h and 0 <= xj < wd:
                                    acc += x[bi, ic, yi, xj] * w[oc, ic, ki, kj]
                    out[bi, oc, i, j] = acc
    return out


def check_grad(fn, arrays, step=1e-5, seed=0, max_entries=None):
    """Max relative error between tape gradients and central differences.

    ``fn`` maps tensors to a tensor; the scalar probed is sum(fn(...) * R) for
    a fixed random R, so the full Jacobian participates.
    """
    rng = np.random.default_rng(seed)
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    ref = fn(*[ad.Tensor(a) for a in arrays])
    proj = rng.standard_normal(ref.shape)

    tensors = [ad.Tensor(a, requires_grad=True) for a in arrays]
    with ad.Tape() as tape:
        out = fn(*tensors)
        loss = ad.sum_axes(ad.mul(out, ad.Tensor(proj)))
    grads = ad.backward(loss, tape)

    errs = []
    for k, (a, t) in enumerate(zip(arrays, tensors)):
        def f():
            return float(np.sum(fn(*[ad.Tensor(x) for x in arrays]).data * proj))

        idx, num = numerical_grad(f, a, step, max_entries, rng)
        g = grads.get(t, np.zeros_like(a)).reshape(-1)[idx]
        errs.append(rel_error(g, num))
    return max(errs)


def param_count_formula(depth, width, wrm=True, upsample="bilinear", downsample=True):
    """Closed-form learnable-scalar count, enumerated layer by layer."""
    w = width
    conv = lambda cin, cout, k: cin * cout * k * k + cout  # noqa: E731
    total = conv(3, w, 7)
    total += depth * (4 * conv(w, w, 3) + conv(4 * w, w, 3))
    if wrm:
        total += 3 * conv(w, w, 3)
    total += conv(w, w, 3)  # spatial branch
    if downsample and upsample == "transposed_conv":
        total += conv(w, w, 4)
    total += conv(w, 3, 3)  # tail
    return total


def network_gradcheck(cfg, size=8, seed=0, max_entries=12, step=1e-5):
    """Worst relative error over the input and every parameter tensor of a double-precision model."""
    from sdwnet.network import init_params, sdwnet_forward

    rng = np.random.default_rng(seed)
    params = init_params(cfg, seed, "double")
    # a non-zero tail so gradients reach every layer
    params.tail.weight.data[...] = 0.02 * rng.standard_normal(params.tail.weight.shape)
    params.tail.bias.data[...] = 0.01 * rng.standard_normal(3)
    x = ad.Tensor(rng.uniform(0.3, 0.7, (1, 3, size, size)), requires_grad=True)
    # the residual is linear in the tail, so rescale it to stay well inside the clamp
    params.tail.bias.data[...] = 0
    peak = np.max(np.abs(sdwnet_forward(ad.Tensor(x.data), params, cfg).data - x.data))
    params.tail.weight.data *= 0.1 / peak
    params.tail.bias.data[...] = 0.01 * rng.standard_normal(3)
    proj = rng.standard_normal(x.shape)

    def f():
        out = sdwnet_forward(ad.Tensor(x.data), params, cfg)
        assert np.all((out.data > 0) & (out.data < 1)), "clamp is active; gradient check invalid"
        return float(np.sum(out.data * proj))

    with ad.Tape() as tape:
        loss = ad.sum_axes(ad.mul(sdwnet_forward(x, params, cfg), ad.Tensor(proj)))
    grads = ad.backward(loss, tape)

    errors = {}
    for name, t in [("input", x)] + list(params.named_parameters()):
        idx, num = numerical_grad(f, t.data, step, max_entries, rng)
        errors[name] = rel_error(grads[t].reshape(-1)[idx], num)
    return errors


def dcb_reference(x, p):
    """Direct-summation DCB: returns (branch concat, block output) as arrays."""
    def act(a):
        if p.activation == "relu":
            return np.maximum(a, 0)
        return np.where(a > 0, a, np.expm1(np.minimum(a, 0)))

    branches = []
    for conv in p.branches:
        r = conv.spec.dilation
        branches.append(act(direct_conv2d(x, conv.weight.data, conv.bias.data, 1, r, r)))
    cat = np.concatenate(branches, axis=1)
    fused = direct_conv2d(cat, p.fuse.weight.data, p.fuse.bias.data, 1, 1, 1)
    return cat, x + fused


def footprint(a, centre):
    """Bounding box (height, width) of non-zero entries and their offsets from ``centre``."""
    mask = np.any(a != 0, axis=(0, 1))
    rows, cols = np.nonzero(mask)
    offsets = {(int(r - centre), int(c - centre)) for r, c in zip(rows, cols)}
    return (int(rows.max() - rows.min() + 1), int(cols.max() - cols.min() + 1)), offsets


def impulse_dcb(rates, size=25, activation="elu"):
    """One width-1 DCB with all-ones kernels, zero biases, fed a centred unit impulse."""
    from sdwnet.network import make_dcb

    p = make_dcb(np.random.default_rng(0), "dcb", 1, rates, activation, np.float64)
    for conv in p.branches + [p.fuse]:
        conv.weight.data[...] = 1.0
        conv.bias.data[...] = 0.0
    x = np.zeros((1, 1, size, size))
    x[0, 0, size // 2, size // 2] = 1.0
    return p, x
