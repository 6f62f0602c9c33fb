import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdwnet import autodiff as ad
from sdwnet.autodiff import ConvSpec, Parameter, ShapeError, Tape, Tensor

from helpers import check_grad, direct_conv2d

OP_TOL = 1e-4


def rand(rng, *shape):
    return rng.standard_normal(shape)


# ---------------------------------------------------------------- conv2d


def test_identity_kernel_returns_input():
    x = np.arange(9, dtype=np.float32).reshape(1, 1, 3, 3)
    w = np.zeros((1, 1, 3, 3), np.float32)
    w[0, 0, 1, 1] = 1
    y = ad.conv2d(Tensor(x), Tensor(w), None, ConvSpec(1, 1, 3, 3, 1, 1, 1))
    np.testing.assert_array_equal(y.data, x)


def test_dilated_impulse_footprint():
    x = np.zeros((1, 1, 9, 9))
    x[0, 0, 4, 4] = 1
    w = np.ones((1, 1, 3, 3))
    expected = direct_conv2d(x, w, None, dilation=2, padding=2)
    # frozen from the loop oracle: ones at rows/cols {2, 4, 6}
    frozen = np.zeros((9, 9))
    for i in (2, 4, 6):
        for j in (2, 4, 6):
            frozen[i, j] = 1
    np.testing.assert_array_equal(expected[0, 0], frozen)
    y = ad.conv2d(Tensor(x), Tensor(w), None, ConvSpec(1, 1, 3, 3, 2, 1, 2))
    np.testing.assert_array_equal(y.data[0, 0], frozen)


def test_zero_input_gives_bias():
    b = np.array([0.5, -2.0, 3.0])
    w = np.random.default_rng(0).standard_normal((3, 2, 3, 3))
    y = ad.conv2d(Tensor(np.zeros((2, 2, 5, 6))), Tensor(w), Tensor(b), ConvSpec.same(2, 3))
    for k in range(3):
        assert np.all(y.data[:, k] == b[k])


def test_conv_shape_errors_name_axes():
    x = Tensor(np.zeros((1, 4, 8, 8)))
    with pytest.raises(ShapeError) as e:
        ad.conv2d(x, Tensor(np.zeros((2, 3, 3, 3))), None, ConvSpec(3, 2, 3, 3))
    assert "c" in e.value.axes
    with pytest.raises(ShapeError) as e:
        ad.conv2d(x, Tensor(np.zeros((2, 4, 3, 5))), None, ConvSpec(4, 2, 3, 3))
    assert e.value.axes == ("kw",)


@settings(max_examples=40, deadline=None)
@given(
    cin=st.integers(1, 3), cout=st.integers(1, 3), k=st.integers(1, 4),
    dilation=st.integers(1, 3), stride=st.integers(1, 3), padding=st.integers(0, 3),
    h=st.integers(1, 9), w=st.integers(1, 9), seed=st.integers(0, 2**16),
)
def test_conv_matches_direct_loops(cin, cout, k, dilation, stride, padding, h, w, seed):
    spec = ConvSpec(cin, cout, k, k, dilation, stride, padding)
    ho, wo = spec.out_size(h, w)
    rng = np.random.default_rng(seed)
    x, wt, b = rand(rng, 2, cin, h, w), rand(rng, cout, cin, k, k), rand(rng, cout)
    if ho < 1 or wo < 1:
        with pytest.raises(ShapeError):
            ad.conv2d(Tensor(x), Tensor(wt), Tensor(b), spec)
        return
    y = ad.conv2d(Tensor(x), Tensor(wt), Tensor(b), spec)
    assert y.shape == (2, cout, ho, wo)
    np.testing.assert_allclose(y.data, direct_conv2d(x, wt, b, stride, dilation, padding), rtol=1e-10, atol=1e-12)


def test_conv_is_linear():
    rng = np.random.default_rng(1)
    spec = ConvSpec.same(3, 4, 3, 2)
    w = Tensor(rand(rng, 4, 3, 3, 3))
    x, y = rand(rng, 2, 3, 7, 7), rand(rng, 2, 3, 7, 7)
    a, b = 1.7, -0.3
    lhs = ad.conv2d(Tensor(a * x + b * y), w, None, spec).data
    rhs = a * ad.conv2d(Tensor(x), w, None, spec).data + b * ad.conv2d(Tensor(y), w, None, spec).data
    assert np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs) < 1e-6


@pytest.mark.parametrize("k,dilation,stride,padding", [(3, 1, 1, 1), (3, 2, 1, 2), (3, 4, 1, 4), (7, 1, 2, 3), (2, 1, 2, 0)])
def test_conv_gradients(k, dilation, stride, padding):
    rng = np.random.default_rng(k * 10 + dilation)
    spec = ConvSpec(2, 3, k, k, dilation, stride, padding)
    err = check_grad(lambda x, w, b: ad.conv2d(x, w, b, spec),
                     [rand(rng, 2, 2, 9, 9), rand(rng, 3, 2, k, k), rand(rng, 3)])
    assert err < OP_TOL


def test_conv_transpose_is_adjoint_of_strided_conv():
    rng = np.random.default_rng(2)
    w = rand(rng, 3, 2, 4, 4)  # conv: 2 -> 3 channels; transposed: 3 -> 2
    x = rand(rng, 1, 2, 8, 8)
    y = rand(rng, 1, 3, 4, 4)
    spec = ConvSpec(2, 3, 4, 4, 1, 2, 1)
    lhs = np.sum(ad.conv2d(Tensor(x), Tensor(w), None, spec).data * y)
    rhs = np.sum(x * ad.conv_transpose2d(Tensor(y), Tensor(w), None, 2, 1).data)
    assert lhs == pytest.approx(rhs, rel=1e-12)
    assert ad.conv_transpose2d(Tensor(y), Tensor(w), None, 2, 1).shape == (1, 2, 8, 8)


def test_conv_transpose_gradients():
    rng = np.random.default_rng(3)
    err = check_grad(lambda x, w, b: ad.conv_transpose2d(x, w, b, 2, 1),
                     [rand(rng, 2, 3, 4, 5), rand(rng, 3, 2, 4, 4), rand(rng, 2)])
    assert err < OP_TOL


# ------------------------------------------------------------ activations


def test_elu_values():
    y = ad.elu(Tensor(np.array([0.0, 1.0, -1.0, -20.0]))).data
    assert y[0] == 0 and y[1] == 1
    assert y[2] == pytest.approx(math.exp(-1) - 1, abs=1e-12)
    assert y[2] == pytest.approx(-0.63212, abs=1e-5)
    assert -1 < y[3] < y[2]


def test_elu_monotone_and_bounded():
    x = np.linspace(-15, 5, 2001)
    y = ad.elu(Tensor(x), alpha=0.7).data
    assert np.all(np.diff(y) > 0)
    assert np.all(y > -0.7)


def test_relu_values_and_grad():
    x = Tensor(np.array([-1.0, 2.0]), requires_grad=True)
    with Tape() as tape:
        y = ad.relu(x)
        loss = ad.sum_axes(y)
    g = ad.backward(loss, tape)[x]
    np.testing.assert_array_equal(y.data, [0, 2])
    np.testing.assert_array_equal(g, [0, 1])


def away_from_zero(rng, *shape):
    a = rng.uniform(0.1, 2.0, shape)
    return a * rng.choice([-1, 1], shape)


@pytest.mark.parametrize("name,fn,make", [
    ("elu", lambda x: ad.elu(x), lambda r: rand(r, 2, 3, 4, 4)),
    ("relu", lambda x: ad.relu(x), lambda r: away_from_zero(r, 2, 3, 4, 4)),
    ("clamp", lambda x: ad.clamp(x, -0.5, 0.5), lambda r: away_from_zero(r, 2, 3, 4, 4) * 0.6),
    ("sqrt", lambda x: ad.sqrt(x), lambda r: r.uniform(0.5, 2, (2, 3, 4, 4))),
    ("square", lambda x: ad.square(x), lambda r: rand(r, 2, 3, 4, 4)),
    ("bilinear", lambda x: ad.bilinear_upsample2x(x), lambda r: rand(r, 2, 3, 3, 5)),
    ("sum_axes", lambda x: ad.sum_axes(x, (1, 2, 3)), lambda r: rand(r, 2, 3, 4, 4)),
    ("mean", lambda x: ad.mean(x), lambda r: rand(r, 2, 3, 4, 4)),
    ("pad_to_even", lambda x: ad.pad_to_even(x)[0], lambda r: rand(r, 1, 2, 5, 7)),
    ("narrow", lambda x: ad.narrow(x, 1, 1, 2), lambda r: rand(r, 2, 4, 3, 3)),
    ("scalar", lambda x: 3.0 - x * 2.0 + 1.5, lambda r: rand(r, 2, 3)),
    ("filter", lambda x: ad.depthwise_filter_valid(x, np.array([0.25, 0.5, 0.25])), lambda r: rand(r, 2, 3, 6, 5)),
])
def test_unary_gradients(name, fn, make):
    assert check_grad(fn, [make(np.random.default_rng(7))]) < OP_TOL


@pytest.mark.parametrize("fn", [ad.add, ad.sub, ad.mul, ad.div])
def test_binary_gradients(fn):
    rng = np.random.default_rng(11)
    a, b = rand(rng, 2, 3, 4, 4), rng.uniform(0.5, 2, (2, 3, 4, 4))
    assert check_grad(fn, [a, b]) < OP_TOL


def test_concat_gradients():
    rng = np.random.default_rng(5)
    err = check_grad(lambda a, b, c: ad.concat_channels([a, b, c]),
                     [rand(rng, 2, 1, 4, 4), rand(rng, 2, 3, 4, 4), rand(rng, 2, 2, 4, 4)])
    assert err < OP_TOL


# -------------------------------------------------------------- upsampling


def test_bilinear_constant():
    y = ad.bilinear_upsample2x(Tensor(np.full((1, 2, 3, 4), 0.375))).data
    assert y.shape == (1, 2, 6, 8)
    assert np.all(y == 0.375)


def test_bilinear_half_pixel_values():
    y = ad.bilinear_upsample2x(Tensor(np.array([[[[0.0, 1.0]]]]))).data
    np.testing.assert_allclose(y[0, 0, 0], [0, 0.25, 0.75, 1], atol=1e-12)
    np.testing.assert_allclose(y[0, 0, 1], [0, 0.25, 0.75, 1], atol=1e-12)


def test_bilinear_shape():
    assert ad.bilinear_upsample2x(Tensor(np.zeros((2, 3, 5, 7)))).shape == (2, 3, 10, 14)


# -------------------------------------------------------- concat and add


def test_concat_single_is_identity():
    t = Tensor(np.ones((1, 2, 3, 3)))
    assert ad.concat_channels([t]) is t


def test_concat_widths_and_slices():
    rng = np.random.default_rng(0)
    a, b = Tensor(rand(rng, 1, 32, 4, 4)), Tensor(rand(rng, 1, 32, 4, 4))
    c = ad.concat_channels([a, b])
    assert c.shape == (1, 64, 4, 4)
    np.testing.assert_array_equal(ad.narrow(c, 1, 0, 32).data, a.data)
    np.testing.assert_array_equal(ad.narrow(c, 1, 32, 32).data, b.data)


def test_concat_spatial_mismatch():
    with pytest.raises(ShapeError) as e:
        ad.concat_channels([Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 2, 4, 5)))])
    assert e.value.axes == ("w",)


def test_add_identities():
    rng = np.random.default_rng(0)
    x, y = Tensor(rand(rng, 2, 3, 4, 4)), Tensor(rand(rng, 2, 3, 4, 4))
    np.testing.assert_array_equal(ad.add(x, Tensor(np.zeros(x.shape))).data, x.data)
    np.testing.assert_array_equal(ad.add(x, y).data, ad.add(y, x).data)
    with pytest.raises(ShapeError):
        ad.add(x, Tensor(np.zeros((2, 3, 4, 5))))


def test_add_passes_upstream_gradient_to_both():
    a = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    b = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    up = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    with Tape() as tape:
        loss = ad.sum_axes(ad.mul(ad.add(a, b), Tensor(up)))
    g = ad.backward(loss, tape)
    np.testing.assert_array_equal(g[a], up)
    np.testing.assert_array_equal(g[b], up)


# ---------------------------------------------------------------- backward


def test_grad_of_weighted_sum_is_input():
    x = np.array([1.0, -2.0, 3.5])
    w = Parameter(np.array([0.3, 0.1, -0.2]))
    with Tape() as tape:
        loss = ad.sum_axes(ad.mul(w, Tensor(x)))
    ad.backward(loss, tape)
    np.testing.assert_array_equal(w.grad, x)


def test_backward_twice_doubles():
    w = Parameter(np.array([0.3, 0.1]))
    x = Tensor(np.array([2.0, 5.0]))
    with Tape() as tape:
        loss = ad.sum_axes(ad.mul(w, x))
    ad.backward(loss, tape)
    ad.backward(loss, tape)
    np.testing.assert_array_equal(w.grad, 2 * x.data)
    w.zero_grad()
    assert np.all(w.grad == 0)


def test_unreached_parameter_keeps_zero_grad():
    used, unused = Parameter(np.ones(3)), Parameter(np.ones(3))
    with Tape() as tape:
        loss = ad.sum_axes(ad.square(used))
    grads = ad.backward(loss, tape)
    assert unused not in grads
    assert np.all(unused.grad == 0)


def test_backward_rejects_non_scalar():
    w = Parameter(np.ones(3))
    with Tape() as tape:
        y = ad.square(w)
    with pytest.raises(ShapeError):
        ad.backward(y, tape)


def test_no_tape_records_nothing():
    w = Parameter(np.ones(3))
    y = ad.square(w)
    assert not y.requires_grad
    with Tape() as tape:
        ad.square(Tensor(np.ones(3)))
    assert len(tape) == 0


def test_tape_is_topologically_ordered():
    w = Parameter(np.ones((1, 1, 4, 4)))
    with Tape() as tape:
        y = ad.elu(ad.mul_scalar(w, 2.0))
        ad.sum_axes(ad.add(y, w))
    seen = {id(w)}
    for node in tape.nodes:
        assert all(id(i) in seen or not i.requires_grad for i in node.inputs)
        seen.add(id(node.output))


def test_finite_query():
    assert Tensor(np.ones(3)).is_finite()
    assert not Tensor(np.array([1.0, np.nan])).is_finite()
    assert not Tensor(np.array([np.inf])).is_finite()
