import math
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from rvf import ops
from rvf.gradcheck import check_gradients, weighted_sum
from rvf.tensor import DimensionError, Tensor, no_grad

F64 = np.float64


def leaf(a, dtype=F64):
    return Tensor(np.array(a, dtype=dtype), requires_grad=True, dtype=dtype)


# --------------------------------------------------------------------------
# forward examples
# --------------------------------------------------------------------------
def test_matmul_identity_and_hand_example(rng):
    b = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(ops.matmul(Tensor(np.eye(3), dtype=F64), Tensor(b, dtype=F64)).data, b)
    out = ops.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_matches_triple_loop(rng):
    a, b = rng.standard_normal((5, 4)), rng.standard_normal((4, 3))
    got = ops.matmul(Tensor(a, dtype=F64), Tensor(b, dtype=F64)).data
    np.testing.assert_allclose(got, oracles.matmul(a, b), atol=1e-6)


def test_matmul_shape_error():
    with pytest.raises(DimensionError):
        ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_softmax_examples():
    np.testing.assert_allclose(ops.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    big = ops.softmax(Tensor([1000.0, 0.0], dtype=F64)).data
    assert abs(big[0] - 1.0) < 1e-12 and abs(big[1]) < 1e-12


def test_softmax_matches_extended_precision(rng):
    x = rng.standard_normal(9) * 3
    got = ops.softmax(Tensor(x, dtype=F64)).data
    np.testing.assert_allclose(got, oracles.softmax_row(list(x)), atol=1e-12)


def test_conv2d_trivial_kernels(rng):
    x = rng.random((1, 6, 5))
    ident = np.zeros((1, 1, 3, 3))
    ident[0, 0, 1, 1] = 1.0
    np.testing.assert_allclose(ops.conv2d(Tensor(x, dtype=F64), Tensor(ident, dtype=F64), pad=1).data, x)
    const = np.full((1, 6, 5), 0.37)
    box = np.full((1, 1, 3, 3), 1.0 / 9.0)
    np.testing.assert_allclose(ops.conv2d(Tensor(const, dtype=F64), Tensor(box, dtype=F64), pad=1).data,
                               const, atol=1e-12)


@pytest.mark.parametrize("stride,groups", [(1, 1), (2, 1), (1, 2)])
def test_conv2d_matches_six_loop_oracle(rng, stride, groups):
    x = rng.standard_normal((4, 8, 8))
    w = rng.standard_normal((2, 4 // groups, 3, 3))
    b = rng.standard_normal(2)
    got = ops.conv2d(Tensor(x, dtype=F64), Tensor(w, dtype=F64), Tensor(b, dtype=F64), stride=stride,
                     pad=1, groups=groups).data
    np.testing.assert_allclose(got, oracles.conv2d(x, w, b, stride=stride, groups=groups), atol=1e-5)


def test_conv2d_rejects_bad_groups():
    with pytest.raises(DimensionError):
        ops.conv2d(Tensor(np.zeros((3, 4, 4))), Tensor(np.zeros((2, 1, 1, 1))), groups=2)


def test_layer_norm_examples(rng):
    const = np.full((4, 2, 2), 0.7)
    np.testing.assert_allclose(ops.layer_norm(Tensor(const, dtype=F64)).data, 0.0, atol=1e-9)
    x = np.array([1.0, -1.0]).reshape(2, 1, 1)
    np.testing.assert_allclose(ops.layer_norm(Tensor(x, dtype=F64)).data.ravel(),
                               np.array([1.0, -1.0]) / math.sqrt(1 + 1e-6), rtol=1e-12)
    y = ops.layer_norm(Tensor(rng.standard_normal((8, 5, 5)) * 4 + 2, dtype=F64)).data
    assert np.abs(y.mean(axis=0)).max() < 1e-6
    assert np.abs(y.var(axis=0) - 1).max() < 1e-4


def test_layer_norm_matches_scalar_oracle(rng):
    x = rng.standard_normal((3, 4, 4))
    w, b = rng.standard_normal(3), rng.standard_normal(3)
    got = ops.layer_norm(Tensor(x, dtype=F64), Tensor(w, dtype=F64), Tensor(b, dtype=F64)).data
    np.testing.assert_allclose(got, oracles.layer_norm(x, w, b), atol=1e-10)


def test_bilinear_warp_examples():
    h, w = 6, 7
    img = np.arange(h * w, dtype=F64).reshape(1, h, w)
    zero = np.zeros((2, h, w))
    np.testing.assert_array_equal(ops.bilinear_warp(Tensor(img, dtype=F64), zero).data, img)
    shift = zero.copy()
    shift[0] = 1.0
    out = ops.bilinear_warp(Tensor(img, dtype=F64), shift).data
    np.testing.assert_array_equal(out[:, :, :-1], img[:, :, 1:])
    ramp = np.tile(np.arange(w, dtype=F64), (h, 1))[None]
    half = zero.copy()
    half[0] = 0.5
    out = ops.bilinear_warp(Tensor(ramp, dtype=F64), half).data
    np.testing.assert_allclose(out[:, :, :-1], ramp[:, :, :-1] + 0.5)


def test_bilinear_warp_shape_error():
    with pytest.raises(DimensionError):
        ops.bilinear_warp(Tensor(np.zeros((1, 4, 4))), np.zeros((2, 4, 5)))


def test_pixel_shuffle_examples(rng):
    x = rng.random((3, 4, 5))
    np.testing.assert_array_equal(ops.pixel_shuffle(Tensor(x, dtype=F64), 1).data, x)
    four = np.array([1.0, 2.0, 3.0, 4.0]).reshape(4, 1, 1)
    np.testing.assert_array_equal(ops.pixel_shuffle(Tensor(four, dtype=F64), 2).data,
                                  [[[1.0, 2.0], [3.0, 4.0]]])


def test_pixel_shuffle_matches_index_formula(rng):
    c, s, h, w = 2, 2, 3, 4
    x = rng.random((c * s * s, h, w))
    out = ops.pixel_shuffle(Tensor(x, dtype=F64), s).data
    for ch in range(c):
        for i in range(s):
            for j in range(s):
                np.testing.assert_array_equal(out[ch, i::s, j::s], x[ch * s * s + i * s + j])


def test_rank_limit():
    with pytest.raises(DimensionError):
        Tensor(np.zeros((1, 1, 1, 1, 1)))


# --------------------------------------------------------------------------
# backward examples
# --------------------------------------------------------------------------
def test_sum_gradient_is_ones(rng):
    x = leaf(rng.standard_normal((3, 4)))
    ops.sum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_square_gradient_is_2x(rng):
    v = rng.standard_normal((2, 5))
    x = leaf(v)
    ops.sum(ops.mul(x, x)).backward()
    np.testing.assert_allclose(x.grad, 2 * v)


def test_gradient_accumulates_over_reuse(rng):
    x = leaf(rng.standard_normal(4))
    ops.sum(ops.add(x, ops.mul(x, 3.0))).backward()
    np.testing.assert_allclose(x.grad, 4.0)


def test_no_grad_records_nothing(rng):
    x = leaf(rng.standard_normal(3))
    with no_grad():
        y = ops.mul(x, 2.0)
    assert not y.requires_grad


# --------------------------------------------------------------------------
# finite-difference checks, one per differentiable op
# --------------------------------------------------------------------------
def _op_cases():
    r = np.random.default_rng(7)
    a = leaf(r.standard_normal((3, 4)))
    b = leaf(r.standard_normal((3, 4)))
    pos = leaf(r.random((3, 4)) + 0.5)
    m1, m2 = leaf(r.standard_normal((2, 3, 4))), leaf(r.standard_normal((2, 4, 5)))
    img = leaf(r.standard_normal((4, 6, 6)))
    kern = leaf(r.standard_normal((6, 2, 3, 3)))
    bias = leaf(r.standard_normal(6))
    lw, lb = leaf(r.standard_normal(4)), leaf(r.standard_normal(4))
    flow = r.uniform(-1.5, 1.5, (2, 6, 6))
    cube = leaf(r.standard_normal((8, 3, 3)))
    return {
        "add": (lambda: ops.add(a, b), [a, b]),
        "sub": (lambda: ops.sub(a, b), [a, b]),
        "mul": (lambda: ops.mul(a, b), [a, b]),
        "div": (lambda: ops.div(a, pos), [a, pos]),
        "exp": (lambda: ops.exp(a), [a]),
        "sqrt": (lambda: ops.sqrt(pos), [pos]),
        "sigmoid": (lambda: ops.sigmoid(a), [a]),
        "gelu": (lambda: ops.gelu(a), [a]),
        "relu": (lambda: ops.relu(a), [a]),
        # eps well above the FD step; the eps=1e-3 case is checked in closed form below
        "charbonnier_map": (lambda: ops.charbonnier_map(a, 5e-2), [a]),
        "sum_axis": (lambda: ops.sum(a, axis=1, keepdims=True), [a]),
        "mean": (lambda: ops.mean(a, axis=0), [a]),
        "amax": (lambda: ops.amax(a, axis=-1), [a]),
        "reshape_transpose": (lambda: ops.transpose(ops.reshape(a, (4, 3)), (1, 0)), [a]),
        "getitem": (lambda: ops.getitem(a, (slice(0, 2), slice(1, 4))), [a]),
        "concat": (lambda: ops.concat([a, b], axis=1), [a, b]),
        "gather": (lambda: ops.gather(a, np.array([[0, 5, 5], [11, 2, 0]])), [a]),
        "pad2d": (lambda: ops.pad2d(img, (1, 2, 0, 1)), [img]),
        "matmul": (lambda: ops.matmul(m1, m2), [m1, m2]),
        "softmax": (lambda: ops.softmax(a, axis=-1), [a]),
        "l2_normalize": (lambda: ops.l2_normalize(a, axis=-1), [a]),
        "layer_norm": (lambda: ops.layer_norm(img, lw, lb), [img, lw, lb]),
        "conv2d": (lambda: ops.conv2d(img, kern, bias, pad=1, groups=2), [img, kern, bias]),
        "conv2d_stride": (lambda: ops.conv2d(img, kern, bias, stride=2, pad=1, groups=2), [img, kern]),
        "pixel_shuffle": (lambda: ops.pixel_shuffle(cube, 2), [cube]),
        "pixel_unshuffle": (lambda: ops.pixel_unshuffle(img, 2), [img]),
        "bilinear_warp": (lambda: ops.bilinear_warp(img, flow), [img]),
    }


@pytest.mark.parametrize("name", sorted(_op_cases()))
def test_op_gradient(name):
    fn, inputs = _op_cases()[name]
    t0 = time.perf_counter()
    report = check_gradients(lambda: weighted_sum(fn()), inputs)
    assert report.passed, f"{name}: {report}"
    assert time.perf_counter() - t0 < 10.0


def test_charbonnier_gradient_closed_form_near_zero():
    v = np.array([-2e-3, -1e-4, 0.0, 1e-4, 1.2e-3, 0.5])
    x = leaf(v)
    ops.sum(ops.charbonnier_map(x, 1e-3)).backward()
    np.testing.assert_allclose(x.grad, v / np.sqrt(v * v + 1e-6), rtol=1e-12, atol=0)


def test_gradcheck_detects_a_wrong_backward(rng):
    from rvf.tensor import make_result

    x = leaf(rng.standard_normal(5))

    def bad_square(t):
        return make_result(t.data ** 2, (t,), lambda g: (g * t.data,))  # missing factor 2

    assert not check_gradients(lambda: ops.sum(bad_square(x)), [x]).passed


# --------------------------------------------------------------------------
# properties
# --------------------------------------------------------------------------
finite = st.floats(-50, 50, allow_nan=False, width=64)


@given(hnp.arrays(F64, hnp.array_shapes(min_dims=1, max_dims=3, min_side=1, max_side=6), elements=finite))
def test_softmax_rows_are_distributions(x):
    y = ops.softmax(Tensor(x, dtype=F64), axis=-1).data
    assert (y >= 0).all()
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-6)


@given(hnp.arrays(F64, hnp.array_shapes(min_dims=3, max_dims=3, min_side=1, max_side=5), elements=finite))
def test_forward_ops_are_deterministic(x):
    k = np.linspace(-1, 1, x.shape[0] * 9).reshape(1, x.shape[0], 3, 3)
    for fn in (lambda: ops.layer_norm(Tensor(x, dtype=F64)).data,
               lambda: ops.conv2d(Tensor(x, dtype=F64), Tensor(k, dtype=F64), pad=1).data,
               lambda: ops.softmax(Tensor(x, dtype=F64), axis=0).data):
        assert fn().tobytes() == fn().tobytes()


@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 31))
def test_pixel_shuffle_roundtrip(c, s, h, w, seed):
    x = np.random.default_rng(seed).random((c * s * s, h, w))
    y = ops.pixel_unshuffle(ops.pixel_shuffle(Tensor(x, dtype=F64), s), s).data
    assert y.tobytes() == x.tobytes()


@given(st.integers(-2, 2), st.integers(-2, 2), st.integers(0, 2 ** 31))
def test_integer_warp_equals_indexing(dx, dy, seed):
    h, w = 7, 8
    x = np.random.default_rng(seed).random((2, h, w))
    flow = np.zeros((2, h, w))
    flow[0], flow[1] = dx, dy
    out = ops.bilinear_warp(Tensor(x, dtype=F64), flow).data
    ys = slice(max(0, -dy), h - max(0, dy))
    xs = slice(max(0, -dx), w - max(0, dx))
    ys_src = slice(ys.start + dy, ys.stop + dy)
    xs_src = slice(xs.start + dx, xs.stop + dx)
    np.testing.assert_array_equal(out[:, ys, xs], x[:, ys_src, xs_src])
