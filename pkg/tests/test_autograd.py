import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msecg import autograd as ag
from msecg.autograd import NonFiniteError, Tensor

from oracles import central_diff, conv1d_loop, matmul_loop, rel_error


def param(a):
    return Tensor(np.array(a, dtype=np.float64), requires_grad=True)


# -- matmul -----------------------------------------------------------------

def test_matmul_identity():
    b = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ag.matmul(np.eye(2), b).data, b)


def test_matmul_scalar():
    assert ag.matmul([[2.0]], [[3.0]]).data.tolist() == [[6.0]]


def test_matmul_matches_loop(rng):
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
    assert np.max(np.abs(ag.matmul(a, b).data - matmul_loop(a, b))) < 1e-12


def test_matmul_shape_error():
    with pytest.raises(ValueError, match="dimension"):
        ag.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_backward_formulas(rng):
    a, b = param(rng.normal(size=(3, 4))), param(rng.normal(size=(4, 2)))
    gy = rng.normal(size=(3, 2))
    ag.backward(ag.tsum(ag.matmul(a, b) * gy))
    np.testing.assert_allclose(a.grad, gy @ b.data.T, atol=1e-14)
    np.testing.assert_allclose(b.grad, a.data.T @ gy, atol=1e-14)


# -- conv1d -----------------------------------------------------------------

def test_conv1d_identity_kernel(rng):
    x = rng.normal(size=(1, 10))
    y = ag.conv1d(x, np.ones((1, 1, 1)), np.zeros(1))
    assert np.array_equal(y.data, x)


def test_conv1d_zero_input_gives_bias():
    bias = np.array([0.5, -2.0])
    y = ag.conv1d(np.zeros((3, 9)), np.ones((2, 3, 5)), bias)
    assert np.array_equal(y.data, np.broadcast_to(bias[:, None], (2, 9)))


@pytest.mark.parametrize("padding", ["same", "valid", "causal"])
def test_conv1d_matches_loop(rng, padding):
    x, w, b = rng.normal(size=(3, 16)), rng.normal(size=(2, 3, 5)), rng.normal(size=2)
    ref = conv1d_loop(x, w, b, padding)
    assert np.max(np.abs(ag.conv1d(x, w, b, padding=padding).data - ref)) < 1e-12


def test_conv1d_depthwise_matches_loop(rng):
    x, w, b = rng.normal(size=(4, 12)), rng.normal(size=(4, 1, 3)), rng.normal(size=4)
    out = ag.conv1d(x, w, b, padding="causal", groups=4).data
    assert np.max(np.abs(out - conv1d_loop(x, w, b, "causal", groups=4))) < 1e-12


def test_conv1d_errors():
    with pytest.raises(ValueError, match="longer"):
        ag.conv1d(np.ones((1, 3)), np.ones((1, 1, 5)), padding="valid")
    with pytest.raises(ValueError, match="odd"):
        ag.conv1d(np.ones((1, 8)), np.ones((1, 1, 4)), padding="same")
    with pytest.raises(ValueError, match="group"):
        ag.conv1d(np.ones((3, 8)), np.ones((2, 1, 3)), groups=2)


def test_conv_transpose_gradients(rng):
    x, w, b = param(rng.normal(size=(2, 3, 4))), param(rng.normal(size=(3, 2, 5))), param(rng.normal(size=2))
    gy = rng.normal(size=(2, 2, 4 * 5))

    def f():
        return float(np.sum(ag.conv_transpose1d(x.data, w.data, b.data, stride=5).data * gy))

    ag.backward(ag.tsum(ag.conv_transpose1d(x, w, b, stride=5) * gy))
    for t in (x, w, b):
        assert rel_error(t.grad, central_diff(f, t.data)) < 1e-6


# -- unary maps ---------------------------------------------------------------

def test_unary_values():
    assert ag.map_unary([0.0], "silu").data[0] == 0.0
    assert abs(ag.map_unary([0.0], "softplus").data[0] - math.log(2)) < 1e-15
    assert abs(ag.map_unary([0.0], "softplus").data[0] - 0.693147) < 1e-6
    assert abs(ag.map_unary([40.0], "sigmoid").data[0] - 1.0) < 1e-9
    assert ag.map_unary([-3.0], "neg").data[0] == 3.0


def test_unknown_unary():
    with pytest.raises(ValueError, match="unknown"):
        ag.map_unary([1.0], "tanhh")


@pytest.mark.parametrize("f", ["silu", "sigmoid", "softplus", "exp"])
def test_unary_derivatives(rng, f):
    x = param(rng.normal(size=7) * 3)
    ag.backward(ag.tsum(ag.map_unary(x, f)))
    # elementwise map, so an elementwise difference avoids summation roundoff
    h = 1e-6
    num = (ag.map_unary(x.data + h, f).data - ag.map_unary(x.data - h, f).data) / (2 * h)
    assert rel_error(x.grad, num) < 1e-7


def test_exp_saturates_instead_of_overflowing():
    y = ag.exp(np.array([1e6], dtype=np.float64))
    assert np.isfinite(y.data).all()
    assert y.data[0] > 1e300


def test_large_inputs_stay_finite():
    x = np.array([-1e4, 1e4])
    assert np.isfinite(ag.softplus(x).data).all()
    assert np.isfinite(ag.silu(x).data).all()
    assert np.array_equal(ag.sigmoid(x).data, [0.0, 1.0])


def test_nonfinite_is_an_error():
    with np.errstate(invalid="ignore"), pytest.raises(NonFiniteError):
        ag.mul(np.array([np.inf]), np.array([0.0]))


# -- backward -----------------------------------------------------------------

def test_square_grad():
    x = param(3.0)
    ag.backward(ag.square(x))
    assert x.grad == 6.0


@given(st.lists(st.integers(1, 4), min_size=1, max_size=3))
def test_sum_grad_is_ones(shape):
    x = param(np.random.default_rng(0).normal(size=shape))
    ag.backward(x.sum())
    assert np.array_equal(x.grad, np.ones(shape))


def test_backward_rejects_non_scalar():
    with pytest.raises(ValueError, match="scalar"):
        ag.backward(param([1.0, 2.0]) * 2.0)


def test_fan_out_accumulates(rng):
    x = param(rng.normal(size=5))
    ag.backward(ag.tsum(ag.silu(x) + ag.exp(x)))
    fused = x.grad.copy()
    x.grad = None
    ag.backward(ag.tsum(ag.silu(x)))
    g1 = x.grad.copy()
    x.grad = None
    ag.backward(ag.tsum(ag.exp(x)))
    np.testing.assert_allclose(fused, g1 + x.grad, rtol=1e-14)


def test_composite_graph_matches_finite_differences(rng):
    x = param(rng.normal(size=(3, 12)))
    w = param(rng.normal(size=(4, 3, 5)) * 0.5)
    b = param(rng.normal(size=4))
    m = param(rng.normal(size=(12, 6)))

    def graph(xa, wa, ba, ma):
        return ag.tsum(ag.matmul(ag.silu(ag.conv1d(xa, wa, ba)), ma))

    ag.backward(graph(x, w, b, m))
    f = lambda: float(graph(x.data, w.data, b.data, m.data).data)  # noqa: E731
    for t in (x, w, b, m):
        assert rel_error(t.grad, central_diff(f, t.data)) < 1e-4


OPS = ["silu", "sigmoid", "softplus", "mulself", "flip", "slice", "matmul"]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from(OPS), min_size=1, max_size=5), st.integers(0, 2**31 - 1))
def test_random_graphs_gradient_check(ops, seed):
    rng = np.random.default_rng(seed)
    x = param(rng.normal(size=(4, 4)))
    mats = [rng.normal(size=(4, 4)) * 0.5 for _ in ops]

    def build(xa):
        h = xa
        for op, mat in zip(ops, mats):
            if op == "mulself":
                h = h * h * 0.5
            elif op == "flip":
                h = ag.flip(h, 0)
            elif op == "slice":
                h = ag.concat([h[:, 2:], h[:, :2]], axis=1)
            elif op == "matmul":
                h = ag.matmul(h, mat)
            else:
                h = ag.map_unary(h, op)
        return ag.tsum(h * h)

    ag.backward(build(x))
    num = central_diff(lambda: float(build(x.data).data), x.data)
    assert rel_error(x.grad, num) < 1e-4


def test_broadcast_gradients_reduce(rng):
    a = param(rng.normal(size=(3, 1, 4)))
    b = param(rng.normal(size=(5, 1)))
    ag.backward(ag.tsum(a * b))
    assert a.grad.shape == a.shape and b.grad.shape == b.shape
    np.testing.assert_allclose(b.grad[:, 0], np.full(5, a.data.sum()), rtol=1e-12)


def test_float32_preserved_with_scalars():
    x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    y = ag.mean(x * 2.0 + 1.0)
    assert y.dtype == np.float32


def test_no_grad_records_nothing():
    x = param([1.0, 2.0])
    with ag.no_grad():
        y = ag.silu(x)
    assert not y.requires_grad and y._parents == ()


def test_determinism(rng):
    x = rng.normal(size=(2, 3, 20))
    w = rng.normal(size=(4, 3, 3))

    def run():
        xt, wt = param(x), param(w)
        ag.backward(ag.tsum(ag.silu(ag.conv1d(xt, wt))))
        return wt.grad.tobytes(), xt.grad.tobytes()

    assert run() == run()
