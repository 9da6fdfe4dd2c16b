import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from speechgram import autodiff as ad
from speechgram.gradsuite import TOLERANCE, run_suite


def test_add_example():
    g = ad.Graph()
    out = g.constant([1.0, 2.0]) + g.constant([3.0, 4.0])
    np.testing.assert_array_equal(out.value, [4.0, 6.0])


def test_matmul_identity(rng):
    a = rng.normal(size=(3, 5))
    g = ad.Graph()
    np.testing.assert_array_equal(ad.matmul(g.constant(np.eye(3)), g.constant(a)).value, a)


def test_relu_example():
    g = ad.Graph()
    np.testing.assert_array_equal(ad.relu(g.constant([-1.0, 0.0, 2.0])).value, [0.0, 0.0, 2.0])


def test_sum_of_squares_gradient():
    g = ad.Graph()
    x = g.variable([1.0, 2.0])
    grads = g.backward(ad.sum(ad.square(x)))
    np.testing.assert_array_equal(grads[x], [2.0, 4.0])


def test_relu_gradient_at_zero_is_zero():
    g = ad.Graph()
    x = g.variable([0.0, 1.0, -1.0])
    np.testing.assert_array_equal(g.backward(ad.sum(ad.relu(x)))[x], [0.0, 1.0, 0.0])


def test_maxpool_tie_routes_to_first_index():
    g = ad.Graph()
    x = g.variable(np.array([3.0, 3.0]).reshape(1, 2, 1))
    grad = g.backward(ad.sum(ad.maxpool2d(x, 1, 2)))[x]
    np.testing.assert_array_equal(grad.ravel(), [1.0, 0.0])


def test_maxpool_floors_odd_extents():
    g = ad.Graph()
    x = g.constant(np.arange(5 * 7 * 2, dtype=float).reshape(5, 7, 2))
    assert ad.maxpool2d(x, 2, 2).shape == (2, 3, 2)


def test_conv_same_padding_identity_kernel(rng):
    x = rng.normal(size=(4, 6, 2))
    w = np.zeros((3, 3, 2, 2))
    w[1, 1] = np.eye(2)
    g = ad.Graph()
    np.testing.assert_allclose(ad.conv2d(g.constant(x), g.constant(w)).value, x, atol=1e-15)


def test_conv_matches_direct_loops(rng):
    x = rng.normal(size=(4, 5, 2))
    w = rng.normal(size=(3, 5, 2, 3))
    pad = np.pad(x, ((1, 1), (2, 2), (0, 0)))
    expect = np.zeros((4, 5, 3))
    for t in range(4):
        for f in range(5):
            for o in range(3):
                expect[t, f, o] = np.sum(pad[t:t + 3, f:f + 5, :] * w[:, :, :, o])
    g = ad.Graph()
    np.testing.assert_allclose(ad.conv2d(g.constant(x), g.constant(w)).value, expect, atol=1e-12)


def test_shape_error_names_operator_and_shapes():
    g = ad.Graph()
    with pytest.raises(ad.ShapeError) as info:
        g.constant(np.ones(2)) + g.constant(np.ones(3))
    msg = str(info.value)
    assert "add" in msg and "(2,)" in msg and "(3,)" in msg


def test_conv_rejects_even_kernel():
    g = ad.Graph()
    with pytest.raises(ad.ShapeError):
        ad.conv2d(g.constant(np.ones((4, 4, 1))), g.constant(np.ones((2, 3, 1, 1))))


def test_non_scalar_loss_rejected():
    g = ad.Graph()
    x = g.variable(np.ones(3))
    with pytest.raises(ad.ShapeError):
        g.backward(x * 2.0)


def test_unreachable_variable_gets_zero_gradient():
    g = ad.Graph()
    x = g.variable(np.ones(3))
    y = g.variable(np.ones((2, 2)))
    grads = g.backward(ad.sum(x))
    np.testing.assert_array_equal(grads[y], np.zeros((2, 2)))


def test_unsupported_operator():
    with pytest.raises(KeyError):
        ad.Graph().record("fft", [])


def test_reevaluation_is_bit_identical(rng):
    g = ad.Graph()
    x = g.variable(rng.normal(size=(4, 3)))
    out = ad.sum(ad.exp(x) * ad.relu(x) + ad.square(x))
    before = out.value.copy()
    g.evaluate()
    assert out.value.tobytes() == before.tobytes()


def test_evaluate_with_new_values_matches_fresh_graph(rng):
    a, b = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))

    def build(g, v):
        x = g.variable(v)
        return x, ad.sum(ad.log(ad.add_scalar(ad.square(x), 1.0)) @ x)

    g = ad.Graph()
    x, out = build(g, a)
    g.evaluate({x: b})
    g2 = ad.Graph()
    x2, out2 = build(g2, b)
    assert out.value == out2.value
    np.testing.assert_array_equal(g.backward(out)[x], g2.backward(out2)[x2])


def test_single_precision_mode():
    with ad.precision("single"):
        g = ad.Graph()
        assert g.variable([1.0, 2.0]).value.dtype == np.float32
    assert ad.get_dtype() == np.float64


@pytest.mark.parametrize("result", run_suite(), ids=lambda r: r.name)
def test_gradient_suite(result):
    assert result.error < TOLERANCE


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                  elements=st.floats(-3, 3)),
       st.floats(-2, 2), st.floats(-2, 2))
def test_backward_is_linear(x0, alpha, beta):
    g = ad.Graph()
    x = g.variable(x0)
    l1 = ad.sum(ad.square(x) * x)
    l2 = ad.mean(ad.exp(ad.mul_scalar(x, 0.5)))
    combo = ad.add(ad.mul_scalar(l1, alpha), ad.mul_scalar(l2, beta))
    gc = g.backward(combo, [x])[x]
    g1 = g.backward(l1, [x])[x]
    g2 = g.backward(l2, [x])[x]
    np.testing.assert_allclose(gc, alpha * g1 + beta * g2, rtol=0, atol=1e-10)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 3), st.integers(0, 2 ** 31 - 1))
def test_random_conv_pool_chain_gradcheck(t, f, c, seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(t, f, c))
    w = r.normal(size=(3, 3, c, 2))

    def build(xn, wn):
        h = ad.relu(ad.conv2d(xn, wn))
        return ad.sum(ad.square(h))

    assert ad.gradcheck(build, [x, w]) < TOLERANCE
