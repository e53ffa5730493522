import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ontotemporal import autodiff as ad
from ontotemporal.autodiff import Tape, Tensor
from ontotemporal.gradcheck import check_gradients

from conftest import T


def test_matmul_identity():
    out = ad.matmul(T([[1, 0], [0, 1]]), T([[5, 6], [7, 8]]))
    assert out.data.tolist() == [[5, 6], [7, 8]]


def test_matmul_scalar_case():
    assert ad.matmul(T([[2]]), T([[3]])).data.tolist() == [[6]]


def test_matmul_shape_error():
    with pytest.raises(ad.ShapeError):
        ad.matmul(T(np.ones((2, 3))), T(np.ones((2, 3))))


def test_matmul_grad_fd(rng):
    a = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 2)))
    assert check_gradients(lambda: ad.total(ad.mul(ad.matmul(a, b), w)), [a, b]) < 1e-4


def test_matmul_grad_formula(rng):
    a = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    G = rng.normal(size=(4, 2))
    with Tape() as tape:
        loss = ad.total(ad.mul(ad.matmul(a, b), Tensor(G)))
    tape.backward(loss)
    np.testing.assert_allclose(tape.grad(a), G @ b.data.T)
    np.testing.assert_allclose(tape.grad(b), a.data.T @ G)


def test_sigmoid_zero():
    assert ad.sigmoid(T(0.0)).item() == 0.5


def test_leaky_slope_value():
    assert ad.LEAKY_SLOPE == pytest.approx((1 / 8 + 1 / 3) / 2)
    assert ad.leaky_relu(T(-1.0), slope=0.229).item() == pytest.approx(-0.229)


def test_clamp_saturates_with_zero_grad():
    x = T([1.5], grad=True)
    with Tape() as tape:
        y = ad.clamp(x, -1.0, 1.0)
        loss = ad.total(y)
    tape.backward(loss)
    assert y.data[0] == 1.0
    assert tape.grad(x)[0] == 0.0


def test_log_domain_error():
    with pytest.raises(ad.DomainError):
        ad.log(T([1.0, 0.0]))


def test_elementwise_dispatch():
    assert ad.elementwise("add", T(1.0), T(2.0)).item() == 3.0
    assert ad.elementwise("leaky_relu", T(-2.0), slope=0.5).item() == -1.0
    assert ad.elementwise("clamp", T(3.0), lo=0.0, hi=1.0).item() == 1.0
    with pytest.raises(ValueError):
        ad.elementwise("cube", T(1.0))


def test_non_finite_forward_is_an_error():
    with pytest.raises(ad.NumericalError):
        ad.exp(T([1000.0]))


def test_finite_values_with_overflowing_sum_are_accepted():
    out = ad.add(T([1e308, 1e308]), T([0.0, 0.0]))
    assert np.all(np.isfinite(out.data))
    with pytest.raises(ad.NumericalError):
        ad.add(T([np.nan, 1.0]), T([0.0, 1.0]))


def test_backward_releases_recorded_nodes():
    a = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = ad.total(ad.mul(a, a))
    tape.backward(loss)
    assert tape.nodes == []
    assert np.allclose(tape.grad(a), 2.0)


def test_corr_hand_example():
    out = ad.circular_correlation(T(1, 0), T(0, 1))
    assert out.data.tolist() == [0.0, 1.0]


def brute_corr(a, b):
    d = len(a)
    return np.array([sum(a[i] * b[(i + k) % d] for i in range(d)) for k in range(d)])


@given(arrays(np.float64, st.integers(1, 9), elements=st.floats(-5, 5)), st.data())
@settings(max_examples=60, deadline=None)
def test_corr_matches_definition(a, data):
    b = data.draw(arrays(np.float64, len(a), elements=st.floats(-5, 5)))
    np.testing.assert_allclose(ad.circular_correlation(Tensor(a), Tensor(b)).data, brute_corr(a, b), atol=1e-9)


@pytest.mark.parametrize("d", range(1, 17))
def test_corr_delta_identity(d, rng):
    delta = np.zeros(d)
    delta[0] = 1.0
    b = rng.normal(size=d)
    assert np.array_equal(ad.circular_correlation(Tensor(delta), Tensor(b)).data, b)
    # in the other slot the impulse reverses the index order: out[k] = b[-k mod d]
    rev = b[(-np.arange(d)) % d]
    assert np.array_equal(ad.circular_correlation(Tensor(b), Tensor(delta)).data, rev)


def test_corr_length_mismatch():
    with pytest.raises(ad.ShapeError):
        ad.circular_correlation(T(1, 2), T(1, 2, 3))


def test_corr_grad_fd(rng):
    a = Tensor(rng.normal(size=5), requires_grad=True)
    b = Tensor(rng.normal(size=5), requires_grad=True)
    w = Tensor(rng.normal(size=5))
    assert check_gradients(lambda: ad.total(ad.mul(ad.circular_correlation(a, b), w)), [a, b]) < 1e-4


@pytest.mark.parametrize(
    "a,b,want",
    [((3, 4), (3, 4), 1.0), ((1, 0), (0, 1), 0.0), ((1, 1), (1, 0), 1 / math.sqrt(2))],
)
def test_cosine_examples(a, b, want):
    assert ad.cosine_sim(T(*a), T(*b)).item() == pytest.approx(want, abs=1e-9)


def test_cosine_zero_norm():
    with pytest.raises(ad.DegenerateInputError):
        ad.cosine_sim(T(0, 0), T(1, 0))


def test_backward_sum_gives_ones():
    x = T([1.0, 2.0, 3.0], grad=True)
    with Tape() as tape:
        loss = ad.total(x)
    grads = tape.backward(loss)
    assert grads[id(x)].tolist() == [1.0, 1.0, 1.0]


def test_backward_sigmoid_at_zero(rng):
    x = rng.normal(size=4)
    w = T(np.zeros(4), grad=True)
    with Tape() as tape:
        loss = ad.sigmoid(ad.total(ad.mul(w, Tensor(x))))
    tape.backward(loss)
    np.testing.assert_allclose(tape.grad(w), 0.25 * x)


def test_three_layer_chain_fd(rng):
    x = Tensor(rng.normal(size=(2, 3)))
    W1 = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    W2 = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
    W3 = Tensor(rng.normal(size=(4, 1)), requires_grad=True)

    def fn():
        h = ad.tanh(ad.matmul(x, W1))
        h = ad.sigmoid(ad.matmul(h, W2))
        return ad.total(ad.matmul(h, W3))
    assert check_gradients(fn, [W1, W2, W3]) < 1e-4


def test_fanout_gradients_accumulate():
    x = T([2.0], grad=True)
    with Tape() as tape:
        loss = ad.total(ad.add(ad.mul(x, x), ad.mul(x, T(3.0))))
    tape.backward(loss)
    assert tape.grad(x)[0] == pytest.approx(2 * 2.0 + 3.0)


def test_backward_twice_rejected():
    x = T([1.0], grad=True)
    with Tape() as tape:
        loss = ad.total(x)
    tape.backward(loss)
    with pytest.raises(ad.TapeError):
        tape.backward(loss)


def test_backward_needs_scalar():
    x = T([1.0, 2.0], grad=True)
    with Tape() as tape:
        y = ad.mul(x, x)
    with pytest.raises(ad.ShapeError):
        tape.backward(y)


def test_unused_leaf_has_zero_grad():
    x, y = T([1.0], grad=True), T([5.0, 6.0], grad=True)
    with Tape() as tape:
        loss = ad.total(x)
    tape.backward(loss)
    assert tape.grad(y).tolist() == [0.0, 0.0]


def test_no_recording_outside_tape():
    x = T([1.0], grad=True)
    y = ad.mul(x, x)
    assert y.node_id is None


def test_forward_deterministic(rng):
    a = rng.normal(size=(5, 5))
    run = lambda: ad.logsumexp(ad.matmul(Tensor(a), Tensor(a)), axis=1).data  # noqa: E731
    assert np.array_equal(run(), run())


@pytest.mark.parametrize("op", ["row_norm", "cosine_matrix", "index_add", "gather_rows", "concat", "reshape"])
def test_structural_ops_fd(op, rng):
    a = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    w = rng.normal(size=(8, 3))

    def fn():
        if op == "row_norm":
            out = ad.row_norm(a)
        elif op == "cosine_matrix":
            out = ad.cosine_matrix(a, b)
        elif op == "index_add":
            out = ad.index_add(a, np.array([0, 2, 0, 1]), 3)
        elif op == "gather_rows":
            out = ad.gather_rows(a, np.array([3, 3, 1]))
        elif op == "concat":
            out = ad.concat([a, b], axis=0)
        else:
            out = ad.reshape(a, (3, 4))
        return ad.total(ad.mul(out, Tensor(w.reshape(-1)[: out.data.size].reshape(out.shape))))
    assert check_gradients(fn, [a, b]) < 1e-4


def test_conv1d_same_matches_direct(rng):
    x = rng.normal(size=(2, 3, 7))
    k = rng.normal(size=(4, 3, 3))
    out = ad.conv1d_same(Tensor(x), Tensor(k)).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1)))
    want = np.zeros((2, 4, 7))
    for b in range(2):
        for c in range(4):
            for i in range(7):
                want[b, c, i] = np.sum(k[c] * xp[b, :, i : i + 3])
    np.testing.assert_allclose(out, want, atol=1e-12)
