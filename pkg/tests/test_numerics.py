import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfgcrn import numerics as nx
from mfgcrn.errors import ContractError, DimensionError


def triple_loop(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def test_matmul_examples():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(nx.matmul(np.eye(2), m).value, m)
    assert np.array_equal(nx.matmul([[1.0, 0.0], [0.0, 0.0]], [[5.0], [7.0]]).value, [[5.0], [0.0]])


def test_matmul_matches_triple_loop(rng):
    for _ in range(50):
        a = rng.uniform(-10, 10, (3, 4))
        b = rng.uniform(-10, 10, (4, 2))
        assert np.abs(nx.matmul(a, b).value - triple_loop(a, b)).max() <= 1e-12


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        nx.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_row_softmax_examples():
    assert np.allclose(nx.row_softmax([[0.0, 0.0]]).value, [[0.5, 0.5]], atol=0)
    assert np.allclose(nx.row_softmax([[1000.0, 1000.0]]).value, [[0.5, 0.5]], atol=0)
    np.testing.assert_allclose(nx.row_softmax([[math.log(1), math.log(3)]]).value, [[0.25, 0.75]],
                               atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.floats(-50, 50), st.integers(0, 2 ** 31))
def test_row_softmax_properties(m, n, shift, seed):
    e = np.random.default_rng(seed).uniform(-20, 20, (m, n))
    p = nx.row_softmax(e).value
    assert np.abs(p.sum(-1) - 1).max() <= 1e-12
    assert np.abs(nx.row_softmax(e + shift).value - p).max() <= 1e-12


def test_elementwise_examples():
    assert nx.elementwise("sigmoid", np.array(0.0)).value == 0.5
    assert nx.elementwise("relu", np.array(-3.0)).value == 0.0
    assert nx.elementwise("relu", np.array(3.0)).value == 3.0
    assert nx.elementwise("concat_last_axis", np.ones((4, 2)), np.ones((4, 3))).shape == (4, 5)
    with pytest.raises(DimensionError):
        nx.elementwise("concat_last_axis", np.ones((4, 2)), np.ones((3, 3)))
    with pytest.raises(DimensionError):
        nx.elementwise("hadamard", np.ones((4, 2)), np.ones((3, 3)))


def test_relu_subgradient_zero_at_kink():
    store = nx.ParameterStore()
    store.add("w", np.array([-1.0, 0.0, 2.0]))
    nx.reverse_accumulate(nx.total(nx.relu(store.tensor("w"))), store)
    assert np.array_equal(store.grad("w"), [0.0, 0.0, 1.0])


def test_reverse_accumulate_examples():
    store = nx.ParameterStore()
    store.add("w", np.array([[1.0, 2.0], [3.0, 4.0]]))
    store.add("unused", np.ones(3))
    nx.reverse_accumulate(nx.total(store.tensor("w")), store)
    assert np.array_equal(store.grad("w"), np.ones((2, 2)))
    w = store.tensor("w")
    nx.reverse_accumulate(nx.total(w * w), store)
    assert np.array_equal(store.grad("w"), [[2.0, 4.0], [6.0, 8.0]])
    assert np.array_equal(store.grad("unused"), np.zeros(3))


def test_reverse_accumulate_rejects_non_scalar():
    store = nx.ParameterStore()
    store.add("w", np.ones(2))
    with pytest.raises(ContractError):
        nx.reverse_accumulate(store.tensor("w") * 2.0, store)


def test_finite_difference_examples():
    store = nx.ParameterStore()
    store.add("t", np.array(3.0))
    g = nx.finite_diff_gradient(lambda s: float(s.value("t")) ** 2, store, h=1e-5)
    assert abs(g["t"] - 6.0) <= 1e-8
    store.set_value("t", 0.0)
    g = nx.finite_diff_gradient(lambda s: math.sin(float(s.value("t"))), store, h=1e-5)
    assert abs(g["t"] - 1.0) <= 1e-9


def _composite(store):
    a, b = store.tensor("a"), store.tensor("b")
    h = nx.tanh(nx.matmul(a, b))
    s = nx.sigmoid(nx.concat([h, nx.exp(nx.scale(h, 0.3))]))
    sent = nx.relu(nx.sum_axis(nx.matmul(a, b), -1, keepdims=True)) + 0.5
    att = nx.sentinel_normalize(nx.matmul(a, nx.transpose(a)), sent)
    soft = nx.row_softmax(nx.matmul(att, s))
    stacked = nx.stack([soft, soft * soft])
    return nx.mean(nx.absolute(nx.reshape(stacked, (-1,)) - 0.1)) + nx.total(nx.take(stacked, 1, axis=0))


def test_composite_ops_match_finite_differences(rng):
    store = nx.ParameterStore()
    store.add("a", rng.uniform(-1, 1, (3, 4)))
    store.add("b", rng.uniform(-1, 1, (4, 3)))
    analytic = {k: v.copy() for k, v in nx.reverse_accumulate(_composite(store), store).items()}
    numeric = nx.finite_diff_gradient(lambda s: float(_composite(s).value), store)
    for k in analytic:
        assert nx.max_relative_error(analytic[k], numeric[k]) <= 1e-6


def test_broadcast_gradients_reduce_to_shape(rng):
    store = nx.ParameterStore()
    store.add("x", rng.normal(size=(2, 3, 4)))
    store.add("b", rng.normal(size=4))
    nx.reverse_accumulate(nx.total(store.tensor("x") * store.tensor("b")), store)
    assert store.grad("b").shape == (4,)
    np.testing.assert_allclose(store.grad("b"), store.value("x").sum(axis=(0, 1)))


def test_store_order_is_lexicographic_and_unique():
    store = nx.ParameterStore()
    for p in ("b.x", "a.z", "a.b"):
        store.add(p, np.zeros(1))
    assert store.paths() == ["a.b", "a.z", "b.x"]
    with pytest.raises(ContractError):
        store.add("a.b", np.zeros(1))


def test_max_relative_error_floor():
    assert nx.max_relative_error(np.array([1e-12]), np.array([0.0])) == pytest.approx(1e-4)
    assert nx.max_relative_error(np.array([2.0]), np.array([1.0])) == 0.5
