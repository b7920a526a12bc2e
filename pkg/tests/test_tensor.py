import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

import moodseq.tensor as T
from moodseq.gradcheck import check_op
from moodseq.tensor import DimensionError, Tensor

from helpers import OPS

finite = st.floats(-50, 50, allow_nan=False, width=64)


def test_matmul_identity_and_small():
    a = Tensor([[1.0, 0.0], [0.0, 1.0]])
    b = Tensor([[3.0, 4.0], [5.0, 6.0]])
    np.testing.assert_array_equal((a @ b).data, [[3, 4], [5, 6]])
    np.testing.assert_array_equal((Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])).data, [[11]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 2)))


def test_matmul_gradient_matches_central_differences(rng):
    # 3x4 . 4x2, step 1e-6 central differences in 64-bit mode
    err = check_op(lambda a, b: T.matmul(a, b), [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))])
    assert err < 1e-4


def test_matmul_backward_rule(rng):
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    (a @ b).sum().backward()
    g = np.ones((3, 2))
    np.testing.assert_allclose(a.grad, g @ b.data.T, rtol=1e-6)
    np.testing.assert_allclose(b.grad, a.data.T @ g, rtol=1e-6)


def test_elementwise_trivial_values():
    assert T.sigmoid(Tensor(0.0)).item() == 0.5
    assert T.tanh(Tensor(0.0)).item() == 0.0
    x = Tensor(-2.5, requires_grad=True)
    y = T.relu(x)
    assert y.item() == 0.0
    y.backward()
    assert x.grad == 0.0


def test_broadcast_trailing_only():
    a = Tensor(np.ones((2, 3, 4)))
    assert (a + Tensor(np.ones(4))).shape == (2, 3, 4)
    assert (a * Tensor(np.ones((3, 4)))).shape == (2, 3, 4)
    with pytest.raises(DimensionError):
        a + Tensor(np.ones((2, 1, 4)))
    with pytest.raises(DimensionError):
        a + Tensor(np.ones(3))


def test_softmax_trivial_cases():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=1e-6)
    s = T.softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(s))
    np.testing.assert_allclose(s, [1.0, 0.0], atol=1e-12)


def test_softmax_gradient(rng):
    assert check_op(lambda x: T.softmax(x, axis=-1), [rng.normal(size=5)]) < 1e-4


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 7)), elements=finite))
def test_softmax_sums_to_one(x):
    with T.precision("float64"):
        s = T.softmax(Tensor(x), axis=-1).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all((s >= 0) & (s <= 1))


def test_backward_identity_and_square():
    x = Tensor([3.0], requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, [1.0])
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_backward_requires_scalar_root():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_shared_subexpression_sums_paths():
    x = Tensor([1.5, -2.0], requires_grad=True)
    (x + x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])
    x = Tensor([1.5, -2.0], requires_grad=True)
    y = T.tanh(x)
    (y * y + y).sum().backward()
    t = np.tanh(x.data)
    np.testing.assert_allclose(x.grad, (2 * t + 1) * (1 - t * t), rtol=1e-6)


def test_tape_freed_after_backward():
    x = Tensor([1.0], requires_grad=True)
    y = T.tanh(x * 2.0)
    z = y.sum()
    z.backward()
    assert z._parents == () and y._parents == ()


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_default_dtype_and_precision_mode():
    assert Tensor([1.0]).dtype == np.float32
    with T.precision("float64"):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


@pytest.mark.parametrize("name", sorted(OPS))
@pytest.mark.parametrize("seed", range(10))
def test_op_gradients(name, seed):
    fn, make = OPS[name]
    assert check_op(fn, make(np.random.default_rng(seed)), seed=seed) < 1e-4


def test_float32_gradient_tolerance(rng):
    # 32-bit path: same check, looser bound
    x = Tensor(rng.normal(size=(3, 4)).astype(np.float32), requires_grad=True)
    T.tanh(x).sum().backward()
    np.testing.assert_allclose(x.grad, 1 - np.tanh(x.data) ** 2, rtol=1e-2)


def test_forward_is_bitwise_deterministic(rng):
    a = rng.normal(size=(8, 16)).astype(np.float32)
    b = rng.normal(size=(16, 5)).astype(np.float32)
    r1 = T.softmax(T.tanh(Tensor(a) @ Tensor(b))).data
    r2 = T.softmax(T.tanh(Tensor(a) @ Tensor(b))).data
    assert r1.tobytes() == r2.tobytes()


@given(arrays(np.float64, st.integers(1, 20), elements=finite))
def test_forward_finite_on_finite_input(x):
    with T.precision("float64"):
        t = Tensor(x)
        for out in (T.sigmoid(t), T.tanh(t), T.log_softmax(t), T.softmax(t)):
            assert np.all(np.isfinite(out.data))
