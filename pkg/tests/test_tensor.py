import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from coltran import tensor as T
from coltran.errors import DimensionError, VocabularyError
from coltran.tensor import Tensor

from checks import fd_gradcheck
from oracles import o_layer_norm, o_normalize, o_softmax


def f64(arr, requires_grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=requires_grad)


def test_matmul_hand_value_and_grads():
    a = f64([[1.0, 2.0]])
    b = f64([[3.0], [4.0]])
    out = T.matmul(a, b)
    npt.assert_array_equal(out.data, [[11.0]])
    T.backward(T.sum_all(out))
    npt.assert_array_equal(a.grad, [[3.0, 4.0]])
    npt.assert_array_equal(b.grad, [[1.0], [2.0]])


def test_matmul_shape_errors():
    with pytest.raises(DimensionError):
        T.matmul(f64([[1.0, 2.0]]), f64([[1.0, 2.0]]))
    with pytest.raises(DimensionError):
        T.matmul(f64([1.0, 2.0]), f64([[1.0], [2.0]]))
    # batch axes that cannot broadcast: 2 vs 3
    with pytest.raises(DimensionError):
        T.matmul(f64(np.ones((2, 1, 1))), f64(np.ones((3, 1, 1))))


def test_matmul_batch_broadcast_grads(rng):
    a = Tensor(rng.normal(size=(3, 2, 4)).astype(np.float64), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 5)).astype(np.float64), requires_grad=True)
    T.backward(T.sum_all(T.matmul(a, b)))
    # d/db sums over the batch axis
    expected = sum(a.data[i].T @ np.ones((2, 5)) for i in range(3))
    npt.assert_allclose(b.grad, expected, rtol=1e-12)


def test_add_broadcast_unbroadcasts_grad():
    a = f64(np.ones((2, 3)))
    b = f64(np.ones(3))
    T.backward(T.sum_all(T.add(a, b)))
    npt.assert_array_equal(a.grad, np.ones((2, 3)))
    npt.assert_array_equal(b.grad, [2.0, 2.0, 2.0])


def test_mul_grads_cross():
    a = f64([2.0, 3.0])
    b = f64([5.0, 7.0])
    T.backward(T.sum_all(T.mul(a, b)))
    npt.assert_array_equal(a.grad, [5.0, 7.0])
    npt.assert_array_equal(b.grad, [2.0, 3.0])


def test_quadratic_sum_grad():
    w = f64([1.0, 2.0])
    loss = T.sum_all(T.mul(w, w))
    assert loss.item() == 5.0
    T.backward(loss)
    npt.assert_array_equal(w.grad, [2.0, 4.0])


def test_scale_and_scalar_sugar():
    w = f64([1.0, -2.0])
    out = 3.0 * w + 1.0
    npt.assert_array_equal(out.data, [4.0, -5.0])
    T.backward(T.sum_all(out - w))
    npt.assert_array_equal(w.grad, [2.0, 2.0])


def test_softmax_thirds():
    x = f64(np.log([[1.0, 2.0, 3.0]]))
    npt.assert_allclose(T.softmax(x).data, [[1 / 6, 2 / 6, 3 / 6]], rtol=1e-12)


def test_softmax_nan_propagates():
    x = Tensor(np.array([0.0, np.nan, 1.0]))
    assert np.isnan(T.softmax(x).data).all()


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    out = T.softmax(Tensor(x), axis=-1).data
    npt.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)
    assert (out >= 0).all()


@settings(max_examples=30, deadline=None)
@given(
    arrays(np.float64, (2, 4), elements=st.floats(-30, 30)),
    st.floats(-100, 100),
)
def test_softmax_shift_invariance(x, c):
    a = T.softmax(Tensor(x)).data
    b = T.softmax(Tensor(x + c)).data
    npt.assert_allclose(a, b, atol=1e-12)


def test_log_softmax_matches_log_of_softmax(rng):
    x = rng.normal(size=(4, 7))
    npt.assert_allclose(
        T.log_softmax(Tensor(x)).data, np.log(o_softmax(x)), rtol=1e-12, atol=1e-12
    )


def test_normalize_moments(rng):
    x = Tensor(rng.normal(2.0, 3.0, size=(5, 16)))
    out = T.normalize(x).data
    npt.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-10)
    npt.assert_allclose(out.var(axis=-1), 1.0, atol=1e-4)  # eps shrinks variance a little


def test_layer_norm_beta_multiplies_gamma_shifts(rng):
    x = rng.normal(size=(2, 3, 4))
    beta = rng.normal(size=4)
    gamma = rng.normal(size=4)
    out = T.layer_norm(Tensor(x), Tensor(beta), Tensor(gamma)).data
    npt.assert_allclose(out, o_layer_norm(x, beta, gamma), rtol=1e-10, atol=1e-12)
    # doubling beta doubles the normalized part, gamma moves it
    base = T.layer_norm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4))).data
    npt.assert_allclose(base, o_normalize(x), rtol=1e-10, atol=1e-12)


def test_layer_norm_shape_error():
    with pytest.raises(DimensionError):
        T.layer_norm(f64(np.ones((2, 4))), f64(np.ones(3)), f64(np.zeros(3)))


def test_relu_values_and_kink_subgradient():
    x = f64([-1.0, 0.0, 2.0])
    out = T.relu(x)
    npt.assert_array_equal(out.data, [0.0, 0.0, 2.0])
    T.backward(T.sum_all(out))
    # subgradient at exactly zero is taken as 0
    npt.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_mean_grad_uniform():
    x = f64(np.arange(6.0).reshape(2, 3))
    T.backward(T.mean(x))
    npt.assert_allclose(x.grad, np.full((2, 3), 1 / 6), rtol=1e-12)


def test_embedding_lookup_and_scatter_grad():
    table = f64(np.arange(8.0).reshape(4, 2))
    idx = np.array([[0, 0], [3, 1]])
    out = T.embedding_lookup(table, idx)
    npt.assert_array_equal(out.data[0, 0], [0.0, 1.0])
    npt.assert_array_equal(out.data[1, 0], [6.0, 7.0])
    T.backward(T.sum_all(out))
    # row 0 was used twice, rows 1 and 3 once, row 2 never
    npt.assert_array_equal(table.grad, [[2.0, 2.0], [1.0, 1.0], [0.0, 0.0], [1.0, 1.0]])


def test_embedding_lookup_errors():
    table = f64(np.zeros((4, 2)))
    with pytest.raises(VocabularyError):
        T.embedding_lookup(table, np.array([4]))
    with pytest.raises(VocabularyError):
        T.embedding_lookup(table, np.array([-1]))
    with pytest.raises(DimensionError):
        T.embedding_lookup(table, np.array([0.5]))


def test_gather_nll_uniform_is_log_vocab():
    logits = f64(np.zeros((3, 512)))
    nll = T.gather_nll(logits, np.array([0, 100, 511]))
    npt.assert_allclose(nll.item(), np.log(512.0), rtol=1e-12)


def test_gather_nll_hand_value():
    # probs [0.25, 0.75]; picking class 1 costs ln(4/3)
    logits = f64([[0.0, np.log(3.0)]])
    nll = T.gather_nll(logits, np.array([1]))
    npt.assert_allclose(nll.item(), np.log(4.0 / 3.0), rtol=1e-12)


def test_gather_nll_grad_is_softmax_minus_onehot(rng):
    x = rng.normal(size=(2, 3, 5))
    t = rng.integers(0, 5, size=(2, 3))
    logits = Tensor(x, requires_grad=True)
    T.backward(T.gather_nll(logits, t))
    onehot = np.eye(5)[t]
    npt.assert_allclose(logits.grad, (o_softmax(x) - onehot) / t.size, rtol=1e-10, atol=1e-12)


def test_gather_nll_errors():
    logits = f64(np.zeros((2, 4)))
    with pytest.raises(DimensionError):
        T.gather_nll(logits, np.array([0, 1, 2]))
    with pytest.raises(VocabularyError):
        T.gather_nll(logits, np.array([0, 4]))
    with pytest.raises(DimensionError):
        T.gather_nll(logits, np.array([0.0, 1.0]))


def test_shift_one_values_and_grad():
    x = f64(np.arange(1.0, 7.0).reshape(1, 2, 3))
    down = T.shift_one(x, axis=1)
    npt.assert_array_equal(down.data, [[[0, 0, 0], [1, 2, 3]]])
    right = T.shift_one(x, axis=2)
    npt.assert_array_equal(right.data, [[[0, 1, 2], [0, 4, 5]]])
    T.backward(T.sum_all(down))
    npt.assert_array_equal(x.grad, [[[1, 1, 1], [0, 0, 0]]])
    with pytest.raises(DimensionError):
        T.shift_one(x, axis=5)


def test_slice_last_grad_scatters():
    x = f64(np.arange(8.0).reshape(2, 4))
    part = T.slice_last(x, 1, 3)
    npt.assert_array_equal(part.data, [[1, 2], [5, 6]])
    T.backward(T.sum_all(part))
    npt.assert_array_equal(x.grad, [[0, 1, 1, 0], [0, 1, 1, 0]])


def test_reshape_and_swap_axes_grads(rng):
    x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    out = T.swap_axes(T.reshape(x, (6, 4)), 0, 1)
    assert out.shape == (4, 6)
    T.backward(T.sum_all(out))
    npt.assert_array_equal(x.grad, np.ones((2, 3, 4)))


def test_backward_requires_scalar():
    x = f64([1.0, 2.0])
    with pytest.raises(DimensionError):
        T.backward(x)


def test_backward_accumulates_across_calls():
    x = f64([1.0, 3.0])
    for _ in range(2):
        T.backward(T.sum_all(T.mul(x, x)))
    npt.assert_array_equal(x.grad, [4.0, 12.0])


def test_shared_node_grads_sum():
    x = f64([2.0])
    y = T.add(T.mul(x, x), x)  # x^2 + x, d/dx = 2x + 1
    T.backward(T.sum_all(y))
    npt.assert_array_equal(x.grad, [5.0])


def test_no_grad_disables_recording():
    x = f64([1.0, 2.0])
    with T.no_grad():
        y = T.mul(x, x)
    assert not y.requires_grad
    loss = T.sum_all(y)
    T.backward(loss)  # silently does nothing
    assert x.grad is None


def test_detach_cuts_graph():
    x = f64([3.0])
    y = T.mul(x.detach(), x)
    T.backward(T.sum_all(y))
    npt.assert_array_equal(x.grad, [3.0])


def test_item_contract():
    assert f64([[7.0]]).item() == 7.0
    with pytest.raises(DimensionError):
        f64([1.0, 2.0]).item()


def test_default_dtype_is_float32_for_non_float_input():
    assert Tensor([1, 2, 3]).dtype == np.float32
    assert Tensor(np.arange(3)).dtype == np.float32
    assert Tensor(np.zeros(2, dtype=np.float64)).dtype == np.float64


# ---------------------------------------------------------------------------
# finite-difference checks per primitive


def _fd_case_matmul(rng):
    a = Tensor(rng.normal(size=(2, 3, 4)).astype(np.float64), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 5)).astype(np.float64), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 3, 5)).astype(np.float64))
    return [a, b], lambda: T.mean(T.mul(T.matmul(a, b), w))


def _fd_case_softmax(rng):
    x = Tensor(rng.normal(size=(3, 6)).astype(np.float64), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 6)).astype(np.float64))
    return [x], lambda: T.mean(T.mul(T.softmax(x, axis=-1), w))


def _fd_case_log_softmax(rng):
    x = Tensor(rng.normal(size=(2, 5)).astype(np.float64), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 5)).astype(np.float64))
    return [x], lambda: T.mean(T.mul(T.log_softmax(x, axis=-1), w))


def _fd_case_normalize(rng):
    x = Tensor(rng.normal(size=(4, 8)).astype(np.float64), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 8)).astype(np.float64))
    return [x], lambda: T.mean(T.mul(T.normalize(x), w))


def _fd_case_layer_norm(rng):
    x = Tensor(rng.normal(size=(3, 6)).astype(np.float64), requires_grad=True)
    beta = Tensor(rng.normal(size=6).astype(np.float64), requires_grad=True)
    gamma = Tensor(rng.normal(size=6).astype(np.float64), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 6)).astype(np.float64))
    return [x, beta, gamma], lambda: T.mean(T.mul(T.layer_norm(x, beta, gamma), w))


def _fd_case_relu(rng):
    # keep values away from the kink so central differences are clean
    x = Tensor((rng.normal(size=(4, 4)) + np.sign(rng.normal(size=(4, 4))) * 0.5).astype(np.float64),
               requires_grad=True)
    w = Tensor(rng.normal(size=(4, 4)).astype(np.float64))
    return [x], lambda: T.mean(T.mul(T.relu(x), w))


def _fd_case_embedding(rng):
    table = Tensor(rng.normal(size=(6, 4)).astype(np.float64), requires_grad=True)
    idx = rng.integers(0, 6, size=(3, 5))
    w = Tensor(rng.normal(size=(3, 5, 4)).astype(np.float64))
    return [table], lambda: T.mean(T.mul(T.embedding_lookup(table, idx), w))


def _fd_case_gather_nll(rng):
    logits = Tensor(rng.normal(size=(2, 3, 7)).astype(np.float64), requires_grad=True)
    t = rng.integers(0, 7, size=(2, 3))
    return [logits], lambda: T.gather_nll(logits, t)


def _fd_case_shift_slice(rng):
    x = Tensor(rng.normal(size=(2, 3, 4, 5)).astype(np.float64), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 3, 4, 2)).astype(np.float64))
    return [x], lambda: T.mean(T.mul(T.slice_last(T.shift_one(x, axis=1), 1, 3), w))


_FD_CASES = {
    "matmul": _fd_case_matmul,
    "softmax": _fd_case_softmax,
    "log_softmax": _fd_case_log_softmax,
    "normalize": _fd_case_normalize,
    "layer_norm": _fd_case_layer_norm,
    "relu": _fd_case_relu,
    "embedding": _fd_case_embedding,
    "gather_nll": _fd_case_gather_nll,
    "shift_slice": _fd_case_shift_slice,
}


@pytest.mark.parametrize("name", sorted(_FD_CASES))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fd_gradients(name, seed):
    rng = np.random.default_rng(seed)
    tensors, build = _FD_CASES[name](rng)
    fd_gradcheck(build, tensors, rng)


# ---------------------------------------------------------------------------
# parameter walking


def test_named_parameters_walks_nested_structures(rng):
    from dataclasses import dataclass, field

    @dataclass
    class Leafy:
        w: Tensor
        tag: str = "not-a-tensor"

    @dataclass
    class Tree:
        first: Leafy
        stack: list = field(default_factory=list)

    tree = Tree(first=Leafy(T.zeros_param((2,))), stack=[Leafy(T.ones_param((3,))), T.zeros_param((1,))])
    names = [p.name for p in T.named_parameters(tree)]
    assert names == ["first.w", "stack[0].w", "stack[1]"]


def test_zero_grads_resets(rng):
    w = T.randn_param(rng, (3,), dtype=np.float64)
    T.backward(T.sum_all(T.mul(w, w)))
    assert w.grad is not None
    T.zero_grads([w])
    assert w.grad is None
