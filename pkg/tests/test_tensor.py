import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from blindloss import tensor as T
from blindloss.tensor import ComputationRecord, ContractError, DomainError, Tensor


def naive_matmul(a, b):
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


def test_elementwise_examples():
    assert np.array_equal(T.add(Tensor([1, 2]), Tensor([3, 4])).data, [4, 6])
    assert np.array_equal(T.exp(Tensor([0, 0])).data, [1, 1])
    with pytest.raises(DomainError):
        T.div(Tensor([1.0]), Tensor([0.0]))
    with pytest.raises(DomainError):
        T.log(Tensor([0.0]))
    with pytest.raises(DomainError):
        T.sqrt(Tensor([-1.0]))
    with pytest.raises(ContractError):
        T.add(Tensor([1.0, 2.0]), Tensor([1.0]))


def test_elementwise_dispatch():
    a = Tensor([1.0, 4.0])
    assert np.allclose(T.elementwise("sqrt", a).data, [1, 2])
    assert np.allclose(T.elementwise("scale", a, 2.0).data, [2, 8])
    assert np.allclose(T.elementwise("relu", Tensor([-1.0, 2.0])).data, [0, 2])
    with pytest.raises(ContractError):
        T.elementwise("tanh", a)
    with pytest.raises(ContractError):
        T.elementwise("add", a)


def test_non_finite_values_rejected():
    with pytest.raises(DomainError):
        Tensor([np.nan])
    with pytest.raises(DomainError):
        T.exp(Tensor([1000.0]))


def test_matmul_examples():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(T.matmul(Tensor(np.eye(2)), Tensor(m)).data, m)
    assert np.array_equal(T.matmul(Tensor([[1.0, -1.0]]), Tensor([[1.0], [1.0]])).data, [[0.0]])
    with pytest.raises(ContractError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_matmul_matches_triple_loop(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(-1, 1, (m, k)), rng.uniform(-1, 1, (k, n))
    assert np.max(np.abs(T.matmul(Tensor(a), Tensor(b)).data - naive_matmul(a, b))) <= 1e-12


def test_reduce_examples():
    assert T.reduce("mean", Tensor([2.0, 4.0, 6.0])).item() == 4.0
    assert np.array_equal(T.reduce("sum", Tensor([[1.0, 2.0], [3.0, 4.0]]), 0).data, [4, 6])
    assert T.reduce("max", Tensor([-1.0, 0.0, 5.0])).item() == 5.0
    with pytest.raises(ContractError):
        T.reduce_sum(Tensor([1.0, 2.0]), ())


def test_max_tie_goes_to_lowest_index():
    x = Tensor([1.0, 3.0, 3.0], requires_grad=True)
    T.backward(T.reduce_max(x))
    assert np.array_equal(x.grad, [0.0, 1.0, 0.0])


def test_backward_examples():
    x = Tensor([3.0], requires_grad=True)
    T.backward(T.reduce_sum(x * x))
    assert np.array_equal(x.grad, [6.0])
    y = Tensor([2.0, 5.0], requires_grad=True)
    T.backward(T.reduce_sum(T.scale(y, 0.0)))
    assert np.array_equal(y.grad, [0.0, 0.0])
    with pytest.raises(ContractError):
        T.backward(y * y)


def test_backward_accumulates_until_cleared():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = T.reduce_sum(x * x)
    T.backward(loss)
    T.backward(loss)
    assert np.array_equal(x.grad, [4.0, 8.0])
    x.zero_grad()
    T.backward(loss)
    assert np.array_equal(x.grad, [2.0, 4.0])


def test_backward_is_deterministic():
    rng = np.random.default_rng(0)
    w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    x = Tensor(rng.normal(size=(5, 4)))
    loss = T.reduce_mean(T.exp(T.scale(T.matmul(x, w), 0.1)))
    T.backward(loss)
    first = w.grad.copy()
    w.zero_grad()
    T.backward(loss)
    assert np.array_equal(first, w.grad)


def test_computation_record_is_topological_and_unique():
    x = Tensor([1.0, 2.0], requires_grad=True)
    a = x * x
    b = T.exp(a)
    loss = T.reduce_sum(a + b)
    rec = ComputationRecord(loss)
    nodes = list(rec)
    assert len({id(n) for n in nodes}) == len(nodes)
    pos = {id(n): i for i, n in enumerate(nodes)}
    for n in nodes:
        for p in n._parents:
            if p.requires_grad:
                assert pos[id(p)] < pos[id(n)]
    assert nodes[-1] is loss


def test_grad_check_examples():
    x = np.random.default_rng(1).normal(size=(3, 2))
    assert T.grad_check(lambda t: T.reduce_sum(t * t), x) <= 1e-6
    with pytest.raises(DomainError):
        T.grad_check(lambda t: T.log(t), np.array([-1.0]))


small = arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)),
               elements=st.floats(-2, 2, allow_nan=False, width=64))


@given(small)
def test_smooth_ops_pass_grad_check(x):
    x = x + 0.37  # keep away from exact ties of max
    f = lambda t: T.reduce_sum(T.exp(T.scale(t, 0.5)) * T.shift(t, 3.0))  # noqa: E731
    assert T.grad_check(f, x) <= 1e-4
    g = lambda t: T.reduce_mean(T.div(T.shift(t, 5.0), T.shift(T.sqrt(t * t), 1.0)))  # noqa: E731
    assert T.grad_check(g, x) <= 1e-4


@given(st.integers(0, 2**31 - 1))
def test_structural_ops_pass_grad_check(seed):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(2, 6)), int(rng.integers(1, 5))
    x = rng.normal(size=(n, d))
    idx = rng.integers(0, n, size=7)
    flat = rng.integers(0, n * d, size=(3, 2))
    w = Tensor(rng.normal(size=(d, 3)))
    b = Tensor(rng.normal(size=3))

    def f(t):
        rows = T.take_rows(t, idx)
        lin = T.linear(rows, w, b)
        picked = T.take_flat(t, flat)
        nrm = T.l2_normalize(T.shift(t, 0.5))
        tr = T.swap_last(T.concat([t, T.scale(t, 2.0)], 1))
        return (T.reduce_sum(lin * lin) + T.reduce_sum(T.exp(picked)) + T.reduce_sum(T.scale(nrm, 1.7) * T.shift(nrm, 0.3))
                + T.reduce_sum(T.expand(T.reduce_mean(tr, 1, keepdims=True), tr.shape) * tr))

    assert T.grad_check(f, x) <= 1e-4


@given(st.integers(0, 2**31 - 1))
def test_block_gram_matches_loop_and_grad_check(seed):
    rng = np.random.default_rng(seed)
    s, b, m, d = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
    x = rng.normal(size=(s * b * m, d))
    left = rng.integers(0, s * b * m, size=(b, int(rng.integers(1, 3))))
    out = T.block_gram(Tensor(x), left, s).data
    a4 = x.reshape(s, b, m, d)
    for si in range(s):
        for bi in range(b):
            for i in range(left.shape[1]):
                for mi in range(m):
                    assert abs(out[si, bi, i, mi] - x[left[bi, i]] @ a4[si, bi, mi]) <= 1e-12
    wts = rng.normal(size=out.shape)
    assert T.grad_check(lambda t: T.reduce_sum(T.block_gram(t, left, s) * Tensor(wts)), x) <= 1e-4


@given(st.integers(0, 2**31 - 1), st.sampled_from([1, 2]), st.sampled_from([1, 3]))
def test_conv2d_matches_loop_and_grad_check(seed, stride, k):
    rng = np.random.default_rng(seed)
    b, h, w, ci, co = 1, 4, 4, int(rng.integers(1, 3)), int(rng.integers(1, 3))
    x = rng.normal(size=(b, h, w, ci))
    wt = rng.normal(size=(k, k, ci, co))
    bias = rng.normal(size=co)
    pad = k // 2
    out = T.conv2d(Tensor(x), Tensor(wt), stride, pad, Tensor(bias)).data
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho = (h + 2 * pad - k) // stride + 1
    ref = np.zeros((b, ho, ho, co))
    for i in range(ho):
        for j in range(ho):
            win = xp[0, i * stride:i * stride + k, j * stride:j * stride + k, :]
            for o in range(co):
                ref[0, i, j, o] = np.sum(win * wt[..., o]) + bias[o]
    assert np.max(np.abs(out - ref)) <= 1e-12
    probe = Tensor(rng.normal(size=ref.shape))

    def wrt_x(t):
        return T.reduce_sum(T.conv2d(t, Tensor(wt), stride, pad, Tensor(bias)) * probe)

    def wrt_w(t):
        y = T.conv2d(Tensor(x), t, stride, pad, Tensor(bias))
        return T.reduce_sum(y * y)

    assert T.grad_check(wrt_x, x) <= 1e-4
    assert T.grad_check(wrt_w, wt) <= 1e-4


def test_upsample2x_repeats_and_sums_back():
    x = np.arange(8.0).reshape(1, 2, 2, 2)
    out = T.upsample2x(Tensor(x)).data
    assert out.shape == (1, 4, 4, 2)
    assert np.array_equal(out[0, 1, 3], x[0, 0, 1])
    t = Tensor(x, requires_grad=True)
    T.backward(T.reduce_sum(T.upsample2x(t)))
    assert np.array_equal(t.grad, np.full(x.shape, 4.0))
