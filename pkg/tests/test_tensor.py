import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gcgnet import tensor as tg
from gcgnet.gradcheck import numeric_grad, rel_error
from gcgnet.tensor import GraphError, ShapeError, Tensor


def brute_matmul(a, b):
    m, k = len(a), len(a[0])
    n = len(b[0])
    return [[sum(a[i][t] * b[t][j] for t in range(k)) for j in range(n)] for i in range(m)]


def test_matmul_examples():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(tg.matmul(a, Tensor(np.eye(2))).data, a.data)
    assert np.array_equal(tg.matmul(a, Tensor(np.zeros((2, 2)))).data, np.zeros((2, 2)))
    b = [[5.0, 6.0], [7.0, 8.0]]
    expected = brute_matmul(a.data.tolist(), b)
    assert expected == [[19, 22], [43, 50]]
    assert tg.matmul(a, Tensor(b)).data.tolist() == expected


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        tg.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def _gelu_oracle(x):
    return x * 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def test_gelu_examples():
    assert tg.gelu(Tensor(0.0)).item() == 0.0
    assert tg.gelu(Tensor(1.0)).item() == pytest.approx(_gelu_oracle(1.0), abs=1e-12)
    assert tg.gelu(Tensor(1.0)).item() == pytest.approx(0.841345, abs=1e-6)
    assert abs(tg.gelu(Tensor(-10.0)).item()) < 1e-8


def test_backward_sum_is_ones():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    grads = x.sum().backward()
    assert np.array_equal(x.grad, [1.0, 1.0, 1.0])
    assert np.array_equal(grads[x.node_id], x.grad)


def test_backward_square_matches_finite_difference():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    (x * x).sum().backward()
    numeric = numeric_grad(lambda: float((x.data * x.data).sum()), x)
    assert np.all(rel_error(x.grad, numeric) < 1e-4)
    assert np.allclose(x.grad, [2.0, 4.0, 6.0])


def test_l1_backward_zero_residual_is_zero():
    x = Tensor([0.5, -1.0, 2.0], requires_grad=True)
    tg.l1_loss(x, x.detach()).backward()
    assert np.array_equal(x.grad, np.zeros(3))


def test_l1_examples():
    a = Tensor([[1.0, 0.0], [0.0, 1.0]])
    assert tg.l1_loss(a, a).item() == 0.0
    brute = sum(abs(u - v) for u, v in zip([1, 0, 0, 1], [0, 0, 0, 0])) / 4
    assert tg.l1_loss(a, Tensor(np.zeros((2, 2)))).item() == brute == 0.5
    assert tg.l1_loss(Tensor([2.0]), Tensor([-2.0])).item() == 4.0
    with pytest.raises(ShapeError):
        tg.l1_loss(Tensor([1.0]), Tensor([1.0, 2.0]))


def test_backward_errors():
    with pytest.raises(GraphError, match="scalar"):
        Tensor([1.0, 2.0], requires_grad=True).__mul__(2.0).backward()
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    with pytest.raises(GraphError):
        loss.backward()


def test_round_trips():
    x = Tensor(np.arange(12.0).reshape(3, 4))
    assert np.array_equal(x.reshape(4, 3).reshape(3, 4).data, x.data)
    for axis in (0, 1):
        cut = 2 if axis == 0 else 1
        parts = [tg.slice_axis(x, 0, cut, axis), tg.slice_axis(x, cut, x.shape[axis], axis)]
        assert np.array_equal(tg.concat(parts, axis).data, x.data)
    v = Tensor([0.5, 2.0])
    assert np.allclose(tg.exp(tg.log(v)).data, [0.5, 2.0], atol=1e-12, rtol=0)


def test_shape_errors():
    x = Tensor(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        x.reshape(4, 2)
    with pytest.raises(ShapeError):
        tg.concat([x, Tensor(np.ones((3, 3)))], axis=1)
    with pytest.raises(ShapeError):
        tg.concat([x, x], axis=2)
    with pytest.raises(ShapeError):
        tg.slice_axis(x, 1, 5, axis=1)


def test_no_gradient_leaks():
    w = Tensor(np.ones((2, 2)), requires_grad=True)
    const = Tensor(np.full((2, 2), 3.0))
    loss = tg.gelu(tg.matmul(const, w) + const).sum()
    loss.backward()
    assert const.grad is None
    assert w.grad is not None


def test_forward_determinism():
    def run():
        rng = np.random.default_rng(5)
        a = Tensor(rng.standard_normal((3, 4)))
        b = Tensor(rng.standard_normal((4, 2)))
        return tg.gelu(tg.matmul(a, b)).data.tobytes()

    assert run() == run()


def test_node_ids_unique_and_ordered():
    a = Tensor([1.0], requires_grad=True)
    b = a * 2.0
    c = b + a
    assert a.node_id < b.node_id < c.node_id


# -- finite-difference property over every differentiable primitive -----------

def _unary(op):
    return lambda xs: op(xs[0])


PRIMITIVES = {
    "add": (2, lambda xs: xs[0] + xs[1]),
    "sub": (2, lambda xs: xs[0] - xs[1]),
    "mul": (2, lambda xs: xs[0] * xs[1]),
    "div": (2, lambda xs: xs[0] / (tg.exp(xs[1]) + 0.5)),
    "exp": (1, _unary(tg.exp)),
    "log": (1, lambda xs: tg.log(tg.exp(xs[0]) + 1.0)),
    "gelu": (1, _unary(tg.gelu)),
    "abs": (1, lambda xs: tg.abs_(xs[0] + 0.123)),
    "mean0": (1, lambda xs: xs[0].mean(axis=0)),
    "sum1": (1, lambda xs: xs[0].sum(axis=-1, keepdims=True)),
    "transpose": (1, lambda xs: xs[0].T),
    "reshape": (1, lambda xs: xs[0].reshape(-1)),
    "concat": (2, lambda xs: tg.concat([xs[0], xs[1]], axis=0)),
    "slice": (1, lambda xs: tg.slice_axis(xs[0], 0, 1, axis=-1)),
    "getitem": (1, lambda xs: xs[0][..., ::2]),
    "bias": (1, lambda xs: xs[0] + Tensor(np.linspace(-1, 1, xs[0].shape[-1]))),
    "matmul": (2, lambda xs: tg.matmul(xs[0], xs[1].T)),
    "l1": (2, lambda xs: tg.l1_loss(xs[0], xs[1])),
    "pad": (1, lambda xs: tg.pad_last(xs[0], 2)),
}


@given(st.sampled_from(sorted(PRIMITIVES)), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_primitive_gradients_match_finite_differences(name, m, n, seed):
    arity, fn = PRIMITIVES[name]
    rng = np.random.default_rng(seed)
    xs = [Tensor(rng.standard_normal((m, n)), requires_grad=True) for _ in range(arity)]
    weights = rng.standard_normal(fn([x.detach() for x in xs]).shape)

    def scalar():
        return tg.mul(fn(xs), weights).sum()

    scalar().backward()
    for x in xs:
        numeric = numeric_grad(lambda: float(scalar().data), x)
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad
        assert np.all(rel_error(analytic, numeric) < 1e-4), name


@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
def test_shape_algebra_closure(b, m, k, n):
    x = Tensor(np.zeros((b, m, k)))
    y = Tensor(np.zeros((k, n)))
    assert tg.matmul(x, y).shape == (b, m, n)
    assert x.sum(axis=-1).shape == (b, m)
    assert x.mean(axis=(0, 1), keepdims=True).shape == (1, 1, k)
    assert tg.swapaxes(x, -1, -2).shape == (b, k, m)
    assert tg.concat([x, x], axis=1).shape == (b, 2 * m, k)
    assert tg.pad_last(x, 3).shape == (b, m, k + 3)
    assert (x + Tensor(np.zeros(k))).shape == (b, m, k)
