import numpy as np
import pytest
from _gradcheck import grad_check

from bikelio import diffkernel as dk
from bikelio.diffkernel import ShapeError, Tensor

TOL = 1e-4


def _r(rng, *shape, pos=False):
    x = rng.normal(size=shape)
    return np.abs(x) + 0.5 if pos else x


# name -> (function, input factory)
PRIMITIVES = {
    "add": (lambda a, b: a + b, lambda r: [_r(r, 3, 4), _r(r, 4)]),
    "sub": (lambda a, b: a - b, lambda r: [_r(r, 3, 4), _r(r, 3, 4)]),
    "mul": (lambda a, b: a * b, lambda r: [_r(r, 2, 3), _r(r, 2, 3)]),
    "div": (lambda a, b: a / b, lambda r: [_r(r, 2, 3), _r(r, 2, 3, pos=True)]),
    "exp": (dk.exp, lambda r: [_r(r, 5)]),
    "log": (dk.log, lambda r: [_r(r, 5, pos=True)]),
    "square": (dk.square, lambda r: [_r(r, 5)]),
    "gelu": (dk.gelu, lambda r: [_r(r, 7) * 2]),
    "sum": (lambda a: dk.tsum(a, axis=1), lambda r: [_r(r, 3, 4)]),
    "mean": (lambda a: dk.tmean(a, axis=0, keepdims=True), lambda r: [_r(r, 3, 4)]),
    "reshape": (lambda a: dk.reshape(a, (4, 3)) * np.arange(12.0).reshape(4, 3), lambda r: [_r(r, 3, 4)]),
    "transpose": (dk.transpose, lambda r: [_r(r, 2, 3, 4)]),
    "concat": (lambda a, b: dk.concat([a, b], axis=-1), lambda r: [_r(r, 2, 3), _r(r, 2, 2)]),
    "getitem": (lambda a: a[np.array([0, 2, 2])], lambda r: [_r(r, 4, 3)]),
    "scatter_rows": (lambda a: dk.scatter_rows(a, np.array([3, 0]), 5), lambda r: [_r(r, 2, 3)]),
    "linear": (dk.linear, lambda r: [_r(r, 2, 4), _r(r, 4, 3), _r(r, 3)]),
    "conv1d_k1": (dk.conv1d_k1, lambda r: [_r(r, 2, 3, 5), _r(r, 4, 3), _r(r, 4)]),
    "affine": (dk.affine_scale_shift, lambda r: [_r(r, 2, 4), _r(r, 4), _r(r, 4)]),
    "global_avg_pool": (dk.global_avg_pool, lambda r: [_r(r, 3, 6)]),
    "softmax": (dk.softmax, lambda r: [_r(r, 3, 5) * 2]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_100_seeds(name):
    fn, make = PRIMITIVES[name]
    worst = max(grad_check(fn, make(np.random.default_rng(s)), seed=s) for s in range(100))
    assert worst < TOL, f"{name}: worst relative error {worst:.2e}"


def test_composite_linear_gelu_pool():
    def fn(x, W, b):
        return dk.global_avg_pool(dk.transpose(dk.gelu(dk.linear(x, W, b))))
    for s in range(20):
        r = np.random.default_rng(s)
        assert grad_check(fn, [_r(r, 2, 6, 4), _r(r, 4, 3), _r(r, 3)], seed=s) < 1e-5


def test_linear_hand_cases():
    assert np.array_equal(dk.linear(Tensor([1.0, 2.0]), Tensor(np.eye(2)), Tensor(np.zeros(2))).data, [1, 2])
    out = dk.linear(Tensor([1.0, 0.0]), Tensor([[2.0, 3.0], [4.0, 5.0]]), Tensor([1.0, 1.0]))
    assert np.array_equal(out.data, [3, 4])
    # gradient of sum(linear(x)) wrt W is the outer product x 1^T
    x = np.array([[0.5, -1.0, 2.0]])
    W = Tensor(np.zeros((3, 2)), requires_grad=True)
    with dk.Tape() as tape:
        loss = dk.linear(Tensor(x), W, Tensor(np.zeros(2))).sum()
    dk.backward(tape, loss)
    assert np.allclose(W.grad, np.outer(x[0], np.ones(2)), atol=1e-6)


def test_conv_hand_cases():
    x = np.random.default_rng(0).normal(size=(3, 7))
    assert np.array_equal(dk.conv1d_k1(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3))).data, x)
    W, b = np.random.default_rng(1).normal(size=(4, 3)), np.random.default_rng(2).normal(size=4)
    via_linear = dk.transpose(dk.linear(dk.transpose(Tensor(x)), Tensor(W.T), Tensor(b)))
    assert np.allclose(dk.conv1d_k1(Tensor(x), Tensor(W), Tensor(b)).data, via_linear.data, atol=1e-14)


def test_affine_hand_cases():
    x = Tensor([2.0, 3.0])
    assert np.array_equal(dk.affine_scale_shift(x, Tensor([1.0, 1.0]), Tensor([0.0, 0.0])).data, [2, 3])
    assert np.array_equal(dk.affine_scale_shift(x, Tensor([10.0, 100.0]), Tensor([1.0, 1.0])).data, [21, 301])
    alpha = Tensor([1.0, 1.0], requires_grad=True)
    with dk.Tape() as tape:
        loss = dk.affine_scale_shift(x, alpha, Tensor([0.0, 0.0])).sum()
    dk.backward(tape, loss)
    assert np.allclose(alpha.grad, x.data)


def test_gelu_hand_cases():
    assert dk.gelu(Tensor(0.0)).data == 0.0
    assert dk.gelu(Tensor(20.0)).data == pytest.approx(20.0, abs=1e-12)
    assert dk.gelu(Tensor(-20.0)).data == pytest.approx(0.0, abs=1e-12)


def test_pool_hand_cases():
    assert np.array_equal(dk.global_avg_pool(Tensor(np.full((2, 5), 3.0))).data, [3, 3])
    assert np.array_equal(dk.global_avg_pool(Tensor([[1.0, 3.0], [2.0, 6.0]])).data, [2, 4])
    x = Tensor(np.ones((2, 4)), requires_grad=True)
    with dk.Tape() as tape:
        loss = dk.global_avg_pool(x).sum()
    dk.backward(tape, loss)
    assert np.allclose(x.grad, 0.25)


def test_softmax_hand_cases():
    assert np.allclose(dk.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)
    assert np.allclose(dk.softmax(Tensor(np.log([1.0, 2.0, 3.0]))).data, [1 / 6, 2 / 6, 3 / 6], atol=1e-15)
    x = np.array([0.3, -2.0, 5.0])
    assert np.allclose(dk.softmax(Tensor(x + 100.0)).data, dk.softmax(Tensor(x)).data, atol=1e-15)


def test_backward_hand_cases():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with dk.Tape() as tape:
        loss = x.sum()
    dk.backward(tape, loss)
    assert np.array_equal(x.grad, [1, 1, 1])
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with dk.Tape() as tape:
        loss = (x * x).sum()
    dk.backward(tape, loss)
    assert np.array_equal(x.grad, [2, 4, 6])


def test_leaf_used_twice_accumulates():
    rng = np.random.default_rng(0)
    a = rng.normal(size=4)
    x = Tensor(a, requires_grad=True)
    with dk.Tape() as tape:
        loss = (dk.exp(x) * x).sum()
    dk.backward(tape, loss)
    # duplicated-leaf graph
    x1, x2 = Tensor(a, requires_grad=True), Tensor(a, requires_grad=True)
    with dk.Tape() as tape:
        loss = (dk.exp(x1) * x2).sum()
    dk.backward(tape, loss)
    assert np.allclose(x.grad, x1.grad + x2.grad, atol=1e-15)


def test_backward_errors():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with dk.Tape() as tape:
        y = x * 2.0
    with pytest.raises(ShapeError):
        dk.backward(tape, y)
    with dk.Tape() as other:
        pass
    with dk.Tape():
        loss = (x * 3.0).sum()
    with pytest.raises(ValueError):
        dk.backward(other, loss)


def test_shape_errors():
    with pytest.raises(ShapeError):
        dk.linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))), Tensor(np.zeros(2)))
    with pytest.raises(ShapeError):
        dk.conv1d_k1(Tensor(np.ones((3, 5))), Tensor(np.ones((2, 4))), Tensor(np.zeros(2)))


def test_tape_records_in_execution_order():
    x = Tensor([1.0], requires_grad=True)
    with dk.Tape() as tape:
        a = x * 2.0
        b = dk.exp(a)
        c = b + a
    pos = {id(n): i for i, n in enumerate(tape.nodes)}
    for n in tape.nodes:
        for p in n._parents:
            if id(p) in pos:
                assert pos[id(p)] < pos[id(n)]
    assert tape.nodes[-1] is c


def test_determinism():
    def run():
        rng = np.random.default_rng(5)
        W = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        x = Tensor(rng.normal(size=(6, 4)))
        with dk.Tape() as tape:
            loss = dk.gelu(dk.linear(x, W, Tensor(np.zeros(3)))).sum()
        dk.backward(tape, loss)
        return loss.data.tobytes(), W.grad.tobytes()
    assert run() == run()


def test_adam_minimizes_quadratic():
    x = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = dk.Adam({"x": x}, lr=0.1)
    for _ in range(500):
        with dk.Tape() as tape:
            loss = dk.square(x).sum()
        opt.zero_grad()
        dk.backward(tape, loss)
        opt.step()
    assert np.all(np.abs(x.data) < 1e-2)


def test_uniform_init_bounds():
    w = dk.uniform_init(np.random.default_rng(0), (1000,), fan_in=16)
    assert np.all(np.abs(w) <= 0.25) and w.std() > 0.1
