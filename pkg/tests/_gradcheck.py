"""Central finite-difference oracle for the autodiff tests."""
import numpy as np

from bikelio import diffkernel as dk

H = 1e-4


def rel_err(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-6))


def grad_check(fn, arrays, seed=0, h=H):
    """Compare backward() against central differences for ``sum(fn(*tensors) * w)``.

    Returns the worst relative error over the inputs.
    """
    rng = np.random.default_rng([seed, 99])
    tensors = [dk.Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    w = rng.normal(size=out.shape)

    def scalar(vals):
        ts = [dk.Tensor(v) for v in vals]
        return float(np.sum(fn(*ts).data * w))

    with dk.Tape() as tape:
        out = fn(*tensors)
        loss = (out * w).sum()
    dk.backward(tape, loss)
    worst = 0.0
    for i, a in enumerate(arrays):
        num = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[i][idx] += h
            minus[i][idx] -= h
            num[idx] = (scalar(plus) - scalar(minus)) / (2 * h)
        got = tensors[i].grad if tensors[i].grad is not None else np.zeros_like(a)
        worst = max(worst, rel_err(got, num))
    return worst
