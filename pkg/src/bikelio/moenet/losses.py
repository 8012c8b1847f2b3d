"""Training losses: MSE, Gaussian NLL with diagonal covariance, load-balancing auxiliary."""
from __future__ import annotations

import numpy as np

from .. import diffkernel as dk
from ..diffkernel import ShapeError, Tensor, as_tensor
from .routing import GateDecision


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def loss_mse(v, v_hat) -> Tensor:
    """Batch mean of squared Euclidean error norms."""
    v, v_hat = as_tensor(v), as_tensor(v_hat)
    _same_shape(v, v_hat, "loss_mse")
    return dk.square(v - v_hat).sum(axis=-1).mean()


def loss_nll(v, v_hat, logvar) -> Tensor:
    """Gaussian NLL, ``0.5 log det S + 0.5 r^T S^-1 r`` averaged over the batch.

    The covariance enters through its log-diagonal so positivity holds by
    construction; use :func:`loss_nll_sigma` when holding variances directly.
    """
    v, v_hat, logvar = as_tensor(v), as_tensor(v_hat), as_tensor(logvar)
    _same_shape(v, v_hat, "loss_nll")
    _same_shape(v, logvar, "loss_nll")
    r2 = dk.square(v - v_hat)
    per = 0.5 * logvar + 0.5 * r2 * dk.exp(-1.0 * logvar)
    return per.sum(axis=-1).mean()


def loss_nll_sigma(v, v_hat, sigma_diag) -> Tensor:
    sigma_diag = as_tensor(sigma_diag)
    if np.any(sigma_diag.data <= 0):
        raise ValueError("loss_nll: variances must be strictly positive")
    return loss_nll(v, v_hat, dk.log(sigma_diag))


def balance_terms(importance: np.ndarray, load: np.ndarray) -> tuple[float, float]:
    """Plain-number importance and load losses (no gradient)."""
    importance = np.asarray(importance, dtype=np.float64)
    load = np.asarray(load, dtype=np.float64)
    N = importance.size
    li = float(np.sum((importance / importance.sum() - 1.0 / N) ** 2))
    ll = float(np.sum((load / load.sum() - 1.0 / N) ** 2)) if load.sum() > 0 else 0.0
    return li, ll


def loss_aux(decision: GateDecision) -> Tensor:
    """Importance loss plus load loss.

    Importance is summed softmax probability per expert and carries the
    gradient; load is an assignment count, so it enters as a constant.
    """
    N = decision.N
    imp = decision.probs.sum(axis=0)
    l_imp = dk.square(imp / imp.sum() - 1.0 / N).sum()
    _, l_load = balance_terms(decision.importance, decision.load)
    return l_imp + l_load
