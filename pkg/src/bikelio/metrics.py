"""Trajectory and network error metrics."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geom import rot_z, so3_exp, so3_log, yaw_of


class TooShortError(ValueError):
    """Trajectory does not span the requested RTE interval."""


@dataclass
class AlignedPair:
    t: np.ndarray       # [n]
    p: np.ndarray       # [n, 3] ground truth
    p_hat: np.ndarray   # [n, 3] estimate
    R: np.ndarray       # [n, 3, 3]
    R_hat: np.ndarray   # [n, 3, 3]

    def __post_init__(self):
        n = len(self.t)
        for name in ("p", "p_hat", "R", "R_hat"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"AlignedPair.{name} has {len(getattr(self, name))} epochs, expected {n}")


def _interp_rot(Ra: np.ndarray, Rb: np.ndarray, u: float) -> np.ndarray:
    if u <= 0.0:
        return Ra
    if u >= 1.0:
        return Rb
    return Ra @ so3_exp(u * so3_log(Ra.T @ Rb))


def align(truth_t, truth_p, truth_R, est_t, est_p, est_R) -> AlignedPair:
    """Resample the estimate onto the truth epochs (linear in position, geodesic in attitude).

    Truth epochs outside the estimate's time span are dropped.
    """
    truth_t, est_t = np.asarray(truth_t, float), np.asarray(est_t, float)
    keep = (truth_t >= est_t[0] - 1e-9) & (truth_t <= est_t[-1] + 1e-9)
    t = truth_t[keep]
    if len(est_t) == len(t) and np.allclose(est_t, t, rtol=0, atol=1e-9):
        return AlignedPair(t, np.asarray(truth_p)[keep], np.asarray(est_p, float),
                           np.asarray(truth_R)[keep], np.asarray(est_R, float))
    p_hat = np.column_stack([np.interp(t, est_t, est_p[:, i]) for i in range(3)])
    j = np.clip(np.searchsorted(est_t, t, side="right") - 1, 0, len(est_t) - 1)
    R_hat = np.empty((len(t), 3, 3))
    for k, (tk, jk) in enumerate(zip(t, j)):
        if jk + 1 >= len(est_t):
            R_hat[k] = est_R[jk]
        else:
            u = (tk - est_t[jk]) / (est_t[jk + 1] - est_t[jk])
            R_hat[k] = _interp_rot(est_R[jk], est_R[jk + 1], u)
    return AlignedPair(t, np.asarray(truth_p)[keep], p_hat, np.asarray(truth_R)[keep], R_hat)


def ate(pair: AlignedPair) -> float:
    """RMS position error in metres, no alignment transform."""
    if len(pair.t) == 0:
        raise ValueError("ate: empty trajectory pair")
    d = pair.p - pair.p_hat
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def yaw_track(Rs: np.ndarray) -> np.ndarray:
    """Per-epoch heading; a vertical body x axis reuses the previous heading."""
    out = np.empty(len(Rs))
    prev = 0.0
    for k, R in enumerate(Rs):
        prev = yaw_of(R, fallback=prev)
        out[k] = prev
    return out


def rte(pair: AlignedPair, delta: float = 60.0) -> float:
    """RMS over epochs of the difference in ``delta``-second displacements, each
    expressed in its own trajectory's heading frame at the later epoch."""
    t = pair.t
    if len(t) == 0 or t[-1] - t[0] < delta - 1e-9:
        span = 0.0 if len(t) == 0 else t[-1] - t[0]
        raise TooShortError(f"trajectory spans {span:.3f} s, shorter than delta={delta} s")
    later = np.flatnonzero(t - t[0] >= delta - 1e-9)
    earlier = np.searchsorted(t, t[later] - delta - 1e-9)
    earlier = np.where(np.abs(t[np.minimum(earlier + 1, len(t) - 1)] - (t[later] - delta))
                       < np.abs(t[earlier] - (t[later] - delta)), earlier + 1, earlier)
    yaw, yaw_hat = yaw_track(pair.R), yaw_track(pair.R_hat)
    err = np.empty((len(later), 3))
    for i, (k, j) in enumerate(zip(later, earlier)):
        d = rot_z(yaw[k]).T @ (pair.p[k] - pair.p[j])
        d_hat = rot_z(yaw_hat[k]).T @ (pair.p_hat[k] - pair.p_hat[j])
        err[i] = d - d_hat
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))


def inference_error(v, v_hat) -> float:
    """``sqrt(sum ||v - v_hat||^2) / n``; equals RMSE / sqrt(n)."""
    v, v_hat = np.asarray(v, float), np.asarray(v_hat, float)
    if v.shape != v_hat.shape or v.ndim != 2 or v.shape[1] != 3:
        raise ValueError(f"inference_error: shapes {v.shape} and {v_hat.shape} must both be [n, 3]")
    n = v.shape[0]
    if n == 0:
        raise ValueError("inference_error: no samples")
    return float(np.sqrt(np.sum((v - v_hat) ** 2)) / n)


def metrics_report(pair: AlignedPair, delta: float = 60.0, inference_error_mps: float | None = None,
                   config: dict | None = None) -> dict:
    try:
        rte_m, rte_status = rte(pair, delta), "ok"
    except TooShortError:
        rte_m, rte_status = None, "too_short"
    return {
        "ate_m": ate(pair),
        "rte_m": rte_m,
        "rte_status": rte_status,
        "rte_delta_s": delta,
        "inference_error_mps": inference_error_mps,
        "epochs": int(len(pair.t)),
        "config": config or {},
    }


def write_report(path: Path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
