"""Error-state EKF fusing IMU mechanization with body-frame velocity measurements.

Conventions
-----------
* ``R`` maps body vectors to the navigation frame.
* Navigation frame is local-level with z pointing down; gravity is
  ``[0, 0, +9.81]`` m/s^2. A level, stationary IMU therefore reads
  ``f = [0, 0, -9.81]``.
* Attitude error is global (left): ``R_true = exp(phi) @ R_est``.
* Error-state order: ``phi, dv, dp, dbg, dba`` (15 entries).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .geom import maybe_orthonormalize, rot_x, rot_y, rot_z, skew, so3_exp

GRAVITY = np.array([0.0, 0.0, 9.81])
G_NORM = 9.81
# chi-square 0.999 quantile, 3 dof
CHI2_GATE_3DOF = 16.27

PHI, DV, DP, DBG, DBA = (slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15))


class FilterError(RuntimeError):
    pass


class NotStationaryError(FilterError):
    pass


@dataclass(frozen=True)
class NoiseParams:
    """Continuous-time noise densities and initial 1-sigma uncertainties."""

    gyro_noise: float = 0.01        # rad/s/sqrt(Hz)
    accel_noise: float = 0.1        # m/s^2/sqrt(Hz)
    gyro_bias_rw: float = 1e-5      # rad/s^2/sqrt(Hz)
    accel_bias_rw: float = 1e-4     # m/s^3/sqrt(Hz)
    init_att_sigma: float = 0.05    # rad
    init_vel_sigma: float = 0.1     # m/s
    init_pos_sigma: float = 1e-3    # m
    init_bg_sigma: float = 2e-3     # rad/s
    init_ba_sigma: float = 0.05     # m/s^2

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"NoiseParams.{k} must be strictly positive, got {v}")

    def Q(self, dt: float) -> np.ndarray:
        d = np.repeat([self.gyro_noise, self.accel_noise, self.gyro_bias_rw, self.accel_bias_rw], 3)
        return np.diag(d * d * dt)

    def P0(self) -> np.ndarray:
        d = np.repeat([self.init_att_sigma, self.init_vel_sigma, self.init_pos_sigma,
                       self.init_bg_sigma, self.init_ba_sigma], 3)
        return np.diag(d * d)


@dataclass(frozen=True)
class ImuSample:
    t: float
    gyro: np.ndarray   # rad/s, body
    accel: np.ndarray  # m/s^2 specific force, body


@dataclass(frozen=True)
class NavState:
    R: np.ndarray
    v: np.ndarray
    p: np.ndarray
    bg: np.ndarray
    ba: np.ndarray
    t: float = 0.0

    def oplus(self, dx: np.ndarray) -> "NavState":
        """Inject a 15-vector error estimate."""
        return replace(self, R=so3_exp(dx[PHI]) @ self.R, v=self.v + dx[DV], p=self.p + dx[DP],
                       bg=self.bg + dx[DBG], ba=self.ba + dx[DBA])


def error_between(truth: NavState, est: NavState) -> np.ndarray:
    """15-vector error of ``truth`` relative to ``est`` (inverse of :meth:`NavState.oplus`)."""
    from .geom import so3_log
    return np.concatenate([so3_log(truth.R @ est.R.T), truth.v - est.v, truth.p - est.p,
                           truth.bg - est.bg, truth.ba - est.ba])


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def level_attitude(f_b: np.ndarray, yaw: float = 0.0) -> np.ndarray:
    """Roll and pitch from a static specific-force reading."""
    fx, fy, fz = f_b
    roll = np.arctan2(-fy, -fz)
    pitch = np.arctan2(fx, np.hypot(fy, fz))
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def init(samples: ImuSample | Sequence[ImuSample], priors: NoiseParams,
         yaw: float = 0.0, tol: float = 0.2) -> tuple[NavState, np.ndarray]:
    """Static alignment from one sample or the mean of several.

    Raises :class:`NotStationaryError` when the mean specific force departs
    from ``|g|`` by more than ``tol`` (fractional).
    """
    if isinstance(samples, ImuSample):
        samples = [samples]
    samples = list(samples)
    f = np.mean([s.accel for s in samples], axis=0)
    if abs(np.linalg.norm(f) - G_NORM) > tol * G_NORM:
        raise NotStationaryError(
            f"not stationary: |f| = {np.linalg.norm(f):.3f} m/s^2, expected {G_NORM}")
    state = NavState(R=level_attitude(f, yaw), v=np.zeros(3), p=np.zeros(3),
                     bg=np.zeros(3), ba=np.zeros(3), t=float(samples[-1].t))
    return state, priors.P0()


def transition(state: NavState, sample: ImuSample, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """First-order error-state transition ``A`` (15x15) and noise input ``B`` (15x12)."""
    R = state.R
    a_n = R @ (sample.accel - state.ba)
    F = np.zeros((15, 15))
    F[PHI, DBG] = -R
    F[DV, PHI] = -skew(a_n)
    F[DV, DBA] = -R
    F[DP, DV] = np.eye(3)
    A = np.eye(15) + F * dt
    B = np.zeros((15, 12))
    B[PHI, 0:3] = -R
    B[DV, 3:6] = -R
    B[DBG, 6:9] = np.eye(3)
    B[DBA, 9:12] = np.eye(3)
    return A, B


def mechanize(state: NavState, sample: ImuSample, dt: float) -> NavState:
    w = sample.gyro - state.bg
    a_n = state.R @ (sample.accel - state.ba) + GRAVITY
    R = maybe_orthonormalize(state.R @ so3_exp(w * dt))
    v = state.v + a_n * dt
    p = state.p + 0.5 * (state.v + v) * dt
    return replace(state, R=R, v=v, p=p, t=state.t + dt)


def propagate(state: NavState, P: np.ndarray, sample: ImuSample, dt: float,
              noise: NoiseParams) -> tuple[NavState, np.ndarray]:
    """Advance nominal state and covariance by ``dt`` using ``sample`` (held constant)."""
    if not (0.0 < dt <= 0.1):
        raise FilterError(f"dt out of range (0, 0.1]: {dt}")
    if sample.t < state.t - 1e-9:
        raise FilterError(f"non-increasing timestamp: sample t={sample.t} < state t={state.t}")
    A, B = transition(state, sample, dt)
    P = symmetrize(A @ P @ A.T + B @ noise.Q(dt) @ B.T)
    return mechanize(state, sample, dt), P


@dataclass
class UpdateResult:
    state: NavState
    P: np.ndarray
    accepted: bool
    mahalanobis2: float
    innovation: np.ndarray = field(default_factory=lambda: np.zeros(3))


def velocity_jacobian(state: NavState) -> np.ndarray:
    """d(R^T v)/d(error) under left attitude perturbation: 3x15."""
    H = np.zeros((3, 15))
    H[:, PHI] = state.R.T @ skew(state.v)
    H[:, DV] = state.R.T
    return H


def update_velocity(state: NavState, P: np.ndarray, v_b: np.ndarray, sigma_diag: np.ndarray,
                    gate: float | None = CHI2_GATE_3DOF) -> UpdateResult:
    """Body-frame velocity update with Joseph-form covariance.

    With ``gate`` set, measurements whose squared Mahalanobis innovation
    exceeds it are rejected and the inputs are returned untouched.
    """
    sigma_diag = np.asarray(sigma_diag, dtype=np.float64)
    if np.any(~np.isfinite(sigma_diag)) or np.any(sigma_diag <= 0):
        raise FilterError(f"measurement variances must be positive, got {sigma_diag}")
    H = velocity_jacobian(state)
    Sig = np.diag(sigma_diag)
    y = np.asarray(v_b, dtype=np.float64) - state.R.T @ state.v
    S = H @ P @ H.T + Sig
    try:
        c = np.linalg.cholesky(symmetrize(S))
    except np.linalg.LinAlgError as exc:
        raise FilterError("innovation covariance is not positive definite") from exc
    z = np.linalg.solve(c, y)
    m2 = float(z @ z)
    if gate is not None and m2 > gate:
        return UpdateResult(state, P, False, m2, y)
    # K = P H^T S^-1 via the Cholesky factor
    PHt = P @ H.T
    K = np.linalg.solve(c.T, np.linalg.solve(c, PHt.T)).T
    IKH = np.eye(15) - K @ H
    P_new = symmetrize(IKH @ P @ IKH.T + K @ Sig @ K.T)
    dx = K @ y
    new_state = state if not np.any(dx) else state.oplus(dx)
    return UpdateResult(new_state, P_new, True, m2, y)


# ---------------------------------------------------------------- fused run

VelocitySource = Callable[[np.ndarray, float], "object"]


@dataclass
class FuseConfig:
    window: int = 200
    stride: int = 10
    rate_hz: float = 100.0
    gate: float | None = CHI2_GATE_3DOF
    init_samples: int = 50
    noise: NoiseParams = field(default_factory=NoiseParams)


@dataclass
class Trajectory:
    t: np.ndarray
    R: np.ndarray
    v: np.ndarray
    p: np.ndarray
    bg: np.ndarray
    ba: np.ndarray
    P_diag: np.ndarray
    n_updates: int = 0
    n_rejected: int = 0
    propagation_only: bool = False

    def __len__(self) -> int:
        return len(self.t)


def gravity_rows(Rs: np.ndarray) -> np.ndarray:
    """Body-frame unit down vector ``R^T e_z`` per epoch: ``[n, 3]``."""
    return Rs[:, 2, :]


def build_window(gyro: np.ndarray, accel: np.ndarray, Rs: np.ndarray) -> np.ndarray:
    """Stack ``[n, 3]`` gyro, accel and attitude history into a ``9 x n`` network input."""
    return np.concatenate([gyro.T, accel.T, gravity_rows(Rs).T], axis=0)


def run_fused(stream, source: VelocitySource | None, cfg: FuseConfig,
              model_window: int | None = None, model_rate: float | None = None,
              init_yaw: float = 0.0) -> Trajectory:
    """Propagate at IMU rate and apply a velocity update every ``stride`` samples.

    ``stream`` exposes ``t``, ``gyro`` and ``accel`` arrays. ``source(window, t)``
    returns an object with ``v_b`` and ``sigma_diag``; ``None`` gives a
    propagation-only run.
    """
    if model_window is not None and model_window != cfg.window:
        raise FilterError(f"model window {model_window} != fuse window {cfg.window}")
    t, gyro, accel = np.asarray(stream.t), np.asarray(stream.gyro), np.asarray(stream.accel)
    n = len(t)
    if n < 2:
        raise FilterError("stream needs at least two samples")
    rate = 1.0 / float(np.median(np.diff(t)))
    expected = cfg.rate_hz if model_rate is None else model_rate
    if abs(rate - expected) > 0.01 * expected:
        raise FilterError(f"stream rate {rate:.2f} Hz does not match model rate {expected} Hz")

    k0 = min(cfg.init_samples, n)
    state, P = init([ImuSample(t[i], gyro[i], accel[i]) for i in range(k0)], cfg.noise, yaw=init_yaw)
    state = replace(state, t=float(t[0]))

    Rs = np.empty((n, 3, 3))
    out_v, out_p = np.empty((n, 3)), np.empty((n, 3))
    out_bg, out_ba, out_P = np.empty((n, 3)), np.empty((n, 3)), np.empty((n, 15))
    n_upd = n_rej = 0
    L = cfg.window
    for k in range(n):
        if k > 0:
            s = ImuSample(t[k - 1], gyro[k - 1], accel[k - 1])
            state, P = propagate(state, P, s, t[k] - t[k - 1], cfg.noise)
        Rs[k] = state.R
        if source is not None and k >= L - 1 and (k - (L - 1)) % cfg.stride == 0:
            lo = k - L + 1
            window = build_window(gyro[lo:k + 1], accel[lo:k + 1], Rs[lo:k + 1])
            meas = source(window, float(t[k]))
            res = update_velocity(state, P, meas.v_b, meas.sigma_diag, cfg.gate)
            state, P = res.state, res.P
            n_upd += 1
            n_rej += int(not res.accepted)
            Rs[k] = state.R
        out_v[k], out_p[k] = state.v, state.p
        out_bg[k], out_ba[k], out_P[k] = state.bg, state.ba, np.diag(P)
    return Trajectory(t=t.copy(), R=Rs, v=out_v, p=out_p, bg=out_bg, ba=out_ba, P_diag=out_P,
                      n_updates=n_upd, n_rejected=n_rej,
                      propagation_only=(source is None or n_upd == 0))


def expected_updates(n_samples: int, window: int, stride: int) -> int:
    if n_samples < window:
        return 0
    return (n_samples - window) // stride + 1


def network_source(model) -> VelocitySource:
    """Wrap a trained :class:`~bikelio.moenet.model.MoeModel` as a velocity source."""
    def source(window: np.ndarray, t: float):
        return model.predict(window)
    return source


@dataclass
class _Meas:
    v_b: np.ndarray
    sigma_diag: np.ndarray


def oracle_source(truth_t: np.ndarray, truth_vb: np.ndarray, sigma: float = 0.02) -> VelocitySource:
    """Velocity source returning ground-truth body velocity at the window end."""
    var = np.full(3, sigma * sigma)

    def source(window: np.ndarray, t: float):
        k = int(np.searchsorted(truth_t, t - 1e-9))
        return _Meas(truth_vb[k].copy(), var)
    return source


def iter_samples(stream) -> Iterable[ImuSample]:
    for i in range(len(stream.t)):
        yield ImuSample(stream.t[i], stream.gyro[i], stream.accel[i])
