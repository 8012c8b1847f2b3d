"""Synthetic bicycle rides: ground-truth kinematics, IMU synthesis, training windows.

Frames follow :mod:`bikelio.ekf`: navigation z down, gravity ``+9.81`` on z,
body x forward / y right / z down. Rides start at the origin with zero yaw.

Truth is built so that the filter's own mechanization inverts the IMU
synthesis exactly: angular rate comes from the rotation increment between
epochs and specific force from the velocity increment, both held over
``[t_k, t_k+1)``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ekf import GRAVITY, NoiseParams, build_window
from .geom import quaternion_from_rot, rot_from_quaternion, rot_x, rot_y, rot_z, so3_log

log = logging.getLogger(__name__)

MAX_CENTRIPETAL = 6.0
MIN_RADIUS = 2.0
MAX_SPEED = 10.0
ROUGHNESS = {"paved": 0.2, "unpaved": 1.0}


class InfeasibleRide(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    kind: str                 # "straight" | "turn" | "stop"
    duration: float
    speed: float = 0.0        # m/s
    radius: float = np.inf    # m, turns only
    direction: int = 1        # +1 right turn (positive yaw rate), -1 left


@dataclass(frozen=True)
class RiderProfile:
    """Per-rider traits that shape vibration; stands in for rider/bike diversity."""

    speed: float = 5.0               # preferred cruising speed, m/s
    cadence_per_mps: float = 0.25    # pedalling Hz per m/s
    sway_deg: float = 1.5            # handlebar roll sway amplitude
    surge: float = 0.3               # fore-aft pedalling surge, m/s^2


PROFILES = [
    RiderProfile(4.0, 0.30, 2.0, 0.35),
    RiderProfile(4.5, 0.28, 1.2, 0.25),
    RiderProfile(5.0, 0.25, 1.5, 0.30),
    RiderProfile(5.5, 0.24, 1.0, 0.20),
    RiderProfile(6.0, 0.22, 1.8, 0.40),
    RiderProfile(6.5, 0.20, 0.8, 0.20),
    RiderProfile(3.5, 0.32, 2.5, 0.45),
    RiderProfile(7.0, 0.19, 1.1, 0.30),
]


@dataclass(frozen=True)
class RideSpec:
    segments: tuple[Segment, ...]
    roughness: float = ROUGHNESS["paved"]
    rate_hz: float = 100.0
    noise: NoiseParams = field(default_factory=NoiseParams)
    init_bg: tuple[float, float, float] = (0.0, 0.0, 0.0)
    init_ba: tuple[float, float, float] = (0.0, 0.0, 0.0)
    profile: RiderProfile = field(default_factory=RiderProfile)
    seed: int = 0
    blend: float = 3.0        # seconds of quintic blending at segment joints

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["segments"] = [asdict(s) for s in self.segments]
        for s in d["segments"]:
            if not np.isfinite(s["radius"]):
                s["radius"] = None
        return d


@dataclass
class GroundTruth:
    t: np.ndarray      # [n]
    R: np.ndarray      # [n, 3, 3]
    v_n: np.ndarray    # [n, 3]
    p_n: np.ndarray    # [n, 3]
    v_b: np.ndarray    # [n, 3]

    def __len__(self) -> int:
        return len(self.t)


@dataclass
class ImuStream:
    t: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray
    bg: np.ndarray | None = None   # true bias trajectories, when synthesized
    ba: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.t)


def check_feasible(spec: RideSpec) -> None:
    if spec.rate_hz <= 0:
        raise InfeasibleRide(f"rate_hz must be positive, got {spec.rate_hz}")
    if spec.roughness < 0:
        raise InfeasibleRide(f"roughness must be >= 0, got {spec.roughness}")
    for i, s in enumerate(spec.segments):
        if s.kind not in ("straight", "turn", "stop"):
            raise InfeasibleRide(f"segment {i}: unknown kind {s.kind!r}")
        if s.duration < 0:
            raise InfeasibleRide(f"segment {i}: negative duration")
        if not 0.0 <= s.speed <= MAX_SPEED:
            raise InfeasibleRide(f"segment {i}: speed {s.speed} outside [0, {MAX_SPEED}] m/s")
        if s.kind == "turn":
            if s.radius < MIN_RADIUS:
                raise InfeasibleRide(f"segment {i}: turn radius {s.radius} < {MIN_RADIUS} m")
            if s.speed ** 2 / s.radius > MAX_CENTRIPETAL:
                raise InfeasibleRide(
                    f"segment {i}: centripetal accel {s.speed ** 2 / s.radius:.2f} > "
                    f"{MAX_CENTRIPETAL} m/s^2")


def time_grid(duration: float, rate_hz: float) -> np.ndarray:
    """Uniform grid spanning exactly ``[0, duration]`` at (nearly) ``rate_hz``."""
    n = int(round(duration * rate_hz))
    if n == 0:
        return np.zeros(0)
    return np.linspace(0.0, duration, n + 1)


def _smoothstep5(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)


def _blended(t: np.ndarray, bounds: np.ndarray, values: np.ndarray, blend: float,
             durations: np.ndarray) -> np.ndarray:
    """Piecewise-constant ``values`` with quintic transitions centred on segment joints."""
    out = np.full_like(t, values[0])
    for j in range(1, len(values)):
        tau = min(blend, 0.5 * durations[j - 1], 0.5 * durations[j])
        if tau <= 0:
            out = np.where(t >= bounds[j], values[j], out)
            continue
        u = (t - (bounds[j] - 0.5 * tau)) / tau
        out = out + (values[j] - values[j - 1]) * _smoothstep5(u)
    return out


def _cumtrapz(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    if len(t) > 1:
        dt = np.diff(t).reshape((-1,) + (1,) * (y.ndim - 1))
        out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * dt, axis=0)
    return out


def gen_trajectory(spec: RideSpec) -> GroundTruth:
    check_feasible(spec)
    t = time_grid(spec.duration, spec.rate_hz)
    n = len(t)
    if n == 0:
        e = np.zeros((0, 3))
        return GroundTruth(t=t, R=np.zeros((0, 3, 3)), v_n=e, p_n=e.copy(), v_b=e.copy())
    segs = spec.segments
    durs = np.array([s.duration for s in segs])
    bounds = np.concatenate([[0.0], np.cumsum(durs)])
    speeds = np.array([0.0 if s.kind == "stop" else s.speed for s in segs])
    rates = np.array([s.direction * s.speed / s.radius if s.kind == "turn" else 0.0 for s in segs])
    speed = _blended(t, bounds, speeds, spec.blend, durs)
    yaw_rate = _blended(t, bounds, rates, spec.blend, durs)
    yaw = _cumtrapz(yaw_rate, t)
    dist = _cumtrapz(speed, t)

    rng = np.random.default_rng([spec.seed, 7])
    prof = spec.profile
    # road profile as a function of travelled distance
    kappa = np.exp(rng.uniform(np.log(0.3), np.log(2.5), 8))
    amp = spec.roughness * 0.0012 / kappa ** 2
    ph = rng.uniform(0, 2 * np.pi, 8)
    arg = 2 * np.pi * np.outer(dist, kappa) + ph
    slope = (amp * 2 * np.pi * kappa * np.cos(arg)).sum(axis=1)           # dh/dx
    # attitude jitter, also distance-driven so it freezes when the bike stops
    jk = np.exp(rng.uniform(np.log(0.5), np.log(3.0), 4))
    jph = rng.uniform(0, 2 * np.pi, (2, 4))
    jit_amp = np.deg2rad(0.4) * spec.roughness
    roll_j = jit_amp * (np.sin(2 * np.pi * np.outer(dist, jk) + jph[0]) - np.sin(jph[0])).sum(axis=1) / 2
    pitch_j = jit_amp * (np.sin(2 * np.pi * np.outer(dist, jk) + jph[1]) - np.sin(jph[1])).sum(axis=1) / 2
    cad_phase = 2 * np.pi * prof.cadence_per_mps * dist
    moving = _smoothstep5(speed / 1.0)
    sway = np.deg2rad(prof.sway_deg) * moving * np.sin(cad_phase)
    lean = np.arctan(speed * yaw_rate / np.linalg.norm(GRAVITY))
    roll = lean + sway + roll_j
    pitch = -np.arctan(slope) + pitch_j
    pitch -= pitch[0]
    # fore-aft surge at twice the cadence (two pedal strokes per revolution)
    surge_v = prof.surge * moving * (1 - np.cos(2 * cad_phase)) / (
        4 * np.pi * prof.cadence_per_mps * np.maximum(speed, 1.0))
    fwd = speed + surge_v - surge_v[0]

    v_n = np.stack([fwd * np.cos(yaw), fwd * np.sin(yaw), -slope * speed], axis=1)
    p_n = _cumtrapz(v_n, t)
    R = np.stack([rot_z(a) @ rot_y(b) @ rot_x(c) for a, b, c in zip(yaw, pitch, roll)])
    v_b = np.einsum("nji,nj->ni", R, v_n)
    return GroundTruth(t=t, R=R, v_n=v_n, p_n=p_n, v_b=v_b)


def ideal_imu(truth: GroundTruth) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free ``(gyro, accel)`` whose mechanization reproduces ``truth``."""
    n = len(truth)
    gyro, accel = np.zeros((n, 3)), np.zeros((n, 3))
    if n < 2:
        if n == 1:
            accel[0] = truth.R[0].T @ (-GRAVITY)
        return gyro, accel
    dt = np.diff(truth.t)
    for k in range(n - 1):
        gyro[k] = so3_log(truth.R[k].T @ truth.R[k + 1]) / dt[k]
        accel[k] = truth.R[k].T @ ((truth.v_n[k + 1] - truth.v_n[k]) / dt[k] - GRAVITY)
    gyro[-1], accel[-1] = gyro[-2], accel[-2]
    return gyro, accel


def synthesize_imu(truth: GroundTruth, spec: RideSpec, noisy: bool = True) -> ImuStream:
    """Ideal IMU plus bias (with random walk) and white noise; seeded by ``spec.seed``."""
    gyro, accel = ideal_imu(truth)
    n = len(truth)
    bg = np.tile(np.asarray(spec.init_bg, dtype=np.float64), (n, 1))
    ba = np.tile(np.asarray(spec.init_ba, dtype=np.float64), (n, 1))
    if noisy and n > 1:
        rng = np.random.default_rng([spec.seed, 11])
        dt = float(np.median(np.diff(truth.t)))
        nz = spec.noise
        bg = bg + np.vstack([np.zeros(3), np.cumsum(
            rng.standard_normal((n - 1, 3)) * nz.gyro_bias_rw * np.sqrt(dt), axis=0)])
        ba = ba + np.vstack([np.zeros(3), np.cumsum(
            rng.standard_normal((n - 1, 3)) * nz.accel_bias_rw * np.sqrt(dt), axis=0)])
        gyro = gyro + bg + rng.standard_normal((n, 3)) * nz.gyro_noise / np.sqrt(dt)
        accel = accel + ba + rng.standard_normal((n, 3)) * nz.accel_noise / np.sqrt(dt)
    else:
        gyro, accel = gyro + bg, accel + ba
    return ImuStream(t=truth.t.copy(), gyro=gyro, accel=accel, bg=bg, ba=ba)


# ---------------------------------------------------------------- ride plans

def random_ride(seed: int, duration: float = 120.0, profile: RiderProfile | None = None,
                roughness: float | str = "paved", noise: NoiseParams | None = None,
                rate_hz: float = 100.0, start_stop: float = 2.5, **kw) -> RideSpec:
    """Random mix of straights, turns and stops, starting from rest."""
    rng = np.random.default_rng([seed, 3])
    profile = profile or PROFILES[seed % len(PROFILES)]
    if isinstance(roughness, str):
        roughness = ROUGHNESS[roughness]
    segs = [Segment("stop", start_stop)]
    left = duration - start_stop
    while left > 1e-9:
        u = rng.uniform()
        speed = float(np.clip(profile.speed + rng.normal(0, 1.0), 1.5, 9.0))
        if u < 0.08:
            seg = Segment("stop", float(rng.uniform(2, 5)))
        elif u < 0.55:
            seg = Segment("straight", float(rng.uniform(4, 15)), speed)
        else:
            r_min = max(MIN_RADIUS, speed ** 2 / (0.8 * MAX_CENTRIPETAL))
            radius = float(rng.uniform(r_min, max(r_min, 40.0)))
            angle = float(rng.uniform(np.pi / 6, np.pi))
            seg = Segment("turn", float(max(1.0, angle * radius / speed)), speed, radius,
                          int(rng.choice([-1, 1])))
        seg_d = min(seg.duration, left)
        segs.append(Segment(seg.kind, seg_d, seg.speed, seg.radius, seg.direction))
        left -= seg_d
    return RideSpec(segments=tuple(segs), roughness=float(roughness), rate_hz=rate_hz,
                    noise=noise or NoiseParams(), profile=profile, seed=seed, **kw)


# ---------------------------------------------------------------- windows

@dataclass
class WindowSet:
    x: np.ndarray        # [M, 9, L]
    y: np.ndarray        # [M, 3] body velocity at the window end
    t_end: np.ndarray    # [M]
    ride: np.ndarray     # [M] ride index

    def __len__(self) -> int:
        return len(self.y)

    @classmethod
    def empty(cls, L: int) -> "WindowSet":
        return cls(np.zeros((0, 9, L)), np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=int))

    @classmethod
    def concat(cls, sets: list["WindowSet"], L: int) -> "WindowSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty(L)
        return cls(np.concatenate([s.x for s in sets]), np.concatenate([s.y for s in sets]),
                   np.concatenate([s.t_end for s in sets]), np.concatenate([s.ride for s in sets]))


def window_ends(n: int, L: int, stride: int) -> np.ndarray:
    if n < L:
        return np.zeros(0, dtype=int)
    return np.arange(L - 1, n, stride)


def make_windows(stream: ImuStream, truth: GroundTruth, L: int = 200, stride: int = 10,
                 att_noise_deg: float = 2.0, seed: int = 0, ride: int = 0) -> WindowSet:
    """Sliding ``9 x L`` windows with target body velocity at the last epoch.

    Orientation rows come from the true attitude, left-perturbed by one random
    small rotation per window to mimic filter-supplied attitude.
    """
    n = len(stream)
    ends = window_ends(n, L, stride)
    if len(ends) == 0:
        log.warning("stream of %d samples is shorter than one window (%d); no windows", n, L)
        return WindowSet.empty(L)
    rng = np.random.default_rng([seed, ride, 5])
    sig = np.deg2rad(att_noise_deg)
    from .geom import so3_exp
    xs = np.empty((len(ends), 9, L))
    for i, e in enumerate(ends):
        lo = e - L + 1
        Rs = truth.R[lo:e + 1]
        if sig > 0:
            Rs = so3_exp(rng.normal(0, sig, 3)) @ Rs
        xs[i] = build_window(stream.gyro[lo:e + 1], stream.accel[lo:e + 1], Rs)
    return WindowSet(x=xs, y=truth.v_b[ends].copy(), t_end=truth.t[ends].copy(),
                     ride=np.full(len(ends), ride))


def split_rides(n_rides: int, fractions=(0.7, 0.1, 0.2), seed: int = 0) -> tuple[list[int], ...]:
    """Partition ride indices into train/val/test; each ride lands in exactly one split."""
    idx = np.random.default_rng([seed, 13]).permutation(n_rides)
    n_train = int(round(fractions[0] * n_rides))
    n_val = int(round(fractions[1] * n_rides))
    if n_rides >= 3:
        n_train = min(max(n_train, 1), n_rides - 2)
        n_val = max(n_val, 1)
    return (sorted(idx[:n_train].tolist()), sorted(idx[n_train:n_train + n_val].tolist()),
            sorted(idx[n_train + n_val:].tolist()))


# ---------------------------------------------------------------- ride files

IMU_HEADER = ["t", "gx", "gy", "gz", "ax", "ay", "az"]
TRUTH_HEADER = ["t", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "px", "py", "pz"]


def fmt(x: float) -> str:
    """Shortest decimal string that round-trips a float64."""
    return repr(float(x))


def write_csv(path: Path, header: list[str], rows: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(fmt(x) for x in r) + "\n")


def read_csv(path: Path, header: list[str] | None = None) -> np.ndarray:
    with open(path) as fh:
        got = fh.readline().strip().split(",")
        if header is not None and got[:len(header)] != header:
            raise ValueError(f"{path}: expected header {header}, got {got}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return data


def save_ride(out_dir: Path, name: str, spec: RideSpec, truth: GroundTruth, stream: ImuStream) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / f"{name}_imu.csv", IMU_HEADER,
              np.column_stack([stream.t, stream.gyro, stream.accel]))
    q = np.array([quaternion_from_rot(R) for R in truth.R]).reshape(-1, 4)
    write_csv(out_dir / f"{name}_truth.csv", TRUTH_HEADER,
              np.column_stack([truth.t, q, truth.v_n, truth.p_n]))
    meta = {
        "rate_hz": spec.rate_hz,
        "gravity_n": GRAVITY.tolist(),
        "frames": "nav: local level, z down; body: x forward, y right, z down; q: Hamilton [w,x,y,z] body->nav",
        "units": {"t": "s", "gyro": "rad/s", "accel": "m/s^2 (specific force)", "v": "m/s", "p": "m"},
        "seed": spec.seed,
        "spec": spec.to_dict(),
    }
    (out_dir / f"{name}_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_imu(path: Path) -> ImuStream:
    d = read_csv(path, IMU_HEADER)
    return ImuStream(t=d[:, 0], gyro=d[:, 1:4], accel=d[:, 4:7])


def load_truth(path: Path) -> GroundTruth:
    d = read_csv(path, TRUTH_HEADER)
    R = np.stack([rot_from_quaternion(q) for q in d[:, 1:5]]) if len(d) else np.zeros((0, 3, 3))
    v_n = d[:, 5:8]
    v_b = np.einsum("nji,nj->ni", R, v_n)
    return GroundTruth(t=d[:, 0], R=R, v_n=v_n, p_n=d[:, 8:11], v_b=v_b)
