import json

import numpy as np
import pytest

from bikelio import sim
from bikelio.ekf import GRAVITY

CALM = sim.RiderProfile(5.0, 0.25, 0.0, 0.0)


def spec_of(*segments, **kw):
    kw.setdefault("roughness", 0.0)
    kw.setdefault("profile", CALM)
    return sim.RideSpec(segments=tuple(segments), **kw)


def test_straight_segment():
    tr = sim.gen_trajectory(spec_of(sim.Segment("straight", 10.0, 5.0)))
    assert np.allclose(tr.p_n[-1], [50.0, 0.0, 0.0], atol=1e-9)
    assert np.allclose(tr.v_b, [5.0, 0.0, 0.0], atol=1e-12)


def test_full_circle():
    r, s = 10.0, 5.0
    tr = sim.gen_trajectory(spec_of(sim.Segment("turn", 2 * np.pi * r / s, s, r, 1)))
    assert np.linalg.norm(tr.p_n[-1] - tr.p_n[0]) < 1e-6
    dt = np.diff(tr.t)
    a = np.diff(tr.v_n, axis=0) / dt[:, None]
    assert np.allclose(np.linalg.norm(a[:, :2], axis=1), s * s / r, rtol=1e-3)


def test_zero_duration():
    tr = sim.gen_trajectory(spec_of(sim.Segment("stop", 0.0)))
    assert len(tr) == 0
    assert len(sim.synthesize_imu(tr, spec_of(sim.Segment("stop", 0.0)))) == 0


def test_stationary_imu():
    spec = spec_of(sim.Segment("stop", 5.0))
    st = sim.synthesize_imu(sim.gen_trajectory(spec), spec, noisy=False)
    assert np.allclose(st.accel, [0.0, 0.0, -9.81], atol=1e-12)
    assert np.allclose(st.gyro, 0.0, atol=1e-15)


def test_infeasible_rides():
    for seg in (sim.Segment("turn", 5.0, 9.0, 5.0), sim.Segment("turn", 5.0, 2.0, 1.0),
                sim.Segment("straight", 5.0, 30.0), sim.Segment("fly", 1.0)):
        with pytest.raises(sim.InfeasibleRide):
            sim.gen_trajectory(spec_of(seg))


def test_truth_invariants():
    spec = sim.random_ride(4, duration=60.0)
    tr = sim.gen_trajectory(spec)
    assert np.allclose(np.einsum("nji,nj->ni", tr.R, tr.v_n), tr.v_b, atol=1e-12)
    step = 0.5 * (tr.v_n[1:] + tr.v_n[:-1]) * np.diff(tr.t)[:, None]
    assert np.abs(np.diff(tr.p_n, axis=0) - step).max() < 1e-9
    # centripetal = horizontal speed x heading rate
    yaw = np.unwrap(np.arctan2(tr.R[:, 1, 0], tr.R[:, 0, 0]))
    speed = np.linalg.norm(tr.v_n[:, :2], axis=1)
    centripetal = speed[:-1] * np.abs(np.diff(yaw)) / np.diff(tr.t)
    assert centripetal.max() <= sim.MAX_CENTRIPETAL


def test_noise_free_inverse_consistency():
    from bikelio.ekf import ImuSample, NavState, mechanize
    spec = sim.random_ride(11, duration=60.0, roughness="unpaved")
    tr = sim.gen_trajectory(spec)
    st = sim.synthesize_imu(tr, spec, noisy=False)
    s = NavState(tr.R[0], tr.v_n[0], tr.p_n[0], np.zeros(3), np.zeros(3))
    err = 0.0
    for k in range(len(st) - 1):
        s = mechanize(s, ImuSample(st.t[k], st.gyro[k], st.accel[k]), st.t[k + 1] - st.t[k])
        err = max(err, np.linalg.norm(s.p - tr.p_n[k + 1]))
    assert err < 1e-4


def test_seeded_determinism():
    spec = sim.random_ride(3, duration=20.0)
    a = sim.synthesize_imu(sim.gen_trajectory(spec), spec)
    b = sim.synthesize_imu(sim.gen_trajectory(spec), spec)
    assert a.gyro.tobytes() == b.gyro.tobytes() and a.accel.tobytes() == b.accel.tobytes()
    c = sim.synthesize_imu(sim.gen_trajectory(sim.random_ride(4, duration=20.0)), sim.random_ride(4, duration=20.0))
    assert not np.array_equal(a.accel[:100], c.accel[:100])


def test_roughness_monotone():
    def accel_var(r):
        spec = sim.random_ride(7, duration=60.0, roughness=r)
        st = sim.synthesize_imu(sim.gen_trajectory(spec), spec, noisy=False)
        return st.accel.var(axis=0).sum()
    assert accel_var("unpaved") > accel_var("paved")


def test_windows_count_and_alignment():
    spec = sim.random_ride(2, duration=10.0)
    tr = sim.gen_trajectory(spec)
    st = sim.synthesize_imu(tr, spec)
    ws = sim.make_windows(st, tr, L=200, stride=10, att_noise_deg=0.0)
    assert len(ws) == 81 == (1000 - 200) // 10 + 1
    for i in (0, 40, 80):
        e = 199 + 10 * i
        assert ws.t_end[i] == tr.t[e]
        assert np.array_equal(ws.x[i, :3, -1], st.gyro[e]) and np.array_equal(ws.x[i, 3:6, -1], st.accel[e])
        assert np.array_equal(ws.y[i], tr.v_b[e])
        assert np.allclose(ws.x[i, 6:, -1], tr.R[e].T @ [0, 0, 1], atol=1e-15)
    assert len(sim.make_windows(st, tr, L=2000)) == 0


def test_split_disjoint():
    for n in (3, 4, 10, 37):
        parts = sim.split_rides(n, seed=n)
        flat = [i for p in parts for i in p]
        assert sorted(flat) == list(range(n))
        assert all(len(p) > 0 for p in parts)


def test_ride_files_round_trip(tmp_path):
    spec = sim.random_ride(5, duration=5.0)
    tr = sim.gen_trajectory(spec)
    st = sim.synthesize_imu(tr, spec)
    sim.save_ride(tmp_path, "r", spec, tr, st)
    st2, tr2 = sim.load_imu(tmp_path / "r_imu.csv"), sim.load_truth(tmp_path / "r_truth.csv")
    assert np.array_equal(st2.accel, st.accel) and np.array_equal(tr2.p_n, tr.p_n)
    assert np.allclose(tr2.R, tr.R, atol=1e-15)
    meta = json.loads((tmp_path / "r_meta.json").read_text())
    assert meta["gravity_n"] == GRAVITY.tolist() and meta["seed"] == 5
    with pytest.raises(ValueError):
        sim.read_csv(tmp_path / "r_imu.csv", sim.TRUTH_HEADER)
