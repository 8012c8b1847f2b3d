"""Property-based checks across modules."""
import numpy as np
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bikelio import diffkernel as dk
from bikelio.config import parse_text
from bikelio.ekf import NavState, error_between
from bikelio.geom import is_rotation, quaternion_from_rot, rot_from_quaternion, rot_z, so3_exp, so3_log
from bikelio.metrics import AlignedPair, ate, inference_error, rte
from bikelio.moenet.config import MoeConfig
from bikelio.moenet.losses import balance_terms
from bikelio.moenet.routing import expert_capacity, topk_route

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
vec3 = arrays(np.float64, 3, elements=finite)


@given(vec3)
def test_exp_is_rotation_and_log_is_canonical(v):
    R = so3_exp(v)
    assert is_rotation(R, 1e-9)
    w = so3_log(R)
    assert np.linalg.norm(w) <= np.pi + 1e-12
    assert np.allclose(so3_exp(w), R, atol=1e-9)


@given(vec3)
def test_log_exp_round_trip_inside_ball(v):
    n = np.linalg.norm(v)
    assume(1e-12 < n)
    v = v / n * min(n, np.pi - 1e-3)
    assert np.allclose(so3_log(so3_exp(v)), v, atol=1e-9)


@given(arrays(np.float64, 4, elements=finite))
def test_quaternion_round_trip(q):
    assume(np.linalg.norm(q) > 1e-3)
    R = rot_from_quaternion(q)
    assert np.allclose(rot_from_quaternion(quaternion_from_rot(R)), R, atol=1e-12)


@given(arrays(np.float64, (3, 5), elements=finite), finite)
def test_softmax_shift_invariance(x, c):
    a = dk.softmax(dk.Tensor(x)).data
    assert np.allclose(a, dk.softmax(dk.Tensor(x + c)).data, atol=1e-12)
    assert np.allclose(a.sum(axis=-1), 1.0, atol=1e-12)


@st.composite
def routing_case(draw):
    N = draw(st.integers(2, 8))
    K = draw(st.integers(1, N - 1))
    B = draw(st.integers(1, 64))
    c = draw(st.sampled_from([1.0, 1.25, 1.5, 2.0]))
    p = draw(arrays(np.float64, (B, N), elements=st.floats(1e-3, 1.0)))
    return MoeConfig(N=N, K=K, c=c), p / p.sum(axis=1, keepdims=True)


@given(routing_case())
def test_routing_invariants(case):
    cfg, p = case
    d = topk_route(p, cfg)
    assert d.capacity == expert_capacity(cfg, p.shape[0])
    assert d.load.max() <= d.capacity
    kept = d.assign.sum(axis=1)
    assert np.all(kept <= cfg.K)
    assert np.all(np.abs(d.weights.sum(axis=1)[kept > 0] - 1.0) <= 1e-12)
    for b, sel in enumerate(d.selected):
        assert len(set(sel)) == len(sel) and all(d.assign[b, e] for e in sel)
    # ample capacity reduces to plain top-K
    d2 = topk_route(p, cfg, capacity=p.shape[0])
    for b in range(p.shape[0]):
        assert sorted(d2.selected[b]) == sorted(np.argsort(-p[b], kind="stable")[:cfg.K].tolist())


@given(arrays(np.float64, 5, elements=st.floats(0.01, 10)), arrays(np.int64, 5, elements=st.integers(0, 50)))
def test_aux_zero_iff_uniform(imp, load):
    assume(load.sum() > 0)
    li, ll = balance_terms(imp, load)
    assert li >= 0 and ll >= 0
    if li == 0:
        assert np.allclose(imp / imp.sum(), 0.2, rtol=0, atol=1e-12)
    if ll == 0:
        assert np.all(load == load[0])
    assert balance_terms(np.full(5, 0.25), np.full(5, 3)) == (0.0, 0.0)
    assert max(balance_terms(np.full(5, imp[0]), np.full(5, 3))) < 1e-30


def _track(n, seed):
    rng = np.random.default_rng(seed)
    t = np.arange(n) * 1.0
    p = np.cumsum(rng.normal(size=(n, 3)), axis=0)
    R = np.stack([rot_z(a) for a in np.cumsum(rng.normal(scale=0.1, size=n))])
    return t, p, R


@given(st.integers(0, 10_000), st.floats(-np.pi, np.pi), st.floats(0.1, 10))
def test_metric_invariances(seed, yaw, k):
    t, p, R = _track(80, seed)
    e = np.random.default_rng(seed + 1).normal(size=p.shape)
    base = AlignedPair(t, p, p + e, R, R)
    assert abs(ate(AlignedPair(t, p, p + k * e, R, R)) - k * ate(base)) <= 1e-12 * k * ate(base)
    Rz = rot_z(yaw)
    rotated = AlignedPair(t, p @ Rz.T, (p + e) @ Rz.T, Rz @ R, Rz @ R)
    assert abs(rte(rotated, delta=30.0) - rte(base, delta=30.0)) < 1e-9


@given(arrays(np.float64, (6, 3), elements=finite), arrays(np.float64, (6, 3), elements=finite))
def test_inference_error_is_rmse_over_root_n(a, b):
    rmse = np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1)))
    assert abs(inference_error(a, b) - rmse / np.sqrt(6)) <= 1e-12 * max(1.0, rmse)


@given(arrays(np.float64, 15, elements=st.floats(-0.5, 0.5)), vec3)
def test_oplus_error_round_trip(e, rv):
    s = NavState(R=so3_exp(rv), v=np.array([1.0, 2, 3]), p=np.zeros(3), bg=np.zeros(3), ba=np.zeros(3))
    assert np.abs(error_between(s.oplus(e), s) - e).max() < 1e-10


@given(st.integers(1, 16), st.integers(1, 16), st.integers(0, 2 ** 31))
def test_config_dump_round_trip(n_patch, l_feature, seed):
    text = f"moe.N_patch = {n_patch}\nmoe.L_feature = {l_feature}\nrun.seed = {seed}\n"
    cfg = parse_text(text)
    assert cfg.moe.L == n_patch * l_feature
    assert parse_text(cfg.dump()) == cfg
