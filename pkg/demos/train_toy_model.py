"""Train a small MoE velocity network on simulated rides and fuse it on a new ride.

    python3 demos/train_toy_model.py          # about 1.5 minutes
"""
import numpy as np

from bikelio import ekf, metrics, sim
from bikelio.moenet import MoeConfig, TrainConfig, count_params_flops, train
from bikelio.moenet.train import inference_load

L = 200
sets = []
for i in range(40):
    spec = sim.random_ride(100 + i, duration=60.0, roughness=("paved", "unpaved")[i % 2])
    truth = sim.gen_trajectory(spec)
    sets.append(sim.make_windows(sim.synthesize_imu(truth, spec), truth, L, stride=100, seed=0, ride=i))
tr, va = sim.WindowSet.concat(sets[:32], L), sim.WindowSet.concat(sets[32:], L)
print(f"windows: {len(tr)} train, {len(va)} validation")

cfg = MoeConfig(N=8, K=2, L_inner_feature=16, L_out_dim=16, depth=1, gate_channels=8, head_hidden=16)
c = count_params_flops(cfg)
print(f"model: {c.total_params} parameters, {c.flops_per_inference} FLOPs/inference "
      f"({c.flop_ratio:.2f} of dense)")
model, log = train(tr.x, tr.y, va.x, va.y, cfg, TrainConfig(max_epochs=40, batch_size=64))
for rec in log.records[::5]:
    print(f"  phase {rec.phase} epoch {rec.epoch:3d} train loss {rec.train_loss:8.4f} val MSE {rec.val_mse:.4f} val NLL {rec.val_nll:.4f}")

v, sig = model.predict_batch(va.x)
print(f"validation: velocity MSE {np.mean(np.sum((va.y - v) ** 2, axis=1)):.3f} (m/s)^2, "
      f"normalized residual variance {((va.y - v) ** 2 / sig).mean(axis=0).round(2)}")
print(f"inference load per expert: {inference_load(model, va.x).tolist()}")

spec = sim.random_ride(999, duration=120.0)
truth = sim.gen_trajectory(spec)
stream = sim.synthesize_imu(truth, spec)
for label, source in (("propagation only", None), ("network", ekf.network_source(model))):
    traj = ekf.run_fused(stream, source, ekf.FuseConfig())
    a = metrics.ate(metrics.AlignedPair(truth.t, truth.p_n, traj.p, truth.R, traj.R))
    print(f"held-out 120 s ride, {label:16s}: ATE {a:8.1f} m")
