"""Simulate one ride, then compare dead reckoning with oracle-velocity fusion.

    python3 demos/simulate_and_fuse.py [seconds]
"""
import sys

import numpy as np

from bikelio import ekf, metrics, sim

duration = float(sys.argv[1]) if len(sys.argv) > 1 else 60.0
spec = sim.random_ride(seed=7, duration=duration)
truth = sim.gen_trajectory(spec)
stream = sim.synthesize_imu(truth, spec)
path = np.linalg.norm(np.diff(truth.p_n, axis=0), axis=1).sum()
print(f"ride: {duration:.0f} s, {len(stream)} IMU samples, path length {path:.0f} m")

cfg = ekf.FuseConfig()
for label, source in (("propagation only", None),
                      ("oracle velocity", ekf.oracle_source(truth.t, truth.v_b))):
    traj = ekf.run_fused(stream, source, cfg)
    pair = metrics.AlignedPair(truth.t, truth.p_n, traj.p, truth.R, traj.R)
    rep = metrics.metrics_report(pair, delta=min(60.0, duration / 2))
    print(f"{label:17s} updates={traj.n_updates:5d} rejected={traj.n_rejected:3d} "
          f"ATE={rep['ate_m']:9.2f} m  RTE={rep['rte_m']:8.2f} m")
