"""Show how the auxiliary balance loss and the gate initialization shape expert usage.

    python3 demos/load_balancing.py           # a few minutes
"""
from bikelio import sim
from bikelio.moenet import MoeConfig, MoeModel, TrainConfig, train
from bikelio.moenet.train import adversarial_gate, inference_load, load_histogram_variance

L = 200
sets = []
for i in range(40):
    spec = sim.random_ride(100 + i, duration=60.0, roughness=("paved", "unpaved")[i % 2])
    truth = sim.gen_trajectory(spec)
    sets.append(sim.make_windows(sim.synthesize_imu(truth, spec), truth, L, stride=100, seed=0, ride=i))
tr, va = sim.WindowSet.concat(sets[:32], L), sim.WindowSet.concat(sets[32:], L)

for lam, adversarial in ((0.0, False), (0.01, False), (0.0, True), (0.01, True)):
    cfg = MoeConfig(N=8, K=2, L_inner_feature=16, L_out_dim=16, depth=1, gate_channels=8, head_hidden=16, lam=lam)
    m = MoeModel(cfg, seed=0)
    m.fit_normalizer(tr.x)
    if adversarial:
        adversarial_gate(m)
    model, log = train(tr.x, tr.y, va.x, va.y, cfg, TrainConfig(max_epochs=15, batch_size=64, phases=(1,)),
                       model=m)
    load = inference_load(model, va.x)
    print(f"lambda={lam:<5} adversarial={adversarial!s:5}  val MSE {log.best_val[1]:.3f}  "
          f"load {load.tolist()}  variance {load_histogram_variance(load):.4f}")
