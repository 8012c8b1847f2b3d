"""Command-line front end: ``bikelio simulate | train | fuse | eval``.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure. On failure
one JSON object is written to stderr (``{"error": kind, "exit": code,
"message": ..., "key": ..., "line": ...}``) and any partially written outputs
are removed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import ekf, metrics, sim
from .config import (SEED_OFFSET_SIM, SEED_OFFSET_SPLIT, SEED_OFFSET_TRAIN, SEED_OFFSET_WINDOWS,
                     ConfigError, RunConfig, parse_config)
from .geom import quaternion_from_rot
from .moenet import checkpoint
from .moenet.model import MoeModel
from .moenet.train import TrainingError, train

log = logging.getLogger("bikelio")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

TRAJ_HEADER = (sim.TRUTH_HEADER + ["bgx", "bgy", "bgz", "bax", "bay", "baz"]
               + [f"P{i}" for i in range(15)])


class DataError(RuntimeError):
    pass


class NumericError(RuntimeError):
    pass


class Outputs:
    """Tracks files created by a command so a failure can remove them."""

    def __init__(self):
        self.paths: list[Path] = []

    def add(self, path) -> Path:
        path = Path(path)
        self.paths.append(path)
        return path

    def cleanup(self) -> None:
        for p in reversed(self.paths):
            try:
                if p.is_dir():
                    p.rmdir()     # only if we created it and it is now empty
                elif p.exists():
                    p.unlink()
            except OSError:
                pass


def _roughness(cfg: RunConfig):
    r = cfg.sim.roughness
    return r if r in sim.ROUGHNESS else float(r)


def ride_specs(cfg: RunConfig) -> list[sim.RideSpec]:
    base = cfg.seed_for(SEED_OFFSET_SIM)
    return [sim.random_ride(base + i, duration=cfg.sim.duration, profile=sim.PROFILES[i % len(sim.PROFILES)],
                            roughness=_roughness(cfg), noise=cfg.noise, rate_hz=cfg.sim.rate_hz,
                            start_stop=cfg.sim.start_stop)
            for i in range(cfg.sim.n_rides)]


# ---------------------------------------------------------------- commands

def cmd_simulate(args, cfg: RunConfig, out: Outputs) -> None:
    out_dir = Path(args.out_dir)
    if not out_dir.exists():
        out_dir.mkdir(parents=True)
        out.add(out_dir)
    for i, spec in enumerate(ride_specs(cfg)):
        name = f"ride{i:03d}"
        for suffix in ("_imu.csv", "_truth.csv", "_meta.json"):
            out.add(out_dir / f"{name}{suffix}")
        truth = sim.gen_trajectory(spec)
        sim.save_ride(out_dir, name, spec, truth, sim.synthesize_imu(truth, spec))
        log.info("wrote %s (%.1f s)", name, spec.duration)
    out.add(out_dir / "run_config.txt").write_text(cfg.dump())


def find_rides(data_dir: Path) -> list[tuple[Path, Path]]:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataError(f"data directory not found: {data_dir}")
    pairs = []
    for imu in sorted(data_dir.glob("*_imu.csv")):
        truth = imu.with_name(imu.name[:-len("_imu.csv")] + "_truth.csv")
        if not truth.exists():
            raise DataError(f"{imu} has no matching truth file {truth.name}")
        pairs.append((imu, truth))
    if not pairs:
        raise DataError(f"no *_imu.csv rides in {data_dir}")
    return pairs


def _load_pair(imu_path: Path, truth_path: Path) -> tuple[sim.ImuStream, sim.GroundTruth]:
    stream, truth = load_imu(imu_path), load_truth(truth_path)
    if len(stream) != len(truth) or not np.array_equal(stream.t, truth.t):
        raise DataError(f"{imu_path} and {truth_path} have different timestamps")
    return stream, truth


def cmd_train(args, cfg: RunConfig, out: Outputs) -> None:
    pairs = find_rides(args.data_dir)
    L = cfg.moe.L
    sets = []
    for i, (imu_path, truth_path) in enumerate(pairs):
        stream, truth = _load_pair(imu_path, truth_path)
        sets.append(sim.make_windows(stream, truth, L, cfg.data.stride, cfg.data.att_noise_deg,
                                     seed=cfg.seed_for(SEED_OFFSET_WINDOWS), ride=i))
    fr = (cfg.data.train_fraction, cfg.data.val_fraction,
          max(0.0, 1.0 - cfg.data.train_fraction - cfg.data.val_fraction))
    tr_idx, va_idx, _ = sim.split_rides(len(pairs), fr, seed=cfg.seed_for(SEED_OFFSET_SPLIT))
    tr = sim.WindowSet.concat([sets[i] for i in tr_idx], L)
    va = sim.WindowSet.concat([sets[i] for i in va_idx], L)
    if len(tr) == 0:
        raise DataError(f"no training windows: rides shorter than the window length {L}")
    log.info("training on %d windows from %d rides, validating on %d", len(tr), len(tr_idx), len(va))
    tcfg = cfg.train
    from dataclasses import replace
    tcfg = replace(tcfg, seed=cfg.seed_for(SEED_OFFSET_TRAIN) + tcfg.seed)
    model, tlog = train(tr.x, tr.y, va.x, va.y, cfg.moe, tcfg)

    ckpt = out.add(args.out)
    checkpoint.save(model, ckpt, extra={"phase_epochs": {str(k): v for k, v in tlog.phase_epochs.items()},
                                        "best_val": {str(k): v for k, v in tlog.best_val.items()},
                                        "run_config": cfg.dump()})
    log_path = out.add(Path(args.log) if args.log else ckpt.with_name(ckpt.name + ".log.csv"))
    N = cfg.moe.N
    header = (["phase", "epoch", "train_loss", "train_mse", "train_aux", "val_mse", "val_nll"]
              + [f"load{i}" for i in range(N)] + [f"importance{i}" for i in range(N)])
    with open(log_path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in tlog.records:
            row = [str(r.phase), str(r.epoch)] + [sim.fmt(x) for x in
                   (r.train_loss, r.train_mse, r.train_aux, r.val_mse, r.val_nll)]
            row += [str(x) for x in r.load] + [sim.fmt(x) for x in r.importance]
            fh.write(",".join(row) + "\n")


def load_imu(path) -> sim.ImuStream:
    try:
        stream = sim.load_imu(path)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read IMU file {path}: {e}") from None
    if len(stream) < 2 or not np.all(np.isfinite(stream.gyro)) or not np.all(np.isfinite(stream.accel)):
        raise DataError(f"{path}: need at least two finite IMU samples")
    if np.any(np.diff(stream.t) <= 0):
        raise DataError(f"{path}: timestamps must be strictly increasing")
    return stream


def load_truth(path) -> sim.GroundTruth:
    try:
        return sim.load_truth(path)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read truth file {path}: {e}") from None


def write_trajectory(path: Path, traj: ekf.Trajectory) -> None:
    q = np.array([quaternion_from_rot(R) for R in traj.R]).reshape(-1, 4)
    rows = np.column_stack([traj.t, q, traj.v, traj.p, traj.bg, traj.ba, traj.P_diag])
    sim.write_csv(path, TRAJ_HEADER, rows)


def fuse_config(cfg: RunConfig, window: int) -> ekf.FuseConfig:
    return ekf.FuseConfig(window=window, stride=cfg.fuse.stride, rate_hz=cfg.sim.rate_hz,
                          gate=cfg.fuse.gate, init_samples=cfg.fuse.init_samples, noise=cfg.noise)


def cmd_fuse(args, cfg: RunConfig, out: Outputs) -> None:
    stream = load_imu(args.imu)
    if args.oracle_velocity:
        truth_path = Path(args.truth) if args.truth else Path(str(args.imu).replace("_imu.csv", "_truth.csv"))
        if not truth_path.exists():
            raise DataError(f"--oracle-velocity needs ground truth; {truth_path} not found (use --truth)")
        truth = load_truth(truth_path)
        source = ekf.oracle_source(truth.t, truth.v_b, cfg.fuse.oracle_sigma)
        window, model_rate = cfg.moe.L, None
    else:
        if not args.checkpoint:
            raise ConfigError("fuse needs --checkpoint or --oracle-velocity")
        try:
            model = checkpoint.load(args.checkpoint)
        except checkpoint.CheckpointError as e:
            raise DataError(str(e)) from None
        source, window, model_rate = ekf.network_source(model), model.cfg.L, cfg.sim.rate_hz
    traj = ekf.run_fused(stream, source, fuse_config(cfg, window), model_window=window, model_rate=model_rate)
    if not (np.all(np.isfinite(traj.p)) and np.all(np.isfinite(traj.P_diag))):
        raise NumericError("filter diverged: non-finite state or covariance")
    write_trajectory(out.add(args.out), traj)
    log.info("fused %d epochs, %d updates (%d gated out)", len(traj), traj.n_updates, traj.n_rejected)


def cmd_eval(args, cfg: RunConfig, out: Outputs) -> None:
    truth = load_truth(args.truth)
    try:
        est = sim.read_csv(args.est, sim.TRUTH_HEADER)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read estimate {args.est}: {e}") from None
    if len(truth) == 0 or len(est) == 0:
        raise DataError("empty truth or estimate")
    from .geom import rot_from_quaternion
    est_R = np.stack([rot_from_quaternion(q) for q in est[:, 1:5]])
    pair = metrics.align(truth.t, truth.p_n, truth.R, est[:, 0], est[:, 8:11], est_R)
    if len(pair.t) == 0:
        raise DataError("truth and estimate do not overlap in time")
    keep = np.isin(truth.t, pair.t)
    v_hat = np.column_stack([np.interp(pair.t, est[:, 0], est[:, 5 + i]) for i in range(3)])
    delta = args.rte_delta if args.rte_delta is not None else cfg.eval.rte_delta
    report = metrics.metrics_report(pair, delta, metrics.inference_error(truth.v_n[keep], v_hat),
                                    config={k: (list(v) if isinstance(v, tuple) else v)
                                            for k, v in cfg.as_flat().items()})
    if not np.isfinite(report["ate_m"]):
        raise NumericError("non-finite ATE")
    metrics.write_report(out.add(args.out), report)


# ---------------------------------------------------------------- plumbing

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bikelio", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate synthetic rides (IMU + truth CSV pairs)")
    s.add_argument("--config", help="run config file (defaults if omitted)")
    s.add_argument("--out-dir", required=True, help="directory for rideNNN_{imu,truth}.csv and _meta.json")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="train the velocity network on simulated rides")
    s.add_argument("--config", help="run config file (defaults if omitted)")
    s.add_argument("--data-dir", required=True, help="directory produced by simulate")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--log", help="training-log CSV (default: <out>.log.csv)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("fuse", help="run the filter over an IMU file")
    s.add_argument("--config", help="run config file (defaults if omitted)")
    s.add_argument("--checkpoint", help="trained network checkpoint")
    s.add_argument("--oracle-velocity", action="store_true",
                   help="use ground-truth body velocity instead of the network")
    s.add_argument("--truth", help="truth CSV for --oracle-velocity (default: sibling *_truth.csv)")
    s.add_argument("--imu", required=True, help="IMU CSV (t,gx,gy,gz,ax,ay,az)")
    s.add_argument("--out", required=True, help="trajectory CSV")
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("eval", help="ATE / RTE / inference error of a trajectory against truth")
    s.add_argument("--config", help="run config file (defaults if omitted)")
    s.add_argument("--truth", required=True, help="truth CSV")
    s.add_argument("--est", required=True, help="trajectory CSV from fuse (or a truth-format CSV)")
    s.add_argument("--out", required=True, help="metrics JSON")
    s.add_argument("--rte-delta", type=float, help="RTE interval in seconds (overrides eval.rte_delta)")
    s.set_defaults(func=cmd_eval)
    return p


def _fail(kind: str, code: int, exc: BaseException) -> int:
    payload = {"error": kind, "exit": code, "message": getattr(exc, "message", str(exc))}
    if isinstance(exc, ConfigError):
        payload["key"], payload["line"] = exc.key, exc.line
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Outputs()
    try:
        cfg = parse_config(args.config)
        with np.errstate(over="raise", invalid="raise"):
            args.func(args, cfg, out)
    except ConfigError as e:
        out.cleanup()
        return _fail("config", EXIT_CONFIG, e)
    except (DataError, sim.InfeasibleRide, ekf.FilterError, OSError) as e:
        out.cleanup()
        return _fail("data", EXIT_DATA, e)
    except (NumericError, TrainingError, FloatingPointError, np.linalg.LinAlgError) as e:
        out.cleanup()
        return _fail("numeric", EXIT_NUMERIC, e)
    except KeyboardInterrupt:
        out.cleanup()
        raise
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())


__all__ = ["main", "build_parser", "TRAJ_HEADER", "EXIT_OK", "EXIT_CONFIG", "EXIT_DATA", "EXIT_NUMERIC"]
