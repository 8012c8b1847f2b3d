"""Two-phase training: MSE + aux until the validation MSE stalls, then NLL + aux."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import diffkernel as dk
from .config import MoeConfig
from .losses import balance_terms, loss_aux, loss_mse, loss_nll
from .model import MoeModel
from .routing import rank_experts

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 200          # per phase
    batch_size: int = 64
    lr: float = 1e-3
    patience: int = 5
    min_delta: float = 1e-4
    seed: int = 0
    phases: tuple[int, ...] = (1, 2)
    max_steps: int | None = None   # per phase; None = unlimited


@dataclass
class EpochRecord:
    phase: int
    epoch: int
    train_loss: float
    train_mse: float
    train_aux: float
    val_mse: float
    val_nll: float
    load: list[int]
    importance: list[float]


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    phase_epochs: dict[int, int] = field(default_factory=dict)
    best_val: dict[int, float] = field(default_factory=dict)

    def as_rows(self) -> list[dict]:
        return [asdict(r) for r in self.records]


def evaluate(model: MoeModel, x: np.ndarray, y: np.ndarray, batch_size: int = 256) -> tuple[float, float]:
    """Validation MSE and NLL with per-window (non-binding capacity) inference."""
    if len(y) == 0:
        return float("nan"), float("nan")
    v, sig = model.predict_batch(x, batch_size)
    r2 = (y - v) ** 2
    mse = float(r2.sum(axis=1).mean())
    nll = float((0.5 * np.log(sig) + 0.5 * r2 / sig).sum(axis=1).mean())
    return mse, nll


def inference_load(model: MoeModel, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Top-K selection counts per expert when every window is routed on its own."""
    from .model import gate_forward
    counts = np.zeros(model.cfg.N, dtype=np.int64)
    for i in range(0, len(x), batch_size):
        probs = gate_forward(model.params, model.cfg, model.normalize(x[i:i + batch_size])).data
        for row in probs:
            counts[rank_experts(row)[:model.cfg.K]] += 1
    return counts


def adversarial_gate(model: MoeModel, favoured=(0, 1), strength: float = 6.0) -> None:
    """Bias the gate so every sample prefers the ``favoured`` experts."""
    model.params["gate.fc.W"].data[:] = 0.0
    b = np.zeros(model.cfg.N)
    b[list(favoured)] = strength
    model.params["gate.fc.b"].data = b


def _step_loss(model: MoeModel, xb, yb, phase: int):
    out = model.forward(xb)
    mse = loss_mse(yb, out.v)
    main = mse if phase == 1 else loss_nll(yb, out.v, out.logvar)
    aux = loss_aux(out.decision)
    return main + model.cfg.lam * aux, mse, aux, out.decision


def train(train_x: np.ndarray, train_y: np.ndarray, val_x: np.ndarray, val_y: np.ndarray,
          cfg: MoeConfig, tcfg: TrainConfig = TrainConfig(), model: MoeModel | None = None
          ) -> tuple[MoeModel, TrainLog]:
    if len(train_y) == 0:
        raise TrainingError("empty training set")
    if val_x is None or len(val_y) == 0:
        val_x, val_y = train_x, train_y
    if model is None:
        model = MoeModel(cfg, seed=tcfg.seed)
        model.fit_normalizer(train_x)
    rng = np.random.default_rng([tcfg.seed, 1])
    opt = dk.Adam(model.params, lr=tcfg.lr)
    tlog = TrainLog()
    n = len(train_y)
    for phase in tcfg.phases:
        best = np.inf
        best_params = {k: p.data.copy() for k, p in model.params.items()}
        stale = 0
        steps = 0
        epoch = 0
        for epoch in range(1, tcfg.max_epochs + 1):
            order = rng.permutation(n)
            tot = tot_mse = tot_aux = 0.0
            load = np.zeros(cfg.N, dtype=np.int64)
            imp = np.zeros(cfg.N)
            nb = 0
            for i in range(0, n, tcfg.batch_size):
                idx = order[i:i + tcfg.batch_size]
                with dk.Tape() as tape:
                    loss, mse, aux, dec = _step_loss(model, train_x[idx], train_y[idx], phase)
                if not np.isfinite(loss.data):
                    raise TrainingError(
                        f"non-finite loss in phase {phase}, epoch {epoch}, batch {nb}: "
                        f"mse={mse.data}, aux={aux.data}")
                opt.zero_grad()
                dk.backward(tape, loss)
                opt.step()
                tot += float(loss.data)
                tot_mse += float(mse.data)
                tot_aux += float(aux.data)
                load += dec.load
                imp += dec.importance
                nb += 1
                steps += 1
                if tcfg.max_steps is not None and steps >= tcfg.max_steps:
                    break
            val_mse, val_nll = evaluate(model, val_x, val_y)
            tlog.records.append(EpochRecord(phase, epoch, tot / nb, tot_mse / nb, tot_aux / nb,
                                            val_mse, val_nll, load.tolist(), imp.tolist()))
            log.info("phase %d epoch %d loss %.5f val_mse %.5f val_nll %.5f",
                     phase, epoch, tot / nb, val_mse, val_nll)
            score = val_mse if phase == 1 else val_nll
            if score < best - tcfg.min_delta:
                best = score
                best_params = {k: p.data.copy() for k, p in model.params.items()}
                stale = 0
            else:
                stale += 1
            if stale >= tcfg.patience:
                break
            if tcfg.max_steps is not None and steps >= tcfg.max_steps:
                break
        for k, p in model.params.items():
            p.data = best_params[k]
        tlog.phase_epochs[phase] = epoch
        tlog.best_val[phase] = float(best)
    return model, tlog


def load_histogram_variance(load: np.ndarray) -> float:
    """Variance of the normalized load distribution (0 when perfectly even)."""
    load = np.asarray(load, dtype=np.float64)
    return float(np.var(load / load.sum()))


__all__ = ["TrainConfig", "TrainLog", "EpochRecord", "TrainingError", "train", "evaluate",
           "inference_load", "adversarial_gate", "load_histogram_variance", "balance_terms"]
