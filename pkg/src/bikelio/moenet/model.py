"""Mixture-of-Experts velocity regressor.

Layout of one forward pass for a batch of ``[B, 9, L]`` IMU windows:

* gate: conv(k=1) -> GELU -> time average -> linear -> softmax over N experts
* routing: top-K with per-batch capacity (see :mod:`.routing`)
* experts (routed and shared): patchify -> embed -> ``depth`` x
  (cross-patch block, cross-channel block) -> projection to ``L_out_dim``
* head: [weighted routed sum, shared] concat -> fuse -> patch average ->
  linear -> GELU -> velocity / log-variance heads
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .. import diffkernel as dk
from ..diffkernel import Tensor
from .config import MoeConfig
from .routing import GateDecision, topk_route

SHARED = "shared"


@dataclass
class VelocityEstimate:
    v_b: np.ndarray         # (3,) m/s, body frame
    sigma_diag: np.ndarray  # (3,) variances, (m/s)^2


@dataclass
class MoeOutput:
    v: Tensor          # [B, 3]
    logvar: Tensor     # [B, 3]
    decision: GateDecision

    @property
    def sigma_diag(self) -> np.ndarray:
        return np.exp(self.logvar.data)


def expert_names(cfg: MoeConfig) -> list[str]:
    return [f"expert{i}" for i in range(cfg.N)]


def _linear_shape(fan_in: int, fan_out: int) -> list[tuple[str, tuple[int, ...], str, int]]:
    return [("W", (fan_in, fan_out), "uniform", fan_in), ("b", (fan_out,), "zeros", fan_in)]


def param_layout(cfg: MoeConfig) -> Iterator[tuple[str, tuple[int, ...], str, int]]:
    """Yield ``(name, shape, init, fan_in)`` for every parameter array, in a fixed order."""
    G, P, Din, Dout, H = cfg.gate_channels, cfg.N_patch, cfg.L_inner_feature, cfg.L_out_dim, cfg.head_hidden
    yield ("gate.conv.W", (G, cfg.in_channels), "uniform", cfg.in_channels)
    yield ("gate.conv.b", (G,), "zeros", cfg.in_channels)
    for n, s, i, f in _linear_shape(G, cfg.N):
        yield (f"gate.fc.{n}", s, i, f)
    for ex in expert_names(cfg) + [SHARED]:
        for n, s, i, f in _linear_shape(cfg.patch_dim, Din):
            yield (f"{ex}.embed.{n}", s, i, f)
        for j in range(cfg.depth):
            pre = f"{ex}.blk{j}"
            yield (f"{pre}.aff1.alpha", (Din,), "ones", Din)
            yield (f"{pre}.aff1.beta", (Din,), "zeros", Din)
            yield (f"{pre}.conv.W", (P, P), "uniform", P)
            yield (f"{pre}.conv.b", (P,), "zeros", P)
            for n, s, i, f in _linear_shape(Din, Din):
                yield (f"{pre}.lin.{n}", s, i, f)
            yield (f"{pre}.aff2.alpha", (Din,), "ones", Din)
            yield (f"{pre}.aff2.beta", (Din,), "zeros", Din)
            for n, s, i, f in _linear_shape(Din, Din):
                yield (f"{pre}.mlp1.{n}", s, i, f)
            for n, s, i, f in _linear_shape(Din, Din):
                yield (f"{pre}.mlp2.{n}", s, i, f)
        for n, s, i, f in _linear_shape(Din, Dout):
            yield (f"{ex}.proj.{n}", s, i, f)
    for n, s, i, f in _linear_shape(2 * Dout, Dout):
        yield (f"head.fuse.{n}", s, i, f)
    for n, s, i, f in _linear_shape(Dout, H):
        yield (f"head.fc.{n}", s, i, f)
    for n, s, i, f in _linear_shape(H, 3):
        yield (f"head.vel.{n}", s, i, f)
    for n, s, i, f in _linear_shape(H, 3):
        yield (f"head.logvar.{n}", s, i, f)


def init_params(cfg: MoeConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    params = {}
    for name, shape, how, fan_in in param_layout(cfg):
        if how == "uniform":
            data = dk.uniform_init(rng, shape, fan_in)
        elif how == "ones":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def patchify(windows: np.ndarray, cfg: MoeConfig) -> np.ndarray:
    """``[B, 9, L] -> [B, N_patch, 9 * L_feature]``; each patch row is time-major."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim == 2:
        windows = windows[None]
    B, C, L = windows.shape
    if C != cfg.in_channels or L != cfg.L:
        raise dk.ShapeError(f"window shape {(C, L)} does not match config {(cfg.in_channels, cfg.L)}")
    return np.ascontiguousarray(windows.transpose(0, 2, 1)).reshape(B, cfg.N_patch, cfg.patch_dim)


def gate_forward(params: dict[str, Tensor], cfg: MoeConfig, windows: np.ndarray) -> Tensor:
    x = Tensor(np.asarray(windows, dtype=np.float64))
    if x.ndim != 3 or x.shape[1:] != (cfg.in_channels, cfg.L):
        raise dk.ShapeError(f"gate: expected [B, {cfg.in_channels}, {cfg.L}], got {x.shape}")
    h = dk.conv1d_k1(x, params["gate.conv.W"], params["gate.conv.b"])
    h = dk.global_avg_pool(dk.gelu(h))
    return dk.softmax(dk.linear(h, params["gate.fc.W"], params["gate.fc.b"]))


def _lin(params, x, name):
    return dk.linear(x, params[f"{name}.W"], params[f"{name}.b"])


def expert_forward(params: dict[str, Tensor], cfg: MoeConfig, patches, expert: str) -> Tensor:
    """Feature extractor for one expert: ``[b, N_patch, 9 L_feature] -> [b, N_patch, L_out_dim]``."""
    h = _lin(params, Tensor(patches) if not isinstance(patches, Tensor) else patches, f"{expert}.embed")
    for j in range(cfg.depth):
        pre = f"{expert}.blk{j}"
        z = dk.affine_scale_shift(h, params[f"{pre}.aff1.alpha"], params[f"{pre}.aff1.beta"])
        z = dk.conv1d_k1(z, params[f"{pre}.conv.W"], params[f"{pre}.conv.b"])
        z = _lin(params, z, f"{pre}.lin")
        z = dk.affine_scale_shift(z, params[f"{pre}.aff2.alpha"], params[f"{pre}.aff2.beta"])
        h = h + z
        z = _lin(params, dk.gelu(_lin(params, h, f"{pre}.mlp1")), f"{pre}.mlp2")
        h = h + z
    return _lin(params, h, f"{expert}.proj")


def routing_weights(decision: GateDecision) -> Tensor:
    """Differentiable renormalized weights, zero outside each sample's assigned set."""
    mask = decision.assign.astype(np.float64)
    masked = decision.probs * mask
    s = masked.sum(axis=1, keepdims=True)
    # samples that lost every slot keep a zero row instead of 0/0
    s = s + (mask.sum(axis=1, keepdims=True) == 0).astype(np.float64)
    return masked / s


def moe_forward(params: dict[str, Tensor], cfg: MoeConfig, windows: np.ndarray,
                capacity: int | None = None) -> MoeOutput:
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim == 2:
        windows = windows[None]
    patches = patchify(windows, cfg)
    B = patches.shape[0]
    probs = gate_forward(params, cfg, windows)
    decision = topk_route(probs, cfg, capacity)
    w = routing_weights(decision)

    routed = None
    for e, name in enumerate(expert_names(cfg)):
        rows = np.flatnonzero(decision.assign[:, e])
        if rows.size == 0:
            continue
        feats = expert_forward(params, cfg, patches[rows], name)
        we = w[rows, e].reshape(-1, 1, 1)
        part = dk.scatter_rows(feats * we, rows, B)
        routed = part if routed is None else routed + part
    shared = expert_forward(params, cfg, patches, SHARED)
    if routed is None:
        routed = Tensor(np.zeros(shared.shape))

    h = _lin(params, dk.concat([routed, shared], axis=-1), "head.fuse")
    h = dk.global_avg_pool(dk.transpose(h))
    h = dk.gelu(_lin(params, h, "head.fc"))
    return MoeOutput(v=_lin(params, h, "head.vel"), logvar=_lin(params, h, "head.logvar"),
                     decision=decision)


class MoeModel:
    """Parameters plus config; the unit that is trained, checkpointed and fused."""

    def __init__(self, cfg: MoeConfig, params: dict[str, Tensor] | None = None, seed: int = 0,
                 buffers: dict[str, np.ndarray] | None = None):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, np.random.default_rng(seed))
        # fixed per-channel input standardization; not trained, not counted as parameters
        self.buffers = buffers if buffers is not None else {
            "input.mean": np.zeros(cfg.in_channels), "input.std": np.ones(cfg.in_channels)}

    def fit_normalizer(self, windows: np.ndarray) -> None:
        self.buffers["input.mean"] = windows.mean(axis=(0, 2))
        self.buffers["input.std"] = np.maximum(windows.std(axis=(0, 2)), 1e-6)

    def normalize(self, windows: np.ndarray) -> np.ndarray:
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim == 2:
            windows = windows[None]
        return (windows - self.buffers["input.mean"][:, None]) / self.buffers["input.std"][:, None]

    def forward(self, windows: np.ndarray, capacity: int | None = None) -> MoeOutput:
        return moe_forward(self.params, self.cfg, self.normalize(windows), capacity)

    def predict(self, window: np.ndarray) -> VelocityEstimate:
        out = self.forward(np.asarray(window)[None] if np.ndim(window) == 2 else window)
        return VelocityEstimate(v_b=out.v.data[0].copy(), sigma_diag=out.sigma_diag[0].copy())

    def predict_batch(self, windows: np.ndarray, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
        """Per-window inference (capacity never binds), returned as arrays."""
        vs, sig = [], []
        for i in range(0, len(windows), batch_size):
            out = self.forward(windows[i:i + batch_size], capacity=batch_size)
            vs.append(out.v.data)
            sig.append(out.sigma_diag)
        return np.concatenate(vs), np.concatenate(sig)

    def num_params(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))
