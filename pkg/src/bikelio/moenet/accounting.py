"""Analytic parameter and FLOP counts.

FLOPs count the multiply-adds of linear and kernel-1 convolution layers
(2 per multiply-add) for a single window; elementwise work (affine, GELU,
pooling, softmax) is not counted.
"""
from __future__ import annotations

from dataclasses import dataclass

from .config import MoeConfig


@dataclass(frozen=True)
class Counts:
    params: int
    flops: int

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.params + other.params, self.flops + other.flops)

    def __mul__(self, k: int) -> "Counts":
        return Counts(self.params * k, self.flops * k)

    __rmul__ = __mul__


@dataclass(frozen=True)
class ModelCounts:
    total_params: int
    params_per_inference: int
    flops_per_inference: int
    dense_flops: int
    gate: Counts
    expert: Counts
    head: Counts

    @property
    def flop_ratio(self) -> float:
        return self.flops_per_inference / self.dense_flops


def linear_counts(fan_in: int, fan_out: int, rows: int = 1) -> Counts:
    return Counts(fan_in * fan_out + fan_out, 2 * fan_in * fan_out * rows)


def conv_k1_counts(c_in: int, c_out: int, length: int) -> Counts:
    return Counts(c_in * c_out + c_out, 2 * c_in * c_out * length)


def affine_counts(d: int) -> Counts:
    return Counts(2 * d, 0)


def gate_counts(cfg: MoeConfig) -> Counts:
    return conv_k1_counts(cfg.in_channels, cfg.gate_channels, cfg.L) + \
        linear_counts(cfg.gate_channels, cfg.N)


def expert_counts(cfg: MoeConfig) -> Counts:
    P, Din = cfg.N_patch, cfg.L_inner_feature
    block = (affine_counts(Din) * 2
             + conv_k1_counts(P, P, Din)
             + linear_counts(Din, Din, P) * 3)
    return linear_counts(cfg.patch_dim, Din, P) + block * cfg.depth + \
        linear_counts(Din, cfg.L_out_dim, P)


def head_counts(cfg: MoeConfig) -> Counts:
    Dout, H = cfg.L_out_dim, cfg.head_hidden
    return (linear_counts(2 * Dout, Dout, cfg.N_patch) + linear_counts(Dout, H)
            + linear_counts(H, 3) * 2)


def count_params_flops(cfg: MoeConfig) -> ModelCounts:
    """Totals for the full model and for one sparse inference (gate + shared + K routed).

    ``dense_flops`` is the same network with all N routed experts active.
    """
    g, e, h = gate_counts(cfg), expert_counts(cfg), head_counts(cfg)
    total = g.params + (cfg.N + 1) * e.params + h.params
    active = g + e * (cfg.K + 1) + h
    dense = g + e * (cfg.N + 1) + h
    return ModelCounts(total_params=total, params_per_inference=active.params,
                       flops_per_inference=active.flops, dense_flops=dense.flops,
                       gate=g, expert=e, head=h)
