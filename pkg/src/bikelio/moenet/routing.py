"""Top-K expert selection with per-batch expert capacity."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..diffkernel import Tensor, as_tensor
from .config import MoeConfig


def expert_capacity(cfg: MoeConfig, B: int) -> int:
    """Per-expert cap on samples in a batch of ``B``: ceil(c * B / N)."""
    if B < 1:
        raise ValueError(f"batch size must be >= 1, got {B}")
    # guard against c*B/N landing a hair above an integer through rounding
    q = cfg.c * B / cfg.N
    r = round(q)
    return int(r) if abs(q - r) < 1e-12 else math.ceil(q)


@dataclass
class GateDecision:
    probs: Tensor                 # [B, N] softmax output (differentiable)
    assign: np.ndarray            # [B, N] bool, final assignments
    selected: list[list[int]]     # per sample, experts in slot order
    weights: np.ndarray           # [B, N] renormalized over assigned experts
    capacity: int
    reroutes: list[tuple[int, int, int]] = field(default_factory=list)
    dropped: int = 0

    @property
    def B(self) -> int:
        return self.assign.shape[0]

    @property
    def N(self) -> int:
        return self.assign.shape[1]

    @property
    def importance(self) -> np.ndarray:
        return self.probs.data.sum(axis=0)

    @property
    def load(self) -> np.ndarray:
        return self.assign.sum(axis=0).astype(np.int64)


def rank_experts(p: np.ndarray) -> np.ndarray:
    """Descending-probability order; ties go to the lower index."""
    return np.argsort(-p, kind="stable")


def topk_route(probs, cfg: MoeConfig, capacity: int | None = None) -> GateDecision:
    """Assign each sample K experts, honouring the per-expert capacity.

    Slots are filled in rounds: every sample gets its first expert before any
    sample gets its second. Within a round samples are served in batch order.
    A sample whose preferred expert is full moves down its own ranking to the
    next expert it does not already hold; if every such expert is full the
    slot is dropped.
    """
    probs = as_tensor(probs)
    p = probs.data
    if p.ndim != 2 or p.shape[1] != cfg.N:
        raise ValueError(f"probs must have shape [B, {cfg.N}], got {p.shape}")
    B, N = p.shape
    cap = expert_capacity(cfg, B) if capacity is None else int(capacity)
    ranks = [rank_experts(row) for row in p]
    counts = np.zeros(N, dtype=np.int64)
    assign = np.zeros((B, N), dtype=bool)
    selected: list[list[int]] = [[] for _ in range(B)]
    reroutes = []
    dropped = 0
    for _slot in range(cfg.K):
        for b in range(B):
            preferred = None
            chosen = -1
            for e in ranks[b]:
                if assign[b, e]:
                    continue
                if preferred is None:
                    preferred = int(e)
                if counts[e] < cap:
                    chosen = int(e)
                    break
            if chosen != preferred:
                reroutes.append((b, preferred, chosen))
            if chosen < 0:
                dropped += 1
                continue
            assign[b, chosen] = True
            counts[chosen] += 1
            selected[b].append(chosen)
    masked = np.where(assign, p, 0.0)
    s = masked.sum(axis=1, keepdims=True)
    weights = np.divide(masked, s, out=np.zeros_like(masked), where=s > 0)
    return GateDecision(probs=probs, assign=assign, selected=selected, weights=weights,
                        capacity=cap, reroutes=reroutes, dropped=dropped)
