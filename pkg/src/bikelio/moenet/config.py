from __future__ import annotations

from dataclasses import asdict, dataclass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MoeConfig:
    """Network shape and routing hyperparameters.

    ``L = N_patch * L_feature`` is the window length in IMU samples.
    """

    N: int = 8
    K: int = 2
    c: float = 1.25
    N_patch: int = 20
    L_feature: int = 10
    L_inner_feature: int = 64
    L_out_dim: int = 32
    depth: int = 3
    gate_channels: int = 16
    head_hidden: int = 32
    lam: float = 0.01
    in_channels: int = 9

    def __post_init__(self):
        self.validate()

    @property
    def L(self) -> int:
        return self.N_patch * self.L_feature

    @property
    def patch_dim(self) -> int:
        return self.in_channels * self.L_feature

    def validate(self) -> None:
        for name in ("N", "K", "N_patch", "L_feature", "L_inner_feature", "L_out_dim",
                     "depth", "gate_channels", "head_hidden", "in_channels"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not self.K < self.N:
            raise ConfigError(f"K < N violated: K={self.K}, N={self.N}")
        if not self.c >= 1.0:
            raise ConfigError(f"capacity factor c >= 1 violated: c={self.c}")
        if self.lam < 0:
            raise ConfigError(f"lam must be non-negative, got {self.lam}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MoeConfig":
        return cls(**d)
