"""Run configuration: a flat ``section.key = value`` text file.

Grammar (one assignment per line)::

    # comment               (also allowed after a value)
    section.key = value

Values are parsed according to the type of the default: ints, floats,
booleans (``true``/``false``), strings, ``none`` for optional fields, and
comma-separated lists for tuples. Unknown sections or keys are errors.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .ekf import CHI2_GATE_3DOF, NoiseParams
from .moenet.config import ConfigError as MoeConfigError
from .moenet.config import MoeConfig
from .moenet.train import TrainConfig

SCHEMA_VERSION = 1

# fixed offsets added to run.seed per component
SEED_OFFSET_SIM = 1000
SEED_OFFSET_WINDOWS = 2000
SEED_OFFSET_TRAIN = 3000
SEED_OFFSET_SPLIT = 4000


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key, self.line = key, line
        where = "".join([f" (key {key}" if key else "", f", line {line}" if key and line else
                         (f" (line {line}" if line else ""), ")" if key or line else ""])
        super().__init__(message + where)
        self.message = message


@dataclass(frozen=True)
class RunSection:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0


@dataclass(frozen=True)
class SimSection:
    n_rides: int = 4
    duration: float = 60.0      # s per ride
    roughness: str = "paved"    # paved | unpaved | numeric PSD scale
    rate_hz: float = 100.0
    start_stop: float = 2.5     # s of standstill at the start of each ride


@dataclass(frozen=True)
class DataSection:
    stride: int = 10            # window stride in samples
    att_noise_deg: float = 2.0  # per-window attitude perturbation
    train_fraction: float = 0.7
    val_fraction: float = 0.1


@dataclass(frozen=True)
class FuseSection:
    stride: int = 10
    gate: float | None = CHI2_GATE_3DOF
    init_samples: int = 50
    oracle_sigma: float = 0.02  # m/s, 1-sigma of the oracle velocity


@dataclass(frozen=True)
class EvalSection:
    rte_delta: float = 60.0


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    moe: MoeConfig = field(default_factory=MoeConfig)
    noise: NoiseParams = field(default_factory=NoiseParams)
    sim: SimSection = field(default_factory=SimSection)
    data: DataSection = field(default_factory=DataSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    fuse: FuseSection = field(default_factory=FuseSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def seed_for(self, offset: int) -> int:
        return self.run.seed + offset

    def as_flat(self) -> dict[str, object]:
        out = {}
        for sec in fields(self):
            obj = getattr(self, sec.name)
            for f in fields(obj):
                out[f"{sec.name}.{f.name}"] = getattr(obj, f.name)
            if sec.name == "moe":
                out["moe.L"] = obj.L
        return out

    def dump(self) -> str:
        lines = [f"# effective configuration (schema {self.run.schema_version})"]
        for k, v in self.as_flat().items():
            lines.append(f"{k} = {_format_value(v)}")
        return "\n".join(lines) + "\n"


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _field_types(cls) -> dict[str, object]:
    defaults = cls()
    return {f.name: (f.type, getattr(defaults, f.name)) for f in fields(cls)}


def _parse_scalar(text: str, default, annotation: str):
    t = text.strip()
    optional = "None" in str(annotation)
    if optional and t.lower() == "none":
        return None
    if isinstance(default, bool) or "bool" in str(annotation):
        if t.lower() in ("true", "1", "yes"):
            return True
        if t.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {t!r}")
    if isinstance(default, tuple) or "tuple" in str(annotation):
        return tuple(int(x) for x in t.split(",") if x.strip())
    if "int" in str(annotation) and "float" not in str(annotation):
        return int(t)
    if "float" in str(annotation):
        return float(t)
    return t


# which config sections feed which dataclass fields
_SECTIONS = {f.name: f.default_factory for f in fields(RunConfig)}


def parse_text(text: str, source: str = "<config>") -> RunConfig:
    values: dict[str, dict[str, object]] = {s: {} for s in _SECTIONS}
    lines: dict[str, int] = {}
    moe_L = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}: expected 'section.key = value', got {body!r}", line=lineno)
        key, val = (s.strip() for s in body.split("=", 1))
        if key.count(".") != 1:
            raise ConfigError(f"{source}: key must look like section.key", key=key, line=lineno)
        sec, name = key.split(".")
        if sec not in _SECTIONS:
            raise ConfigError(f"{source}: unknown section {sec!r}", key=key, line=lineno)
        if key in lines:
            raise ConfigError(f"{source}: duplicate key (first set on line {lines[key]})", key=key, line=lineno)
        lines[key] = lineno
        if key == "moe.L":
            try:
                moe_L = int(val)
            except ValueError as e:
                raise ConfigError(f"{source}: bad value {val!r}: {e}", key=key, line=lineno) from None
            continue
        types = _field_types(_SECTIONS[sec])
        if name not in types:
            raise ConfigError(f"{source}: unknown key", key=key, line=lineno)
        ann, default = types[name]
        try:
            values[sec][name] = _parse_scalar(val, default, ann)
        except ValueError as e:
            raise ConfigError(f"{source}: bad value {val!r}: {e}", key=key, line=lineno) from None

    built = {}
    for sec, factory in _SECTIONS.items():
        try:
            built[sec] = replace(factory(), **values[sec]) if values[sec] else factory()
        except (MoeConfigError, ValueError, TypeError) as e:
            key, line = _blame(str(e), sec, values[sec], lines)
            raise ConfigError(f"{source}: {e}", key=key, line=line) from None
    cfg = RunConfig(**built)
    _validate(cfg, moe_L, lines, source)
    return cfg


def _blame(msg: str, sec: str, set_keys: dict, lines: dict[str, int]) -> tuple[str | None, int | None]:
    """Point a constraint error at the set key it names (latest line wins)."""
    words = msg.replace("=", " ").replace(",", " ").replace(":", " ").split()
    hits = [k for k in set_keys if k in words or msg.startswith(f"{k} ")]
    hits = hits or list(set_keys)
    if not hits:
        return None, None
    best = max(hits, key=lambda k: lines[f"{sec}.{k}"])
    return f"{sec}.{best}", lines[f"{sec}.{best}"]


def _validate(cfg: RunConfig, moe_L: int | None, lines: dict[str, int], source: str) -> None:
    def fail(msg, *keys):
        keys = [k for k in keys if k in lines] or list(keys)
        k = max(keys, key=lambda x: lines.get(x, 0))
        raise ConfigError(f"{source}: {msg}", key=k, line=lines.get(k))

    if cfg.run.schema_version != SCHEMA_VERSION:
        fail(f"unsupported schema_version {cfg.run.schema_version}", "run.schema_version")
    if moe_L is not None and moe_L != cfg.moe.L:
        fail(f"L = N_patch * L_feature violated: {moe_L} != {cfg.moe.N_patch} * {cfg.moe.L_feature}",
             "moe.L", "moe.N_patch", "moe.L_feature")
    if cfg.sim.n_rides < 1:
        fail("sim.n_rides must be >= 1", "sim.n_rides")
    if not cfg.sim.duration > 0:
        fail("sim.duration must be > 0", "sim.duration")
    if not cfg.sim.rate_hz > 0:
        fail("sim.rate_hz must be > 0", "sim.rate_hz")
    if cfg.sim.start_stop < 0:
        fail("sim.start_stop must be >= 0", "sim.start_stop")
    if cfg.sim.roughness not in ("paved", "unpaved"):
        try:
            if float(cfg.sim.roughness) <= 0:
                raise ValueError
        except ValueError:
            fail(f"sim.roughness must be paved, unpaved or a positive number, got {cfg.sim.roughness!r}",
                 "sim.roughness")
    if cfg.data.stride < 1:
        fail("data.stride must be >= 1", "data.stride")
    if cfg.data.att_noise_deg < 0:
        fail("data.att_noise_deg must be >= 0", "data.att_noise_deg")
    fr = (cfg.data.train_fraction, cfg.data.val_fraction)
    if not (0 < fr[0] <= 1 and 0 <= fr[1] < 1 and sum(fr) <= 1 + 1e-12):
        fail("data fractions must satisfy 0 < train, 0 <= val, train + val <= 1",
             "data.train_fraction", "data.val_fraction")
    t = cfg.train
    if t.max_epochs < 1 or t.batch_size < 1 or t.patience < 1 or not t.lr > 0 or t.min_delta < 0:
        fail("train fields must be positive (max_epochs, batch_size, patience, lr) and min_delta >= 0",
             "train.max_epochs", "train.batch_size", "train.patience", "train.lr", "train.min_delta")
    if not t.phases or any(p not in (1, 2) for p in t.phases):
        fail(f"train.phases must be a list drawn from 1, 2; got {t.phases}", "train.phases")
    if t.max_steps is not None and t.max_steps < 1:
        fail("train.max_steps must be >= 1 or none", "train.max_steps")
    f = cfg.fuse
    if f.stride < 1:
        fail("fuse.stride must be >= 1", "fuse.stride")
    if f.gate is not None and not f.gate > 0:
        fail("fuse.gate must be > 0 or none", "fuse.gate")
    if f.init_samples < 1:
        fail("fuse.init_samples must be >= 1", "fuse.init_samples")
    if not f.oracle_sigma > 0:
        fail("fuse.oracle_sigma must be > 0", "fuse.oracle_sigma")
    if not cfg.eval.rte_delta > 0:
        fail("eval.rte_delta must be > 0", "eval.rte_delta")


def parse_config(path: str | Path | None) -> RunConfig:
    """Parse a config file; ``None`` gives the all-defaults configuration."""
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_text(text, str(path))


__all__ = ["RunConfig", "ConfigError", "parse_config", "parse_text", "SCHEMA_VERSION",
           "SEED_OFFSET_SIM", "SEED_OFFSET_WINDOWS", "SEED_OFFSET_TRAIN", "SEED_OFFSET_SPLIT"]
