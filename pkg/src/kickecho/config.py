"""Experiment configuration: YAML file plus command-line overrides.

Every section is a dataclass whose defaults are the reference numerical
choices; unknown keys and out-of-range values raise :class:`ConfigError`
naming the offending field.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError

SCENARIOS = ("classical", "lyapunov", "stick", "quantum-echo", "semiclassical", "levy-fit", "decay-fit", "sweep")


@dataclass
class MapSection:
    K: float = 3.0
    variant: str = "A"  # drift first; quantum runs always kick first


@dataclass
class PacketSection:
    r0: float = 2.2
    p0: float = 3.0
    k: float = 1.0  # hbar / xi^2, a minimum-uncertainty packet


@dataclass
class EnsembleSection:
    n: int = 10_000
    fixed_r: bool = False
    order: str = "first"  # semiclassical estimator: first | second
    d_ratio: float = 1.0  # k inside the second-order D factor
    bins: str = "fd"


@dataclass
class ThresholdSection:
    floor: float = 1e-5  # smallest usable M
    gap: float = 0.05  # t0 detection
    saturation_alpha: float = 0.2  # t_s detection
    slope_tol: float = 0.0005  # turning-point tolerance
    step: int = 20  # local-alpha window for t2/t3
    alpha_step: int = 50  # local-alpha window for c0 and Gaussian checks
    search_horizon: int = 2000
    horizon: int = 10_000
    nu_mode: str = "Num1"
    nu_time: int = 10
    min_tail: int = 1000  # saturation average
    span: int = 5
    repeats: int = 20


@dataclass
class LevySection:
    times: list = field(default_factory=lambda: [1, 10, 100])
    n_freq: int = 4
    pad: int = 4
    model: str = "exp"
    policy: str = "marquardt"


@dataclass
class StickSection:
    r_center: float = 2.2
    p_threshold: float = 2.0
    max_steps: int = 100_000


@dataclass
class SweepSection:
    K: list = field(default_factory=lambda: [3.0])
    p_center: list = field(default_factory=lambda: [3.0])
    sigma: list = field(default_factory=lambda: [0.1])
    cap: int = 1000


@dataclass
class ExperimentConfig:
    scenario: str = "quantum-echo"
    seed: int = 0
    out: str = "runs"
    N: int = 4096
    T: int = 1000
    sigmas: list = field(default_factory=lambda: [0.01])
    threads: int = 1
    input: str | None = None  # echo CSV for decay-fit
    map: MapSection = field(default_factory=MapSection)
    packet: PacketSection = field(default_factory=PacketSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    thresholds: ThresholdSection = field(default_factory=ThresholdSection)
    levy: LevySection = field(default_factory=LevySection)
    stick: StickSection = field(default_factory=StickSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Hash of everything that can change results (not ``out`` or ``threads``)."""
        data = {k: v for k, v in self.to_dict().items() if k not in ("out", "threads")}
        text = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    kinds = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(kinds))
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown field(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = kinds[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        where = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, where)
        else:
            kwargs[name] = _coerce(value, default, where)
    return cls(**kwargs)


def _coerce(value, default, where):
    if default is None or value is None:
        return value
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return list(value)
        if isinstance(default, str):
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: cannot use {value!r} (expected {type(default).__name__})") from None
    return value


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    errs = []
    if cfg.scenario not in SCENARIOS:
        errs.append(f"scenario: must be one of {', '.join(SCENARIOS)}")
    if cfg.N < 8 or cfg.N & (cfg.N - 1):
        errs.append("N: must be a power of two >= 8")
    if cfg.T < 1:
        errs.append("T: must be >= 1")
    if cfg.seed < 0 or cfg.seed >= 1 << 64:
        errs.append("seed: must fit in an unsigned 64-bit integer")
    if cfg.threads < 1:
        errs.append("threads: must be >= 1")
    if cfg.scenario in ("quantum-echo", "semiclassical", "decay-fit") and not cfg.sigmas:
        errs.append("sigmas: must not be empty")
    if any(not isinstance(s, (int, float)) or s < 0 for s in cfg.sigmas):
        errs.append("sigmas: must be nonnegative numbers")
    if list(cfg.sigmas) != sorted(cfg.sigmas):
        errs.append("sigmas: must be sorted ascending")
    if cfg.map.K < 0:
        errs.append("map.K: must be >= 0")
    if cfg.map.variant not in ("A", "B"):
        errs.append("map.variant: must be A or B")
    if not cfg.packet.k > 0:
        errs.append("packet.k: must be > 0")
    if cfg.ensemble.n < 1:
        errs.append("ensemble.n: must be >= 1")
    if cfg.ensemble.order not in ("first", "second"):
        errs.append("ensemble.order: must be first or second")
    if cfg.levy.model not in ("exp", "linear"):
        errs.append("levy.model: must be exp or linear")
    if cfg.levy.policy not in ("marquardt", "nielsen"):
        errs.append("levy.policy: must be marquardt or nielsen")
    if cfg.thresholds.nu_mode not in ("Num1", "Num2"):
        errs.append("thresholds.nu_mode: must be Num1 or Num2")
    if cfg.scenario == "decay-fit" and cfg.input is None and not cfg.sigmas:
        errs.append("input: decay-fit needs an echo CSV or sigmas to simulate")
    if cfg.scenario == "sweep":
        for name in ("K", "p_center", "sigma"):
            if not getattr(cfg.sweep, name):
                errs.append(f"sweep.{name}: must not be empty")
    if errs:
        raise ConfigError("; ".join(errs))
    return cfg


def from_dict(data: dict | None) -> ExperimentConfig:
    return validate(_build(ExperimentConfig, data or {}, ""))


def load(path) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return from_dict(data)


def dump(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
