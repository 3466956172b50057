"""Experiment configuration: nested dataclasses mirrored by a YAML file.

Unknown keys are rejected so typos fail early. ``to_dict`` / ``from_dict``
round-trip exactly, and ``config_hash`` is the sha256 of the canonical JSON
form.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .forecaster import BranchSpec, ForecastTrainConfig
from .gridsim import ReferenceGridConfig, RenewableModelConfig
from .w2v import W2VTrainConfig
from .weatherfield import SynthWeatherConfig


class ConfigError(ValueError):
    pass


@dataclass
class GridSection:
    file: str | None = None                 # JSON grid file; None builds the reference grid
    reference: ReferenceGridConfig = field(default_factory=ReferenceGridConfig)
    renewables: RenewableModelConfig = field(default_factory=RenewableModelConfig)


@dataclass
class WeatherSection:
    T: int = 2000
    file: str | None = None                 # weather.csv to ingest instead of synthesizing
    synth: SynthWeatherConfig = field(default_factory=lambda: SynthWeatherConfig(seed=1))


@dataclass
class DataSection:
    vmax: float = 1.20
    max_drop_fraction: float = 0.5
    fit_on_full: bool = False
    workers: int = 1


@dataclass
class W2VSection:
    max_recon_error: float = 0.08
    hidden_w: int = 32
    hidden_v: int = 128
    encoder_hidden: int = 0
    out_act: str = "identity"
    lam: float = 0.8
    lambda_grid: list = field(default_factory=lambda: [0.2, 0.4, 0.8, 1.6, 3.2])
    baselines: list = field(default_factory=lambda: ["ae_random", "mlp3"])
    train: W2VTrainConfig = field(default_factory=W2VTrainConfig)


@dataclass
class HorizonSpec:
    k: int = 24
    lead: int = 1
    h: int = 1
    gamma: float | None = None              # None: use the sweep result, else gamma_default


@dataclass
class ForecasterSection:
    horizons: list = field(default_factory=lambda: [HorizonSpec(24, 1, 1), HorizonSpec(24, 2, 3),
                                                    HorizonSpec(24, 4, 6)])
    branch: BranchSpec = field(default_factory=BranchSpec)
    train: ForecastTrainConfig = field(default_factory=ForecastTrainConfig)
    gamma_default: float = 2.0
    gamma_grid: list = field(default_factory=lambda: [1.0, 1.78, 3.16, 5.62, 10.0])
    gamma_refine: int = 2


@dataclass
class EvalSection:
    n_bins: int = 6
    large_error_fraction: float = 0.05
    lambda_cap: float = 0.05
    gamma_cap: float = 0.05
    hist_bins: int = 20


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "out"
    run_name: str = "desk"
    grid: GridSection = field(default_factory=GridSection)
    weather: WeatherSection = field(default_factory=WeatherSection)
    data: DataSection = field(default_factory=DataSection)
    w2v: W2VSection = field(default_factory=W2VSection)
    forecaster: ForecasterSection = field(default_factory=ForecasterSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self, base_dir: Path | None = None) -> "ExperimentConfig":
        if self.weather.T < 1 and self.weather.file is None:
            raise ConfigError(f"weather.T must be >= 1, got {self.weather.T}")
        for name in ("file",):
            for sect in (self.grid, self.weather):
                p = getattr(sect, name)
                if p is not None and not _resolve(p, base_dir).exists():
                    raise ConfigError(f"referenced file does not exist: {p}")
        if self.forecaster.train.stage1_fraction < 2.0 / 3.0 - 1e-12:
            raise ConfigError("forecaster.train.stage1_fraction must be >= 2/3")
        if not self.forecaster.horizons:
            raise ConfigError("forecaster.horizons must list at least one geometry")
        if not (0 < self.eval.large_error_fraction <= 1):
            raise ConfigError("eval.large_error_fraction must lie in (0, 1]")
        if self.w2v.lam < 0:
            raise ConfigError("w2v.lam must be non-negative")
        for b in self.w2v.baselines:
            if b not in ("ae_random", "mlp3"):
                raise ConfigError(f"unknown baseline {b!r}")
        return self

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    @classmethod
    def from_dict(cls, d: dict | None) -> "ExperimentConfig":
        try:
            return _build(cls, d or {}, "")
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _resolve(p: str, base_dir: Path | None) -> Path:
    q = Path(p)
    return q if q.is_absolute() or base_dir is None else base_dir / q


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, float) and x == float("inf"):
        return "inf"
    return x


_LIST_TYPES = {("forecaster", "horizons"): HorizonSpec}


def _build(cls, d: dict, path: str):
    if not isinstance(d, dict):
        raise ConfigError(f"section {path or '<root>'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    extra = set(d) - set(known)
    if extra:
        raise ConfigError(f"unknown key(s) in {path or '<root>'}: {sorted(extra)}")
    kwargs = {}
    defaults = cls()
    for name, f in known.items():
        if name not in d:
            continue
        val = d[name]
        default = getattr(defaults, name)
        sub = f"{path}.{name}" if path else name
        if is_dataclass(default):
            kwargs[name] = _build(type(default), val or {}, sub)
        elif (path.split(".")[-1] if path else "", name) in _LIST_TYPES:
            item_cls = _LIST_TYPES[(path.split(".")[-1], name)]
            kwargs[name] = [_build(item_cls, v, f"{sub}[{i}]") for i, v in enumerate(val)]
        elif isinstance(default, tuple):
            kwargs[name] = tuple(val)
        elif val == "inf":
            kwargs[name] = float("inf")
        else:
            kwargs[name] = val
    return cls(**kwargs)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return ExperimentConfig.from_dict(raw).validate(path.parent)


def dump_config(cfg: ExperimentConfig, path=None) -> str:
    text = yaml.safe_dump(cfg.to_dict(), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text
