"""Pipeline configuration and its TOML representation."""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .dynamics import NAS_CANDIDATES

__all__ = [
    "ConfigError",
    "DataConfig",
    "SvdConfig",
    "CaeConfig",
    "LstmConfig",
    "FfnnConfig",
    "NasConfig",
    "RunConfig",
    "PipelineConfig",
    "load_config",
]


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass
class DataConfig:
    bounds: list = field(default_factory=lambda: [[100.0, 200.0], [100.0, 200.0]])
    m: int = 6
    n_test: int = 4
    n_times: int = 75
    T: float = 0.0075
    nx: int = 64
    ny: int = 64
    snapshot_file: str | None = None


@dataclass
class SvdConfig:
    eps: float = 1e-7
    subset_size: int = 25
    keep_v: bool = False


@dataclass
class CaeConfig:
    q: int = 4
    preset: str = "cd"
    side: int | None = None
    epochs: int = 1500
    batch_size: int = 8
    lr: float = 1e-3
    val_fraction: float = 0.1


@dataclass
class LstmConfig:
    window: int = 10
    hidden: list = field(default_factory=lambda: [50, 50, 50])
    epochs: int = 1500
    batch_size: int = 5
    lr: float = 1e-3
    val_fraction: float = 0.1
    head_activation: str = "linear"


@dataclass
class FfnnConfig:
    hidden: list = field(default_factory=lambda: [50])
    activation: str = "leaky_relu"
    epochs: int = 1000
    batch_size: int = 1
    lr: float = 0.2
    val_fraction: float = 0.1


@dataclass
class NasConfig:
    enabled: bool = True
    candidates: list = field(default_factory=lambda: list(NAS_CANDIDATES))


@dataclass
class RunConfig:
    seed: int = 0
    hfm_seconds: float | None = None


_SECTIONS = {
    "data": DataConfig,
    "svd": SvdConfig,
    "cae": CaeConfig,
    "lstm": LstmConfig,
    "ffnn": FfnnConfig,
    "nas": NasConfig,
    "run": RunConfig,
}


@dataclass
class PipelineConfig:
    data: DataConfig = field(default_factory=DataConfig)
    svd: SvdConfig = field(default_factory=SvdConfig)
    cae: CaeConfig = field(default_factory=CaeConfig)
    lstm: LstmConfig = field(default_factory=LstmConfig)
    ffnn: FfnnConfig = field(default_factory=FfnnConfig)
    nas: NasConfig = field(default_factory=NasConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def validate(self) -> "PipelineConfig":
        d = self.data
        if d.m < 1 or d.n_times < 1 or d.n_test < 0:
            raise ConfigError("data counts must be positive")
        if d.T <= 0:
            raise ConfigError("T must be positive")
        if self.svd.subset_size < 1 or d.n_times % self.svd.subset_size:
            raise ConfigError(f"subset_size={self.svd.subset_size} must divide n_times={d.n_times}")
        if self.svd.eps <= 0:
            raise ConfigError("svd eps must be positive")
        if not 1 <= self.lstm.window < d.n_times:
            raise ConfigError("lstm window must satisfy 1 <= w < n_times")
        if self.cae.q < 1:
            raise ConfigError("latent size q must be >= 1")
        for b in d.bounds:
            if len(b) != 2 or not b[1] > b[0]:
                raise ConfigError(f"bad parameter bounds {b}")
        for sec in (self.cae, self.lstm, self.ffnn):
            if sec.epochs < 0 or sec.batch_size < 1 or sec.lr <= 0:
                raise ConfigError("epochs, batch size and learning rate must be positive")
        if self.nas.enabled and not self.nas.candidates:
            raise ConfigError("NAS enabled without candidates")
        return self

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None) -> "PipelineConfig":
        unknown = set(raw) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        parts = {}
        for name, klass in _SECTIONS.items():
            section = dict(raw.get(name, {}))
            allowed = {f.name for f in fields(klass)}
            bad = set(section) - allowed
            if bad:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
            parts[name] = klass(**section)
        cfg = cls(**parts)
        if base_dir is not None and cfg.data.snapshot_file:
            cfg.data.snapshot_file = str((base_dir / cfg.data.snapshot_file).resolve())
        return cfg.validate()


def load_config(path) -> PipelineConfig:
    """Read a TOML run configuration; relative paths resolve against the file's directory."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return PipelineConfig.from_dict(raw, base_dir=path.parent)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
