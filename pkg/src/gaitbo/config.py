"""Run configuration: one TOML file holding every tunable constant.

Each table maps onto one dataclass. Missing keys take the dataclass
default, unknown keys are rejected, and every value is validated before
any run starts.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

from .bo import TerrainSettings, TrainConfig, n_terrain_features
from .collocation import MeritWeights, SolverConfig
from .gp import KernelParams, default_kernel_params
from .hopper import HopperParams
from .terrain import TerrainError, flat_heightmap, load_heightmap, variable_node_indices


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TerrainConfig:
    file: str = ""                       # empty selects flat ground
    variable_positions: tuple = (0.4, 0.5, 0.6)
    sigma: float = 0.1

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("terrain sigma must be positive")

    def settings(self, base_dir: Path | None = None) -> TerrainSettings:
        if self.file:
            path = Path(self.file)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            base = load_heightmap(path)
        else:
            base = flat_heightmap()
        variable_node_indices(base, self.variable_positions)
        return TerrainSettings(base, tuple(self.variable_positions), self.sigma)


@dataclass(frozen=True)
class KernelConfig:
    goal_lengthscale: float = 0.15
    terrain_lengthscale: float = 0.1
    action_lengthscale: float = 1.5
    signal_variance: float = 0.25
    noise_variance: float = 1e-4

    def __post_init__(self):
        self.params(0)

    def params(self, n_terrain: int) -> KernelParams:
        return default_kernel_params(n_terrain, self.goal_lengthscale, self.terrain_lengthscale,
                                     self.action_lengthscale, self.signal_variance,
                                     self.noise_variance)


SECTIONS = {
    "hopper": HopperParams,
    "terrain": TerrainConfig,
    "solver": SolverConfig,
    "merit": MeritWeights,
    "kernel": KernelConfig,
    "bo": TrainConfig,
}


@dataclass(frozen=True)
class RunConfig:
    hopper: HopperParams = field(default_factory=HopperParams)
    terrain: TerrainConfig = field(default_factory=TerrainConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    merit: MeritWeights = field(default_factory=MeritWeights)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    bo: TrainConfig = field(default_factory=TrainConfig)
    base_dir: Path | None = field(default=None, compare=False)

    def kernel_params(self) -> KernelParams:
        return self.kernel.params(n_terrain_features(self.bo.scenario))

    def terrain_settings(self) -> TerrainSettings:
        return self.terrain.settings(self.base_dir)

    def replace(self, section: str, **changes) -> "RunConfig":
        try:
            new = dataclasses.replace(getattr(self, section), **changes)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {exc}") from exc
        return dataclasses.replace(self, **{section: new})

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            obj = getattr(self, name)
            out[name] = {f.name: _to_toml(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        return out


def _to_toml(value):
    if isinstance(value, tuple):
        return list(value)
    return value


def _coerce(cls, name: str, key: str, value, default):
    """Convert a TOML value to the type of the dataclass default."""
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float) or default is None:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and len(value) == len(default) and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
        value = tuple(float(v) for v in value) if ok else value
    else:
        ok = True
    if not ok:
        raise ConfigError(f"[{name}] {key}: bad value {value!r}")
    return value


def _defaults(cls):
    out = {}
    for f in dataclasses.fields(cls):
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:
            out[f.name] = f.default_factory()
    return out


def from_dict(data: dict, base_dir: Path | None = None) -> RunConfig:
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    sections = {}
    for name, cls in SECTIONS.items():
        table = data.get(name, {})
        if not isinstance(table, dict):
            raise ConfigError(f"[{name}] must be a table")
        defaults = _defaults(cls)
        bad = set(table) - set(defaults)
        if bad:
            raise ConfigError(f"[{name}] unknown key(s): {', '.join(sorted(bad))}")
        kwargs = {k: _coerce(cls, name, k, v, defaults[k]) for k, v in table.items()}
        try:
            sections[name] = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}] {exc}") from exc
    cfg = RunConfig(**sections, base_dir=base_dir)
    try:
        cfg.terrain_settings()
    except TerrainError as exc:
        raise ConfigError(f"[terrain] {exc}") from exc
    return cfg


def load_config(path) -> RunConfig:
    """Parse and validate a TOML file. Raises OSError or ConfigError."""
    path = Path(path)
    with open(path, "rb") as fh:
        try:
            data = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(data, path.parent)


def dumps_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(dumps_config(cfg))
