"""Simulation configuration: BDM and SIR parameter sets and the flat config file format.

Config files are UTF-8 text with one ``key = value`` pair per line. ``#`` starts a
comment. Keys are either the dataclass field names or the usual rate symbols
(``Pp``, ``Pd``, ``Pm``, ``PI``, ``PR``, ``X``).
"""

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from .errors import ConfigError

logger = logging.getLogger(__name__)

# Nondimensional horizon used when t_end is not given.
DEFAULT_HORIZON = 15.0

_ALIASES = {
    "pp": "pp",
    "pd": "pd",
    "pm": "pm",
    "pi": "pi",
    "pr": "pr",
    "x": "size",
    "size": "size",
    "init_fraction": "init_fraction",
    "init_s_fraction": "init_s_fraction",
    "init_i_fraction": "init_i_fraction",
    "t_end": "t_end",
    "n_record": "n_record",
    "seed": "seed",
}

_INT_FIELDS = {"size", "n_record", "seed"}


def _check_rate(name: str, value: float) -> None:
    if not value >= 0.0:
        raise ConfigError(f"{name} must be a non-negative rate, got {value}")


def _check_fraction(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {value}")


def _check_common(size: int, n_record: int, t_end: float, seed: int) -> None:
    if size < 2:
        raise ConfigError(f"lattice size X must be >= 2, got {size}")
    if n_record < 2:
        raise ConfigError(f"n_record must be >= 2, got {n_record}")
    if not t_end > 0.0:
        raise ConfigError(f"t_end must be positive, got {t_end}")
    if seed < 0:
        raise ConfigError(f"seed must be non-negative, got {seed}")


@dataclass(frozen=True)
class BdmConfig:
    """Birth-death-migration process: proliferation, death and migration rates per agent."""

    pp: float
    pd: float
    pm: float
    size: int
    init_fraction: float = 0.05
    t_end: Optional[float] = None
    n_record: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in ("pp", "pd", "pm"):
            _check_rate(name, getattr(self, name))
        _check_fraction("init_fraction", self.init_fraction)
        if self.t_end is None:
            if self.pp <= self.pd:
                raise ConfigError("t_end is required when Pp <= Pd (no logistic time scale)")
            object.__setattr__(self, "t_end", DEFAULT_HORIZON / (self.pp - self.pd))
        _check_common(self.size, self.n_record, self.t_end, self.seed)

    @property
    def kind(self) -> str:
        return "bdm"

    @property
    def time_scale(self) -> float:
        """Factor turning t into nondimensional time T = (Pp - Pd) t."""
        return self.pp - self.pd

    def with_seed(self, seed: int) -> "BdmConfig":
        return dataclasses.replace(self, seed=int(seed))


@dataclass(frozen=True)
class SirConfig:
    """Spatial SIR epidemic: infection, recovery and migration rates per agent."""

    pi: float
    pr: float
    pm: float
    size: int
    init_s_fraction: float = 0.49
    init_i_fraction: float = 0.01
    t_end: Optional[float] = None
    n_record: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in ("pi", "pr", "pm"):
            _check_rate(name, getattr(self, name))
        _check_fraction("init_s_fraction", self.init_s_fraction)
        _check_fraction("init_i_fraction", self.init_i_fraction)
        if self.init_s_fraction + self.init_i_fraction > 1.0:
            raise ConfigError("init_s_fraction + init_i_fraction must not exceed 1")
        if self.t_end is None:
            if self.pr <= 0.0:
                raise ConfigError("t_end is required when PR = 0")
            object.__setattr__(self, "t_end", DEFAULT_HORIZON / self.pr)
        _check_common(self.size, self.n_record, self.t_end, self.seed)
        if round(self.init_s_fraction * self.size**2) + round(self.init_i_fraction * self.size**2) == 0:
            raise ConfigError("SIR lattice starts with no agents; densities are undefined")

    @property
    def kind(self) -> str:
        return "sir"

    @property
    def occupied_fraction(self) -> float:
        """M, the fixed proportion of occupied sites."""
        return self.init_s_fraction + self.init_i_fraction

    @property
    def time_scale(self) -> float:
        """Factor turning t into nondimensional time T = PR t."""
        return self.pr

    def with_seed(self, seed: int) -> "SirConfig":
        return dataclasses.replace(self, seed=int(seed))


SimulationConfig = Union[BdmConfig, SirConfig]


def parse_config_text(text: str, kind: str) -> SimulationConfig:
    """Parse ``key = value`` text into a config of the given kind ("bdm" or "sir")."""
    if kind not in ("bdm", "sir"):
        raise ConfigError(f"Unknown model kind: {kind}")
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        field = _ALIASES.get(key.lower())
        if field is None:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if field in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[field] = int(value) if field in _INT_FIELDS else float(value)
        except ValueError:
            raise ConfigError(f"line {lineno}: cannot parse {value!r} for {key}") from None

    cls = BdmConfig if kind == "bdm" else SirConfig
    names = {f.name for f in dataclasses.fields(cls)}
    stray = sorted(set(values) - names)
    if stray:
        raise ConfigError(f"keys not valid for {kind}: {', '.join(stray)}")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"incomplete {kind} config: {e}") from None


def load_config(path: Union[str, Path], kind: str) -> SimulationConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    config = parse_config_text(text, kind)
    logger.info("loaded config path=%s kind=%s", path, kind)
    return config


def config_to_dict(config: SimulationConfig) -> dict:
    """Flat dict with a ``model`` key, suitable for JSON reports and table rows."""
    return {"model": config.kind, **dataclasses.asdict(config)}


def config_to_text(config: SimulationConfig) -> str:
    lines = [f"# {config.kind} config"]
    for key, value in dataclasses.asdict(config).items():
        lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
    return "\n".join(lines) + "\n"
