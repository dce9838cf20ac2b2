"""Pipeline configuration: defaults, validation and the INI-style config file."""

import configparser
from dataclasses import asdict, dataclass, fields, replace

from .exceptions import ConfigError

# config-file section for each key
SECTIONS = {
    "signal": ("frame_len", "stride", "domain", "trim_threshold", "trim_window", "filename_pattern"),
    "fmca": ("n_components", "hidden_units", "n_layers", "fmca_lr", "epsilon", "n_iter",
             "batch_size", "activation", "head", "head_epsilon"),
    "features": ("n_intervals", "clf_hidden_units", "clf_lr", "clf_epochs", "clf_patience",
                 "clf_batch_size", "standardize"),
    "run": ("seed", "folds"),
}

# short names accepted by ``sweep``
SWEEP_ALIASES = {"L": "frame_len", "S": "stride", "K": "n_components", "T": "n_intervals"}


@dataclass(frozen=True)
class PipelineConfig:
    frame_len: int = 50
    stride: int = 1
    domain: str = "spectral"
    trim_threshold: float = 0.02
    trim_window: int = 128
    filename_pattern: str = r"^(?P<label>\d+)_(?P<speaker>[^_]+)_(?P<index>[^_.]+)\.wav$"

    n_components: int = 8
    hidden_units: int = 200
    n_layers: int = 3
    fmca_lr: float = 1e-3
    epsilon: float = 1e-4
    n_iter: int = 7000
    batch_size: int = 512
    activation: str = "tanh"
    head: str = "linear"
    head_epsilon: float = 0.0

    n_intervals: int = 6
    clf_hidden_units: int = 40
    clf_lr: float = 1e-3
    clf_epochs: int = 300
    clf_patience: int = 30
    clf_batch_size: int = 32
    standardize: bool = True

    seed: int = 0
    folds: int = 5

    def __post_init__(self):
        self.validate()

    def validate(self):
        counts = ("frame_len", "stride", "n_components", "hidden_units", "batch_size", "n_intervals",
                  "clf_hidden_units", "clf_epochs", "clf_patience", "clf_batch_size", "trim_window",
                  "folds")
        for key in counts:
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        for key in ("n_layers", "n_iter", "seed"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be >= 0, got {getattr(self, key)}")
        for key in ("fmca_lr", "clf_lr"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be > 0, got {getattr(self, key)}")
        for key in ("epsilon", "head_epsilon"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be >= 0, got {getattr(self, key)}")
        if self.frame_len < 2:
            raise ConfigError(f"frame_len must be >= 2, got {self.frame_len}")
        if not 0 < self.trim_threshold < 1:
            raise ConfigError(f"trim_threshold must lie in (0, 1), got {self.trim_threshold}")
        if self.domain not in ("temporal", "spectral"):
            raise ConfigError(f"domain must be 'temporal' or 'spectral', got {self.domain!r}")
        if self.domain == "spectral" and self.frame_len % 2:
            raise ConfigError(f"frame_len must be even for spectral inputs, got {self.frame_len}")
        if self.activation not in ("tanh", "relu"):
            raise ConfigError(f"activation must be 'tanh' or 'relu', got {self.activation!r}")
        if self.head not in ("softmax", "linear"):
            raise ConfigError(f"head must be 'softmax' or 'linear', got {self.head!r}")

    @property
    def input_dim(self):
        return self.frame_len // 2 if self.domain == "spectral" else self.frame_len

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return cls(**{k: coerce(k, v) for k, v in data.items()})


def field_type(key):
    for f in fields(PipelineConfig):
        if f.name == key:
            return type(f.default)
    raise ConfigError(f"unknown config key: {key}")


def coerce(key, value):
    """Convert a string (from a file or flag) to the type of ``key``'s default."""
    kind = field_type(key)
    if not isinstance(value, str) or kind is str:
        return value
    try:
        if kind is bool:
            lowered = value.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind is int:
            return int(value)
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}") from None


def read_config_file(path):
    """Parse ``key = value`` lines grouped under the sections in :data:`SECTIONS`."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"key {key!r} does not belong in section [{section}]")
            values[key] = value
    return values


def write_config_file(config, path):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    data = config.to_dict()
    for section, keys in SECTIONS.items():
        parser[section] = {k: str(data[k]) for k in keys}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def load_config(path=None, overrides=None):
    values = read_config_file(path) if path else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return PipelineConfig.from_dict(values)
