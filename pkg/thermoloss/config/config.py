"""
Configuration module for the thermoloss toolkit.
Handles loading of pipeline settings from defaults, the environment and a
key-value config file with dotted section keys.
"""
import os
import logging
from dataclasses import dataclass, fields, replace

from dotenv import load_dotenv

from thermoloss.utils.errors import ConfigError
from thermoloss.utils.keyvalue import read_key_values

logger = logging.getLogger(__name__)

ENV_PREFIX = "THERMOLOSS_"

# Every key with its default; the preprocessing defaults follow the calibration
# campaign the toolkit was built for (10x oversampling, 5 s trailing average,
# 80/20 split inside each calibration step).
DEFAULTS = {
    "paths.data": "",
    "paths.segments": "",
    "paths.model": "",
    "paths.truth": "",
    "paths.network": "",
    "paths.constraints": "",
    "paths.out": "out",
    "preprocessing.oversample_factor": 10,
    "preprocessing.window_seconds": 5.0,
    "preprocessing.ambient": 0.0,
    "preprocessing.train_fraction": 0.8,
    "identification.epsilon": 0.0,
    "identification.max_iterations": 5000,
    "identification.step_tolerance": 1e-12,
    "identification.objective_tolerance": 1e-15,
    "identification.rank_tolerance": 1e-10,
    "evaluation.rolling_window_seconds": 60.0,
    "evaluation.compensate_delay": False,
    "synth.seed": 0,
    "synth.dt": 1.0,
    "synth.noise_std": 0.0,
    "synth.step_seconds": 300.0,
    "synth.rest_seconds": 900.0,
    "synth.cycles": 5,
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class PathsConfig:
    data: str = ""
    segments: str = ""
    model: str = ""
    truth: str = ""
    network: str = ""
    constraints: str = ""
    out: str = "out"

    def _in_out(self, value, default_name):
        return value or os.path.join(self.out, default_name)

    @property
    def data_path(self):
        return self._in_out(self.data, "dataset.csv")

    @property
    def segments_path(self):
        return self._in_out(self.segments, "segments.csv")

    @property
    def model_path(self):
        return self._in_out(self.model, "model.txt")

    @property
    def truth_path(self):
        return self._in_out(self.truth, "true_model.txt")


@dataclass(frozen=True)
class PreprocessingConfig:
    oversample_factor: int = 10
    window_seconds: float = 5.0
    ambient: float = 0.0
    train_fraction: float = 0.8


@dataclass(frozen=True)
class IdentificationConfig:
    epsilon: float = 0.0
    max_iterations: int = 5000
    step_tolerance: float = 1e-12
    objective_tolerance: float = 1e-15
    rank_tolerance: float = 1e-10


@dataclass(frozen=True)
class EvaluationConfig:
    rolling_window_seconds: float = 60.0
    compensate_delay: bool = False


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    dt: float = 1.0
    noise_std: float = 0.0
    step_seconds: float = 300.0
    rest_seconds: float = 900.0
    cycles: int = 5


@dataclass(frozen=True)
class PipelineConfig:
    """Validated settings of the identification and estimation pipeline."""

    paths: PathsConfig = PathsConfig()
    preprocessing: PreprocessingConfig = PreprocessingConfig()
    identification: IdentificationConfig = IdentificationConfig()
    evaluation: EvaluationConfig = EvaluationConfig()
    synth: SynthConfig = SynthConfig()

    def __post_init__(self):
        pre, ident = self.preprocessing, self.identification
        checks = [
            ("preprocessing.train_fraction", 0.0 < pre.train_fraction < 1.0, "must lie in (0, 1)"),
            ("preprocessing.oversample_factor", pre.oversample_factor >= 1, "must be at least 1"),
            ("preprocessing.window_seconds", pre.window_seconds > 0, "must be positive"),
            ("identification.epsilon", ident.epsilon >= 0, "must be nonnegative"),
            ("identification.max_iterations", ident.max_iterations >= 1, "must be positive"),
            ("identification.step_tolerance", ident.step_tolerance > 0, "must be positive"),
            ("identification.objective_tolerance", ident.objective_tolerance > 0, "must be positive"),
            ("identification.rank_tolerance", ident.rank_tolerance >= 0, "must be nonnegative"),
            ("evaluation.rolling_window_seconds", self.evaluation.rolling_window_seconds > 0, "must be positive"),
            ("synth.dt", self.synth.dt > 0, "must be positive"),
            ("synth.noise_std", self.synth.noise_std >= 0, "must be nonnegative"),
            ("synth.step_seconds", self.synth.step_seconds > 0, "must be positive"),
            ("synth.rest_seconds", self.synth.rest_seconds > 0, "must be positive"),
            ("synth.cycles", self.synth.cycles >= 1, "must be at least 1"),
            ("synth.seed", self.synth.seed >= 0, "must be nonnegative"),
        ]
        for key, ok, message in checks:
            if not ok:
                raise ConfigError(f"{key} {message}", key=key)

    def with_overrides(self, seed=None, out=None):
        """Apply command-line overrides."""
        config = self
        if seed is not None:
            config = replace(config, synth=replace(config.synth, seed=int(seed)))
        if out is not None:
            config = replace(config, paths=replace(config.paths, out=out))
        return config

    def as_dict(self):
        """Flat mapping of dotted keys to values."""
        flat = {}
        for section in fields(self):
            group = getattr(self, section.name)
            for item in fields(group):
                flat[f"{section.name}.{item.name}"] = getattr(group, item.name)
        return flat


def _coerce(key, raw):
    default = DEFAULTS[key]
    text = str(raw).strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered not in _TRUE | _FALSE:
                raise ValueError(text)
            return lowered in _TRUE
        if isinstance(default, int):
            value = float(text)
            if not value.is_integer():
                raise ValueError(text)
            return int(value)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"invalid value {text!r} for {key}", key=key) from None
    return text


def _environment_values():
    """Settings given as THERMOLOSS_<SECTION>__<KEY> environment variables."""
    values = {}
    for name, raw in os.environ.items():
        if not name.startswith(ENV_PREFIX) or "__" not in name:
            continue
        key = name[len(ENV_PREFIX):].lower().replace("__", ".")
        if key in DEFAULTS:
            values[key] = raw
        else:
            logger.warning(f"Ignoring unknown environment setting {name}")
    return values


def load_config(path=None, use_environment=True):
    """
    Load the pipeline configuration.

    Defaults are overridden by THERMOLOSS_* environment variables (a .env
    file is read first), then by the config file.

    Args:
        path (str, optional): Key-value config file
        use_environment (bool): Whether environment variables are consulted

    Returns:
        PipelineConfig: Validated configuration

    Raises:
        ConfigError: Unknown key or value of the wrong type
    """
    values = dict(DEFAULTS)

    if use_environment:
        load_dotenv()
        values.update({k: _coerce(k, v) for k, v in _environment_values().items()})

    if path:
        logger.info(f"Loading configuration from {path}")
        for key, raw in read_key_values(path).items():
            if key not in DEFAULTS:
                logger.error(f"Unknown configuration key: {key}")
                raise ConfigError(f"unknown configuration key '{key}'", key=key)
            values[key] = _coerce(key, raw)

    sections = {}
    for key, value in values.items():
        section, name = key.split(".", 1)
        sections.setdefault(section, {})[name] = value

    config = PipelineConfig(
        paths=PathsConfig(**sections["paths"]),
        preprocessing=PreprocessingConfig(**sections["preprocessing"]),
        identification=IdentificationConfig(**sections["identification"]),
        evaluation=EvaluationConfig(**sections["evaluation"]),
        synth=SynthConfig(**sections["synth"]),
    )
    logger.debug(f"Configuration loaded: {config.as_dict()}")
    return config
