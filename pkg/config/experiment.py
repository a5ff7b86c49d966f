"""
Experiment configuration
Layering: built-in defaults <- profile <- JSON config file <- dotted overrides.
"""
import copy
import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from collectors.txgen import TxConfig
from config.settings import (
    PROFILES, DEFAULT_PROFILE, N_MEASUREMENTS, SYMBOLS_PER_MEASUREMENT, FRAME_LENGTH,
    MASTER_SEED, DEFAULT_OUTPUT_DIR, DEFAULT_WORKERS, RECONCILIATION_EFFICIENCY,
    RECEIVER_MODEL, HISTOGRAM_BINS,
)
from engine.channel import ChannelDynamics, NoiseConfig, ThetaModel
from engine.security import RECEIVER_MODELS, SecurityParams
from models.estimator_ref import CmaConfig
from models.estimator_ukf import MEASURED_FIELDS, UkfConfig
from pipelines.dsp import DspConfig
from utils.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class SecuritySettings:
    beta: float = RECONCILIATION_EFFICIENCY
    receiver_model: str = RECEIVER_MODEL

    def params(self, v_mod, tau, v_el):
        """SecurityParams once the calibration has measured v_el"""
        params = SecurityParams(v_mod=v_mod, tau=tau, v_el=v_el, beta=self.beta,
                                receiver_model=self.receiver_model)
        params.validate()
        return params

    def validate(self, path="security"):
        if not 0 < self.beta <= 1:
            raise ConfigError(f"{path}.beta", "must lie in (0, 1]")
        if self.receiver_model not in RECEIVER_MODELS:
            raise ConfigError(f"{path}.receiver_model", f"expected one of {RECEIVER_MODELS}")


SECTIONS = {
    "tx": TxConfig,
    "dynamics": ChannelDynamics,
    "noise": NoiseConfig,
    "dsp": DspConfig,
    "ukf": UkfConfig,
    "cma": CmaConfig,
    "security": SecuritySettings,
}


@dataclass
class ExperimentConfig:
    tx: TxConfig = field(default_factory=TxConfig)
    dynamics: ChannelDynamics = field(default_factory=ChannelDynamics)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    dsp: DspConfig = field(default_factory=DspConfig)
    ukf: UkfConfig = field(default_factory=UkfConfig)
    cma: CmaConfig = field(default_factory=CmaConfig)
    security: SecuritySettings = field(default_factory=SecuritySettings)
    n_measurements: int = N_MEASUREMENTS
    symbols_per_measurement: int = SYMBOLS_PER_MEASUREMENT
    frame_length: int = FRAME_LENGTH
    master_seed: int = MASTER_SEED
    output_dir: str = DEFAULT_OUTPUT_DIR
    workers: int = DEFAULT_WORKERS
    write_trace: bool = False
    trace_decimation: int = 1000
    histogram_bins: int = HISTOGRAM_BINS
    profile: str = DEFAULT_PROFILE

    def validate(self):
        for name in SECTIONS:
            getattr(self, name).validate(name)
        if int(self.n_measurements) < 1:
            raise ConfigError("n_measurements", "must be >= 1")
        if int(self.frame_length) < 1:
            raise ConfigError("frame_length", "must be >= 1")
        if int(self.symbols_per_measurement) < int(self.frame_length):
            raise ConfigError("symbols_per_measurement", "must be >= frame_length")
        if int(self.master_seed) < 0:
            raise ConfigError("master_seed", "must be a non-negative integer")
        if int(self.workers) < 1:
            raise ConfigError("workers", "must be >= 1")
        if int(self.trace_decimation) < 1:
            raise ConfigError("trace_decimation", "must be >= 1")
        if int(self.histogram_bins) < 1:
            raise ConfigError("histogram_bins", "must be >= 1")
        return self

    def to_dict(self):
        def plain(value):
            if isinstance(value, dict):
                return {k: plain(v) for k, v in value.items()}
            if isinstance(value, np.ndarray):
                return value.tolist()
            return value

        data = plain(asdict(self))
        for name in MEASURED_FIELDS:
            data["ukf"].pop(name, None)
        return data


def deep_merge(base, update):
    """Recursively merge `update` into a copy of `base`"""
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def parse_value(text):
    """JSON literal if it parses, else the raw string"""
    try:
        return json.loads(text)
    except (TypeError, ValueError):
        return text


def set_dotted(data, dotted, value):
    keys = dotted.split(".")
    node = data
    for key in keys[:-1]:
        child = node.setdefault(key, {})
        if not isinstance(child, dict):
            raise ConfigError(dotted, f"{key!r} is not a section")
        node = child
    node[keys[-1]] = value
    return data


def _coerce(kind, value, path):
    """Check a leaf value against its field annotation; ints widen to float"""
    if kind is bool:
        if not isinstance(value, (bool, np.bool_)):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return bool(value)
    if kind is int:
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return int(value)
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if kind is np.ndarray:
        try:
            return np.asarray(value, dtype=float)
        except (TypeError, ValueError) as e:
            raise ConfigError(path, f"expected a numeric array, got {value!r}") from e
    return value


def _build(cls, values, path):
    if not isinstance(values, dict):
        raise ConfigError(path, "expected a section (mapping)")
    types = {f.name: f.type for f in fields(cls)}
    for key in values:
        if key not in types:
            raise ConfigError(f"{path}.{key}", "unknown field")
    if cls is UkfConfig:
        for key in MEASURED_FIELDS:
            if key in values:
                raise ConfigError(f"{path}.{key}", "is measured at run time and cannot be configured")
    values = {key: _coerce(types[key], value, f"{path}.{key}") for key, value in values.items()}
    if cls is ChannelDynamics and "theta_model" in values:
        values["theta_model"] = _build(ThetaModel, values["theta_model"], f"{path}.theta_model")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(path, str(e)) from e


def from_dict(data):
    """ExperimentConfig from a nested mapping; unknown keys are errors"""
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    kwargs = {}
    for key, value in data.items():
        if key not in types:
            raise ConfigError(key, "unknown field")
        if key in SECTIONS:
            kwargs[key] = _build(SECTIONS[key], value, key)
        else:
            kwargs[key] = _coerce(types[key], value, key)
    return ExperimentConfig(**kwargs).validate()


def read_config_file(path):
    try:
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
    except FileNotFoundError as e:
        raise ConfigError("config", f"file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError("config", f"{path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a mapping")
    return data


def load_config(path=None, profile=DEFAULT_PROFILE, overrides=None):
    """
    Build and validate the experiment configuration

    Args:
        path: optional JSON config file
        profile: name of a built-in profile
        overrides: iterable of (dotted key, value) pairs applied last

    Returns:
        ExperimentConfig
    """
    if profile not in PROFILES:
        raise ConfigError("profile", f"expected one of {sorted(PROFILES)}, got {profile!r}")
    data = deep_merge(PROFILES[profile], {"profile": profile})
    if path:
        data = deep_merge(data, read_config_file(path))
    for dotted, value in overrides or ():
        set_dotted(data, dotted, value)
    logger.debug("configuration layers resolved: %s", json.dumps(data, default=str))
    return from_dict(data)
