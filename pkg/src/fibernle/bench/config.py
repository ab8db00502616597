"""Experiment configuration: nested dataclasses loaded from YAML.

Every section has defaults, so an empty file is a valid configuration (the
desk-scale link). Values are given in engineering units (km, dB/km,
ps/(nm km), GBaud, dBm) and converted to SI only when the link is built.
Unknown keys are rejected so that a typo never silently falls back to a
default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..channel import AmplifierParams, LinkConfig, convert_units
from ..dsp import DspChainConfig
from ..nn import FCNNConfig, TrainConfig, TransformerConfig
from ..txrx import PulseShape

METHODS = ("linear-eq", "dbp", "fcnn", "transformer")
SWEEP_VARIABLES = ("launch_power_dbm", "n_spans")


class ConfigError(ValueError):
    """Invalid, unreadable or inconsistent configuration."""


@dataclass(frozen=True)
class LinkSection:
    n_spans: int = 8
    span_km: float = 80.0
    alpha_db_km: float = 0.2
    dispersion_ps_nm_km: float = 17.0
    n2_m2_per_w: float = 2.6e-20
    core_area_um2: float = 80.0
    wavelength_nm: float = 1550.0
    noise_figure_db: float = 4.5
    ssfm_step_km: float = 1.0
    polarization_model: str = "manakov"

    def __post_init__(self):
        _positive(self, "n_spans", "span_km", "dispersion_ps_nm_km", "core_area_um2", "wavelength_nm",
                  "ssfm_step_km")
        if self.alpha_db_km < 0 or self.n2_m2_per_w < 0:
            raise ConfigError("link: alpha_db_km and n2_m2_per_w must be >= 0")

    def build(self) -> LinkConfig:
        fiber = convert_units(
            self.alpha_db_km,
            self.dispersion_ps_nm_km,
            self.span_km,
            wavelength_nm=self.wavelength_nm,
            n2_m2_per_w=self.n2_m2_per_w,
            core_area_um2=self.core_area_um2,
        )
        amp = AmplifierParams(fiber.loss_db, self.noise_figure_db)
        return LinkConfig(fiber, self.n_spans, amp, self.ssfm_step_km * 1e3, self.polarization_model)


@dataclass(frozen=True)
class TxSection:
    symbol_rate_gbaud: float = 10.0
    launch_power_dbm: float = 2.0
    rolloff: float = 0.18
    sps: int = 8
    filter_span_symbols: int = 16
    linewidth_hz: float = 1e5

    def __post_init__(self):
        _positive(self, "symbol_rate_gbaud", "sps", "filter_span_symbols")
        if not 0 <= self.rolloff <= 1:
            raise ConfigError(f"tx.rolloff must lie in [0, 1], got {self.rolloff}")
        if self.linewidth_hz < 0:
            raise ConfigError("tx.linewidth_hz must be >= 0")

    @property
    def symbol_rate(self) -> float:
        return self.symbol_rate_gbaud * 1e9

    def pulse(self) -> PulseShape:
        return PulseShape(self.rolloff, self.sps, self.filter_span_symbols)


@dataclass(frozen=True)
class DspSection:
    dbp_steps_per_span: int = 10
    dbp_nl_scaling: float = 1.0
    cpr_test_phases: int = 64
    cpr_window: int = 32

    def chain(self, mode: str) -> DspChainConfig:
        return DspChainConfig(mode, self.dbp_steps_per_span, self.dbp_nl_scaling, self.cpr_test_phases,
                              self.cpr_window)


@dataclass(frozen=True)
class ModelSection:
    window_n: int = 2
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    fcnn: FCNNConfig = field(default_factory=FCNNConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=60, dtype="float32"))
    fcnn_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=60, dtype="float32"))

    def __post_init__(self):
        if self.window_n < 0:
            raise ConfigError("model.window_n must be >= 0")

    def architecture(self, arch: str) -> tuple[dict, TrainConfig]:
        """Model config overrides and training config for ``arch``.

        The sequence length always follows ``window_n``.
        """
        seq_len = 2 * (2 * self.window_n + 1)
        if arch == "transformer":
            return {**dataclasses.asdict(self.transformer), "seq_len": seq_len}, self.train
        if arch == "fcnn":
            return {**dataclasses.asdict(self.fcnn), "seq_len": seq_len}, self.fcnn_train
        raise ConfigError(f"unknown architecture {arch!r}")


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    n_symbols: int = 2**15
    guard_symbols: int = 16
    methods: tuple[str, ...] = METHODS
    sweep_variable: str = "launch_power_dbm"
    sweep_values: tuple[float, ...] = (-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0)
    workers: int = 1
    record_runtime: bool = False

    def __post_init__(self):
        if self.n_symbols < 64 or self.n_symbols & (self.n_symbols - 1):
            raise ConfigError(f"run.n_symbols must be a power of two >= 64, got {self.n_symbols}")
        if not 0 <= 2 * self.guard_symbols < self.n_symbols:
            raise ConfigError("run.guard_symbols must be >= 0 and leave symbols to score")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"run.methods must be a non-empty subset of {METHODS}, got {list(self.methods)}")
        if self.sweep_variable not in SWEEP_VARIABLES:
            raise ConfigError(f"run.sweep_variable must be one of {SWEEP_VARIABLES}")
        if not self.sweep_values:
            raise ConfigError("run.sweep_values must not be empty")
        if self.workers < 1:
            raise ConfigError("run.workers must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    link: LinkSection = field(default_factory=LinkSection)
    tx: TxSection = field(default_factory=TxSection)
    dsp: DspSection = field(default_factory=DspSection)
    model: ModelSection = field(default_factory=ModelSection)
    run: RunSection = field(default_factory=RunSection)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def digest(self) -> str:
        """Short hash of the canonical configuration, quoted in error messages."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def replace(self, **dotted) -> "ExperimentConfig":
        """Copy with ``section.key`` overrides, e.g. ``replace(**{"run.seed": 3})``."""
        data = self.to_dict()
        for key, value in dotted.items():
            _assign(data, key, value)
        return from_dict(data)


def _positive(obj, *names):
    for name in names:
        if getattr(obj, name) <= 0:
            section = type(obj).__name__.replace("Section", "").lower()
            raise ConfigError(f"{section}.{name} must be > 0, got {getattr(obj, name)}")


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _build(cls, data, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {unknown}")
    kwargs = {}
    for name, value in data.items():
        kind = hints[name]
        where = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(kind):
            kwargs[name] = _build(kind, value, where)
        elif typing.get_origin(kind) is tuple:
            if not isinstance(value, (list, tuple)):
                value = [value]
            item = typing.get_args(kind)[0]
            kwargs[name] = tuple(_coerce(item, v, where) for v in value)
        else:
            kwargs[name] = _coerce(kind, value, where)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def _coerce(kind, value, where):
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind is str and isinstance(value, str):
        return value
    raise ConfigError(f"{where}: expected {kind.__name__}, got {value!r}")


def from_dict(data: dict | None) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "")


def _assign(data: dict, dotted: str, value) -> None:
    *parents, leaf = dotted.split(".")
    node = data
    for part in parents:
        if not isinstance(node.get(part), dict):
            raise ConfigError(f"override {dotted!r}: no section {part!r}")
        node = node[part]
    if leaf not in node:
        raise ConfigError(f"override {dotted!r}: unknown key {leaf!r}")
    node[leaf] = value


def parse_override(text: str) -> tuple[str, object]:
    """Split ``key=value``; the value is parsed as a YAML scalar or list."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {text!r} is not of the form key=value")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: {exc}") from exc
    return key.strip(), value


def load_config(path: str | Path | None = None, overrides: typing.Iterable[str] = ()) -> ExperimentConfig:
    """Read a YAML file (or start from defaults) and apply ``key=value`` overrides."""
    data: dict = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror or exc}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    data = from_dict(data).to_dict()
    for text in overrides:
        key, value = parse_override(text)
        _assign(data, key, value)
    return from_dict(data)
