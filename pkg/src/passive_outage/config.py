"""Pipeline configuration: mode defaults, flat overrides, and a stable hash."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Mapping

from .detector import DetectorConfig
from .errors import ConfigError
from .training import TrainingConfig

MODES = ("service", "darknet")

# darknet: one 20-minute bin, measurable only when as active as a frequent address
MODE_DEFAULTS: dict[str, dict[str, Any]] = {
    "service": {"t_short": 300, "t_long": 1500, "theta_sparse": 0.6, "theta_measurable": 0.1},
    "darknet": {"t_short": 1200, "t_long": 1200, "theta_sparse": 0.6, "theta_measurable": 0.6},
}

_TRAINING_KEYS = {f.name for f in dataclasses.fields(TrainingConfig)}
_DETECTOR_KEYS = {f.name for f in dataclasses.fields(DetectorConfig)}
# theta_b is the block threshold; with one theta_a for every address it equals theta_a
_ALIASES = {"theta_b": "theta_a"}


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "service"
    training: TrainingConfig = field(default_factory=TrainingConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")

    @classmethod
    def for_mode(cls, mode: str = "service", **overrides: Any) -> "PipelineConfig":
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
        return cls.from_flat({**MODE_DEFAULTS[mode], **overrides, "mode": mode})

    @classmethod
    def from_flat(cls, values: Mapping[str, Any]) -> "PipelineConfig":
        training, detector = {}, {}
        mode = values.get("mode", "service")
        for key, value in values.items():
            key = _ALIASES.get(key, key)
            if key == "mode":
                continue
            if key in _TRAINING_KEYS:
                training[key] = value
            elif key in _DETECTOR_KEYS:
                detector[key] = value
            else:
                raise ConfigError(f"unknown configuration key {key!r}")
        try:
            return cls(mode, TrainingConfig(**training), DetectorConfig(**detector))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def with_overrides(self, **overrides: Any) -> "PipelineConfig":
        flat = self.to_flat()
        mode = overrides.pop("mode", self.mode)
        if mode != self.mode:
            flat = {**MODE_DEFAULTS[mode], **{k: v for k, v in flat.items() if k not in MODE_DEFAULTS[mode]}}
        return PipelineConfig.from_flat({**flat, **overrides, "mode": mode})

    def to_flat(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            **dataclasses.asdict(self.training),
            **dataclasses.asdict(self.detector),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_flat(), sort_keys=True, separators=(",", ":"))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def fixed_timebin(cfg: PipelineConfig, timebin: int, theta_measurable: float | None = None) -> PipelineConfig:
    """Single-timebin variant of ``cfg``: every address uses ``timebin``.

    With no sparse tier the measurability floor defaults to the sparse threshold,
    as in darknet mode.
    """
    floor = cfg.training.theta_sparse if theta_measurable is None else theta_measurable
    return cfg.with_overrides(t_short=timebin, t_long=timebin, theta_measurable=floor)


def parse_value(text: str) -> Any:
    """Coerce a command-line override value: int, float, null, else the raw string."""
    lowered = text.strip().lower()
    if lowered in ("none", "null", ""):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def load_config(path=None, mode: str | None = None, overrides: Mapping[str, Any] | None = None) -> PipelineConfig:
    """Mode defaults, then a JSON config file (flat keys), then explicit overrides."""
    values: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path) as fh:
                values = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    chosen = mode or values.pop("mode", "service")
    values.pop("mode", None)
    return PipelineConfig.for_mode(chosen, **values, **(overrides or {}))
