"""Engine configuration: defaults, legal ranges, YAML loading.

String values may reference environment variables as ``${NAME}``; credentials
themselves never appear in the file, only the name of the variable holding them.
"""
from __future__ import annotations

import dataclasses
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .backends import DEFAULT_PROMPTS


class ConfigError(ValueError):
    pass


_ENV_REF = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass
class EngineConfig:
    # detector
    score_threshold: float = 0.01
    nms_iou: float = 0.4
    max_detections: int = 3600
    # field selection
    c_o: float = 0.8
    t_max: int = 10
    page_size: int = 7
    lowercase: bool = False
    signature_fallback: bool = False
    # backends
    replay: list[str] = field(default_factory=list)
    vlm_url: str = ""
    mllm_url: str = ""
    api_key_env: str = "CHECKFIELDS_API_KEY"
    timeout: float = 60.0
    deadline: float = 180.0
    max_retries: int = 2
    max_in_flight: int = 4
    # run
    jobs: int = 1
    prompts: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> "EngineConfig":
        checks = [
            (0.001 <= self.score_threshold <= 0.03, "score_threshold must lie in [0.001, 0.03]"),
            (0.0 < self.nms_iou <= 1.0, "nms_iou must lie in (0, 1]"),
            (self.max_detections >= 1, "max_detections must be >= 1"),
            (0.0 < self.c_o <= 1.0, "c_o must lie in (0, 1]"),
            (self.t_max >= 1, "t_max must be >= 1"),
            (1 <= self.page_size <= 7, "page_size must lie in [1, 7]"),
            (self.timeout > 0 and self.deadline > 0, "timeouts must be positive"),
            (self.max_retries >= 0, "max_retries must be >= 0"),
            (self.max_in_flight >= 1 and self.jobs >= 1, "concurrency caps must be >= 1"),
            (set(self.prompts) <= set(DEFAULT_PROMPTS), "unknown prompt template name"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["prompts"] = {**DEFAULT_PROMPTS, **self.prompts}
        return d

    def replace(self, **changes) -> "EngineConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes)


def _interpolate(value):
    if isinstance(value, str):
        def sub(m):
            name = m.group(1)
            if name not in os.environ:
                raise ConfigError(f"environment variable {name} is not set")
            return os.environ[name]
        return _ENV_REF.sub(sub, value)
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    if isinstance(value, dict):
        return {k: _interpolate(v) for k, v in value.items()}
    return value


def load_config(path=None, **overrides) -> EngineConfig:
    data = {}
    if path is not None:
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        data = _interpolate(data)
        if isinstance(data.get("replay"), str):
            data["replay"] = [data["replay"]]
        # replay paths are relative to the config file
        data["replay"] = [str((path.parent / p).resolve()) if not Path(p).is_absolute() else p
                          for p in data.get("replay", [])]
    known = {f.name for f in dataclasses.fields(EngineConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return EngineConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
