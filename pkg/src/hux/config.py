"""TOML configuration: backend, threshold defaults, paths, and the task registry.

Example::

    [backend]
    kind = "remote"
    endpoint = "http://localhost:8000/v1/chat/completions"
    model_name = "llama-3-8b-instruct"
    caption_latency_ms = 900

    [defaults]
    min_confidence = 0.5
    move_threshold_px = 25
    scale_ratio_threshold = 1.5

    [run]
    policy = "hybrid"

    [paths]
    store = "memory/store.jsonl"
    scenarios = "scenarios"
    reports = "reports"

``[defaults]`` applies to profiles declared in this file. ``[profiles.*]``
and ``[[tools]]`` follow the registry format in :mod:`hux.tasks`.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from hux.context import BackendProfile
from hux.eoi import POLICIES
from hux.errors import ConfigInvalid
from hux.tasks import ToolRegistry, default_registry, registry_from_dict

_SECTIONS = {"backend", "defaults", "run", "paths", "profiles", "tools"}
_BACKEND_KEYS = {"kind", "endpoint", "model_name", "caption_latency_ms", "timeout_s", "max_retries", "backoff_s"}
_DEFAULT_KEYS = {"min_confidence", "move_threshold_px", "scale_ratio_threshold"}


@dataclass
class Paths:
    store: Path = Path("memory/store.jsonl")
    scenarios: Path = Path("scenarios")
    reports: Path = Path("reports")


@dataclass
class Config:
    backend: BackendProfile = field(default_factory=BackendProfile)
    registry: ToolRegistry = field(default_factory=default_registry)
    policy: str = "hybrid"
    paths: Paths = field(default_factory=Paths)


def _check_keys(section: str, table: Any, allowed: set[str]) -> dict:
    if not isinstance(table, dict):
        raise ConfigInvalid(f"{section}: expected a table")
    unknown = set(table) - allowed
    if unknown:
        raise ConfigInvalid(f"{section}: unknown field(s) {', '.join(sorted(unknown))}")
    return table


def config_from_dict(data: dict) -> Config:
    unknown = set(data) - _SECTIONS
    if unknown:
        raise ConfigInvalid(f"unknown section(s): {', '.join(sorted(unknown))}")

    raw_backend = _check_keys("backend", data.get("backend", {}), _BACKEND_KEYS)
    try:
        backend = BackendProfile(**raw_backend)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"backend: {exc}") from exc

    defaults = _check_keys("defaults", data.get("defaults", {}), _DEFAULT_KEYS)
    registry = registry_from_dict(data, defaults)

    run = _check_keys("run", data.get("run", {}), {"policy"})
    policy = run.get("policy", "hybrid")
    if policy not in POLICIES:
        raise ConfigInvalid(f"run.policy: expected one of {', '.join(POLICIES)}, got {policy!r}")

    raw_paths = _check_keys("paths", data.get("paths", {}), {"store", "scenarios", "reports"})
    paths = Paths()
    for key, value in raw_paths.items():
        if not isinstance(value, str):
            raise ConfigInvalid(f"paths.{key}: expected a string")
        setattr(paths, key, Path(value))
    return Config(backend=backend, registry=registry, policy=policy, paths=paths)


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc.strerror or exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigInvalid(f"{path}: {exc}") from None
    try:
        return config_from_dict(data)
    except ConfigInvalid as exc:
        raise ConfigInvalid(f"{path}: {exc}") from None
