from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
import logging
import os
from typing import Any, Mapping

import orjson
from platformdirs import user_config_dir

from .errors import BadConfig
from .utils import atomic_write_bytes, utc_now_iso


_ESTIMATORS = ("wasserstein", "mmd")
_AGGREGATIONS = ("max", "quantile")
_REPRESENTATIVES = ("mean", "median")
_ADJUSTMENTS = ("location-scale", "location", "none")
_LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def _int_env(name: str, default: int) -> int:
    value = os.getenv(name)
    if value is None or value == "":
        return default
    try:
        return int(value)
    except ValueError as exc:
        raise BadConfig(f"{name} must be an integer") from exc


def _str_env(name: str, default: str) -> str:
    value = os.getenv(name)
    if value is None or value == "":
        return default
    return value


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    estimator: str = "wasserstein"
    bins: int = 4
    cond_bins: int | str = "auto"
    min_occupancy: int = 20
    threshold_c0: float = 0.5
    alpha: float = 0.05
    adjustment: str = "location-scale"
    bandwidth: float | str = "median"
    max_cond_size: int = 3
    aggregation: str = "max"
    quantile: float = 0.95
    representative: str = "mean"
    lp_cap: int = 2000
    min_samples: int = 200
    workers: int = 1
    out: str = "results"
    log_level: str = "INFO"
    log_dir: str = ""
    log_retention_hours: int = 24

    def to_json(self) -> bytes:
        doc = {**asdict(self), "written_at": utc_now_iso()}
        return orjson.dumps(doc, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS)


_INT_FIELDS = {
    "seed",
    "bins",
    "min_occupancy",
    "max_cond_size",
    "lp_cap",
    "min_samples",
    "workers",
    "log_retention_hours",
}
_FLOAT_FIELDS = {"threshold_c0", "alpha", "quantile"}


def default_config_path() -> str:
    return os.path.join(user_config_dir("depmeter"), "config.json")


def _coerce(key: str, value: Any) -> Any:
    try:
        if key in _INT_FIELDS:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if key in _FLOAT_FIELDS:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if key == "cond_bins":
            if isinstance(value, str) and value.strip().lower() == "auto":
                return "auto"
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if key == "bandwidth":
            if isinstance(value, str) and value.strip().lower() == "median":
                return "median"
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if key == "log_level":
            return str(value).upper()
        return str(value)
    except (TypeError, ValueError) as exc:
        raise BadConfig(f"invalid value for {key}: {value!r}") from exc


def _validate(config: RunConfig) -> RunConfig:
    problems: list[str] = []
    if config.seed < 0:
        problems.append("seed must be >= 0")
    if config.estimator not in _ESTIMATORS:
        problems.append(f"estimator must be one of {_ESTIMATORS}")
    if config.bins < 2:
        problems.append("bins must be >= 2")
    if config.cond_bins != "auto" and int(config.cond_bins) < 2:
        problems.append("cond_bins must be 'auto' or >= 2")
    if config.min_occupancy < 1:
        problems.append("min_occupancy must be >= 1")
    if config.threshold_c0 < 0:
        problems.append("threshold_c0 must be >= 0")
    if not 0.0 < config.alpha < 1.0:
        problems.append("alpha must lie in (0, 1)")
    if config.adjustment not in _ADJUSTMENTS:
        problems.append(f"adjustment must be one of {_ADJUSTMENTS}")
    if config.bandwidth != "median" and not float(config.bandwidth) > 0:
        problems.append("bandwidth must be 'median' or > 0")
    if config.max_cond_size < 0:
        problems.append("max_cond_size must be >= 0")
    if config.aggregation not in _AGGREGATIONS:
        problems.append(f"aggregation must be one of {_AGGREGATIONS}")
    if not 0.0 < config.quantile <= 1.0:
        problems.append("quantile must lie in (0, 1]")
    if config.representative not in _REPRESENTATIVES:
        problems.append(f"representative must be one of {_REPRESENTATIVES}")
    if config.lp_cap < 2:
        problems.append("lp_cap must be >= 2")
    if config.min_samples < 1:
        problems.append("min_samples must be >= 1")
    if config.workers < 1:
        problems.append("workers must be >= 1")
    if config.log_level not in _LOG_LEVELS:
        problems.append(f"log_level must be one of {_LOG_LEVELS}")
    if config.log_retention_hours < 1:
        problems.append("log_retention_hours must be >= 1")
    if problems:
        raise BadConfig("; ".join(problems))
    return config


def _read_config_file(path: str) -> dict[str, Any]:
    try:
        with open(path, "rb") as handle:
            doc = orjson.loads(handle.read())
    except OSError as exc:
        raise BadConfig(f"cannot read config {path}: {exc}") from exc
    except orjson.JSONDecodeError as exc:
        raise BadConfig(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise BadConfig(f"config {path} must be a JSON object")
    return doc


def load_config(
    path: str | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> RunConfig:
    """Defaults, then environment, then the JSON file, then explicit overrides."""
    log = logging.getLogger(__name__)
    known = {item.name for item in fields(RunConfig)}
    base = RunConfig()
    values: dict[str, Any] = {
        "log_level": _str_env("DEPMETER_LOG_LEVEL", base.log_level),
        "log_dir": _str_env("DEPMETER_LOG_DIR", base.log_dir),
        "log_retention_hours": _int_env("DEPMETER_LOG_RETENTION_HOURS", base.log_retention_hours),
        "workers": _int_env("DEPMETER_WORKERS", base.workers),
    }

    source = path or os.getenv("DEPMETER_CONFIG") or None
    if source is None and os.path.exists(default_config_path()):
        source = default_config_path()
    if source:
        doc = _read_config_file(source)
        unknown = sorted(set(doc) - known - {"written_at"})
        if unknown:
            raise BadConfig(f"unknown config keys: {', '.join(unknown)}")
        doc.pop("written_at", None)
        values.update(doc)
        log.debug("Config file loaded: path=%s keys=%s", source, sorted(doc))

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in known:
            raise BadConfig(f"unknown config key: {key}")
        values[key] = value

    coerced = {key: _coerce(key, value) for key, value in values.items()}
    return _validate(replace(base, **coerced))


def write_effective_config(config: RunConfig, out_dir: str) -> str:
    path = os.path.join(out_dir, "config.json")
    atomic_write_bytes(path, config.to_json())
    return path
