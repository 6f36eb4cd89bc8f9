from __future__ import annotations

from importlib import metadata
import logging


_LIBRARIES = ("numpy", "scipy", "POT", "networkx", "polars")


def library_versions() -> dict[str, str]:
    versions: dict[str, str] = {}
    for name in _LIBRARIES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "missing"
    return versions


def log_run_context(config, command: str) -> None:
    log = logging.getLogger(__name__)
    log.info("Run start: command=%s", command)
    log.info(
        "Config: seed=%s estimator=%s bins=%s cond_bins=%s min_occupancy=%s threshold_c0=%s alpha=%s adjustment=%s bandwidth=%s max_cond_size=%s aggregation=%s quantile=%s representative=%s lp_cap=%s min_samples=%s workers=%s out=%s log_dir=%s log_retention_hours=%s",
        config.seed,
        config.estimator,
        config.bins,
        config.cond_bins,
        config.min_occupancy,
        config.threshold_c0,
        config.alpha,
        config.adjustment,
        config.bandwidth,
        config.max_cond_size,
        config.aggregation,
        config.quantile,
        config.representative,
        config.lp_cap,
        config.min_samples,
        config.workers,
        config.out,
        config.log_dir,
        config.log_retention_hours,
    )
    versions = library_versions()
    log.info(
        "Libraries: %s",
        " ".join(f"{name}={version}" for name, version in versions.items()),
    )
    missing = [name for name, version in versions.items() if version == "missing"]
    if missing:
        log.warning("Libraries not installed: %s", ", ".join(missing))
