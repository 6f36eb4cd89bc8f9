from __future__ import annotations

import logging
from logging.handlers import TimedRotatingFileHandler
import os


LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
LOG_FILE_NAME = "depmeter.log"
_QUIET_LOGGERS = ("matplotlib", "numexpr", "numba")


def _configure_file_logging(log_dir: str, retention_hours: int) -> None:
    log = logging.getLogger(__name__)
    if not log_dir:
        return
    try:
        os.makedirs(log_dir, exist_ok=True)
        handler = TimedRotatingFileHandler(
            os.path.join(log_dir, LOG_FILE_NAME),
            when="h",
            interval=1,
            backupCount=max(1, int(retention_hours)),
            encoding="utf-8",
            utc=True,
        )
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logging.getLogger().addHandler(handler)
        log.info(
            "File logging enabled: %s (retention_hours=%s)",
            log_dir,
            retention_hours,
        )
    except Exception:
        log.exception("Failed to configure file logging")


def configure_logging(level: str = "INFO", log_dir: str = "", retention_hours: int = 24) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=LOG_FORMAT,
        force=True,
    )
    for logger_name in _QUIET_LOGGERS:
        logging.getLogger(logger_name).setLevel(logging.WARNING)
    _configure_file_logging(log_dir, retention_hours)
