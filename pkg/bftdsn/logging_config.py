from __future__ import annotations

import logging
from logging.handlers import RotatingFileHandler

from bftdsn.infra.settings import SettingsLoader


def _attach(logger_name: str, file_key: str) -> logging.Logger:
    settings = SettingsLoader()
    logger = logging.getLogger(logger_name)
    if logger.handlers:
        return logger

    log_file = settings.resolve_path(file_key)
    log_file.parent.mkdir(parents=True, exist_ok=True)

    level_name = str(settings.get("LOG_LEVEL", "INFO")).upper()
    logger.setLevel(getattr(logging, level_name, logging.INFO))

    formatter = logging.Formatter(
        "%(levelname)s %(asctime)s %(message)s",
        datefmt="%Y-%m-%dT%H:%M:%S",
    )
    handler = RotatingFileHandler(
        log_file,
        maxBytes=int(settings.get("LOG_MAX_BYTES", 1_048_576)),
        backupCount=int(settings.get("LOG_BACKUP_COUNT", 3)),
        encoding="utf-8",
    )
    handler.setFormatter(formatter)

    logger.addHandler(handler)
    logger.propagate = False
    return logger


def setup_logging() -> logging.Logger:
    return _attach("bftdsn.actions", "LOG_FILE")


def setup_sim_logging() -> logging.Logger:
    """Covers the whole ``bftdsn.sim`` tree: netsim, protocol, consensus, ledger."""
    return _attach("bftdsn.sim", "SIM_LOG_FILE")
