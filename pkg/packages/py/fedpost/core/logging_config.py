"""
Centralized logging configuration for fedpost.
"""

import logging
import logging.config
from typing import Any, Dict, Optional

from .config import Settings, get_settings


def build_logging_config(settings: Settings) -> Dict[str, Any]:
    """Build the ``dictConfig`` payload for the given settings."""
    formatter = "json" if settings.LOG_FORMAT == "json" else "default"

    handlers: Dict[str, Any] = {
        "console": {
            "class": "logging.StreamHandler",
            "level": settings.LOG_LEVEL,
            "formatter": formatter,
            "stream": "ext://sys.stderr",
        },
    }
    if settings.LOG_FILE is not None:
        settings.LOG_FILE.parent.mkdir(parents=True, exist_ok=True)
        handlers["file"] = {
            "class": "logging.handlers.RotatingFileHandler",
            "level": settings.LOG_LEVEL,
            "formatter": "json" if formatter == "json" else "detailed",
            "filename": str(settings.LOG_FILE),
            "maxBytes": 10485760,  # 10MB
            "backupCount": 5,
        }

    return {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "default": {
                "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
                "datefmt": "%Y-%m-%d %H:%M:%S",
            },
            "detailed": {
                "format": "%(asctime)s - %(name)s - %(levelname)s - %(module)s - %(funcName)s - %(lineno)d - %(message)s",
                "datefmt": "%Y-%m-%d %H:%M:%S",
            },
            "json": {
                "()": "pythonjsonlogger.jsonlogger.JsonFormatter",
                "format": "%(asctime)s %(name)s %(levelname)s %(module)s %(funcName)s %(lineno)d %(message)s",
            },
        },
        "handlers": handlers,
        "loggers": {
            "fedpost": {
                "level": settings.LOG_LEVEL,
                "handlers": list(handlers),
                "propagate": False,
            },
        },
    }


def setup_logging(settings: Optional[Settings] = None) -> None:
    """Configure logging for the application."""
    settings = settings or get_settings()
    logging.config.dictConfig(build_logging_config(settings))

    # Set third-party loggers to WARNING to reduce noise
    logging.getLogger("sklearn").setLevel(logging.WARNING)
