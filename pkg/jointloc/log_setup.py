"""Logging setup shared by the batch runner and its worker processes.

Handlers are attached to the root logger so every module using
``logging.getLogger("jointloc.<area>")`` ends up in the same place. Calling
``configure_logging`` twice with the same file does not duplicate handlers.
"""
from __future__ import annotations

import logging
import os
from logging.handlers import RotatingFileHandler
from typing import Optional

LOG_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | %(message)s"


def _level_from_name(name: Optional[str]) -> int:
    try:
        lvl_name = str(name or "INFO").upper()
        level = getattr(logging, lvl_name, logging.INFO)
        return level if isinstance(level, int) else logging.INFO
    except Exception:
        return logging.INFO


def configure_logging(level: Optional[str] = "INFO", log_file: Optional[str] = None) -> logging.Logger:
    """Attach a rotating file handler (when ``log_file`` is given) and a stream handler."""
    lvl = _level_from_name(level)
    root = logging.getLogger()
    root.setLevel(lvl)
    fmt = logging.Formatter(LOG_FORMAT)

    existing_files = {getattr(h, "baseFilename", None) for h in root.handlers if hasattr(h, "baseFilename")}
    if log_file:
        log_file = os.path.abspath(log_file)
        if log_file not in existing_files:
            try:
                os.makedirs(os.path.dirname(log_file), exist_ok=True)
                fh = RotatingFileHandler(log_file, maxBytes=5 * 1024 * 1024, backupCount=3, encoding="utf-8")
                fh.setLevel(lvl)
                fh.setFormatter(fmt)
                root.addHandler(fh)
            except Exception:
                # Fall back to the stream handler below
                pass

    has_stream = any(
        isinstance(h, logging.StreamHandler) and not isinstance(h, logging.FileHandler) for h in root.handlers
    )
    if not has_stream:
        sh = logging.StreamHandler()
        sh.setLevel(lvl)
        sh.setFormatter(fmt)
        root.addHandler(sh)

    for h in root.handlers:
        h.setLevel(lvl)
    return logging.getLogger("jointloc")
