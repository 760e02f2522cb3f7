"""Bracket-tagged progress lines (``[train] epoch 3 ...``) on top of stdlib logging."""

from __future__ import annotations

import logging
import sys

from app.config import LOG_LEVEL

_ROOT = "sca"


class _TagFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        tag = record.name.rsplit(".", 1)[-1]
        return f"[{tag}] {record.getMessage()}"


class _StdoutHandler(logging.StreamHandler):
    """Writes to whatever ``sys.stdout`` is at emit time."""

    @property
    def stream(self):
        return sys.stdout

    @stream.setter
    def stream(self, value) -> None:
        pass


def configure_logging(level: str = LOG_LEVEL) -> None:
    """Install the stdout handler once; later calls only adjust the level."""

    root = logging.getLogger(_ROOT)
    root.setLevel(level)
    if any(isinstance(h, _StdoutHandler) for h in root.handlers):
        return
    handler = _StdoutHandler()
    handler.setFormatter(_TagFormatter())
    root.addHandler(handler)
    root.propagate = False


def get_logger(tag: str) -> logging.Logger:
    return logging.getLogger(f"{_ROOT}.{tag}")
