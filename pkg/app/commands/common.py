"""Shared plumbing for the command modules: config files, overrides and output echo."""

from __future__ import annotations

import argparse
from pathlib import Path
from typing import Dict, List, Union

from pydantic import ValidationError

from app.config import DEFAULT_THREADS
from app.errors import ConfigError
from app.log import get_logger
from app.schemas import MODES, RunConfig

logger = get_logger("config")

RUN_CONFIG_NAME = "run.cfg"


def parse_config_file(path: Union[str, Path]) -> Dict[str, str]:
    """Read flat ``key=value`` lines; ``#`` starts a comment, blank lines are skipped."""

    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not UTF-8 text (byte {exc.start})") from exc
    values: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{number}: empty key")
        values[key] = value
    return values


def _parse_assignment(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"--set expects KEY=VALUE, got {text!r}")
    key, value = (part.strip() for part in text.split("=", 1))
    return key, value


def describe_validation_error(exc: ValidationError) -> str:
    problems = []
    for error in exc.errors():
        key = ".".join(str(part) for part in error["loc"]) or "config"
        problems.append(f"{key}: {error['msg']}")
    return "; ".join(problems)


def build_run_config(values: Dict[str, object]) -> RunConfig:
    """Validate raw values, turning pydantic errors into a ConfigError naming the keys."""

    try:
        cfg = RunConfig.model_validate(values)
        # the sub-configs carry the cross-field checks
        cfg.network()
        cfg.training()
        cfg.synthesis()
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {describe_validation_error(exc)}") from exc
    return cfg


def load_run_config(args: argparse.Namespace, seed_key: str = "seed") -> RunConfig:
    """File values, then ``--set`` overrides, then the dedicated flags.

    ``--seed`` lands on ``seed_key``; the generator passes ``data_seed``.
    """
    values: Dict[str, object] = {}
    if getattr(args, "config", None):
        values.update(parse_config_file(args.config))
    for assignment in getattr(args, "overrides", None) or []:
        key, value = _parse_assignment(assignment)
        values[key] = value
    for flag, key in (("seed", seed_key), ("threads", "threads"), ("mode", "mode")):
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = value
    values.setdefault("threads", DEFAULT_THREADS)
    return build_run_config(values)


def format_run_config(cfg: RunConfig) -> List[str]:
    lines = []
    for key, value in cfg.model_dump().items():
        if isinstance(value, list):
            value = ",".join(str(item) for item in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key}={value}")
    return lines


def echo_run_config(cfg: RunConfig) -> None:
    for line in format_run_config(cfg):
        logger.info(line)


def save_run_config(cfg: RunConfig, directory: Union[str, Path]) -> Path:
    path = Path(directory) / RUN_CONFIG_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(format_run_config(cfg)) + "\n", encoding="utf-8")
    logger.info("wrote %s", path)
    return path


def add_common_flags(parser: argparse.ArgumentParser, mode: bool = True) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--seed", type=int, help="random seed (data_seed for gen)")
    parser.add_argument("--threads", type=int, help="worker threads (default 1 keeps runs bit-identical)")
    if mode:
        parser.add_argument("--mode", choices=MODES, help="sca, baseline_no or baseline_ave")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        metavar="KEY=VALUE",
        help="override one config key; may be repeated",
    )


def parse_int_list(text: str, what: str) -> List[int]:
    try:
        values = [int(token) for token in text.split(",") if token.strip()]
    except ValueError as exc:
        raise ConfigError(f"{what} must be a comma-separated list of integers, got {text!r}") from exc
    if not values:
        raise ConfigError(f"{what} must not be empty")
    return values
