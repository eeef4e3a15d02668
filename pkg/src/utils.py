#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import copy
import json
import logging
import math
import subprocess
from pathlib import Path
from typing import Any, Dict, Optional

import psutil

__version__ = "1.0.0"

DEFAULT_CONFIG: Dict[str, Any] = {
    "experiment": {
        "command": "kernel",
        "n": 64,
        "n_list": [20, 200, 2000],
        "t": 1.0,
        "x": 0.0,
        "site": 0,
        "coin": "PLUS",
        "steps": 3,
        "replicas": 1000,
        "seed": 20240601,
        "profile_path": None,
        "test_fn_path": None,
        "lambda": {},
        "probe_offsets": [-2, -1, 0, 1, 2],
        "grid_points": 81,
    },
    "tolerances": {
        "tv_threshold": 0.01,
        "ks_bound": 0.03,
        "hydro_relative": 0.05,
        "sigma_multiplier": 3.0,
        "unitarity": 1e-9,
        "laplace_sigma": 3.0,
    },
    "output": {
        "path": "output.csv",
        "format": "csv",
        "write_digest": False,
    },
    "performance": {
        "parallel_processing": {
            "max_workers": 1,
            "use_processes": False,
        }
    },
    "logging": {
        "enabled": True,
        "level": "INFO",
        "journald": False,
        "file": None,
    },
}


def setup_logging(config: Optional[Dict] = None):
    """Sets up logging for the application."""
    log_config = (config or {}).get("logging", DEFAULT_CONFIG["logging"])
    if not log_config.get("enabled", True):
        logging.disable(logging.CRITICAL)
        return

    handlers = [logging.StreamHandler()]
    # journald captures stderr, so a file is only added off-journal
    log_file = log_config.get("file")
    if log_file and not log_config.get("journald", False):
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_path))

    logging.basicConfig(
        level=getattr(logging, str(log_config.get("level", "INFO")).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True
    )


def _deep_merge(base: Dict, override: Dict) -> Dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_config(config_path: Optional[str] = None) -> Dict:
    """
    Load configuration from file, layered over the built-in defaults.

    Args:
        config_path: Path to a JSON configuration file (None = defaults only)

    Returns:
        The merged configuration dictionary
    """
    if config_path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    with open(config_path, 'r') as f:
        try:
            user_config = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"Invalid configuration file {config_path}: {e}") from e
    if not isinstance(user_config, dict):
        raise ValueError(f"Configuration root must be an object: {config_path}")
    return _deep_merge(DEFAULT_CONFIG, user_config)


def apply_overrides(config: Dict, seed: Optional[int] = None, replicas: Optional[int] = None,
                    out: Optional[str] = None, fmt: Optional[str] = None,
                    log_level: Optional[str] = None) -> Dict:
    """Folds command line flags on top of a loaded configuration."""
    config = copy.deepcopy(config)
    if seed is not None:
        config["experiment"]["seed"] = seed
    if replicas is not None:
        config["experiment"]["replicas"] = replicas
    if out is not None:
        config["output"]["path"] = out
    if fmt is not None:
        config["output"]["format"] = fmt
    if log_level is not None:
        config["logging"]["level"] = log_level
    return config


def run_command(cmd, check=True, capture_output=True):
    """Runs a command and returns the result."""
    try:
        result = subprocess.run(
            cmd,
            check=check,
            capture_output=capture_output,
            text=True
        )
        return result
    except subprocess.CalledProcessError as e:
        logging.error(f"Error executing command: {e}")
        raise e


def version_string() -> str:
    """Package version, extended with `git describe` output inside a checkout."""
    try:
        result = run_command(["git", "describe", "--always", "--dirty"], check=False)
        if result.returncode == 0 and result.stdout.strip():
            return f"{__version__}+{result.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def available_memory() -> int:
    """Returns the available system memory in bytes."""
    return psutil.virtual_memory().available


def ensure_memory(nbytes: int) -> None:
    """
    Refuse an allocation that cannot fit in available memory.

    Raises:
        MemoryError: if nbytes exceeds the available memory
    """
    available = available_memory()
    if nbytes > available:
        raise MemoryError(f"Cannot allocate {format_size(nbytes)}, "
                          f"only {format_size(available)} available")


def floor_int(y: float) -> int:
    """Greatest integer less than or equal to y."""
    return int(math.floor(y))


def format_size(size_bytes):
    """Formats a size in bytes to a readable format."""
    for unit in ['B', 'KB', 'MB', 'GB', 'TB']:
        if size_bytes < 1024.0:
            return f"{size_bytes:.2f} {unit}"
        size_bytes /= 1024.0
    return f"{size_bytes:.2f} PB"
