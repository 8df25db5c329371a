"""
Run manifests: plain key=value text recording everything needed to repeat a run.

No timestamps or host names are written, so identical runs produce
identical manifests. Configuration entries are stored as ``config.<key>``
and can be loaded back with ``config_from_manifest``.
"""
import hashlib
import logging
import os
from typing import Any, Dict, Iterable, Mapping, Optional

import numpy as np
import scipy
from dotenv import dotenv_values

from analytic_diffusion import __version__
from analytic_diffusion.utils.config_utils import RunConfig, load_config
from analytic_diffusion.utils.file_utils import file_sha256

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.txt"
CONFIG_PREFIX = "config."


def array_digest(array: np.ndarray) -> str:
    """sha256 of an array's float64 little-endian bytes."""
    data = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    return hashlib.sha256(data.tobytes()).hexdigest()


def input_digests(config: RunConfig, keys: Iterable[str]) -> Dict[str, str]:
    digests = {}
    for key in keys:
        value = config.values.get(key)
        if not value:
            continue
        paths = value if isinstance(value, tuple) else [p for p in str(value).split(",") if p]
        for k, path in enumerate(paths):
            suffix = f".{k}" if len(paths) > 1 else ""
            digests[f"input.{key}{suffix}"] = file_sha256(path.strip())
    return digests


def build_manifest(command: str, config: RunConfig, seeds: Optional[Mapping[str, int]] = None,
                   inputs: Optional[Mapping[str, str]] = None,
                   extra: Optional[Mapping[str, Any]] = None) -> Dict[str, str]:
    entries: Dict[str, str] = {
        "command": command,
        "version": __version__,
        "numpy.version": np.__version__,
        "scipy.version": scipy.__version__,
        "config.hash": config.digest(),
    }
    for key, value in sorted((seeds or {}).items()):
        entries[f"seed.{key}"] = str(int(value))
    entries.update(inputs or {})
    for line in config.as_text().splitlines():
        key, value = line.split("=", 1)
        entries[f"{CONFIG_PREFIX}{key}"] = value
    for key, value in (extra or {}).items():
        entries[key] = str(value)
    return entries


def write_manifest(directory: str, entries: Mapping[str, str], name: str = MANIFEST_NAME) -> str:
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for key, value in entries.items():
            f.write(f"{key}={value}\n")
    logger.info(f"Manifest written to {path}")
    return path


def read_manifest(path: str) -> Dict[str, str]:
    return {k: v for k, v in dotenv_values(path).items() if v is not None}


def config_from_manifest(path: str, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Rebuild the RunConfig a manifest was written with."""
    entries = read_manifest(path)
    values = {
        key[len(CONFIG_PREFIX):]: value
        for key, value in entries.items()
        if key.startswith(CONFIG_PREFIX) and key != "config.hash"
    }
    values.update(overrides or {})
    return load_config(None, values)
