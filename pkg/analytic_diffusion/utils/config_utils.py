"""
Run configuration: a key=value file plus overrides on top of built-in defaults.

Files are parsed with python-dotenv's ``dotenv_values``; precedence is
overrides > file > defaults. Unknown keys and unparsable values are
configuration errors.
"""
import hashlib
import logging
import os
from dataclasses import dataclass
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

from dotenv import dotenv_values

from analytic_diffusion.defaults import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_EXTERNAL_TAU,
    DEFAULT_FD_STEP,
    DEFAULT_TAU,
)
from analytic_diffusion.errors import ConfigError
from analytic_diffusion.utils.file_utils import require_file

logger = logging.getLogger(__name__)


def _text(value: str) -> str:
    return str(value).strip()


def _list(value: str) -> Tuple[str, ...]:
    return tuple(v.strip() for v in str(value).split(",") if v.strip())


def _int_list(value: str) -> Tuple[int, ...]:
    return tuple(int(v) for v in _list(value))


def _float_list(value: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in _list(value))


def _pair(kind: Callable) -> Callable:
    def parse(value: str):
        items = tuple(kind(v) for v in _list(value))
        if len(items) != 2:
            raise ValueError(f"expected two comma-separated values, got {value!r}")
        return items
    return parse


def _bool(value: str) -> bool:
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


# key -> (parser, default); a default of None means "unset".
CONFIG_KEYS: Dict[str, Tuple[Callable[[str], Any], Any]] = {
    "dataset.source": (_text, None),
    "dataset.format": (_text, None),
    "dataset.subset": (int, None),
    "dataset.seed": (int, 0),
    "dataset.range": (_pair(float), (-1.0, 1.0)),
    "dataset.raw_range": (_pair(float), (0.0, 1.0)),
    "schedule.T": (int, 1000),
    "schedule.beta_start": (float, 1e-4),
    "schedule.beta_end": (float, 0.02),
    "denoiser.kind": (_list, ("optimal",)),
    "denoiser.tau": (float, DEFAULT_TAU),
    "denoiser.patch_preset": (_text, None),
    "denoiser.patch_size": (int, None),
    "denoiser.translation_stride": (int, 1),
    "denoiser.mask_file": (_text, None),
    "denoiser.batch_size": (int, DEFAULT_BATCH_SIZE),
    "sampler.steps": (int, 10),
    "sampler.count": (int, 4),
    "sampler.seed": (int, 0),
    "sensitivity.pixel": (_pair(int), None),
    "sensitivity.timesteps": (_int_list, None),
    "sensitivity.mode": (_text, "per-image"),
    "sensitivity.method": (_text, "analytic"),
    "sensitivity.samples": (int, 1),
    "sensitivity.step": (float, DEFAULT_FD_STEP),
    "perturb.gamma": (_float_list, (0.1, 0.5)),
    "perturb.stencil": (_text, None),
    "perturb.seed": (int, 0),
    "perturb.clamp": (_bool, True),
    "stats.top_k": (int, 8),
    "masks.timesteps": (_int_list, None),
    "masks.kernel_file": (_text, None),
    "masks.external_tau": (float, DEFAULT_EXTERNAL_TAU),
    "masks.ablation": (_bool, False),
    "benchmark.external": (_list, ()),
    "external.range": (_pair(float), None),
    "nn.image": (_text, None),
    "single_step.image": (_text, None),
    "single_step.timesteps": (_int_list, None),
    "output.dir": (_text, "adl_out"),
}

# Keys naming input files that must exist when the config is validated.
FILE_KEYS = ("dataset.source", "denoiser.mask_file", "perturb.stencil", "nn.image", "single_step.image",
             "benchmark.external", "masks.kernel_file")


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    """Parsed, validated configuration values keyed by dotted name."""

    values: Mapping[str, Any]
    source: Optional[str] = None

    def __getitem__(self, key: str) -> Any:
        if key not in CONFIG_KEYS:
            raise ConfigError(f"Unknown configuration key '{key}'")
        return self.values.get(key)

    def require(self, key: str) -> Any:
        value = self[key]
        if value is None or value == ():
            raise ConfigError(f"Configuration key '{key}' is required for this command")
        return value

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        merged = dict(self.values)
        for key, value in overrides.items():
            merged[key] = _parse(key, value) if isinstance(value, str) else value
        return RunConfig(values=merged, source=self.source)

    def as_text(self) -> str:
        """Sorted key=value lines of every set key."""
        return "".join(
            f"{key}={_format(self.values[key])}\n"
            for key in sorted(self.values)
            if self.values[key] is not None
        )

    def digest(self) -> str:
        return hashlib.sha256(self.as_text().encode("utf-8")).hexdigest()


def _parse(key: str, raw: Any) -> Any:
    if key not in CONFIG_KEYS:
        raise ConfigError(f"Unknown configuration key '{key}'")
    parser, _ = CONFIG_KEYS[key]
    if raw is None or (isinstance(raw, str) and raw.strip() == ""):
        return None
    try:
        return parser(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid value for '{key}': {e}") from e


def read_config_file(path: str) -> Dict[str, str]:
    if not os.path.isfile(path):
        raise ConfigError(f"Config file {path} does not exist")
    return {k: v for k, v in dotenv_values(path).items() if v is not None}


def validate_files(config: RunConfig) -> None:
    for key in FILE_KEYS:
        value = config.values.get(key)
        if not value:
            continue
        paths = value if isinstance(value, tuple) else _list(value)
        for path in paths:
            require_file(path, f"File for '{key}'")


def load_config(path: Optional[str] = None,
                overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides``; validated."""
    values = {key: default for key, (_, default) in CONFIG_KEYS.items()}
    if path:
        for key, raw in read_config_file(path).items():
            values[key] = _parse(key, raw)
    for key, raw in (overrides or {}).items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"Unknown configuration key '{key}'")
        values[key] = _parse(key, raw) if isinstance(raw, str) else raw
    config = RunConfig(values=values, source=path)
    validate_files(config)
    logger.debug(f"Configuration {config.digest()[:12]} loaded from {path or 'defaults'}")
    return config


def parse_assignments(pairs) -> Dict[str, str]:
    """Turn ['key=value', ...] into a dict, rejecting malformed entries."""
    parsed = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"Expected key=value, got '{pair}'")
        key, value = pair.split("=", 1)
        parsed[key.strip()] = value.strip()
    return parsed
