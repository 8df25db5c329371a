"""
File utility functions for the lab's inputs and artifacts.
"""
import hashlib
import os
from typing import Tuple

from analytic_diffusion.errors import ConfigError


def check_file_writeable(filepath: str) -> Tuple[bool, str]:
    """
    Check if a file can be written to.

    Args:
        filepath: Path to the file

    Returns:
        Tuple of (is_writeable, error_message)
    """
    if not os.path.exists(filepath):
        directory = os.path.dirname(filepath) or '.'
        if not os.path.exists(directory):
            return False, f"Directory {directory} does not exist"
        if not os.access(directory, os.W_OK):
            return False, f"Directory {directory} is not writeable"
        return True, ""

    if not os.access(filepath, os.W_OK):
        return False, f"File {filepath} is not writeable (permission denied)"
    try:
        with open(filepath, 'a'):
            pass
        return True, ""
    except IOError as e:
        return False, f"File {filepath} is not writeable: {str(e)}"


def ensure_output_dir(path: str) -> str:
    """Create ``path`` if needed and make sure artifacts can be written into it."""
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"Cannot create output directory {path}: {e}") from e
    ok, message = check_file_writeable(os.path.join(path, ".adl_write_check"))
    if not ok:
        raise ConfigError(f"Output directory {path} is not usable: {message}")
    return path


def require_file(path: str, what: str) -> str:
    if not os.path.isfile(path):
        raise ConfigError(f"{what} {path} does not exist")
    return path


def file_sha256(path: str, chunk_size: int = 1 << 20) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(chunk_size), b''):
            digest.update(chunk)
    return digest.hexdigest()
