"""
Validation utilities for artifact paths and CLI inputs.
"""

from pathlib import Path

from utils.errors import ConfigError, DataError

# Stage output directories under --out
STAGE_DIRS = ("corpus", "model", "rirs", "perturbations", "reports")


def require_file(path: str | Path, what: str) -> Path:
    """
    Check that an input artifact exists.

    Args:
        path: Expected location
        what: Human readable artifact name for the diagnostic

    Returns:
        The path as a Path

    Raises:
        DataError: the file does not exist
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{what} not found at {path} (run the producing stage first)")
    return path


def require_dir(path: str | Path, what: str) -> Path:
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"{what} directory not found at {path} (run the producing stage first)")
    return path


def validate_threads(threads: int | None) -> int | None:
    """--threads must be a positive worker count when given."""
    if threads is not None and threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {threads}")
    return threads


def stage_dir(out_dir: str | Path, stage: str) -> Path:
    """Create (if needed) and return a stage output directory."""
    if stage not in STAGE_DIRS:
        raise ValueError(f"unknown stage directory {stage!r}")
    path = Path(out_dir) / stage
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create output directory {path}: {e}") from e
    return path
