"""
Utility helpers shared across eloqnet.

This module holds the user directory constants, atomic file writes and the
seed derivation used to keep every run reproducible.
"""

import logging
import os
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

ELOQNET_DEFAULT_USER_DIR = Path(
    os.environ.get("ELOQNET_HOME", Path.home() / ".eloqnet")
).expanduser()

# Get logger for this module
logger = logging.getLogger("eloqnet.utils")


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write bytes to a file through a temporary file and a rename.

    The temporary file is created in the destination directory so the final
    ``os.replace`` never crosses a filesystem boundary.

    Args:
        path: Destination file.
        data: Content to write.

    Raises:
        OSError: If the directory is not writable.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_name, path)
    except Exception:
        logger.error(f"Failed to write {path}")
        Path(tmp_name).unlink(missing_ok=True)
        raise
    logger.debug(f"Wrote {len(data)} bytes to {path}")


def atomic_write_text(path: Path, text: str) -> None:
    """Write UTF-8 text atomically. See :func:`atomic_write_bytes`."""
    atomic_write_bytes(path, text.encode("utf-8"))


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return a generator seeded from ``seed`` mixed with integer keys.

    Used for per-patient and per-fold streams so that each one is independent
    of the order in which the others are drawn.

    Args:
        seed: Base seed of the run.
        keys: Extra integers, e.g. a patient id or a fold index.

    Returns:
        np.random.Generator: A fresh PCG64 generator.
    """
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def derive_seed(seed: int, *keys: int) -> int:
    """Integer seed mixed from ``seed`` and keys, for nested configs."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(2, np.uint64)[0])


def format_index_list(indices: Sequence[int]) -> str:
    """Render region indices as a comma separated string."""
    return ",".join(str(int(i)) for i in indices)


def parse_index_list(text: str) -> list[int]:
    """Parse the output of :func:`format_index_list`."""
    text = text.strip()
    if not text:
        return []
    return [int(part) for part in text.split(",")]
