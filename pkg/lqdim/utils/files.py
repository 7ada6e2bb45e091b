"""
lqdim/utils/files.py
File system helpers for result files and bundled spec lookup.
"""
import logging
import os
import tempfile
from pathlib import Path

logger = logging.getLogger(__name__)

SPECS_DIR = Path(__file__).resolve().parent.parent / "specs"


def ensure_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_text_atomic(path: Path, text: str) -> Path:
    """Write UTF-8 text through a temporary file in the target directory.

    Readers never see a half-written result file.
    """
    ensure_dir(path.parent)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    except Exception:
        safe_unlink(tmp)
        raise
    os.replace(tmp, path)
    logger.debug("Wrote %s (%d chars)", path, len(text))
    return path


def safe_unlink(path) -> None:
    """Delete a file, silently ignoring errors if it doesn't exist."""
    try:
        os.unlink(path)
        logger.debug("Deleted file: %s", path)
    except FileNotFoundError:
        pass
    except Exception as exc:
        logger.warning("Could not delete file %s: %s", path, exc)


def resolve_spec_path(name_or_path: str | Path) -> Path:
    """A path to an existing file, or the name of a bundled spec (with or without .json)."""
    candidate = Path(name_or_path)
    if candidate.is_file():
        return candidate
    bundled = SPECS_DIR / candidate.name
    if bundled.suffix != ".json":
        bundled = bundled.with_suffix(".json")
    if bundled.is_file():
        return bundled
    raise FileNotFoundError(f"no spec file or bundled spec named '{name_or_path}'")


def bundled_specs() -> list[Path]:
    return sorted(SPECS_DIR.glob("*.json"))
