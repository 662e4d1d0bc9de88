"""Small helpers for serialisation and atomic file output."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import tempfile
from datetime import datetime
from pathlib import Path
from typing import Any

import numpy as np

from .errors import SchemaError

logger = logging.getLogger(__name__)


def to_serializable(value: Any) -> Any:
    """Convert complex objects to JSON-serialisable structures."""
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value

    if isinstance(value, np.generic):
        return value.item()

    if isinstance(value, np.ndarray):
        return [to_serializable(item) for item in value.tolist()]

    if isinstance(value, datetime):
        return value.isoformat()

    if isinstance(value, Path):
        return str(value)

    if hasattr(value, "to_dict"):
        return to_serializable(value.to_dict())

    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return to_serializable(dataclasses.asdict(value))

    if isinstance(value, dict):
        return {str(k): to_serializable(v) for k, v in value.items()}

    if isinstance(value, (list, tuple, set, frozenset)):
        return [to_serializable(item) for item in value]

    return str(value)


def atomic_write_text(path: Path | str, text: str) -> Path:
    """Write ``text`` to ``path`` through a temporary file and an atomic rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    logger.debug("Wrote %s (%s bytes)", path, len(text))
    return path


def dump_json(data: Any) -> str:
    """Stable JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(to_serializable(data), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_json(path: Path | str, data: Any) -> Path:
    return atomic_write_text(path, dump_json(data))


def read_json(path: Path | str) -> Any:
    """Parse a UTF-8 JSON file; undecodable or malformed content raises ``SchemaError``."""
    with open(path, "r", encoding="utf-8") as handle:
        try:
            return json.load(handle)
        except UnicodeDecodeError as exc:
            raise SchemaError(f"{path}: not UTF-8 text (byte {exc.start})") from exc
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
