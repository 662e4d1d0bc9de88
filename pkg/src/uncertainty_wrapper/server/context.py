"""Shared runtime context for the MCP server."""

from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Tuple

from ..core.data_model import Panel, load_panel
from ..quality.wrapper import UncertaintyWrapper, load_wrapper

logger = logging.getLogger(__name__)


class MCPServerContext:
    """Executor for tool work plus caches of loaded wrappers and panels."""

    def __init__(self, *, max_workers: int = 4) -> None:
        self.executor = ThreadPoolExecutor(max_workers=max_workers)
        self._lock = threading.Lock()
        self._wrappers: Dict[Tuple[Path, int], UncertaintyWrapper] = {}
        self._panels: Dict[Tuple[Path, int], Panel] = {}
        logger.debug("MCPServerContext initialized with max_workers=%s", max_workers)

    @staticmethod
    def _key(path: Path | str) -> Tuple[Path, int]:
        resolved = Path(path).expanduser().resolve()
        if not resolved.exists():
            raise FileNotFoundError(f"File not found: {resolved}")
        return resolved, resolved.stat().st_mtime_ns

    def wrapper(self, path: Path | str) -> UncertaintyWrapper:
        """Load a wrapper once per file version."""
        key = self._key(path)
        with self._lock:
            cached = self._wrappers.get(key)
        if cached is None:
            cached = load_wrapper(key[0])
            with self._lock:
                self._wrappers[key] = cached
            logger.debug("Cached wrapper %s", key[0])
        return cached

    def panel(self, path: Path | str) -> Panel:
        key = self._key(path)
        with self._lock:
            cached = self._panels.get(key)
        if cached is None:
            cached = load_panel(key[0])
            with self._lock:
                self._panels[key] = cached
        return cached

    @property
    def cached_wrappers(self) -> int:
        with self._lock:
            return len(self._wrappers)

    def shutdown(self) -> None:
        """Gracefully stop shared executors."""
        logger.debug("Shutting down MCPServerContext executor")
        self.executor.shutdown(wait=False)
