"""Tool definitions for the uncertainty wrapper MCP server."""

from __future__ import annotations

import asyncio
import inspect
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import mcp.types as types

from ..analysis.aggregation import coverage_summary, dataset_bounds
from ..analysis.evaluation import evaluation_table
from ..core.data_model import Panel, Sample, load_events_csv
from ..errors import ConfigError, InputError
from ..quality.wrapper import UncertaintyWrapper, load_wrapper_dir, wrapper_estimate
from ..utils import to_serializable
from .context import MCPServerContext

logger = logging.getLogger(__name__)

PANEL_FILE = "panel.json"
WRAPPER_DIR = "wrappers"


class ToolHandlers:
    """Dispatches MCP tool calls to concrete implementations."""

    def __init__(self, context: MCPServerContext) -> None:
        self.context = context
        self._tool_specs = self._build_tool_specs()

    def list_tools(self) -> List[types.Tool]:
        """Return MCP tool descriptors."""

        return [
            types.Tool(
                name=name,
                description=spec["description"],
                inputSchema=spec["schema"],
            )
            for name, spec in self._tool_specs.items()
        ]

    async def call_tool(self, name: str, arguments: Dict[str, Any]) -> Any:
        """Execute a tool call and return serialisable output."""

        if name not in self._tool_specs:
            raise ValueError(f"Unknown tool: {name}")

        handler = self._tool_specs[name]["handler"]
        try:
            result = handler(arguments)
            if inspect.iscoroutine(result) or isinstance(result, asyncio.Future):
                result = await result
            return to_serializable(result)
        except Exception:
            logger.exception("Tool execution failed: %s", name)
            raise

    # ------------------------------------------------------------------ helpers
    async def _run(self, func: Callable[[], Any]) -> Any:
        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(self.context.executor, func)

    @staticmethod
    def _required(arguments: Dict[str, Any], key: str) -> str:
        value = arguments.get(key)
        if not value:
            raise InputError(f"Missing required argument: {key}")
        return str(value)

    def _panel(self, models_dir: Path, panel_path: Optional[str]) -> Panel:
        path = Path(panel_path) if panel_path else models_dir / PANEL_FILE
        if not path.exists():
            raise FileNotFoundError(f"Panel file not found: {path} (written by 'uwrap train')")
        return self.context.panel(path)

    def _samples(self, events_csv: str, panel: Panel) -> List[Sample]:
        return list(load_events_csv(Path(events_csv).expanduser(), panel).samples)

    def _wrappers(self, models_dir: Path) -> List[UncertaintyWrapper]:
        return load_wrapper_dir(models_dir / WRAPPER_DIR)

    def _build_tool_specs(self) -> Dict[str, Dict[str, Any]]:
        models_dir = {"type": "string", "description": "Models directory written by 'uwrap train/build'"}
        events_csv = {"type": "string", "description": "Events CSV in the uwrap events layout"}
        panel_path = {"type": "string", "description": "Panel JSON (default: <models>/panel.json)"}
        return {
            "list_wrappers": {
                "description": "List the built uncertainty wrappers of a models directory.",
                "schema": {
                    "type": "object",
                    "properties": {"models_dir": models_dir},
                    "required": ["models_dir"],
                },
                "handler": self._handle_list_wrappers,
            },
            "apply_wrapper": {
                "description": "Per-event prediction and uncertainty for one sample.",
                "schema": {
                    "type": "object",
                    "properties": {
                        "wrapper_path": {"type": "string", "description": "Wrapper JSON file"},
                        "events_csv": events_csv,
                        "sample_id": {"type": "string"},
                        "panel_path": panel_path,
                    },
                    "required": ["wrapper_path", "events_csv", "sample_id"],
                },
                "handler": self._handle_apply_wrapper,
            },
            "population_bounds": {
                "description": "Cell population ratio bounds per sample and cell type.",
                "schema": {
                    "type": "object",
                    "properties": {
                        "models_dir": models_dir,
                        "events_csv": events_csv,
                        "variant": {"type": "string", "description": "Wrapper variant, e.g. basic+outcome"},
                        "panel_path": panel_path,
                    },
                    "required": ["models_dir", "events_csv", "variant"],
                },
                "handler": self._handle_population_bounds,
            },
            "evaluate_wrappers": {
                "description": "Brier decomposition of every wrapper on labelled events.",
                "schema": {
                    "type": "object",
                    "properties": {"models_dir": models_dir, "events_csv": events_csv, "panel_path": panel_path},
                    "required": ["models_dir", "events_csv"],
                },
                "handler": self._handle_evaluate_wrappers,
            },
        }

    # ------------------------------------------------------------------ tool handlers
    def _handle_list_wrappers(self, arguments: Dict[str, Any]) -> Dict[str, Any]:
        models_dir = Path(self._required(arguments, "models_dir")).expanduser()
        entries = []
        for path in sorted((models_dir / WRAPPER_DIR).glob("*.json")):
            wrapper = self.context.wrapper(path)
            entries.append(
                {
                    "file": path.name,
                    "name": wrapper.name,
                    "cell_type": wrapper.cell_type.name,
                    "variant": wrapper.variant.name,
                    "kind": wrapper.impact_model.kind,
                    "confidence": wrapper.confidence,
                    "leaves": wrapper.impact_model.n_leaves,
                }
            )
        return {"models_dir": str(models_dir), "wrappers": entries}

    async def _handle_apply_wrapper(self, arguments: Dict[str, Any]) -> Dict[str, Any]:
        wrapper_path = Path(self._required(arguments, "wrapper_path")).expanduser()
        events_csv = self._required(arguments, "events_csv")
        sample_id = self._required(arguments, "sample_id")

        def _job() -> Dict[str, Any]:
            wrapper = self.context.wrapper(wrapper_path)
            panel = self._panel(wrapper_path.parent.parent, arguments.get("panel_path"))
            matches = [s for s in self._samples(events_csv, panel) if s.sample_id == sample_id]
            if not matches:
                raise InputError(f"Unknown sample: {sample_id}")
            estimates = wrapper_estimate(wrapper, matches[0])
            return {
                "wrapper": wrapper.name,
                "sample_id": sample_id,
                "events": [estimate.to_dict() for estimate in estimates.to_list()],
            }

        return await self._run(_job)

    async def _handle_population_bounds(self, arguments: Dict[str, Any]) -> Dict[str, Any]:
        models_dir = Path(self._required(arguments, "models_dir")).expanduser()
        events_csv = self._required(arguments, "events_csv")
        variant = self._required(arguments, "variant")

        def _job() -> Dict[str, Any]:
            panel = self._panel(models_dir, arguments.get("panel_path"))
            chosen = {w.cell_type.name: w for w in self._wrappers(models_dir) if w.variant.name == variant}
            if not chosen:
                raise ConfigError(f"No wrappers with variant {variant!r} in {models_dir}")
            records = dataset_bounds(chosen, self._samples(events_csv, panel), panel)
            inside, total = coverage_summary(records)
            return {
                "variant": variant,
                "records": [record.to_dict() for record in records],
                "coverage": {"inside": inside, "total": total},
            }

        return await self._run(_job)

    async def _handle_evaluate_wrappers(self, arguments: Dict[str, Any]) -> Dict[str, Any]:
        models_dir = Path(self._required(arguments, "models_dir")).expanduser()
        events_csv = self._required(arguments, "events_csv")

        def _job() -> Dict[str, Any]:
            panel = self._panel(models_dir, arguments.get("panel_path"))
            rows = evaluation_table(self._wrappers(models_dir), self._samples(events_csv, panel), panel)
            return {"rows": [row.to_dict() for row in rows]}

        return await self._run(_job)
