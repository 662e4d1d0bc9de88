"""Entry point for the uncertainty wrapper MCP server."""

from __future__ import annotations

import asyncio
import json
import logging
from typing import Any, Dict, List, Optional

from mcp.server import Server
from mcp.server.models import InitializationOptions, ServerCapabilities
from mcp.server.stdio import stdio_server
from mcp.types import TextContent, Tool

from .. import __version__
from .context import MCPServerContext
from .tools import ToolHandlers

logger = logging.getLogger(__name__)

SERVER_NAME = "uncertainty-wrapper"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def create_app(handlers: ToolHandlers) -> Server:
    """Bind the tool handlers to a fresh MCP ``Server``."""
    app = Server(SERVER_NAME)

    @app.list_tools()
    async def handle_list_tools() -> List[Tool]:
        return handlers.list_tools()

    @app.call_tool()
    async def handle_call_tool(name: str, arguments: Optional[Dict[str, Any]]) -> List[TextContent]:
        result = await handlers.call_tool(name, arguments or {})
        return [TextContent(type="text", text=json.dumps(result, ensure_ascii=False, indent=2))]

    return app


async def serve_stdio(max_workers: int = 4) -> None:
    context = MCPServerContext(max_workers=max_workers)
    app = create_app(ToolHandlers(context))
    init_options = InitializationOptions(
        server_name=SERVER_NAME,
        server_version=__version__,
        capabilities=ServerCapabilities(),
    )
    logger.info("Starting uncertainty wrapper server %s (max_workers=%s)", __version__, max_workers)
    try:
        async with stdio_server() as (read_stream, write_stream):
            await app.run(read_stream, write_stream, init_options)
    finally:
        cached = context.cached_wrappers
        context.shutdown()
        logger.info("Uncertainty wrapper server stopped (%s wrappers cached)", cached)


def run(max_workers: int = 4, *, configure_logging: bool = True) -> None:
    # stdout carries the protocol; logs must stay on stderr
    if configure_logging:
        logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
    asyncio.run(serve_stdio(max_workers))


if __name__ == "__main__":
    run()
