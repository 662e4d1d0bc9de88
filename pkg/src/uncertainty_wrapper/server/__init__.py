"""MCP stdio server exposing wrapper inference over built artifacts."""


def run() -> None:
    from .server import run as _run

    _run()


__all__ = ["run"]
