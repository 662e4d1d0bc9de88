import asyncio

import pytest

from uncertainty_wrapper.errors import ConfigError, InputError
from uncertainty_wrapper.server.context import MCPServerContext
from uncertainty_wrapper.server.server import SERVER_NAME, create_app
from uncertainty_wrapper.server.tools import ToolHandlers


@pytest.fixture
def handlers():
    context = MCPServerContext(max_workers=2)
    yield ToolHandlers(context)
    context.shutdown()


def _call(handlers, name, **arguments):
    return asyncio.run(handlers.call_tool(name, arguments))


def test_tool_listing(handlers):
    names = [tool.name for tool in handlers.list_tools()]

    assert names == ["list_wrappers", "apply_wrapper", "population_bounds", "evaluate_wrappers"]


def test_tool_schemas_declare_every_argument(handlers):
    schemas = {tool.name: tool.inputSchema for tool in handlers.list_tools()}

    for name in ("apply_wrapper", "population_bounds", "evaluate_wrappers"):
        assert "panel_path" in schemas[name]["properties"]
        assert "panel_path" not in schemas[name]["required"]



def test_list_wrappers_caches_each_file(handlers, pipeline):
    result = _call(handlers, "list_wrappers", models_dir=str(pipeline["models"]))

    assert len(result["wrappers"]) == 7
    assert handlers.context.cached_wrappers == 7
    density = next(entry for entry in result["wrappers"] if entry["file"] == "L-density-category.json")
    assert density["kind"] == "category_based"
    assert density["cell_type"] == "L"

    path = pipeline["models"] / "wrappers" / "L-basic+outcome.json"
    assert handlers.context.wrapper(path) is handlers.context.wrapper(path)


def test_apply_wrapper(handlers, pipeline):
    result = _call(
        handlers,
        "apply_wrapper",
        wrapper_path=str(pipeline["models"] / "wrappers" / "L-basic+outcome.json"),
        events_csv=str(pipeline["data"] / "test.csv"),
        sample_id="S0004",
    )

    assert result["sample_id"] == "S0004"
    assert len(result["events"]) == 500
    assert all(0.0 <= event["uncertainty"] <= 1.0 for event in result["events"])


def test_population_bounds(handlers, pipeline):
    result = _call(
        handlers,
        "population_bounds",
        models_dir=str(pipeline["models"]),
        events_csv=str(pipeline["data"] / "test.csv"),
        variant="basic+outcome",
    )

    assert len(result["records"]) == 8
    assert result["coverage"]["total"] == 8
    for record in result["records"]:
        assert record["ratio_min"] <= record["ratio_pred"] <= record["ratio_max"]


def test_evaluate_wrappers(handlers, pipeline):
    result = _call(
        handlers,
        "evaluate_wrappers",
        models_dir=str(pipeline["models"]),
        events_csv=str(pipeline["data"] / "test.csv"),
    )

    assert len(result["rows"]) == 7


def test_tool_errors(handlers, pipeline):
    events_csv = str(pipeline["data"] / "test.csv")

    with pytest.raises(ValueError):
        _call(handlers, "explode")
    with pytest.raises(InputError):
        _call(handlers, "list_wrappers")
    with pytest.raises(InputError):
        _call(
            handlers,
            "apply_wrapper",
            wrapper_path=str(pipeline["models"] / "wrappers" / "L-baseline.json"),
            events_csv=events_csv,
            sample_id="S9999",
        )
    with pytest.raises(ConfigError):
        _call(handlers, "population_bounds", models_dir=str(pipeline["models"]), events_csv=events_csv, variant="nope")


def test_create_app_binds_handlers(handlers):
    assert create_app(handlers).name == SERVER_NAME
