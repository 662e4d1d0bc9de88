import xml.etree.ElementTree as ET

import numpy as np

from uncertainty_wrapper.analysis.aggregation import PopulationBounds
from uncertainty_wrapper.analysis.plotting import (
    NEGATIVE_HUE,
    POSITIVE_HUE,
    factor_scatter_svg,
    gating_svg,
    plot_stride,
    population_bounds_svg,
    shade,
)
from uncertainty_wrapper.core.synthgen import QuadrantGate

SVG = "{http://www.w3.org/2000/svg}"


def _elements(svg, tag):
    return ET.fromstring(svg).findall(f"{SVG}{tag}")


def _lightness(colour):
    return sum(int(colour[i : i + 2], 16) for i in (1, 3, 5))


def test_shade_darkens_with_level():
    assert _lightness(shade(POSITIVE_HUE, 0.0)) > _lightness(shade(POSITIVE_HUE, 0.5)) > _lightness(
        shade(POSITIVE_HUE, 1.0)
    )
    assert shade(NEGATIVE_HUE, 3.0) == shade(NEGATIVE_HUE, 1.0)
    assert shade(NEGATIVE_HUE, float("nan")) == shade(NEGATIVE_HUE, 1.0)
    assert shade(NEGATIVE_HUE, 0.2) != shade(POSITIVE_HUE, 0.2)


def test_plot_stride():
    assert plot_stride(0) == 1
    assert plot_stride(20_000) == 1
    assert plot_stride(20_001) == 2
    assert plot_stride(45_000) == 3


def test_gating_plot_draws_every_event_and_gate():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(2, 300))
    svg = gating_svg(
        x,
        y,
        x > 0,
        rng.random(300),
        title="L <CD45 & SSC>",
        x_label="CD45",
        y_label="SSC",
        gate=QuadrantGate("L", (0, 1), 0.0, 0.0, "LR"),
    )
    gate_lines = [line for line in _elements(svg, "line") if line.get("stroke") == "#000000"]

    assert len(_elements(svg, "circle")) == 300
    assert len(gate_lines) == 2
    assert any(text.text == "L <CD45 & SSC>" for text in _elements(svg, "text"))


def test_gating_plot_subsamples_large_samples():
    n = 45_000
    svg = gating_svg(np.arange(n), np.arange(n), np.zeros(n, dtype=bool), np.zeros(n), title="t", x_label="x", y_label="y")

    assert len(_elements(svg, "circle")) == 15_000


def test_gating_plot_is_byte_stable():
    args = (np.array([0.1, 0.5]), np.array([1.0, 2.0]), [True, False], [0.0, 1.0])

    assert gating_svg(*args, title="t", x_label="x", y_label="y") == gating_svg(*args, title="t", x_label="x", y_label="y")


def test_bounds_plot_marks_records_outside():
    records = [
        PopulationBounds("S2", "L", "events", 5, 4.0, 6.0, 0.5, 0.4, 0.6, ratio_true=0.9),
        PopulationBounds("S1", "L", "events", 3, 2.0, 4.0, 0.3, 0.2, 0.4, ratio_true=0.3),
        PopulationBounds("S3", "L", "events", 1, 1.0, 1.0, 0.1, 0.1, 0.1),
    ]
    svg = population_bounds_svg(records, title="L bounds")
    red = [line for line in _elements(svg, "line") if line.get("stroke") == "#d62728"]

    # three range lines per record plus the legend entry
    assert len(red) == 3 + 1
    assert len(_elements(svg, "circle")) == 3 + 2 + 2


def test_bounds_plot_frames_truths_outside_the_bounds():
    records = [
        PopulationBounds("S1", "L", "events", 5, 4.0, 6.0, 0.5, 0.4, 0.6, ratio_true=0.9),
        PopulationBounds("S2", "L", "events", 3, 2.0, 4.0, 0.3, 0.25, 0.35, ratio_true=0.05),
    ]
    svg = population_bounds_svg(records, title="L bounds")
    data_circles = [c for c in _elements(svg, "circle") if float(c.get("cx")) < 610]

    assert len(data_circles) == 4
    assert all(50 <= float(c.get("cy")) <= 410 for c in data_circles)



def test_factor_scatter_shades_by_value():
    svg = factor_scatter_svg([0.0, 1.0, 2.0], [0.0, 1.0, 2.0], [5.0, 5.0, 9.0], title="f", x_label="x", y_label="y")
    fills = [circle.get("fill") for circle in _elements(svg, "circle")]

    assert fills[0] == fills[1] == shade(210.0 / 360.0, 0.0)
    assert fills[2] == shade(210.0 / 360.0, 1.0)
