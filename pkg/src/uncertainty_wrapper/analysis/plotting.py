"""Static SVG charts: population bounds, uncertainty-shaded gating plots and factor scatters.

Charts are emitted as plain SVG text with fixed number formatting, so identical
inputs give byte-identical files.
"""

from __future__ import annotations

import colorsys
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from ..core.synthgen import QuadrantGate
from .aggregation import PopulationBounds

logger = logging.getLogger(__name__)

MAX_PLOT_POINTS = 20_000
POSITIVE_HUE = 120.0 / 360.0  # green
NEGATIVE_HUE = 280.0 / 360.0  # purple
FACTOR_HUE = 210.0 / 360.0
LIGHTEST = 0.85
DARKEST = 0.25
SATURATION = 0.65


def fmt(value: float) -> str:
    text = f"{value:.2f}"
    return "0.00" if text == "-0.00" else text


def shade(hue: float, level: float) -> str:
    """Hex colour whose lightness falls linearly from light to dark as ``level`` goes 0 -> 1."""
    level = min(max(float(level), 0.0), 1.0) if math.isfinite(level) else 1.0
    lightness = LIGHTEST + (DARKEST - LIGHTEST) * level
    r, g, b = colorsys.hls_to_rgb(hue, lightness, SATURATION)
    return "#{:02x}{:02x}{:02x}".format(round(r * 255), round(g * 255), round(b * 255))


def plot_stride(n: int, limit: int = MAX_PLOT_POINTS) -> int:
    return max(1, math.ceil(n / limit))


@dataclass
class SvgCanvas:
    width: int = 720
    height: int = 540
    elements: List[str] = field(default_factory=list)

    def rect(self, x: float, y: float, w: float, h: float, fill: str, stroke: str = "none") -> None:
        self.elements.append(
            f'<rect x="{fmt(x)}" y="{fmt(y)}" width="{fmt(w)}" height="{fmt(h)}" fill="{fill}" stroke="{stroke}"/>'
        )

    def line(self, x1: float, y1: float, x2: float, y2: float, stroke: str = "#000000", width: float = 1.0) -> None:
        self.elements.append(
            f'<line x1="{fmt(x1)}" y1="{fmt(y1)}" x2="{fmt(x2)}" y2="{fmt(y2)}" '
            f'stroke="{stroke}" stroke-width="{fmt(width)}"/>'
        )

    def circle(self, cx: float, cy: float, r: float, fill: str, stroke: str = "none") -> None:
        self.elements.append(
            f'<circle cx="{fmt(cx)}" cy="{fmt(cy)}" r="{fmt(r)}" fill="{fill}" stroke="{stroke}"/>'
        )

    def text(self, x: float, y: float, content: str, size: int = 12, anchor: str = "start", rotate: bool = False) -> None:
        transform = f' transform="rotate(-90 {fmt(x)} {fmt(y)})"' if rotate else ""
        self.elements.append(
            f'<text x="{fmt(x)}" y="{fmt(y)}" font-family="Arial" font-size="{size}" '
            f'text-anchor={quoteattr(anchor)}{transform}>{escape(content)}</text>'
        )

    def to_svg(self) -> str:
        head = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}">'
        )
        background = '<rect x="0" y="0" width="100%" height="100%" fill="#ffffff"/>'
        return "\n".join([head, background, *self.elements, "</svg>"]) + "\n"


@dataclass(frozen=True)
class Frame:
    """Linear data-to-pixel mapping of a rectangular plot area."""

    left: float
    top: float
    right: float
    bottom: float
    x_range: Tuple[float, float]
    y_range: Tuple[float, float]

    def x(self, value: float) -> float:
        lo, hi = self.x_range
        return self.left + (value - lo) / (hi - lo) * (self.right - self.left)

    def y(self, value: float) -> float:
        lo, hi = self.y_range
        return self.bottom - (value - lo) / (hi - lo) * (self.bottom - self.top)


def _padded_range(values: np.ndarray) -> Tuple[float, float]:
    values = values[np.isfinite(values)]
    if values.size == 0:
        return 0.0, 1.0
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo
    if span <= 0:
        return lo - 0.5, hi + 0.5
    return lo - 0.05 * span, hi + 0.05 * span


def _axes(canvas: SvgCanvas, frame: Frame, title: str, x_label: str, y_label: str, ticks: int = 5) -> None:
    canvas.rect(frame.left, frame.top, frame.right - frame.left, frame.bottom - frame.top, "none", "#333333")
    canvas.text(canvas.width / 2, 28, title, size=16, anchor="middle")
    canvas.text((frame.left + frame.right) / 2, frame.bottom + 42, x_label, anchor="middle")
    canvas.text(22, (frame.top + frame.bottom) / 2, y_label, anchor="middle", rotate=True)
    for i in range(ticks + 1):
        xv = frame.x_range[0] + (frame.x_range[1] - frame.x_range[0]) * i / ticks
        yv = frame.y_range[0] + (frame.y_range[1] - frame.y_range[0]) * i / ticks
        px, py = frame.x(xv), frame.y(yv)
        canvas.line(px, frame.bottom, px, frame.bottom + 5, "#333333")
        canvas.text(px, frame.bottom + 18, f"{xv:.2f}", size=10, anchor="middle")
        canvas.line(frame.left - 5, py, frame.left, py, "#333333")
        canvas.text(frame.left - 8, py + 3, f"{yv:.2f}", size=10, anchor="end")


def gating_svg(
    x: Sequence[float],
    y: Sequence[float],
    predictions: Sequence[bool],
    uncertainties: Sequence[float],
    *,
    title: str,
    x_label: str,
    y_label: str,
    gate: Optional[QuadrantGate] = None,
) -> str:
    """Scatter of transformed marker values; green = predicted positive, purple = negative, darker = less certain."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=bool)
    uncertainties = np.asarray(uncertainties, dtype=np.float64)
    stride = plot_stride(x.shape[0])
    if stride > 1:
        logger.info("Plotting every %s-th event of %s", stride, x.shape[0])
    keep = np.arange(0, x.shape[0], stride)

    canvas = SvgCanvas(width=760, height=560)
    frame = Frame(70, 50, 600, 490, _padded_range(x), _padded_range(y))
    _axes(canvas, frame, title, x_label, y_label)
    for i in keep.tolist():
        hue = POSITIVE_HUE if predictions[i] else NEGATIVE_HUE
        canvas.circle(frame.x(x[i]), frame.y(y[i]), 1.6, shade(hue, uncertainties[i]))

    if gate is not None:
        lo_x, hi_x = frame.x_range
        lo_y, hi_y = frame.y_range
        if lo_x <= gate.threshold_x <= hi_x:
            px = frame.x(gate.threshold_x)
            canvas.line(px, frame.top, px, frame.bottom, "#000000", 1.5)
        if lo_y <= gate.threshold_y <= hi_y:
            py = frame.y(gate.threshold_y)
            canvas.line(frame.left, py, frame.right, py, "#000000", 1.5)

    canvas.text(620, 70, "uncertainty", size=12)
    for row, level in enumerate((0.0, 0.25, 0.5, 0.75, 1.0)):
        top = 82 + row * 22
        canvas.rect(620, top, 16, 16, shade(POSITIVE_HUE, level))
        canvas.rect(640, top, 16, 16, shade(NEGATIVE_HUE, level))
        canvas.text(664, top + 12, f"{level:.2f}", size=10)
    canvas.text(620, 208, "green: predicted positive", size=10)
    canvas.text(620, 224, "purple: predicted negative", size=10)
    if gate is not None:
        canvas.text(620, 240, "black: manual gate", size=10)
    return canvas.to_svg()


def population_bounds_svg(records: Sequence[PopulationBounds], *, title: str) -> str:
    """One vertical range per sample, samples sorted by true (else predicted) ratio."""
    ordered = sorted(
        records,
        key=lambda r: (r.ratio_true if r.ratio_true is not None else r.ratio_pred, r.sample_id),
    )
    canvas = SvgCanvas(width=760, height=480)
    n = max(len(ordered), 1)
    lows = np.array([r.ratio_min for r in ordered] or [0.0])
    highs = np.array([r.ratio_max for r in ordered] or [1.0])
    truths = np.array([r.ratio_true for r in ordered if r.ratio_true is not None], dtype=np.float64)
    y_lo, y_hi = _padded_range(np.concatenate([lows, highs, truths]))
    frame = Frame(70, 50, 600, 410, (-0.5, n - 0.5), (max(y_lo, 0.0), min(y_hi, 1.0)))
    canvas.rect(frame.left, frame.top, frame.right - frame.left, frame.bottom - frame.top, "none", "#333333")
    canvas.text(canvas.width / 2, 28, title, size=16, anchor="middle")
    canvas.text((frame.left + frame.right) / 2, frame.bottom + 40, "samples (sorted by ratio)", anchor="middle")
    canvas.text(22, (frame.top + frame.bottom) / 2, "population ratio", anchor="middle", rotate=True)
    for i in range(6):
        value = frame.y_range[0] + (frame.y_range[1] - frame.y_range[0]) * i / 5
        py = frame.y(value)
        canvas.line(frame.left - 5, py, frame.left, py, "#333333")
        canvas.text(frame.left - 8, py + 3, f"{value:.3f}", size=10, anchor="end")

    for index, record in enumerate(ordered):
        px = frame.x(index)
        colour = "#1f77b4" if record.inside is not False else "#d62728"
        canvas.line(px, frame.y(record.ratio_min), px, frame.y(record.ratio_max), colour, 2.0)
        canvas.line(px - 3, frame.y(record.ratio_min), px + 3, frame.y(record.ratio_min), colour)
        canvas.line(px - 3, frame.y(record.ratio_max), px + 3, frame.y(record.ratio_max), colour)
        canvas.circle(px, frame.y(record.ratio_pred), 2.5, "#ff7f0e")
        if record.ratio_true is not None:
            canvas.circle(px, frame.y(record.ratio_true), 2.5, "none", "#000000")

    canvas.line(620, 80, 620, 100, "#1f77b4", 2.0)
    canvas.text(630, 94, "bounds", size=10)
    canvas.circle(620, 118, 2.5, "#ff7f0e")
    canvas.text(630, 122, "predicted", size=10)
    canvas.circle(620, 138, 2.5, "none", "#000000")
    canvas.text(630, 142, "ground truth", size=10)
    canvas.line(620, 152, 620, 172, "#d62728", 2.0)
    canvas.text(630, 166, "truth outside", size=10)
    return canvas.to_svg()


def factor_scatter_svg(
    x: Sequence[float],
    y: Sequence[float],
    values: Sequence[float],
    *,
    title: str,
    x_label: str,
    y_label: str,
) -> str:
    """Gating-plot scatter shaded by one factor, rescaled to its min..max within the sample."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    lo, hi = (float(values.min()), float(values.max())) if values.size else (0.0, 1.0)
    levels = (values - lo) / (hi - lo) if hi > lo else np.zeros_like(values)
    keep = np.arange(0, x.shape[0], plot_stride(x.shape[0]))

    canvas = SvgCanvas(width=760, height=560)
    frame = Frame(70, 50, 600, 490, _padded_range(x), _padded_range(y))
    _axes(canvas, frame, title, x_label, y_label)
    for i in keep.tolist():
        canvas.circle(frame.x(x[i]), frame.y(y[i]), 1.6, shade(FACTOR_HUE, levels[i]))
    canvas.text(620, 70, "factor value", size=12)
    for row, level in enumerate((0.0, 0.5, 1.0)):
        top = 82 + row * 22
        canvas.rect(620, top, 16, 16, shade(FACTOR_HUE, level))
        canvas.text(642, top + 12, f"{lo + level * (hi - lo):.3g}", size=10)
    return canvas.to_svg()
