"""Brier score, its decomposition and variant comparison tables.

Uncertainty is scored as the probability that the classifier is wrong: each
event contributes ``(p - o)^2`` with ``o = 1`` for a wrong prediction.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..core.data_model import Panel, Sample
from ..errors import DomainError, InputError
from ..quality.impact_model import CATEGORY_BASED
from ..quality.wrapper import UncertaintyWrapper, wrapper_estimate
from ..utils import atomic_write_text

logger = logging.getLogger(__name__)

TABLE_COLUMNS = [
    "cell_type",
    "variant",
    "category_based",
    "n_events",
    "brier",
    "variance",
    "unspecificity",
    "unreliability",
    "overconfidence",
]


@dataclass(frozen=True)
class BrierBin:
    uncertainty: float
    n: int
    observed: float


@dataclass(frozen=True)
class BrierReport:
    brier: float
    variance: float
    resolution: float
    unreliability: float
    overconfidence: float
    n_events: int
    bins: Tuple[BrierBin, ...] = ()

    @property
    def unspecificity(self) -> float:
        return self.variance - self.resolution

    def to_dict(self) -> Dict[str, Any]:
        return {
            "brier": self.brier,
            "variance": self.variance,
            "resolution": self.resolution,
            "unspecificity": self.unspecificity,
            "unreliability": self.unreliability,
            "overconfidence": self.overconfidence,
            "n_events": self.n_events,
        }


def _check_inputs(uncertainties: Sequence[float], errors: Sequence[bool]) -> Tuple[np.ndarray, np.ndarray]:
    p = np.asarray(uncertainties, dtype=np.float64).reshape(-1)
    o = np.asarray(errors, dtype=bool).reshape(-1)
    if p.shape != o.shape:
        raise InputError(f"{p.shape[0]} uncertainties for {o.shape[0]} outcomes")
    if p.size == 0:
        raise DomainError("Brier score of an empty set is undefined")
    if not np.isfinite(p).all() or (p < 0).any() or (p > 1).any():
        raise DomainError("Uncertainties must lie in [0, 1]")
    return p, o.astype(np.float64)


def brier_score(uncertainties: Sequence[float], errors: Sequence[bool]) -> float:
    p, o = _check_inputs(uncertainties, errors)
    return float(np.mean((p - o) ** 2))


def brier_decomposition(
    uncertainties: Sequence[float],
    errors: Sequence[bool],
    bin_width: Optional[float] = None,
) -> BrierReport:
    """Split the Brier score into variance, resolution and unreliability.

    Without ``bin_width`` every distinct predicted value is its own bin. With it,
    bins have fixed width and a bin's unreliability is its mean squared error
    minus ``o_k (1 - o_k)``, which keeps ``brier = variance - resolution + unreliability``.
    That term absorbs the spread of values inside a bin, so a bin mixing values
    can contribute a negative amount; overconfidence only counts positive bins.
    """
    p, o = _check_inputs(uncertainties, errors)
    n = p.shape[0]
    if bin_width is None:
        _, inverse = np.unique(p, return_inverse=True)
    else:
        if not bin_width > 0:
            raise DomainError("bin_width must be positive")
        n_bins = int(np.ceil(1.0 / bin_width))
        _, inverse = np.unique(np.minimum(np.floor(p / bin_width), n_bins - 1), return_inverse=True)
    inverse = inverse.reshape(-1)

    counts = np.bincount(inverse)
    weights = counts / n
    mean_p = np.bincount(inverse, weights=p) / counts
    mean_o = np.bincount(inverse, weights=o) / counts
    base_rate = float(o.mean())

    if bin_width is None:
        bin_unreliability = (mean_p - mean_o) ** 2
    else:
        bin_brier = np.bincount(inverse, weights=(p - o) ** 2) / counts
        bin_unreliability = bin_brier - mean_o * (1.0 - mean_o)

    resolution = float(np.sum(weights * (mean_o - base_rate) ** 2))
    unreliability = float(np.sum(weights * bin_unreliability))
    underestimated = np.where(mean_p < mean_o, np.maximum(bin_unreliability, 0.0), 0.0)
    overconfidence = float(np.sum(weights * underestimated))
    bins = tuple(
        BrierBin(uncertainty=float(mp), n=int(c), observed=float(mo))
        for mp, c, mo in zip(mean_p, counts, mean_o)
    )
    return BrierReport(
        brier=float(np.mean((p - o) ** 2)),
        variance=base_rate * (1.0 - base_rate),
        resolution=resolution,
        unreliability=unreliability,
        overconfidence=overconfidence,
        n_events=n,
        bins=bins,
    )


def overconfidence(uncertainties: Sequence[float], errors: Sequence[bool]) -> float:
    return brier_decomposition(uncertainties, errors).overconfidence


# ---------------------------------------------------------------------------
# Variant comparison
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VariantRow:
    cell_type: str
    variant: str
    category_based: bool
    report: BrierReport

    def to_dict(self) -> Dict[str, Any]:
        return {
            "cell_type": self.cell_type,
            "variant": self.variant,
            "category_based": self.category_based,
            **self.report.to_dict(),
        }


def evaluation_basis(sample: Sample, wrapper: UncertaintyWrapper) -> Sample:
    """All events for root cell types, the ground-truth parent events for subtypes."""
    parent = wrapper.cell_type.parent
    return sample if parent is None else sample.subset(sample.label(parent))


def compare_variants(
    wrappers: Sequence[UncertaintyWrapper],
    samples: Sequence[Sample],
    *,
    bin_width: Optional[float] = None,
    max_workers: int = 1,
) -> List[VariantRow]:
    """Score every wrapper of one cell type on the same test events."""
    if not wrappers:
        return []
    cell_types = {wrapper.cell_type.name for wrapper in wrappers}
    if len(cell_types) != 1:
        raise InputError(f"Variants to compare must share a cell type, got {sorted(cell_types)}")
    if not samples:
        raise InputError("Comparing variants needs at least one test sample")
    bases = [evaluation_basis(sample, wrappers[0]) for sample in samples]
    cell_type = wrappers[0].cell_type.name

    def score(wrapper: UncertaintyWrapper) -> VariantRow:
        uncertainties: List[np.ndarray] = []
        errors: List[np.ndarray] = []
        for basis in bases:
            estimates = wrapper_estimate(wrapper, basis)
            uncertainties.append(estimates.uncertainties)
            errors.append(estimates.predictions != basis.label(cell_type))
        report = brier_decomposition(np.concatenate(uncertainties), np.concatenate(errors), bin_width)
        row = VariantRow(
            cell_type=cell_type,
            variant=wrapper.variant.name,
            category_based=wrapper.impact_model.kind == CATEGORY_BASED,
            report=report,
        )
        logger.info(
            "%s: brier %.5f variance %.5f unspecificity %.5f unreliability %.5f overconfidence %.5f",
            wrapper.name,
            report.brier,
            report.variance,
            report.unspecificity,
            report.unreliability,
            report.overconfidence,
        )
        return row

    if max_workers > 1 and len(wrappers) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            return list(executor.map(score, wrappers))
    return [score(wrapper) for wrapper in wrappers]


def evaluation_table(
    wrappers: Sequence[UncertaintyWrapper],
    samples: Sequence[Sample],
    panel: Panel,
    *,
    bin_width: Optional[float] = None,
    max_workers: int = 1,
) -> List[VariantRow]:
    """Rows for every cell type in panel order, variants in the given order."""
    rows: List[VariantRow] = []
    for spec in panel.ordered_cell_types():
        group = [wrapper for wrapper in wrappers if wrapper.cell_type.name == spec.name]
        rows.extend(compare_variants(group, samples, bin_width=bin_width, max_workers=max_workers))
    return rows


def rows_to_frame(rows: Sequence[VariantRow]) -> pd.DataFrame:
    return pd.DataFrame([row.to_dict() for row in rows], columns=TABLE_COLUMNS)


def format_table(rows: Sequence[VariantRow]) -> str:
    """Aligned text table; category-based rows are marked with ``*``."""
    header = f"{'cell type':<10} {'variant':<26} {'brier':>8} {'variance':>8} {'unspec.':>8} {'unrel.':>8} {'overconf.':>9}"
    lines = [header, "-" * len(header)]
    for row in rows:
        report = row.report
        name = row.variant + ("*" if row.category_based else "")
        lines.append(
            f"{row.cell_type:<10} {name:<26} {report.brier:>8.5f} {report.variance:>8.5f} "
            f"{report.unspecificity:>8.5f} {report.unreliability:>8.5f} {report.overconfidence:>9.5f}"
        )
    lines.append("* category-based quality impact model")
    return "\n".join(lines) + "\n"


def write_evaluation(rows: Sequence[VariantRow], csv_path: Path | str, text_path: Path | str) -> None:
    frame = rows_to_frame(rows)
    atomic_write_text(csv_path, frame.to_csv(index=False, lineterminator="\n"))
    atomic_write_text(text_path, format_table(rows))
