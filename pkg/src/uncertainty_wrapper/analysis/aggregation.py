"""Population-level bounds from per-event uncertainties.

For lymphocytes ``L`` over all events ``E``::

    |L|min = sum(cert(L_p))            |L|max = |L_p| + sum(unc(not L_p))

For a subtype ``C`` (estimated on the predicted lymphocytes only)::

    |C|min = sum(cert_C(C_p) * cert_L(C_p))
    |C|max = |C_p| + sum(unc_C(L_p and not C_p)) + sum(unc_L(not L_p))

Subtype ratios are taken relative to the lymphocyte bounds:
``[|C|min / |L|max, min(1, |C|max / |L|min)]``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..core.data_model import Panel, Sample
from ..errors import ConfigError, DomainError, InputError
from ..quality.wrapper import SampleEstimates, UncertaintyWrapper, wrapper_estimate
from ..utils import atomic_write_text

logger = logging.getLogger(__name__)

BASIS_EVENTS = "events"
BASIS_LYMPHOCYTE_BOUNDS = "lymphocyte_bounds"
BOUNDS_COLUMNS = ["sample_id", "cell_type", "ratio_pred", "ratio_min", "ratio_max"]
TRUTH_COLUMNS = ["ratio_true", "inside"]
# Slack when testing whether a true ratio lies inside float-valued bounds.
INSIDE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class PopulationBounds:
    sample_id: str
    cell_type: str
    basis: str
    count_pred: int
    count_min: float
    count_max: float
    ratio_pred: float
    ratio_min: float
    ratio_max: float
    ratio_true: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.count_min <= self.count_pred <= self.count_max:
            raise InputError(
                f"{self.sample_id}/{self.cell_type}: counts out of order "
                f"({self.count_min}, {self.count_pred}, {self.count_max})"
            )
        if not 0.0 <= self.ratio_min <= self.ratio_pred <= self.ratio_max <= 1.0:
            raise InputError(
                f"{self.sample_id}/{self.cell_type}: ratios out of order "
                f"({self.ratio_min}, {self.ratio_pred}, {self.ratio_max})"
            )

    @property
    def inside(self) -> Optional[bool]:
        if self.ratio_true is None:
            return None
        return (
            self.ratio_min - INSIDE_TOLERANCE <= self.ratio_true <= self.ratio_max + INSIDE_TOLERANCE
        )

    @property
    def width(self) -> float:
        return self.ratio_max - self.ratio_min

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "cell_type": self.cell_type,
            "basis": self.basis,
            "count_pred": self.count_pred,
            "count_min": self.count_min,
            "count_max": self.count_max,
            "ratio_pred": self.ratio_pred,
            "ratio_min": self.ratio_min,
            "ratio_max": self.ratio_max,
            "ratio_true": self.ratio_true,
            "inside": self.inside,
        }


def _ratio(numerator: float, denominator: float) -> float:
    return numerator / denominator if denominator > 0 else 0.0


def lymphocyte_bounds(
    estimates: SampleEstimates,
    n_events: Optional[int] = None,
    *,
    cell_type: str = "L",
    ratio_true: Optional[float] = None,
) -> PopulationBounds:
    n_events = len(estimates) if n_events is None else int(n_events)
    if n_events == 0:
        raise DomainError("Population bounds need at least one event")
    if len(estimates) != n_events:
        raise InputError(f"{len(estimates)} estimates for {n_events} events")
    predicted = estimates.predictions
    count_pred = int(predicted.sum())
    count_min = float(np.sum(estimates.certainties[predicted]))
    count_max = count_pred + float(np.sum(estimates.uncertainties[~predicted]))
    return PopulationBounds(
        sample_id=estimates.sample_id,
        cell_type=cell_type,
        basis=BASIS_EVENTS,
        count_pred=count_pred,
        count_min=count_min,
        count_max=count_max,
        ratio_pred=count_pred / n_events,
        ratio_min=count_min / n_events,
        ratio_max=min(1.0, count_max / n_events),
        ratio_true=ratio_true,
    )


def subtype_bounds(
    lymphocytes: SampleEstimates,
    subtype: SampleEstimates,
    lymphocyte: PopulationBounds,
    *,
    cell_type: str = "C",
    ratio_true: Optional[float] = None,
) -> PopulationBounds:
    """Bounds for a subtype whose estimates cover exactly the predicted lymphocytes."""
    predicted_l = lymphocytes.predictions
    if len(subtype) != int(predicted_l.sum()):
        raise InputError(
            f"Subtype estimates cover {len(subtype)} events, {int(predicted_l.sum())} were predicted "
            f"{lymphocyte.cell_type}"
        )
    if len(subtype) and not np.array_equal(
        np.asarray(subtype.event_ids, dtype=object), np.asarray(lymphocytes.event_ids, dtype=object)[predicted_l]
    ):
        raise InputError("Subtype estimates do not match the predicted lymphocyte events")

    predicted_c = subtype.predictions
    cert_l = lymphocytes.certainties[predicted_l]
    count_pred = int(predicted_c.sum())
    count_min = float(np.sum(subtype.certainties[predicted_c] * cert_l[predicted_c]))
    count_max = (
        count_pred
        + float(np.sum(subtype.uncertainties[~predicted_c]))
        + float(np.sum(lymphocytes.uncertainties[~predicted_l]))
    )
    l_min = lymphocyte.count_min
    ratio_max = 1.0 if l_min <= 0 else min(1.0, count_max / l_min)
    return PopulationBounds(
        sample_id=subtype.sample_id,
        cell_type=cell_type,
        basis=BASIS_LYMPHOCYTE_BOUNDS,
        count_pred=count_pred,
        count_min=count_min,
        count_max=count_max,
        ratio_pred=_ratio(count_pred, lymphocyte.count_pred),
        ratio_min=_ratio(count_min, lymphocyte.count_max),
        ratio_max=ratio_max,
        ratio_true=ratio_true,
    )


# ---------------------------------------------------------------------------
# Dataset level
# ---------------------------------------------------------------------------


def _resolve_cell_types(
    wrappers: Mapping[str, UncertaintyWrapper], panel: Panel, cell_types: Optional[Sequence[str]]
) -> Tuple[str, List[str]]:
    requested = list(cell_types) if cell_types is not None else [
        spec.name for spec in panel.ordered_cell_types() if spec.name in wrappers
    ]
    roots = [name for name in requested if panel.cell_type(name).parent is None]
    subtypes = [name for name in requested if panel.cell_type(name).parent is not None]
    parents = {panel.cell_type(name).parent for name in subtypes}
    if len(parents) > 1:
        raise ConfigError(f"Subtype bounds need a single parent population, got {sorted(parents)}")
    root = parents.pop() if parents else (roots[0] if roots else None)
    if root is None:
        raise ConfigError("No cell type requested for population bounds")
    if panel.cell_type(root).parent is not None:
        raise ConfigError(f"Subtype bounds are defined relative to a root population, not {root}")
    if root not in wrappers:
        raise ConfigError(f"Subtype bounds need a wrapper for {root}")
    missing = [name for name in subtypes if name not in wrappers]
    if missing:
        raise ConfigError(f"No wrapper for {missing}")
    return root, subtypes


def _true_ratio(sample: Sample, name: str, parent: Optional[str]) -> Optional[float]:
    if not sample.has_labels(name):
        return None
    if parent is None:
        return float(sample.labels[name].sum()) / len(sample)
    if not sample.has_labels(parent):
        return None
    return _ratio(float(sample.labels[name].sum()), float(sample.labels[parent].sum()))


def sample_bounds(
    wrappers: Mapping[str, UncertaintyWrapper],
    sample: Sample,
    root: str,
    subtypes: Sequence[str],
    include_root: bool = True,
) -> List[PopulationBounds]:
    lym = wrapper_estimate(wrappers[root], sample)
    lym_bounds = lymphocyte_bounds(lym, len(sample), cell_type=root, ratio_true=_true_ratio(sample, root, None))
    records = [lym_bounds] if include_root else []
    if subtypes:
        lym_subset = sample.subset(lym.predictions)
        for name in subtypes:
            estimates = wrapper_estimate(wrappers[name], lym_subset)
            records.append(
                subtype_bounds(
                    lym,
                    estimates,
                    lym_bounds,
                    cell_type=name,
                    ratio_true=_true_ratio(sample, name, root),
                )
            )
    return records


def dataset_bounds(
    wrappers: Mapping[str, UncertaintyWrapper],
    samples: Sequence[Sample],
    panel: Panel,
    *,
    cell_types: Optional[Sequence[str]] = None,
    max_workers: int = 1,
) -> List[PopulationBounds]:
    """Bounds per (sample, cell type), samples in input order and cell types in panel order."""
    root, subtypes = _resolve_cell_types(wrappers, panel, cell_types)
    include_root = cell_types is None or root in cell_types

    def one(sample: Sample) -> List[PopulationBounds]:
        if len(sample) == 0:
            raise DomainError(f"Sample {sample.sample_id} has no events")
        return sample_bounds(wrappers, sample, root, subtypes, include_root)

    if max_workers > 1 and len(samples) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            per_sample = list(executor.map(one, samples))
    else:
        per_sample = [one(sample) for sample in samples]
    records = [record for block in per_sample for record in block]
    inside, total = coverage_summary(records)
    if total:
        logger.info("True ratio inside bounds for %s of %s records", inside, total)
    return records


def coverage_summary(records: Sequence[PopulationBounds]) -> Tuple[int, int]:
    """(records whose true ratio lies inside the bounds, records with a true ratio)."""
    annotated = [record for record in records if record.ratio_true is not None]
    return sum(1 for record in annotated if record.inside), len(annotated)


def bounds_to_frame(records: Sequence[PopulationBounds]) -> pd.DataFrame:
    with_truth = bool(records) and all(record.ratio_true is not None for record in records)
    columns = BOUNDS_COLUMNS + (TRUTH_COLUMNS if with_truth else [])
    rows = []
    for record in records:
        row = [record.sample_id, record.cell_type, repr(record.ratio_pred), repr(record.ratio_min), repr(record.ratio_max)]
        if with_truth:
            row += [repr(record.ratio_true), "1" if record.inside else "0"]
        rows.append(row)
    return pd.DataFrame(rows, columns=columns, dtype=object)


def write_bounds_csv(path: Path | str, records: Sequence[PopulationBounds]) -> Path:
    text = bounds_to_frame(records).to_csv(index=False, lineterminator="\n")
    inside, total = coverage_summary(records)
    if total:
        text += f"# coverage: {inside}/{total}\n"
    return atomic_write_text(path, text)
