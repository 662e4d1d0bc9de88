"""Evaluation metrics, population bounds and SVG charts."""

from .aggregation import (
    PopulationBounds,
    coverage_summary,
    dataset_bounds,
    lymphocyte_bounds,
    subtype_bounds,
    write_bounds_csv,
)
from .evaluation import (
    BrierReport,
    VariantRow,
    brier_decomposition,
    brier_score,
    compare_variants,
    evaluation_table,
    format_table,
    overconfidence,
    write_evaluation,
)
from .plotting import factor_scatter_svg, gating_svg, population_bounds_svg

__all__ = [
    "PopulationBounds",
    "coverage_summary",
    "dataset_bounds",
    "lymphocyte_bounds",
    "subtype_bounds",
    "write_bounds_csv",
    "BrierReport",
    "VariantRow",
    "brier_decomposition",
    "brier_score",
    "compare_variants",
    "evaluation_table",
    "format_table",
    "overconfidence",
    "write_evaluation",
    "factor_scatter_svg",
    "gating_svg",
    "population_bounds_svg",
]
