"""Quality factors, calibrated impact models and the uncertainty wrapper."""

from .bounds import clopper_pearson_upper
from .decision_tree import DecisionTree, LeafNode, SplitNode, TreeParams, calibrate_tree, fit_tree, prune_tree
from .impact_model import QualityImpactModel, ScopeRanges, fit_impact_model, fit_scope_ranges, scope_check
from .quality_factors import (
    VARIANTS,
    DensityModel,
    HomogeneityModel,
    QualityFactors,
    QualityFactorVector,
    VariantConfig,
    assemble_factors,
    eval_density,
    eval_homogeneity,
    fit_density,
    fit_homogeneity,
    marker_factors,
    outcome_factor,
    percentile_factors,
)
from .wrapper import (
    SampleEstimates,
    UncertaintyEstimate,
    UncertaintyWrapper,
    build_wrapper,
    load_wrapper,
    load_wrapper_dir,
    save_wrapper,
    wrapper_apply,
    wrapper_estimate,
    wrapper_file_name,
)

__all__ = [
    "clopper_pearson_upper",
    "DecisionTree",
    "LeafNode",
    "SplitNode",
    "TreeParams",
    "calibrate_tree",
    "fit_tree",
    "prune_tree",
    "QualityImpactModel",
    "ScopeRanges",
    "fit_impact_model",
    "fit_scope_ranges",
    "scope_check",
    "VARIANTS",
    "DensityModel",
    "HomogeneityModel",
    "QualityFactors",
    "QualityFactorVector",
    "VariantConfig",
    "assemble_factors",
    "eval_density",
    "eval_homogeneity",
    "fit_density",
    "fit_homogeneity",
    "marker_factors",
    "outcome_factor",
    "percentile_factors",
    "SampleEstimates",
    "UncertaintyEstimate",
    "UncertaintyWrapper",
    "build_wrapper",
    "load_wrapper",
    "load_wrapper_dir",
    "save_wrapper",
    "wrapper_apply",
    "wrapper_estimate",
    "wrapper_file_name",
]
