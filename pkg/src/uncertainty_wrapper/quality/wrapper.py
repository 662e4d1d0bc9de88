"""The uncertainty wrapper: a classifier, its factor variant and a calibrated impact model."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..core.data_model import CellTypeSpec, Panel, Sample
from ..core.ddm import DdmModel, load_ddm, predict_sample
from ..errors import ConfigError, InputError, SchemaError
from ..utils import read_json, write_json
from .decision_tree import TreeParams
from .impact_model import QualityImpactModel, ScopeRanges, fit_impact_model, fit_scope_ranges
from .quality_factors import VariantConfig, assemble_factors

logger = logging.getLogger(__name__)

SUBTYPE_BASES = ("ground_truth", "parent_prediction")


@dataclass(frozen=True)
class UncertaintyEstimate:
    event_id: str
    prediction: bool
    uncertainty: float
    leaf_id: str
    scope_flag: Optional[bool] = None

    @property
    def certainty(self) -> float:
        return 1.0 - self.uncertainty

    def to_dict(self) -> Dict[str, Any]:
        return {
            "event_id": self.event_id,
            "prediction": self.prediction,
            "uncertainty": self.uncertainty,
            "certainty": self.certainty,
            "leaf_id": self.leaf_id,
            "scope_flag": self.scope_flag,
        }


@dataclass(frozen=True, eq=False)
class SampleEstimates:
    """Column-wise wrapper output for one sample."""

    sample_id: str
    event_ids: np.ndarray
    predictions: np.ndarray
    uncertainties: np.ndarray
    leaf_ids: np.ndarray
    scope_flags: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(self.predictions.shape[0])

    @property
    def certainties(self) -> np.ndarray:
        return 1.0 - self.uncertainties

    def subset(self, mask: np.ndarray) -> "SampleEstimates":
        mask = np.asarray(mask)
        return SampleEstimates(
            sample_id=self.sample_id,
            event_ids=self.event_ids[mask],
            predictions=self.predictions[mask],
            uncertainties=self.uncertainties[mask],
            leaf_ids=self.leaf_ids[mask],
            scope_flags=None if self.scope_flags is None else self.scope_flags[mask],
        )

    def to_list(self) -> List[UncertaintyEstimate]:
        flags = self.scope_flags
        return [
            UncertaintyEstimate(
                event_id=str(self.event_ids[i]),
                prediction=bool(self.predictions[i]),
                uncertainty=float(self.uncertainties[i]),
                leaf_id=str(self.leaf_ids[i]),
                scope_flag=None if flags is None else bool(flags[i]),
            )
            for i in range(len(self))
        ]


@dataclass(frozen=True, eq=False)
class UncertaintyWrapper:
    cell_type: CellTypeSpec
    variant: VariantConfig
    impact_model: QualityImpactModel
    ddm: DdmModel
    n_markers: int
    confidence: float
    min_leaf_calib: int
    scope: Optional[ScopeRanges] = None
    ddm_ref: Optional[str] = None
    metadata: Mapping[str, Any] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return f"{self.cell_type.name}-{self.variant.name}"

    @property
    def factor_names(self) -> Tuple[str, ...]:
        return self.variant.factor_names(self.cell_type)

    def to_dict(self, ddm_ref: Optional[str] = None) -> Dict[str, Any]:
        return {
            "name": self.name,
            "cell_type": self.cell_type.name,
            "cell_type_spec": self.cell_type.to_dict(),
            "variant": self.variant.to_dict(),
            "factor_names": list(self.factor_names),
            "impact_model": self.impact_model.to_dict(),
            "scope_ranges": None if self.scope is None else self.scope.to_dict(),
            "ddm_ref": ddm_ref if ddm_ref is not None else self.ddm_ref,
            "n_markers": self.n_markers,
            "confidence": self.confidence,
            "min_leaf_calib": self.min_leaf_calib,
            "metadata": dict(self.metadata),
        }


# ---------------------------------------------------------------------------
# Building
# ---------------------------------------------------------------------------


def _basis(
    samples: Sequence[Sample],
    spec: CellTypeSpec,
    subtype_basis: str,
    parent_wrapper: Optional[UncertaintyWrapper],
) -> List[Sample]:
    if spec.parent is None:
        return list(samples)
    if subtype_basis == "ground_truth":
        return [sample.subset(sample.label(spec.parent)) for sample in samples]
    if parent_wrapper is None:
        raise ConfigError(f"Building {spec.name} on parent predictions needs the {spec.parent} wrapper")
    return [sample.subset(predict_sample(parent_wrapper.ddm, sample)) for sample in samples]


def _factor_table(
    variant: VariantConfig,
    ddm: DdmModel,
    samples: Sequence[Sample],
    spec: CellTypeSpec,
    max_workers: int,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    def one(sample: Sample) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        predictions = predict_sample(ddm, sample)
        errors = predictions != sample.label(spec.name)
        factors = assemble_factors(variant, sample, predictions, spec)
        return factors.values, errors, predictions

    if max_workers > 1 and len(samples) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            parts = list(executor.map(one, samples))
    else:
        parts = [one(sample) for sample in samples]
    width = len(variant.factor_names(spec))
    if not parts:
        return np.zeros((0, width)), np.zeros(0, dtype=bool), np.zeros(0, dtype=bool)
    return (
        np.vstack([p[0] for p in parts]).reshape(-1, width),
        np.concatenate([p[1] for p in parts]),
        np.concatenate([p[2] for p in parts]),
    )


def build_wrapper(
    variant: VariantConfig,
    ddm: DdmModel,
    train: Sequence[Sample],
    calib: Sequence[Sample],
    panel: Panel,
    cell_type: str,
    *,
    confidence: float = 0.99,
    min_leaf_calib: int = 50,
    tree_params: Optional[TreeParams] = None,
    parent_wrapper: Optional[UncertaintyWrapper] = None,
    subtype_basis: str = "ground_truth",
    scope_tolerance: float = 0.0,
    ddm_ref: Optional[str] = None,
    max_workers: int = 1,
) -> UncertaintyWrapper:
    """Fit a wrapper for ``cell_type`` on training samples and calibrate it on calibration samples.

    Subtype wrappers only see the lymphocyte (parent) events of each sample,
    selected by ground truth or by the parent wrapper's classifier.
    """
    if subtype_basis not in SUBTYPE_BASES:
        raise ConfigError(f"subtype_basis must be one of {SUBTYPE_BASES}, got {subtype_basis!r}")
    if not train or not calib:
        raise InputError("Building a wrapper needs training and calibration samples")
    if ddm.cell_type != cell_type:
        raise InputError(f"DDM for {ddm.cell_type} cannot be wrapped as {cell_type}")
    spec = panel.cell_type(cell_type)
    tree_params = tree_params or TreeParams()

    train_basis = _basis(train, spec, subtype_basis, parent_wrapper)
    calib_basis = _basis(calib, spec, subtype_basis, parent_wrapper)
    names = variant.factor_names(spec)
    label = f"{cell_type}-{variant.name}"
    impact_model = fit_impact_model(
        variant.impact_model_kind,
        _factor_table(variant, ddm, train_basis, spec, max_workers),
        _factor_table(variant, ddm, calib_basis, spec, max_workers),
        params=tree_params,
        confidence=confidence,
        min_leaf_calib=min_leaf_calib,
        factor_names=names,
        label=label,
    )
    wrapper = UncertaintyWrapper(
        cell_type=spec,
        variant=variant,
        impact_model=impact_model,
        ddm=ddm,
        n_markers=panel.n_markers,
        confidence=confidence,
        min_leaf_calib=min_leaf_calib,
        scope=fit_scope_ranges(train_basis, scope_tolerance),
        ddm_ref=ddm_ref,
        metadata={
            "subtype_basis": subtype_basis if spec.parent else None,
            "tree": tree_params.to_dict(),
            "train_events": sum(len(s) for s in train_basis),
            "calibration_events": sum(len(s) for s in calib_basis),
        },
    )
    logger.info("Built wrapper %s with %s leaves", wrapper.name, impact_model.n_leaves)
    return wrapper


# ---------------------------------------------------------------------------
# Runtime
# ---------------------------------------------------------------------------


def wrapper_estimate(
    wrapper: UncertaintyWrapper, sample: Sample, predictions: Optional[np.ndarray] = None
) -> SampleEstimates:
    """Predict, fit the sample-context factors on ``sample`` and look up each event's uncertainty."""
    if len(sample) and sample.n_markers != wrapper.n_markers:
        raise InputError(
            f"Wrapper {wrapper.name} expects {wrapper.n_markers} markers, sample {sample.sample_id} "
            f"has {sample.n_markers}"
        )
    if predictions is None:
        predictions = predict_sample(wrapper.ddm, sample)
    predictions = np.asarray(predictions, dtype=bool)
    factors = assemble_factors(wrapper.variant, sample, predictions, wrapper.cell_type)
    uncertainties, leaf_ids = wrapper.impact_model.estimate(factors.values, predictions)
    scope_flags = None
    if wrapper.scope is not None:
        scope_flags = wrapper.scope.out_of_scope(sample.markers) if len(sample) else np.zeros(0, dtype=bool)
    return SampleEstimates(
        sample_id=sample.sample_id,
        event_ids=np.asarray(sample.event_ids),
        predictions=predictions,
        uncertainties=uncertainties,
        leaf_ids=leaf_ids,
        scope_flags=scope_flags,
    )


def wrapper_apply(wrapper: UncertaintyWrapper, sample: Sample) -> List[UncertaintyEstimate]:
    return wrapper_estimate(wrapper, sample).to_list()


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_wrapper(path: Path | str, wrapper: UncertaintyWrapper, ddm_path: Optional[Path | str] = None) -> Path:
    """Write the wrapper JSON; ``ddm_path`` is stored relative to the wrapper file."""
    path = Path(path)
    ref = wrapper.ddm_ref
    if ddm_path is not None:
        ref = Path(os.path.relpath(Path(ddm_path).resolve(), path.parent.resolve())).as_posix()
    return write_json(path, wrapper.to_dict(ddm_ref=ref))


def wrapper_from_dict(data: Mapping[str, Any], ddm: DdmModel, ddm_ref: Optional[str] = None) -> UncertaintyWrapper:
    try:
        scope = data.get("scope_ranges")
        return UncertaintyWrapper(
            cell_type=CellTypeSpec.from_dict(data["cell_type_spec"]),
            variant=VariantConfig.from_dict(data["variant"]),
            impact_model=QualityImpactModel.from_dict(data["impact_model"]),
            ddm=ddm,
            n_markers=int(data["n_markers"]),
            confidence=float(data["confidence"]),
            min_leaf_calib=int(data["min_leaf_calib"]),
            scope=None if scope is None else ScopeRanges.from_dict(scope),
            ddm_ref=ddm_ref if ddm_ref is not None else data.get("ddm_ref"),
            metadata=dict(data.get("metadata", {})),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"Invalid wrapper file: {exc!r}") from exc


def _read_wrapper_json(path: Path) -> Dict[str, Any]:
    data = read_json(path)
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: wrapper file must hold a JSON object")
    return data


def load_wrapper(path: Path | str, ddm: Optional[DdmModel] = None) -> UncertaintyWrapper:
    """Load a wrapper and, unless given, the DDM its ``ddm_ref`` points to."""
    path = Path(path)
    data = _read_wrapper_json(path)
    if ddm is None:
        ref = data.get("ddm_ref")
        if not ref:
            raise SchemaError(f"Wrapper {path} has no ddm_ref and no DDM was given")
        ddm = load_ddm(path.parent / ref)
    return wrapper_from_dict(data, ddm)


def wrapper_file_name(cell_type: str, variant_name: str) -> str:
    return f"{cell_type}-{variant_name}.json"


def load_wrapper_dir(directory: Path | str) -> List[UncertaintyWrapper]:
    """Load every ``*.json`` wrapper of a directory in file-name order, sharing DDMs by path."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"Wrapper directory not found: {directory}")
    paths = sorted(directory.glob("*.json"))
    if not paths:
        raise FileNotFoundError(f"No wrapper files in {directory}")
    ddms: Dict[Path, DdmModel] = {}
    wrappers = []
    for path in paths:
        data = _read_wrapper_json(path)
        ref = data.get("ddm_ref")
        if not ref:
            raise SchemaError(f"Wrapper {path} has no ddm_ref")
        ddm_path = (path.parent / ref).resolve()
        if ddm_path not in ddms:
            ddms[ddm_path] = load_ddm(ddm_path)
        wrappers.append(wrapper_from_dict(data, ddms[ddm_path]))
    logger.debug("Loaded %s wrappers from %s", len(wrappers), directory)
    return wrappers
