"""Quality impact models (one tree, or one tree per predicted class) and the range-based scope check."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.data_model import Event, Sample
from ..errors import ConfigError, InputError, SchemaError
from .decision_tree import DecisionTree, TreeParams, calibrate_tree, fit_tree, prune_tree

logger = logging.getLogger(__name__)

DEFAULT = "default"
CATEGORY_BASED = "category_based"
CATEGORY_PREFIXES = ("pos", "neg")


@dataclass(frozen=True)
class QualityImpactModel:
    """``default`` holds one tree; ``category_based`` holds (predicted-positive, predicted-negative) trees."""

    kind: str
    trees: Tuple[DecisionTree, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "trees", tuple(self.trees))
        expected = {DEFAULT: 1, CATEGORY_BASED: 2}.get(self.kind)
        if expected is None:
            raise ConfigError(f"Unknown impact model kind {self.kind!r}")
        if len(self.trees) != expected:
            raise SchemaError(f"A {self.kind} impact model holds {expected} tree(s), got {len(self.trees)}")

    @property
    def n_leaves(self) -> int:
        return sum(tree.n_leaves for tree in self.trees)

    def estimate(self, factors: np.ndarray, predictions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Uncertainty and leaf id (``"3"`` or ``"pos/3"``) for every factor row."""
        predictions = np.asarray(predictions, dtype=bool)
        factors = np.asarray(factors, dtype=np.float64)
        uncertainties = np.zeros(predictions.shape[0], dtype=np.float64)
        leaf_ids = np.empty(predictions.shape[0], dtype=object)
        if self.kind == DEFAULT:
            parts = [(self.trees[0], np.ones(predictions.shape[0], dtype=bool), "")]
        else:
            parts = [
                (self.trees[0], predictions, f"{CATEGORY_PREFIXES[0]}/"),
                (self.trees[1], ~predictions, f"{CATEGORY_PREFIXES[1]}/"),
            ]
        for tree, mask, prefix in parts:
            if not mask.any():
                continue
            routed = tree.route(factors[mask])
            table = tree.leaf_uncertainties()
            uncertainties[mask] = [table[int(i)] for i in routed]
            leaf_ids[mask] = [f"{prefix}{int(i)}" for i in routed]
        return uncertainties, leaf_ids

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "trees": [tree.to_dict() for tree in self.trees]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "QualityImpactModel":
        try:
            return cls(kind=str(data["kind"]), trees=tuple(DecisionTree.from_dict(t) for t in data["trees"]))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"Invalid impact model: {exc!r}") from exc


def _fit_calibrated_tree(
    train_factors: np.ndarray,
    train_errors: np.ndarray,
    calib_factors: np.ndarray,
    calib_errors: np.ndarray,
    *,
    params: TreeParams,
    confidence: float,
    min_leaf_calib: int,
    factor_names: Sequence[str],
    label: str,
) -> DecisionTree:
    tree = fit_tree(train_factors, train_errors, params, factor_names)
    tree = calibrate_tree(tree, calib_factors, calib_errors, confidence)
    pruned = prune_tree(tree, min_leaf_calib)
    logger.info("%s: %s leaves before pruning, %s after", label, tree.n_leaves, pruned.n_leaves)
    return pruned


def fit_impact_model(
    kind: str,
    train: Tuple[np.ndarray, np.ndarray, np.ndarray],
    calib: Tuple[np.ndarray, np.ndarray, np.ndarray],
    *,
    params: Optional[TreeParams] = None,
    confidence: float = 0.99,
    min_leaf_calib: int = 50,
    factor_names: Sequence[str] = (),
    label: str = "impact model",
) -> QualityImpactModel:
    """Fit, calibrate and prune the tree(s) of an impact model.

    ``train`` and ``calib`` are ``(factors, errors, predictions)`` triples.
    A category-based model falls back to the default kind when either predicted
    class is missing from the training or the calibration events.
    """
    params = params or TreeParams()
    train_factors, train_errors, train_preds = (np.asarray(a) for a in train)
    calib_factors, calib_errors, calib_preds = (np.asarray(a) for a in calib)
    train_preds = train_preds.astype(bool)
    calib_preds = calib_preds.astype(bool)
    options = dict(params=params, confidence=confidence, min_leaf_calib=min_leaf_calib, factor_names=factor_names)

    if kind == CATEGORY_BASED:
        partitions = [(train_preds, calib_preds), (~train_preds, ~calib_preds)]
        if all(t.any() and c.any() for t, c in partitions):
            trees = [
                _fit_calibrated_tree(
                    train_factors[t],
                    train_errors[t],
                    calib_factors[c],
                    calib_errors[c],
                    label=f"{label} [{prefix}]",
                    **options,
                )
                for (t, c), prefix in zip(partitions, CATEGORY_PREFIXES)
            ]
            return QualityImpactModel(kind=CATEGORY_BASED, trees=tuple(trees))
        logger.warning("%s: a predicted class has no events; falling back to the default impact model", label)
    elif kind != DEFAULT:
        raise ConfigError(f"Unknown impact model kind {kind!r}")

    tree = _fit_calibrated_tree(train_factors, train_errors, calib_factors, calib_errors, label=label, **options)
    return QualityImpactModel(kind=DEFAULT, trees=(tree,))


# ---------------------------------------------------------------------------
# Scope stub
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScopeRanges:
    """Per-marker training range; events outside ``[min - tol*span, max + tol*span]`` are flagged."""

    mins: np.ndarray
    maxs: np.ndarray
    tolerance: float = 0.0

    def __post_init__(self) -> None:
        mins = np.asarray(self.mins, dtype=np.float64)
        maxs = np.asarray(self.maxs, dtype=np.float64)
        if mins.shape != maxs.shape or (mins > maxs).any():
            raise InputError("Scope ranges need min <= max for every marker")
        if self.tolerance < 0:
            raise ConfigError("Scope tolerance must be non-negative")
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)

    def out_of_scope(self, markers: np.ndarray) -> np.ndarray:
        markers = np.atleast_2d(np.asarray(markers, dtype=np.float64))
        if markers.shape[1] != self.mins.shape[0]:
            raise InputError(f"Scope ranges cover {self.mins.shape[0]} markers, got {markers.shape[1]}")
        slack = self.tolerance * (self.maxs - self.mins)
        outside = (markers < self.mins - slack) | (markers > self.maxs + slack)
        return outside.any(axis=1)

    def to_dict(self) -> Dict[str, Any]:
        return {"min": self.mins, "max": self.maxs, "tolerance": self.tolerance}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ScopeRanges":
        try:
            return cls(mins=np.array(data["min"]), maxs=np.array(data["max"]), tolerance=float(data["tolerance"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"Invalid scope ranges: {exc!r}") from exc


def fit_scope_ranges(
    training: Union[Iterable[Sample], np.ndarray], tolerance: float = 0.0
) -> ScopeRanges:
    if isinstance(training, np.ndarray):
        markers = training
    else:
        blocks: List[np.ndarray] = [sample.markers for sample in training if len(sample)]
        markers = np.vstack(blocks) if blocks else np.zeros((0, 0))
    if markers.shape[0] == 0:
        raise InputError("Scope ranges need at least one training event")
    return ScopeRanges(mins=markers.min(axis=0), maxs=markers.max(axis=0), tolerance=tolerance)


def scope_check(ranges: ScopeRanges, event: Union[Event, np.ndarray]) -> bool:
    """True when the event lies outside the training ranges."""
    markers = event.markers if isinstance(event, Event) else event
    return bool(ranges.out_of_scope(np.asarray(markers).reshape(1, -1))[0])
