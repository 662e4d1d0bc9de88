"""Binary CART trees over quality factors, leaf calibration and calibration-driven pruning."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import ConfigError, InputError, SchemaError, TrainingError
from .bounds import clopper_pearson_upper

logger = logging.getLogger(__name__)

# Relative slack when comparing split impurities computed in floating point.
IMPURITY_TOLERANCE = 1e-9


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 8
    min_samples_leaf: int = 200

    def __post_init__(self) -> None:
        if self.max_depth < 0 or self.min_samples_leaf < 1:
            raise ConfigError("max_depth must be >= 0 and min_samples_leaf >= 1")

    def to_dict(self) -> Dict[str, int]:
        return {"max_depth": self.max_depth, "min_samples_leaf": self.min_samples_leaf}

    @classmethod
    def from_dict(cls, data: Optional[Mapping[str, Any]]) -> "TreeParams":
        data = dict(data or {})
        unknown = set(data) - {"max_depth", "min_samples_leaf"}
        if unknown:
            raise ConfigError(f"Unknown tree settings: {sorted(unknown)}")
        return cls(**{key: int(value) for key, value in data.items()})


@dataclass(frozen=True)
class LeafNode:
    leaf_id: int
    n_train: int
    k_train: int
    n_calib: int = 0
    k_calib: int = 0
    uncertainty: float = 1.0

    @property
    def calib_error_rate(self) -> float:
        return self.k_calib / self.n_calib if self.n_calib else float("nan")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.leaf_id,
            "n_train": self.n_train,
            "k_train": self.k_train,
            "n": self.n_calib,
            "k": self.k_calib,
            "uncertainty": self.uncertainty,
        }


@dataclass(frozen=True)
class SplitNode:
    """Internal node: ``x[factor] <= threshold`` goes left, everything else right."""

    factor: int
    threshold: float
    left: "Node"
    right: "Node"


Node = Union[LeafNode, SplitNode]


def _iter_leaves(node: Node) -> Iterator[LeafNode]:
    if isinstance(node, LeafNode):
        yield node
    else:
        yield from _iter_leaves(node.left)
        yield from _iter_leaves(node.right)


def _depth(node: Node) -> int:
    if isinstance(node, LeafNode):
        return 0
    return 1 + max(_depth(node.left), _depth(node.right))


def _renumber(node: Node, counter: Optional[List[int]] = None) -> Node:
    counter = counter if counter is not None else [0]
    if isinstance(node, LeafNode):
        leaf = replace(node, leaf_id=counter[0])
        counter[0] += 1
        return leaf
    left = _renumber(node.left, counter)
    right = _renumber(node.right, counter)
    return replace(node, left=left, right=right)


@dataclass(frozen=True)
class DecisionTree:
    """A fitted tree; ``confidence`` is set once the leaves are calibrated."""

    root: Node
    n_factors: int
    factor_names: Tuple[str, ...] = ()
    confidence: Optional[float] = None

    @property
    def leaves(self) -> List[LeafNode]:
        return list(_iter_leaves(self.root))

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    @property
    def depth(self) -> int:
        return _depth(self.root)

    @property
    def calibrated(self) -> bool:
        return self.confidence is not None

    def leaf(self, leaf_id: int) -> LeafNode:
        for leaf in _iter_leaves(self.root):
            if leaf.leaf_id == leaf_id:
                return leaf
        raise KeyError(leaf_id)

    def _check_arity(self, factors: np.ndarray) -> np.ndarray:
        factors = np.asarray(factors, dtype=np.float64)
        if factors.ndim == 1 and factors.size == 0:
            factors = factors.reshape(0, self.n_factors)
        if factors.ndim != 2 or factors.shape[1] != self.n_factors:
            raise InputError(f"Tree expects {self.n_factors} factors, got shape {factors.shape}")
        return factors

    def route(self, factors: np.ndarray) -> np.ndarray:
        """Leaf id reached by every factor vector (row)."""
        factors = self._check_arity(factors)
        result = np.empty(factors.shape[0], dtype=np.int64)

        def descend(node: Node, rows: np.ndarray) -> None:
            if rows.size == 0:
                return
            if isinstance(node, LeafNode):
                result[rows] = node.leaf_id
                return
            go_left = factors[rows, node.factor] <= node.threshold
            descend(node.left, rows[go_left])
            descend(node.right, rows[~go_left])

        descend(self.root, np.arange(factors.shape[0]))
        return result

    def leaf_uncertainties(self) -> Dict[int, float]:
        return {leaf.leaf_id: leaf.uncertainty for leaf in self.leaves}

    def uncertainties(self, factors: np.ndarray) -> np.ndarray:
        table = self.leaf_uncertainties()
        return np.array([table[int(i)] for i in self.route(factors)], dtype=np.float64)

    def to_dict(self) -> Dict[str, Any]:
        nodes: List[Dict[str, Any]] = []

        def ref(node: Node) -> Dict[str, int]:
            if isinstance(node, LeafNode):
                return {"leaf": node.leaf_id}
            index = len(nodes)
            entry: Dict[str, Any] = {"factor": node.factor, "threshold": node.threshold}
            nodes.append(entry)
            entry["left"] = ref(node.left)
            entry["right"] = ref(node.right)
            return {"node": index}

        root = ref(self.root)
        return {
            "root": root,
            "nodes": nodes,
            "leaves": [leaf.to_dict() for leaf in self.leaves],
            "n_factors": self.n_factors,
            "factor_names": list(self.factor_names),
            "confidence": self.confidence,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DecisionTree":
        try:
            leaves = {
                int(item["id"]): LeafNode(
                    leaf_id=int(item["id"]),
                    n_train=int(item.get("n_train", 0)),
                    k_train=int(item.get("k_train", 0)),
                    n_calib=int(item["n"]),
                    k_calib=int(item["k"]),
                    uncertainty=float(item["uncertainty"]),
                )
                for item in data["leaves"]
            }
            nodes = data["nodes"]

            def build(reference: Mapping[str, int]) -> Node:
                if "leaf" in reference:
                    return leaves[int(reference["leaf"])]
                item = nodes[int(reference["node"])]
                return SplitNode(
                    factor=int(item["factor"]),
                    threshold=float(item["threshold"]),
                    left=build(item["left"]),
                    right=build(item["right"]),
                )

            confidence = data.get("confidence")
            return cls(
                root=build(data["root"]),
                n_factors=int(data["n_factors"]),
                factor_names=tuple(data.get("factor_names", [])),
                confidence=None if confidence is None else float(confidence),
            )
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise SchemaError(f"Invalid decision tree: {exc!r}") from exc


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


def _best_split_on_factor(
    values: np.ndarray, errors: np.ndarray, min_leaf: int
) -> Tuple[float, Optional[float]]:
    """Lowest weighted Gini (unnormalised) over midpoints of one factor, and its threshold."""
    order = np.argsort(values, kind="mergesort")
    sorted_values = values[order]
    cumulative = np.cumsum(errors[order].astype(np.int64))
    n = values.shape[0]
    k = int(cumulative[-1])

    boundaries = np.flatnonzero(sorted_values[:-1] != sorted_values[1:])
    n_left = boundaries + 1
    allowed = (n_left >= min_leaf) & (n - n_left >= min_leaf)
    boundaries = boundaries[allowed]
    if boundaries.size == 0:
        return np.inf, None
    n_left = (boundaries + 1).astype(np.float64)
    n_right = n - n_left
    k_left = cumulative[boundaries].astype(np.float64)
    k_right = k - k_left
    impurity = k_left * (n_left - k_left) / n_left + k_right * (n_right - k_right) / n_right

    best = float(impurity.min())
    position = int(np.flatnonzero(impurity <= best + IMPURITY_TOLERANCE * max(best, 1.0))[0])
    low = sorted_values[boundaries[position]]
    high = sorted_values[boundaries[position] + 1]
    threshold = float((low + high) / 2.0)
    if not low <= threshold < high:
        threshold = float(low)
    return best, threshold


def _grow(factors: np.ndarray, errors: np.ndarray, depth: int, params: TreeParams) -> Node:
    n = errors.shape[0]
    k = int(errors.sum())
    leaf = LeafNode(leaf_id=-1, n_train=n, k_train=k)
    if depth >= params.max_depth or k == 0 or k == n or n < 2 * params.min_samples_leaf:
        return leaf

    parent_impurity = k * (n - k) / n
    best_impurity = np.inf
    best: Optional[Tuple[int, float]] = None
    for factor in range(factors.shape[1]):
        impurity, threshold = _best_split_on_factor(factors[:, factor], errors, params.min_samples_leaf)
        if threshold is None:
            continue
        if best is None or impurity < best_impurity - IMPURITY_TOLERANCE * max(best_impurity, 1.0):
            best_impurity = impurity
            best = (factor, threshold)
    if best is None or not best_impurity < parent_impurity - IMPURITY_TOLERANCE * max(parent_impurity, 1.0):
        return leaf

    factor, threshold = best
    go_left = factors[:, factor] <= threshold
    return SplitNode(
        factor=factor,
        threshold=threshold,
        left=_grow(factors[go_left], errors[go_left], depth + 1, params),
        right=_grow(factors[~go_left], errors[~go_left], depth + 1, params),
    )


def fit_tree(
    factors: np.ndarray,
    errors: np.ndarray,
    params: Optional[TreeParams] = None,
    factor_names: Sequence[str] = (),
) -> DecisionTree:
    """Greedy CART on ``errors`` (True = the classifier was wrong).

    Splits minimise weighted Gini impurity over midpoints between consecutive
    distinct values; ties go to the lower factor index, then the lower threshold.
    """
    params = params or TreeParams()
    factors = np.asarray(factors, dtype=np.float64)
    errors = np.asarray(errors, dtype=bool)
    if errors.size == 0:
        raise TrainingError("Cannot fit a tree without training vectors")
    if factors.ndim != 2 or factors.shape[0] != errors.shape[0]:
        raise InputError(f"Factor matrix {factors.shape} does not match {errors.shape[0]} labels")
    if errors.shape[0] < params.min_samples_leaf:
        logger.warning(
            "Only %s training vectors (< min_samples_leaf=%s); fitting a single leaf",
            errors.shape[0],
            params.min_samples_leaf,
        )
    root = _renumber(_grow(factors, errors, 0, params))
    tree = DecisionTree(root=root, n_factors=factors.shape[1], factor_names=tuple(factor_names))
    logger.debug("Fitted tree with %s leaves (depth %s) on %s vectors", tree.n_leaves, tree.depth, errors.shape[0])
    return tree


# ---------------------------------------------------------------------------
# Calibration and pruning
# ---------------------------------------------------------------------------


def _leaf_uncertainty(k: int, n: int, confidence: float) -> float:
    return clopper_pearson_upper(k, n, confidence) if n > 0 else 1.0


def calibrate_tree(
    tree: DecisionTree,
    factors: np.ndarray,
    errors: np.ndarray,
    confidence: float = 0.99,
) -> DecisionTree:
    """Count calibration events and errors per leaf and bound each leaf's error rate."""
    factors = tree._check_arity(factors)
    errors = np.asarray(errors, dtype=bool)
    if errors.shape != (factors.shape[0],):
        raise InputError(f"{errors.shape[0]} calibration labels for {factors.shape[0]} vectors")
    if errors.size == 0:
        raise InputError("Calibration needs at least one event")
    leaf_ids = tree.route(factors)
    n_leaves = tree.n_leaves
    counts = np.bincount(leaf_ids, minlength=n_leaves)
    error_counts = np.bincount(leaf_ids, weights=errors.astype(np.float64), minlength=n_leaves)

    def calibrate(node: Node) -> Node:
        if isinstance(node, LeafNode):
            n = int(counts[node.leaf_id])
            k = int(round(error_counts[node.leaf_id]))
            return replace(node, n_calib=n, k_calib=k, uncertainty=_leaf_uncertainty(k, n, confidence))
        return replace(node, left=calibrate(node.left), right=calibrate(node.right))

    return replace(tree, root=calibrate(tree.root), confidence=confidence)


def _merge(node: Node, confidence: float) -> LeafNode:
    leaves = list(_iter_leaves(node))
    n = sum(leaf.n_calib for leaf in leaves)
    k = sum(leaf.k_calib for leaf in leaves)
    return LeafNode(
        leaf_id=-1,
        n_train=sum(leaf.n_train for leaf in leaves),
        k_train=sum(leaf.k_train for leaf in leaves),
        n_calib=n,
        k_calib=k,
        uncertainty=_leaf_uncertainty(k, n, confidence),
    )


def prune_tree(tree: DecisionTree, min_leaf_calib: int) -> DecisionTree:
    """Collapse, bottom-up, every subtree that has a leaf child below ``min_leaf_calib``."""
    if tree.confidence is None:
        raise InputError("Only calibrated trees can be pruned")
    confidence = tree.confidence

    def prune(node: Node) -> Node:
        if isinstance(node, LeafNode):
            return node
        node = replace(node, left=prune(node.left), right=prune(node.right))
        deficient = any(
            isinstance(child, LeafNode) and child.n_calib < min_leaf_calib for child in (node.left, node.right)
        )
        return _merge(node, confidence) if deficient else node

    before = tree.n_leaves
    pruned = replace(tree, root=_renumber(prune(tree.root)))
    logger.debug("Pruned tree from %s to %s leaves (min_leaf_calib=%s)", before, pruned.n_leaves, min_leaf_calib)
    return pruned
