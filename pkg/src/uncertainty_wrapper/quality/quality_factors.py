"""Per-event quality factors and variant-specific factor vectors.

Sample-context factors (density, homogeneity, percentile) are fitted on the
events of the sample being scored, so they adapt to each new sample at runtime
and never depend on any other sample.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import rankdata
from sklearn.cluster import DBSCAN
from sklearn.neighbors import KernelDensity

from ..core.data_model import CellTypeSpec, Event, Sample
from ..core.transforms import MarkerTransform
from ..errors import ConfigError, InputError

logger = logging.getLogger(__name__)

VARIANTS: Tuple[str, ...] = ("baseline", "basic", "percentile", "density", "homogeneity", "combined")
IMPACT_MODEL_KINDS: Tuple[str, ...] = ("default", "category_based")
OUTCOME_SUFFIX = "+outcome"
CATEGORY_SUFFIX = "-category"
NOISE = -1
BANDWIDTH_FLOOR = 1e-6

_FAMILIES: Dict[str, Tuple[str, ...]] = {
    "baseline": ("marker",),
    "basic": ("marker",),
    "percentile": ("marker", "percentile"),
    "density": ("marker", "density"),
    "homogeneity": ("marker", "homogeneity"),
    "combined": ("marker", "density", "homogeneity"),
}


@dataclass(frozen=True)
class VariantConfig:
    """Which factor families a wrapper uses and how its impact model is built."""

    variant: str = "basic"
    include_outcome: bool = False
    impact_model_kind: str = "default"
    transform: MarkerTransform = field(default_factory=MarkerTransform)
    dbscan_eps: float = 0.3
    dbscan_min_pts: int = 20
    bandwidth_rule: Union[str, float] = "scott"
    homogeneity_on_root: bool = False

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"Unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.impact_model_kind not in IMPACT_MODEL_KINDS:
            raise ConfigError(f"Unknown impact model kind {self.impact_model_kind!r}")
        if self.variant == "baseline" and (self.include_outcome or self.impact_model_kind != "default"):
            raise ConfigError("The baseline variant uses the default impact model without outcome factor")
        if self.impact_model_kind == "category_based" and self.include_outcome:
            raise ConfigError("Category-based impact models never include the outcome factor")
        if not self.dbscan_eps > 0 or self.dbscan_min_pts < 1:
            raise ConfigError("DBSCAN needs eps > 0 and min_pts >= 1")
        if isinstance(self.bandwidth_rule, str):
            if self.bandwidth_rule != "scott":
                raise ConfigError(f"Unknown bandwidth rule {self.bandwidth_rule!r}")
        elif not float(self.bandwidth_rule) > 0:
            raise ConfigError("A fixed KDE bandwidth must be positive")

    @property
    def name(self) -> str:
        suffix = OUTCOME_SUFFIX if self.include_outcome else ""
        if self.impact_model_kind == "category_based":
            suffix += CATEGORY_SUFFIX
        return f"{self.variant}{suffix}"

    def families(self, cell_type: CellTypeSpec) -> Tuple[str, ...]:
        families = _FAMILIES[self.variant]
        if cell_type.parent is None and not self.homogeneity_on_root:
            families = tuple(f for f in families if f != "homogeneity")
        return families

    def factor_names(self, cell_type: CellTypeSpec) -> Tuple[str, ...]:
        names: List[str] = []
        families = self.families(cell_type)
        markers = cell_type.gated_markers
        if "marker" in families:
            names.extend(f"marker_{i}" for i in markers)
        if "percentile" in families:
            names.extend(f"percentile_{i}" for i in markers)
        if "density" in families:
            names.extend(f"density_{i}_{j}" for i, j in cell_type.distinct_pairs)
        if "homogeneity" in families:
            names.append("homogeneity")
        if self.include_outcome:
            names.append("outcome")
        return tuple(names)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "variant": self.variant,
            "include_outcome": self.include_outcome,
            "impact_model_kind": self.impact_model_kind,
            "transform": self.transform.to_dict(),
            "dbscan_eps": self.dbscan_eps,
            "dbscan_min_pts": self.dbscan_min_pts,
            "bandwidth_rule": self.bandwidth_rule,
            "homogeneity_on_root": self.homogeneity_on_root,
        }

    @classmethod
    def from_dict(cls, data: Union[str, Mapping[str, Any]]) -> "VariantConfig":
        if isinstance(data, str):
            return cls.from_name(data)
        try:
            values = dict(data)
            if "name" in values:
                base = cls.from_name(values.pop("name"))
                values.setdefault("variant", base.variant)
                values.setdefault("include_outcome", base.include_outcome)
                values.setdefault("impact_model_kind", base.impact_model_kind)
            values["transform"] = MarkerTransform.from_dict(values.get("transform"))
            unknown = set(values) - set(cls.__dataclass_fields__)
            if unknown:
                raise ConfigError(f"Unknown variant settings: {sorted(unknown)}")
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(f"Invalid variant config {data!r}: {exc}") from exc

    @classmethod
    def from_name(cls, name: str, **overrides: Any) -> "VariantConfig":
        """Parse ``basic``, ``density+outcome`` or ``combined-category`` style names."""
        text = name.strip()
        category = text.endswith(CATEGORY_SUFFIX)
        if category:
            text = text[: -len(CATEGORY_SUFFIX)]
        outcome = text.endswith(OUTCOME_SUFFIX)
        if outcome:
            text = text[: -len(OUTCOME_SUFFIX)]
        return cls(
            variant=text,
            include_outcome=outcome,
            impact_model_kind="category_based" if category else "default",
            **overrides,
        )


# ---------------------------------------------------------------------------
# Factor families
# ---------------------------------------------------------------------------


def marker_factors(event: Union[Event, np.ndarray], cell_type: CellTypeSpec) -> np.ndarray:
    """Raw intensities of the distinct gated markers, in panel order."""
    markers = event.markers if isinstance(event, Event) else event
    return np.asarray(markers, dtype=np.float64)[list(cell_type.gated_markers)]


def outcome_factor(prediction: bool) -> float:
    return 1.0 if prediction else 0.0


def percentile_ranks(values: np.ndarray) -> np.ndarray:
    """Mid-rank percentile ``(#less + 0.5 * #equal) / n`` of every value."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return values.copy()
    return (rankdata(values, method="average") - 0.5) / values.size


def percentile_matrix(sample: Sample, cell_type: CellTypeSpec) -> np.ndarray:
    columns = [percentile_ranks(sample.markers[:, i]) for i in cell_type.gated_markers]
    return np.column_stack(columns) if columns else np.zeros((len(sample), 0))


def percentile_factors(sample: Sample, event_index: int, cell_type: CellTypeSpec) -> np.ndarray:
    if len(sample) == 0:
        raise InputError("Percentiles need a nonempty sample")
    return percentile_matrix(sample, cell_type)[event_index]


@dataclass(frozen=True, eq=False)
class DensityModel:
    """Product-Gaussian KDE over one marker pair of one sample (transformed units)."""

    pair: Tuple[int, int]
    bandwidths: Tuple[float, float]
    support: np.ndarray
    transform: MarkerTransform = field(default_factory=MarkerTransform)
    _kde: KernelDensity = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if min(self.bandwidths) <= 0:
            raise InputError("KDE bandwidths must be positive")
        scaled = np.asarray(self.support, dtype=np.float64) / np.asarray(self.bandwidths)
        kde = KernelDensity(kernel="gaussian", bandwidth=1.0, rtol=0.0, atol=0.0).fit(scaled)
        object.__setattr__(self, "_kde", kde)

    def evaluate_transformed(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        if points.shape[0] == 0:
            return np.zeros(0)
        log_density = self._kde.score_samples(points / np.asarray(self.bandwidths))
        return np.exp(log_density) / (self.bandwidths[0] * self.bandwidths[1])

    def evaluate(self, markers: np.ndarray) -> np.ndarray:
        """Density at the transformed pair values of raw marker rows."""
        markers = np.atleast_2d(np.asarray(markers, dtype=np.float64))
        i, j = self.pair
        points = np.column_stack([self.transform.forward(markers[:, i]), self.transform.forward(markers[:, j])])
        return self.evaluate_transformed(points)


def scott_bandwidth(values: np.ndarray) -> float:
    """Per-axis Scott's rule for two dimensions, ``sd * n^(-1/6)``, floored at 1e-6."""
    n = values.shape[0]
    sd = float(np.std(values, ddof=1)) if n > 1 else 0.0
    return max(sd * n ** (-1.0 / 6.0), BANDWIDTH_FLOOR)


def fit_density(
    sample: Sample,
    pair: Tuple[int, int],
    transform: Optional[MarkerTransform] = None,
    bandwidth_rule: Union[str, float] = "scott",
) -> DensityModel:
    if len(sample) == 0:
        raise InputError("Density estimation needs a nonempty sample")
    transform = transform or MarkerTransform()
    i, j = pair
    support = np.column_stack([transform.forward(sample.markers[:, i]), transform.forward(sample.markers[:, j])])
    if isinstance(bandwidth_rule, str):
        bandwidths = (scott_bandwidth(support[:, 0]), scott_bandwidth(support[:, 1]))
    else:
        bandwidths = (float(bandwidth_rule), float(bandwidth_rule))
    return DensityModel(pair=(i, j), bandwidths=bandwidths, support=support, transform=transform)


def eval_density(model: DensityModel, event: Union[Event, np.ndarray]) -> float:
    markers = event.markers if isinstance(event, Event) else event
    return float(model.evaluate(np.asarray(markers).reshape(1, -1))[0])


@dataclass(frozen=True, eq=False)
class HomogeneityModel:
    """DBSCAN clusters of one sample and the prediction agreement inside each."""

    markers: Tuple[int, ...]
    eps: float
    min_pts: int
    labels: np.ndarray
    agreement: np.ndarray
    positive_ratio: Mapping[int, float]

    @property
    def n_clusters(self) -> int:
        return len({int(c) for c in self.labels.tolist() if c != NOISE})


def fit_homogeneity(
    sample: Sample,
    predictions: np.ndarray,
    cell_type: CellTypeSpec,
    transform: Optional[MarkerTransform] = None,
    eps: float = 0.3,
    min_pts: int = 20,
) -> HomogeneityModel:
    """Cluster the sample on its gated markers and score each event's agreement.

    A clustered event scores the share of its cluster predicted like itself; a
    noise event scores the same share among all noise events.
    """
    transform = transform or MarkerTransform()
    predictions = np.asarray(predictions, dtype=bool)
    if predictions.shape != (len(sample),):
        raise InputError(f"{predictions.shape[0]} predictions for {len(sample)} events")
    markers = cell_type.gated_markers
    if len(sample) == 0:
        empty = np.zeros(0)
        return HomogeneityModel(markers, eps, min_pts, empty.astype(int), empty, {})

    points = transform.forward(sample.markers[:, list(markers)])
    labels = DBSCAN(eps=eps, min_samples=min_pts, metric="euclidean").fit(points).labels_
    groups, inverse = np.unique(labels, return_inverse=True)
    sizes = np.bincount(inverse)
    positives = np.bincount(inverse, weights=predictions.astype(np.float64))
    ratio = positives / sizes
    agreement = np.where(predictions, ratio[inverse], 1.0 - ratio[inverse])
    logger.debug(
        "DBSCAN on %s events of %s: %s clusters, %s noise",
        len(sample),
        sample.sample_id,
        int(np.sum(groups != NOISE)),
        int(np.sum(labels == NOISE)),
    )
    return HomogeneityModel(
        markers=markers,
        eps=eps,
        min_pts=min_pts,
        labels=labels,
        agreement=agreement,
        positive_ratio={int(g): float(r) for g, r in zip(groups, ratio)},
    )


def eval_homogeneity(model: HomogeneityModel, event_index: int) -> float:
    return float(model.agreement[event_index])


# ---------------------------------------------------------------------------
# Assembled vectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QualityFactorVector:
    names: Tuple[str, ...]
    values: Tuple[float, ...]

    def __getitem__(self, name: str) -> float:
        return self.values[self.names.index(name)]

    def to_dict(self) -> Dict[str, float]:
        return dict(zip(self.names, self.values))


@dataclass(frozen=True, eq=False)
class QualityFactors:
    """Factor matrix of one sample: one row per event, one column per named factor."""

    names: Tuple[str, ...]
    values: np.ndarray

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def vector(self, index: int) -> QualityFactorVector:
        return QualityFactorVector(self.names, tuple(float(v) for v in self.values[index]))

    def __iter__(self) -> Iterator[QualityFactorVector]:
        for index in range(len(self)):
            yield self.vector(index)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def rows(self, mask: np.ndarray) -> "QualityFactors":
        return QualityFactors(self.names, self.values[np.asarray(mask)])


def assemble_factors(
    variant: VariantConfig,
    sample: Sample,
    predictions: np.ndarray,
    cell_type: CellTypeSpec,
) -> QualityFactors:
    """Build every event's factor vector, fitting context models on ``sample`` itself."""
    predictions = np.asarray(predictions, dtype=bool)
    if predictions.shape != (len(sample),):
        raise InputError(
            f"Sample {sample.sample_id} has {len(sample)} events but {predictions.shape[0]} predictions"
        )
    if any(index >= sample.n_markers for index in cell_type.gated_markers):
        raise InputError(f"Sample {sample.sample_id} lacks markers gated for {cell_type.name}")
    names = variant.factor_names(cell_type)
    if len(sample) == 0:
        return QualityFactors(names, np.zeros((0, len(names))))

    families = variant.families(cell_type)
    columns: List[np.ndarray] = []
    if "marker" in families:
        columns.append(sample.markers[:, list(cell_type.gated_markers)])
    if "percentile" in families:
        columns.append(percentile_matrix(sample, cell_type))
    if "density" in families:
        for pair in cell_type.distinct_pairs:
            model = fit_density(sample, pair, variant.transform, variant.bandwidth_rule)
            columns.append(model.evaluate(sample.markers)[:, None])
    if "homogeneity" in families:
        model = fit_homogeneity(
            sample, predictions, cell_type, variant.transform, variant.dbscan_eps, variant.dbscan_min_pts
        )
        columns.append(model.agreement[:, None])
    if variant.include_outcome:
        columns.append(predictions.astype(np.float64)[:, None])

    values = np.hstack(columns) if columns else np.zeros((len(sample), 0))
    if not np.isfinite(values).all():
        raise InputError(f"Non-finite quality factors in sample {sample.sample_id}")
    return QualityFactors(names, values)
