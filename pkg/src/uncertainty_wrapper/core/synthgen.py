"""Seeded generator of flow-cytometry-like samples with ground truth, and quadrant gating.

Events are drawn from a Gaussian mixture in transformed (log-like) marker space and
mapped back to raw intensities with the inverse marker transform. A per-sample mean
shift models donor variability; with ``sample_shift_sd == 0`` events are i.i.d.
across the whole dataset.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from ..errors import ConfigError
from .data_model import SPLITS, CellTypeSpec, Dataset, Panel, Sample
from .transforms import MarkerTransform

logger = logging.getLogger(__name__)

QUADRANTS = ("UL", "UR", "LL", "LR")


@dataclass(frozen=True)
class MixtureComponent:
    """One cell population cluster in transformed marker space."""

    labels: Mapping[str, bool]
    weight: float
    mean: Tuple[float, ...]
    sd: Tuple[float, ...]
    name: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "labels": {key: bool(value) for key, value in self.labels.items()},
            "weight": self.weight,
            "mean": list(self.mean),
            "sd": list(self.sd),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MixtureComponent":
        try:
            return cls(
                name=str(data.get("name", "")),
                labels={str(k): bool(v) for k, v in data["labels"].items()},
                weight=float(data["weight"]),
                mean=tuple(float(v) for v in data["mean"]),
                sd=tuple(float(v) for v in data["sd"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"Invalid mixture component {data!r}: {exc}") from exc


@dataclass(frozen=True)
class GeneratorConfig:
    panel: Panel
    components: Tuple[MixtureComponent, ...]
    events_per_sample: int = 5000
    sample_shift_sd: float = 0.0
    transform: MarkerTransform = field(default_factory=MarkerTransform)

    def __post_init__(self) -> None:
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise ConfigError("Generator needs at least one mixture component")
        if self.events_per_sample < 1:
            raise ConfigError("events_per_sample must be at least 1")
        if not np.isfinite(self.sample_shift_sd) or self.sample_shift_sd < 0:
            raise ConfigError("sample_shift_sd must be non-negative")
        weights = np.array([c.weight for c in self.components], dtype=np.float64)
        if (weights <= 0).any() or abs(weights.sum() - 1.0) > 1e-9:
            raise ConfigError(f"Mixture weights must be positive and sum to 1, got {weights.tolist()}")
        known = set(self.panel.cell_type_names)
        parents = {spec.name: spec.parent for spec in self.panel.cell_types}
        for component in self.components:
            if len(component.mean) != self.panel.n_markers or len(component.sd) != self.panel.n_markers:
                raise ConfigError(f"Component {component.name!r} does not match the panel's marker count")
            if any(not np.isfinite(s) or s <= 0 for s in component.sd):
                raise ConfigError(f"Component {component.name!r} has non-positive standard deviations")
            unknown = set(component.labels) - known
            if unknown:
                raise ConfigError(f"Component {component.name!r} labels unknown cell types {sorted(unknown)}")
            for name, value in component.labels.items():
                parent = parents.get(name)
                if value and parent is not None and not component.labels.get(parent, False):
                    raise ConfigError(
                        f"Component {component.name!r} is {name} but not its parent {parent}"
                    )

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components], dtype=np.float64)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "components": [component.to_dict() for component in self.components],
            "events_per_sample": self.events_per_sample,
            "sample_shift_sd": self.sample_shift_sd,
            "transform": self.transform.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], panel: Panel) -> "GeneratorConfig":
        try:
            return cls(
                panel=panel,
                components=tuple(MixtureComponent.from_dict(item) for item in data["components"]),
                events_per_sample=int(data.get("events_per_sample", 5000)),
                sample_shift_sd=float(data.get("sample_shift_sd", 0.0)),
                transform=MarkerTransform.from_dict(data.get("transform")),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"Invalid generator config: {exc}") from exc


def sample_id_for(sample_index: int) -> str:
    return f"S{sample_index:04d}"


def generate_sample(config: GeneratorConfig, seed: int, sample_index: int) -> Sample:
    """Draw one sample; the random stream is keyed by ``(seed, sample_index)``."""
    rng = np.random.default_rng([int(seed), int(sample_index)])
    n = config.events_per_sample
    means = np.array([c.mean for c in config.components], dtype=np.float64)
    sds = np.array([c.sd for c in config.components], dtype=np.float64)

    shift = rng.normal(0.0, config.sample_shift_sd, size=config.panel.n_markers)
    assignment = rng.choice(len(config.components), size=n, p=config.weights)
    noise = rng.standard_normal((n, config.panel.n_markers))
    transformed = means[assignment] + shift + noise * sds[assignment]

    labels = {}
    for name in config.panel.cell_type_names:
        per_component = np.array([bool(c.labels.get(name, False)) for c in config.components])
        labels[name] = per_component[assignment]

    sample_id = sample_id_for(sample_index)
    return Sample(
        sample_id=sample_id,
        event_ids=np.array([f"E{i:06d}" for i in range(n)], dtype=object),
        markers=config.transform.inverse(transformed),
        labels=labels,
    )


def generate_dataset(
    config: GeneratorConfig,
    counts: Sequence[int],
    seed: int,
    *,
    max_workers: int = 1,
) -> Dataset:
    """Generate ``n_train + n_calib + n_test`` samples with splits assigned by construction."""
    counts = [int(c) for c in counts]
    if len(counts) != len(SPLITS) or any(c < 1 for c in counts):
        raise ConfigError(f"Each split needs at least one sample, got {counts}")
    split_names = [name for name, count in zip(SPLITS, counts) for _ in range(count)]
    indices = list(range(len(split_names)))

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            samples = list(executor.map(lambda i: generate_sample(config, seed, i), indices))
    else:
        samples = [generate_sample(config, seed, i) for i in indices]

    split = {sample.sample_id: name for sample, name in zip(samples, split_names)}
    logger.info(
        "Generated %s samples x %s events (seed=%s, shift_sd=%s)",
        len(samples),
        config.events_per_sample,
        seed,
        config.sample_shift_sd,
    )
    return Dataset(panel=config.panel, samples=tuple(samples), split=split)


# ---------------------------------------------------------------------------
# Quadrant gating
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadrantGate:
    cell_type: str
    pair: Tuple[int, int]
    threshold_x: float
    threshold_y: float
    quadrant: str
    parent: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "pair", (int(self.pair[0]), int(self.pair[1])))
        if self.quadrant not in QUADRANTS:
            raise ConfigError(f"Quadrant must be one of {QUADRANTS}, got {self.quadrant!r}")
        if not (np.isfinite(self.threshold_x) and np.isfinite(self.threshold_y)):
            raise ConfigError(f"Gate thresholds for {self.cell_type} must be finite")

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Quadrant membership; values on a threshold count as right/upper."""
        right = x >= self.threshold_x
        upper = y >= self.threshold_y
        horizontal = right if self.quadrant.endswith("R") else ~right
        vertical = upper if self.quadrant.startswith("U") else ~upper
        return horizontal & vertical

    def to_dict(self) -> Dict[str, Any]:
        return {
            "cell_type": self.cell_type,
            "pair": list(self.pair),
            "threshold_x": self.threshold_x,
            "threshold_y": self.threshold_y,
            "quadrant": self.quadrant,
            "parent": self.parent,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "QuadrantGate":
        try:
            return cls(
                cell_type=str(data["cell_type"]),
                pair=tuple(data["pair"]),
                threshold_x=float(data["threshold_x"]),
                threshold_y=float(data["threshold_y"]),
                quadrant=str(data["quadrant"]),
                parent=data.get("parent"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"Invalid gate {data!r}: {exc}") from exc


@dataclass(frozen=True)
class QuadrantGates:
    gates: Tuple[QuadrantGate, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "gates", tuple(self.gates))

    def for_cell_type(self, name: str) -> Optional[QuadrantGate]:
        for gate in self.gates:
            if gate.cell_type == name:
                return gate
        return None

    def ordered(self) -> List[QuadrantGate]:
        graph = nx.DiGraph()
        graph.add_nodes_from(gate.cell_type for gate in self.gates)
        for gate in self.gates:
            if gate.parent is not None:
                graph.add_edge(gate.parent, gate.cell_type)
        order = {gate.cell_type: index for index, gate in enumerate(self.gates)}
        names = nx.lexicographical_topological_sort(graph, key=lambda n: order.get(n, len(order)))
        return [gate for name in names for gate in self.gates if gate.cell_type == name]

    def to_dict(self) -> List[Dict[str, Any]]:
        return [gate.to_dict() for gate in self.gates]

    @classmethod
    def from_dict(cls, data: Sequence[Mapping[str, Any]]) -> "QuadrantGates":
        return cls(gates=tuple(QuadrantGate.from_dict(item) for item in data))


def quadrant_gate_labels(
    sample: Sample, gates: QuadrantGates, transform: MarkerTransform
) -> Dict[str, np.ndarray]:
    """Emulate manual gating: quadrant membership AND positive parent label."""
    labels: Dict[str, np.ndarray] = {}
    for gate in gates.ordered():
        i, j = gate.pair
        if max(i, j) >= sample.n_markers or min(i, j) < 0:
            raise ConfigError(f"Gate for {gate.cell_type} references marker outside the sample")
        x = transform.forward(sample.markers[:, i])
        y = transform.forward(sample.markers[:, j])
        positive = gate.contains(x, y)
        if gate.parent is not None:
            parent = labels.get(gate.parent)
            if parent is None:
                raise ConfigError(f"Gate for {gate.cell_type} needs a gate for parent {gate.parent}")
            positive = positive & parent
        labels[gate.cell_type] = positive
    return labels


def relabel_with_gates(sample: Sample, gates: QuadrantGates, transform: MarkerTransform) -> Sample:
    """Replace a sample's ground truth by quadrant-gate labels."""
    return replace(sample, labels=quadrant_gate_labels(sample, gates, transform))


# ---------------------------------------------------------------------------
# Built-in demo configuration
# ---------------------------------------------------------------------------


def demo_panel() -> Panel:
    """Five-marker lymphocyte panel: CD45/SSC gates lymphocytes, CD3/CD19/CD16-56 the subtypes."""
    return Panel(
        marker_names=("CD45", "SSC", "CD3", "CD19", "CD16_56"),
        cell_types=(
            CellTypeSpec("L", None, ((0, 1),)),
            CellTypeSpec("BP", "L", ((2, 3),)),
            CellTypeSpec("TP", "L", ((2, 3),)),
            CellTypeSpec("NKP", "L", ((2, 4),)),
        ),
    )


def demo_generator_config(
    panel: Optional[Panel] = None,
    *,
    events_per_sample: int = 5000,
    sample_shift_sd: float = 0.0,
) -> GeneratorConfig:
    """Non-lymphocytes plus four lymphocyte clusters.

    The NKP and "other lymphocyte" clusters overlap on CD16/56, which makes the NKP
    classifier the weakest of the four.
    """
    panel = panel or demo_panel()
    negative = {"L": False, "BP": False, "TP": False, "NKP": False}
    components = (
        MixtureComponent(
            name="non-lymphocyte",
            labels=negative,
            weight=0.55,
            mean=(2.6, 3.6, 0.8, 0.7, 1.8),
            sd=(0.25, 0.25, 0.35, 0.3, 0.5),
        ),
        MixtureComponent(
            name="B cells",
            labels={**negative, "L": True, "BP": True},
            weight=0.05,
            mean=(3.3, 2.3, 0.8, 3.0, 0.7),
            sd=(0.2, 0.2, 0.3, 0.3, 0.3),
        ),
        MixtureComponent(
            name="T cells",
            labels={**negative, "L": True, "TP": True},
            weight=0.28,
            mean=(3.3, 2.3, 3.1, 0.8, 0.9),
            sd=(0.2, 0.2, 0.3, 0.3, 0.35),
        ),
        MixtureComponent(
            name="NK cells",
            labels={**negative, "L": True, "NKP": True},
            weight=0.05,
            mean=(3.2, 2.4, 0.9, 0.7, 2.6),
            sd=(0.2, 0.2, 0.3, 0.3, 0.35),
        ),
        MixtureComponent(
            name="other lymphocytes",
            labels={**negative, "L": True},
            weight=0.07,
            mean=(3.2, 2.4, 0.9, 0.8, 1.9),
            sd=(0.2, 0.2, 0.3, 0.3, 0.4),
        ),
    )
    return GeneratorConfig(
        panel=panel,
        components=components,
        events_per_sample=events_per_sample,
        sample_shift_sd=sample_shift_sd,
        transform=MarkerTransform(),
    )


def demo_gates() -> QuadrantGates:
    return QuadrantGates(
        gates=(
            QuadrantGate("L", (0, 1), 3.0, 3.0, "LR"),
            QuadrantGate("BP", (2, 3), 2.0, 2.0, "UL", parent="L"),
            QuadrantGate("TP", (2, 3), 2.0, 2.0, "LR", parent="L"),
            QuadrantGate("NKP", (2, 4), 2.0, 2.25, "UL", parent="L"),
        )
    )
