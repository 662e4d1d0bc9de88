"""Core domain types, events CSV ingestion, panel configuration and sample-wise splits.

Events are stored column-wise per sample (one marker matrix, one label vector per
cell type) so that factor fitting and prediction stay vectorised; ``Sample.event``
and ``Sample.events`` give the per-event view.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import pandas as pd

from ..errors import ConfigError, DataError, InputError, ParseError, SchemaError
from ..utils import atomic_write_text, read_json

logger = logging.getLogger(__name__)

SPLITS: Tuple[str, ...] = ("train", "calibration", "test")
MARKER_PREFIX = "m_"
LABEL_PREFIX = "label_"
PRED_PREFIX = "pred_"
SPLIT_COLUMN = "split"


# ---------------------------------------------------------------------------
# Panel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CellTypeSpec:
    """A gated cell type: its parent population and the marker pairs used for gating."""

    name: str
    parent: Optional[str] = None
    gating_pairs: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        pairs = tuple((int(i), int(j)) for i, j in self.gating_pairs)
        object.__setattr__(self, "gating_pairs", pairs)

    @property
    def gated_markers(self) -> Tuple[int, ...]:
        """Distinct marker indices appearing in the gating pairs, in panel order."""
        return tuple(sorted({index for pair in self.gating_pairs for index in pair}))

    @property
    def distinct_pairs(self) -> Tuple[Tuple[int, int], ...]:
        seen: List[Tuple[int, int]] = []
        for pair in self.gating_pairs:
            if pair not in seen:
                seen.append(pair)
        return tuple(seen)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "parent": self.parent,
            "gating_pairs": [list(pair) for pair in self.gating_pairs],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CellTypeSpec":
        try:
            return cls(
                name=str(data["name"]),
                parent=data.get("parent"),
                gating_pairs=tuple(tuple(pair) for pair in data.get("gating_pairs", [])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"Invalid cell type definition {data!r}: {exc}") from exc


@dataclass(frozen=True)
class Panel:
    """Configured marker set and gated cell types.

    Construction does not validate; ``validate_panel`` reports problems and
    ``Panel.from_dict`` rejects panels with any violation.
    """

    marker_names: Tuple[str, ...]
    cell_types: Tuple[CellTypeSpec, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "marker_names", tuple(self.marker_names))
        object.__setattr__(self, "cell_types", tuple(self.cell_types))

    @property
    def n_markers(self) -> int:
        return len(self.marker_names)

    @property
    def cell_type_names(self) -> Tuple[str, ...]:
        return tuple(spec.name for spec in self.cell_types)

    def cell_type(self, name: str) -> CellTypeSpec:
        for spec in self.cell_types:
            if spec.name == name:
                return spec
        raise ConfigError(f"Unknown cell type: {name}")

    def hierarchy_graph(self) -> nx.DiGraph:
        """Directed parent -> child graph over the panel's cell types."""
        graph = nx.DiGraph()
        graph.add_nodes_from(self.cell_type_names)
        for spec in self.cell_types:
            if spec.parent is not None:
                graph.add_edge(spec.parent, spec.name)
        return graph

    def ordered_cell_types(self) -> List[CellTypeSpec]:
        """Cell types with every parent before its children (panel order otherwise)."""
        order = {name: index for index, name in enumerate(self.cell_type_names)}
        graph = self.hierarchy_graph()
        names = nx.lexicographical_topological_sort(graph, key=lambda n: order.get(n, len(order)))
        return [self.cell_type(name) for name in names if name in order]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "markers": list(self.marker_names),
            "cell_types": [spec.to_dict() for spec in self.cell_types],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Panel":
        try:
            markers = [str(name) for name in data["markers"]]
            cell_types = [CellTypeSpec.from_dict(item) for item in data.get("cell_types", [])]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"Invalid panel definition: {exc}") from exc
        panel = cls(marker_names=tuple(markers), cell_types=tuple(cell_types))
        report = validate_panel(panel)
        if not report.ok:
            raise ConfigError(f"Invalid panel: {report.violations[0].message}")
        return panel


def load_panel(path: Path | str) -> Panel:
    return Panel.from_dict(read_json(path))


# ---------------------------------------------------------------------------
# Events, samples and datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Event:
    """One measured cell."""

    sample_id: str
    event_id: str
    markers: np.ndarray
    labels: Optional[Mapping[str, bool]] = None
    predictions: Optional[Mapping[str, bool]] = None


def _readonly(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class Sample:
    """All events of one donor sample, stored column-wise in event order."""

    sample_id: str
    event_ids: np.ndarray
    markers: np.ndarray
    labels: Mapping[str, np.ndarray] = field(default_factory=dict)
    predictions: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        event_ids = np.array([str(eid) for eid in np.asarray(self.event_ids, dtype=object)], dtype=object)
        markers = np.array(self.markers, dtype=np.float64, copy=True)
        if markers.ndim == 1 and markers.size == 0:
            markers = markers.reshape(0, 0)
        if markers.ndim != 2 or markers.shape[0] != len(event_ids):
            raise InputError(
                f"Sample {self.sample_id}: markers shape {markers.shape} does not match "
                f"{len(event_ids)} events"
            )
        if len(set(event_ids.tolist())) != len(event_ids):
            raise DataError(f"Sample {self.sample_id}: event ids are not unique")
        object.__setattr__(self, "event_ids", _readonly(event_ids))
        object.__setattr__(self, "markers", _readonly(markers))
        object.__setattr__(self, "labels", self._bool_columns(self.labels, "labels"))
        object.__setattr__(self, "predictions", self._bool_columns(self.predictions, "predictions"))

    def _bool_columns(self, columns: Mapping[str, Any], what: str) -> Dict[str, np.ndarray]:
        result: Dict[str, np.ndarray] = {}
        for name, values in dict(columns).items():
            array = np.array(values, dtype=bool, copy=True)
            if array.shape != (len(self),):
                raise InputError(f"Sample {self.sample_id}: {what} for {name} have wrong length")
            result[name] = _readonly(array)
        return result

    def __len__(self) -> int:
        return int(self.event_ids.shape[0])

    @property
    def n_markers(self) -> int:
        return int(self.markers.shape[1])

    def has_labels(self, cell_type: str) -> bool:
        return cell_type in self.labels

    def label(self, cell_type: str) -> np.ndarray:
        if cell_type not in self.labels:
            raise SchemaError(f"Sample {self.sample_id} has no ground truth for {cell_type}")
        return self.labels[cell_type]

    def event(self, index: int) -> Event:
        return Event(
            sample_id=self.sample_id,
            event_id=str(self.event_ids[index]),
            markers=self.markers[index],
            labels={name: bool(values[index]) for name, values in self.labels.items()} or None,
            predictions={name: bool(values[index]) for name, values in self.predictions.items()} or None,
        )

    @property
    def events(self) -> List[Event]:
        return [self.event(index) for index in range(len(self))]

    def iter_events(self) -> Iterator[Event]:
        for index in range(len(self)):
            yield self.event(index)

    def subset(self, mask: np.ndarray) -> "Sample":
        """Events selected by a boolean mask (or index array), in event order."""
        selector = np.asarray(mask)
        return Sample(
            sample_id=self.sample_id,
            event_ids=self.event_ids[selector],
            markers=self.markers[selector],
            labels={name: values[selector] for name, values in self.labels.items()},
            predictions={name: values[selector] for name, values in self.predictions.items()},
        )

    def with_predictions(self, cell_type: str, predictions: np.ndarray) -> "Sample":
        merged = dict(self.predictions)
        merged[cell_type] = predictions
        return replace(self, predictions=merged)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Samples of one panel, optionally partitioned by sample into splits."""

    panel: Panel
    samples: Tuple[Sample, ...] = ()
    split: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        samples = tuple(self.samples)
        ids = [sample.sample_id for sample in samples]
        if len(set(ids)) != len(ids):
            raise DataError("Sample ids must be unique within a dataset")
        split = dict(self.split)
        for sample_id, name in split.items():
            if sample_id not in ids:
                raise DataError(f"Split assigns unknown sample {sample_id}")
            if name not in SPLITS:
                raise DataError(f"Unknown split {name!r} for sample {sample_id}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "split", split)

    @property
    def sample_ids(self) -> List[str]:
        return [sample.sample_id for sample in self.samples]

    @property
    def n_events(self) -> int:
        return sum(len(sample) for sample in self.samples)

    def sample(self, sample_id: str) -> Sample:
        for sample in self.samples:
            if sample.sample_id == sample_id:
                return sample
        raise InputError(f"Unknown sample: {sample_id}")

    def split_samples(self, name: str) -> List[Sample]:
        if name not in SPLITS:
            raise ConfigError(f"Unknown split: {name}")
        return [sample for sample in self.samples if self.split.get(sample.sample_id) == name]

    def select_split(self, name: str) -> "Dataset":
        samples = tuple(self.split_samples(name))
        return Dataset(
            panel=self.panel,
            samples=samples,
            split={sample.sample_id: name for sample in samples},
        )

    def split_counts(self) -> Dict[str, Dict[str, int]]:
        counts: Dict[str, Dict[str, int]] = {}
        for name in SPLITS:
            members = self.split_samples(name)
            counts[name] = {"samples": len(members), "events": sum(len(s) for s in members)}
        return counts


# ---------------------------------------------------------------------------
# CSV ingestion and output
# ---------------------------------------------------------------------------

_PANDAS_LINE = re.compile(r"line (\d+)")


def _check_header(columns: Sequence[str], panel: Panel) -> Tuple[List[str], List[str], bool]:
    columns = list(columns)
    if columns[:2] != ["sample_id", "event_id"]:
        raise SchemaError("Events CSV must start with sample_id,event_id")
    expected = [f"{MARKER_PREFIX}{name}" for name in panel.marker_names]
    if columns[2 : 2 + len(expected)] != expected:
        raise SchemaError(
            f"Marker columns {columns[2:2 + len(expected)]} do not match panel {expected}"
        )
    known = set(panel.cell_type_names)
    label_types: List[str] = []
    pred_types: List[str] = []
    has_split = False
    for column in columns[2 + len(expected) :]:
        if column == SPLIT_COLUMN:
            has_split = True
        elif column.startswith(LABEL_PREFIX):
            name = column[len(LABEL_PREFIX) :]
            if name not in known:
                raise SchemaError(f"Unknown cell-type label column: {column}")
            label_types.append(name)
        elif column.startswith(PRED_PREFIX):
            name = column[len(PRED_PREFIX) :]
            if name not in known:
                raise SchemaError(f"Unknown cell-type prediction column: {column}")
            pred_types.append(name)
        else:
            raise SchemaError(f"Unexpected column: {column}")
    return label_types, pred_types, has_split


def _first_bad(mask: np.ndarray) -> int:
    return int(np.flatnonzero(mask)[0])


def parse_float_column(frame: pd.DataFrame, column: str) -> np.ndarray:
    """Parse a text column into finite float64 values (bit-exact for decimal text)."""
    raw = frame[column]
    try:
        values = raw.astype(np.float64).to_numpy()
    except ValueError:
        coerced = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=np.float64)
        bad = ~np.isfinite(coerced)
        if not bad.any():
            raise ParseError(f"non-numeric value in column {column}") from None
        index = _first_bad(bad)
        raise ParseError(f"non-numeric value {raw.iloc[index]!r} in column {column}", line=index + 2) from None
    bad = ~np.isfinite(values)
    if bad.any():
        index = _first_bad(bad)
        raise ParseError(f"non-finite value {raw.iloc[index]!r} in column {column}", line=index + 2)
    return values


def parse_flag_column(frame: pd.DataFrame, column: str) -> np.ndarray:
    """Parse a 0/1 text column into booleans."""
    raw = frame[column].to_numpy(dtype=object)
    ones = raw == "1"
    bad = ~(ones | (raw == "0"))
    if bad.any():
        index = _first_bad(bad)
        raise ParseError(f"expected 0 or 1 in column {column}, got {raw[index]!r}", line=index + 2)
    return ones


def read_text_table(path: Path | str) -> pd.DataFrame:
    """Read a CSV as text columns, turning malformed rows into ``ParseError``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as exc:
        raise SchemaError(f"{path}: missing header") from exc
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8 text (byte {exc.start})") from exc
    except pd.errors.ParserError as exc:
        match = _PANDAS_LINE.search(str(exc))
        raise ParseError(
            f"{path}: wrong column count",
            line=int(match.group(1)) if match else None,
        ) from exc
    short = frame.isna().to_numpy().any(axis=1) if len(frame) else np.zeros(0, dtype=bool)
    if short.any():
        index = _first_bad(short)
        raise ParseError(f"{path}: wrong column count", line=index + 2)
    return frame


def load_events_csv(path: Path | str, panel: Panel) -> Dataset:
    """Load an events CSV into a dataset grouped by sample id in file order."""
    frame = read_text_table(path)
    label_types, pred_types, has_split = _check_header(frame.columns, panel)

    sample_ids = frame["sample_id"].to_numpy(dtype=object)
    if len(frame) and (sample_ids == "").any():
        raise ParseError("empty sample_id", line=_first_bad(sample_ids == "") + 2)
    markers = np.column_stack(
        [parse_float_column(frame, f"{MARKER_PREFIX}{name}") for name in panel.marker_names]
    ) if panel.n_markers else np.zeros((len(frame), 0))
    labels = {name: parse_flag_column(frame, f"{LABEL_PREFIX}{name}") for name in label_types}
    preds = {name: parse_flag_column(frame, f"{PRED_PREFIX}{name}") for name in pred_types}
    split_values = frame[SPLIT_COLUMN].to_numpy(dtype=object) if has_split else None
    if split_values is not None and len(frame):
        bad = ~np.isin(split_values, SPLITS)
        if bad.any():
            index = _first_bad(bad)
            raise ParseError(f"unknown split {split_values[index]!r}", line=index + 2)

    samples: List[Sample] = []
    split: Dict[str, str] = {}
    if len(frame):
        for sample_id, positions in frame.groupby("sample_id", sort=False).indices.items():
            positions = np.asarray(positions)
            sample = Sample(
                sample_id=str(sample_id),
                event_ids=frame["event_id"].to_numpy(dtype=object)[positions],
                markers=markers[positions],
                labels={name: values[positions] for name, values in labels.items()},
                predictions={name: values[positions] for name, values in preds.items()},
            )
            samples.append(sample)
            if split_values is not None:
                assigned = set(split_values[positions].tolist())
                if len(assigned) != 1:
                    raise DataError(f"Sample {sample_id} spans several splits: {sorted(assigned)}")
                split[str(sample_id)] = assigned.pop()

    logger.info("Loaded %s events in %s samples from %s", len(frame), len(samples), path)
    return Dataset(panel=panel, samples=tuple(samples), split=split)


def _format_float(value: float) -> str:
    return repr(float(value))


def events_to_frame(dataset: Dataset, *, include_split: bool = True) -> pd.DataFrame:
    """Text frame in the events CSV layout; floats written as shortest round-trip decimals."""
    panel = dataset.panel
    samples = dataset.samples
    label_types = [
        name for name in panel.cell_type_names if samples and all(s.has_labels(name) for s in samples)
    ]
    pred_types = [
        name for name in panel.cell_type_names if samples and all(name in s.predictions for s in samples)
    ]
    columns: Dict[str, List[str]] = {"sample_id": [], "event_id": []}
    for name in panel.marker_names:
        columns[f"{MARKER_PREFIX}{name}"] = []
    for name in label_types:
        columns[f"{LABEL_PREFIX}{name}"] = []
    for name in pred_types:
        columns[f"{PRED_PREFIX}{name}"] = []
    write_split = include_split and bool(dataset.split)
    if write_split:
        columns[SPLIT_COLUMN] = []

    for sample in samples:
        n = len(sample)
        columns["sample_id"].extend([sample.sample_id] * n)
        columns["event_id"].extend(sample.event_ids.tolist())
        for index, name in enumerate(panel.marker_names):
            columns[f"{MARKER_PREFIX}{name}"].extend(
                _format_float(v) for v in sample.markers[:, index].tolist()
            )
        for name in label_types:
            columns[f"{LABEL_PREFIX}{name}"].extend("1" if v else "0" for v in sample.labels[name].tolist())
        for name in pred_types:
            columns[f"{PRED_PREFIX}{name}"].extend(
                "1" if v else "0" for v in sample.predictions[name].tolist()
            )
        if write_split:
            columns[SPLIT_COLUMN].extend([dataset.split.get(sample.sample_id, "")] * n)
    return pd.DataFrame(columns, dtype=object)


def write_events_csv(path: Path | str, dataset: Dataset, *, include_split: bool = True) -> Path:
    frame = events_to_frame(dataset, include_split=include_split)
    return atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n"))


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------


def largest_remainder_counts(total: int, fractions: Sequence[float]) -> List[int]:
    """Integer counts summing to ``total`` that follow ``fractions`` (Hamilton rounding)."""
    quotas = [fraction * total for fraction in fractions]
    counts = [int(np.floor(quota + 1e-9)) for quota in quotas]
    remainders = [quota - count for quota, count in zip(quotas, counts)]
    missing = total - sum(counts)
    for index in sorted(range(len(fractions)), key=lambda i: (-remainders[i], i))[: max(missing, 0)]:
        counts[index] += 1
    return counts


def split_dataset(dataset: Dataset, fractions: Sequence[float], seed: int) -> Dataset:
    """Assign whole samples to train/calibration/test deterministically for ``seed``."""
    fractions = [float(f) for f in fractions]
    if len(fractions) != len(SPLITS):
        raise ConfigError("Split fractions must have three entries (train, calibration, test)")
    if any(f < 0 or f > 1 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"Split fractions must lie in [0, 1] and sum to 1, got {fractions}")
    if len(dataset.samples) < 3:
        raise InputError("Splitting requires at least 3 samples")

    counts = largest_remainder_counts(len(dataset.samples), fractions)
    order = np.random.default_rng(seed).permutation(len(dataset.samples))
    split: Dict[str, str] = {}
    cursor = 0
    for name, count in zip(SPLITS, counts):
        for position in order[cursor : cursor + count]:
            split[dataset.samples[int(position)].sample_id] = name
        cursor += count
    logger.info("Split %s samples into %s", len(dataset.samples), dict(zip(SPLITS, counts)))
    return Dataset(panel=dataset.panel, samples=dataset.samples, split=split)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    sample_id: Optional[str] = None
    event_id: Optional[str] = None


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self) -> int:
        return len(self.violations)

    def kinds(self) -> List[str]:
        return [violation.kind for violation in self.violations]

    def add(self, kind: str, message: str, **where: Any) -> None:
        self.violations.append(Violation(kind=kind, message=message, **where))


def validate_panel(panel: Panel, dataset: Optional[Dataset] = None) -> ValidationReport:
    """List every panel and event invariant the panel/dataset pair violates."""
    report = ValidationReport()

    if len(set(panel.marker_names)) != len(panel.marker_names):
        report.add("duplicate_marker", f"Marker names are not unique: {list(panel.marker_names)}")
    if len(set(panel.cell_type_names)) != len(panel.cell_type_names):
        report.add("duplicate_cell_type", f"Cell type names are not unique: {list(panel.cell_type_names)}")

    known = set(panel.cell_type_names)
    for spec in panel.cell_types:
        if spec.parent is not None and spec.parent not in known:
            report.add("unknown_parent", f"Cell type {spec.name} names unknown parent {spec.parent}")
        for pair in spec.gating_pairs:
            if any(index < 0 or index >= panel.n_markers for index in pair):
                report.add(
                    "gating_pair_out_of_range",
                    f"Gating pair {pair} of {spec.name} is outside 0..{panel.n_markers - 1}",
                )
    graph = panel.hierarchy_graph()
    if not nx.is_directed_acyclic_graph(graph):
        cycle = nx.find_cycle(graph)
        report.add("hierarchy_cycle", f"Cell type hierarchy has a cycle: {cycle}")

    if dataset is None:
        return report

    parents = {spec.name: spec.parent for spec in panel.cell_types if spec.parent in known}
    for sample in dataset.samples:
        if sample.n_markers != panel.n_markers:
            report.add(
                "marker_count_mismatch",
                f"Sample has {sample.n_markers} markers, panel has {panel.n_markers}",
                sample_id=sample.sample_id,
            )
        for name in sample.labels:
            if name not in known:
                report.add("unknown_label", f"Labels for unknown cell type {name}", sample_id=sample.sample_id)
        for child, parent in parents.items():
            if not (sample.has_labels(child) and sample.has_labels(parent)):
                continue
            broken = sample.labels[child] & ~sample.labels[parent]
            for index in np.flatnonzero(broken):
                report.add(
                    "hierarchy_violation",
                    f"Event labeled {child} but not {parent}",
                    sample_id=sample.sample_id,
                    event_id=str(sample.event_ids[index]),
                )
    if report.violations:
        logger.warning("Panel validation found %s violations", len(report.violations))
    return report
