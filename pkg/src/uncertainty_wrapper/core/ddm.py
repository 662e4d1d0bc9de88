"""Opaque per-cell-type binary classifiers (data-driven models, DDMs).

Wrapper code only ever calls :func:`predict` / :func:`predict_sample`; the
classes below are free to store whatever parameters they need.
"""

from __future__ import annotations

import logging
import warnings
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.exceptions import ConvergenceWarning
from sklearn.neural_network import MLPClassifier
from sklearn.preprocessing import StandardScaler

from ..errors import ConfigError, EventLookupError, InputError, SchemaError, TrainingError
from ..utils import atomic_write_text, read_json, write_json
from .data_model import Event, Sample, parse_flag_column, read_text_table
from .transforms import MarkerTransform

logger = logging.getLogger(__name__)

BUILTIN_MLP = "builtin_mlp"
EXTERNAL_PREDICTIONS = "external_predictions"
PREDICTION_COLUMNS = ["sample_id", "event_id", "pred"]


@dataclass
class DdmHyperParams:
    """Training settings of the built-in perceptron."""

    hidden_units: int = 16
    epochs: int = 30
    learning_rate: float = 0.05
    batch_size: int = 64
    seed: int = 0
    l2: float = 1e-4

    def __post_init__(self) -> None:
        if self.hidden_units < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("hidden_units, epochs and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Optional[Mapping[str, Any]], seed: Optional[int] = None) -> "DdmHyperParams":
        data = dict(data or {})
        if seed is not None:
            data["seed"] = seed
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown DDM settings: {sorted(unknown)}")
        return cls(**data)


class DdmModel(ABC):
    """A binary classifier for one cell type."""

    kind: str = ""

    def __init__(self, cell_type: str) -> None:
        self.cell_type = cell_type

    @abstractmethod
    def predict_rows(self, sample_id: str, event_ids: Sequence[str], markers: np.ndarray) -> np.ndarray:
        """Boolean predictions for a block of events of one sample."""

    @abstractmethod
    def to_dict(self) -> Dict[str, Any]:
        ...


def predict(ddm: DdmModel, event: Event) -> bool:
    markers = np.asarray(event.markers, dtype=np.float64).reshape(1, -1)
    return bool(ddm.predict_rows(event.sample_id, [event.event_id], markers)[0])


def predict_sample(ddm: DdmModel, sample: Sample) -> np.ndarray:
    """Predictions for every event of ``sample`` in event order."""
    if len(sample) == 0:
        return np.zeros(0, dtype=bool)
    return np.asarray(ddm.predict_rows(sample.sample_id, sample.event_ids, sample.markers), dtype=bool)


def predict_samples(ddm: DdmModel, samples: Sequence[Sample], *, max_workers: int = 1) -> List[np.ndarray]:
    if max_workers > 1 and len(samples) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            return list(executor.map(lambda s: predict_sample(ddm, s), samples))
    return [predict_sample(ddm, sample) for sample in samples]


# ---------------------------------------------------------------------------
# Built-in one-hidden-layer perceptron
# ---------------------------------------------------------------------------


class MlpDdm(DdmModel):
    """Standardised transformed markers -> ReLU hidden layer -> logistic output."""

    kind = BUILTIN_MLP

    def __init__(
        self,
        cell_type: str,
        transform: MarkerTransform,
        scaler_mean: np.ndarray,
        scaler_scale: np.ndarray,
        hidden_weights: np.ndarray,
        hidden_bias: np.ndarray,
        output_weights: np.ndarray,
        output_bias: float,
        training: Optional[Dict[str, Any]] = None,
    ) -> None:
        super().__init__(cell_type)
        self.transform = transform
        self.scaler_mean = np.asarray(scaler_mean, dtype=np.float64)
        self.scaler_scale = np.asarray(scaler_scale, dtype=np.float64)
        self.hidden_weights = np.asarray(hidden_weights, dtype=np.float64)
        self.hidden_bias = np.asarray(hidden_bias, dtype=np.float64)
        self.output_weights = np.asarray(output_weights, dtype=np.float64).reshape(-1)
        self.output_bias = float(output_bias)
        self.training = dict(training or {})
        if self.hidden_weights.shape != (self.n_markers, self.hidden_bias.shape[0]):
            raise SchemaError(f"Inconsistent weight shapes in DDM for {cell_type}")

    @property
    def n_markers(self) -> int:
        return int(self.scaler_mean.shape[0])

    def logits(self, markers: np.ndarray) -> np.ndarray:
        markers = np.asarray(markers, dtype=np.float64)
        if markers.ndim != 2 or markers.shape[1] != self.n_markers:
            raise InputError(
                f"DDM for {self.cell_type} expects {self.n_markers} markers, got shape {markers.shape}"
            )
        scaled = (self.transform.forward(markers) - self.scaler_mean) / self.scaler_scale
        hidden = np.maximum(scaled @ self.hidden_weights + self.hidden_bias, 0.0)
        return hidden @ self.output_weights + self.output_bias

    def predict_rows(self, sample_id: str, event_ids: Sequence[str], markers: np.ndarray) -> np.ndarray:
        # probability > 0.5, as MLPClassifier.predict
        return self.logits(markers) > 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "cell_type": self.cell_type,
            "transform": self.transform.to_dict(),
            "scaler": {"mean": self.scaler_mean, "scale": self.scaler_scale},
            "weights": {
                "hidden": self.hidden_weights,
                "hidden_bias": self.hidden_bias,
                "output": self.output_weights,
                "output_bias": self.output_bias,
            },
            "training": self.training,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MlpDdm":
        try:
            weights = data["weights"]
            return cls(
                cell_type=str(data["cell_type"]),
                transform=MarkerTransform.from_dict(data.get("transform")),
                scaler_mean=np.array(data["scaler"]["mean"], dtype=np.float64),
                scaler_scale=np.array(data["scaler"]["scale"], dtype=np.float64),
                hidden_weights=np.array(weights["hidden"], dtype=np.float64),
                hidden_bias=np.array(weights["hidden_bias"], dtype=np.float64),
                output_weights=np.array(weights["output"], dtype=np.float64),
                output_bias=float(weights["output_bias"]),
                training=dict(data.get("training", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"Invalid DDM model file: {exc}") from exc


def _stack_training_data(samples: Iterable[Sample], cell_type: str) -> Tuple[np.ndarray, np.ndarray]:
    samples = list(samples)
    if not samples:
        return np.zeros((0, 0)), np.zeros(0, dtype=bool)
    markers = np.vstack([sample.markers for sample in samples])
    labels = np.concatenate([sample.label(cell_type) for sample in samples])
    return markers, labels


def train_ddm(
    samples: Sequence[Sample],
    cell_type: str,
    hyperparams: Optional[DdmHyperParams] = None,
    *,
    transform: Optional[MarkerTransform] = None,
) -> MlpDdm:
    """Fit the built-in classifier on every event of ``samples`` labelled for ``cell_type``.

    Subtype callers pass the lymphocyte subset of each sample.
    """
    hyperparams = hyperparams or DdmHyperParams()
    transform = transform or MarkerTransform()
    markers, labels = _stack_training_data(samples, cell_type)
    n_positive = int(labels.sum())
    n_negative = int(labels.shape[0] - n_positive)
    if n_positive < 2 or n_negative < 2:
        raise TrainingError(
            f"Training {cell_type} needs at least 2 events per class, got {n_positive} positive "
            f"and {n_negative} negative"
        )

    scaler = StandardScaler().fit(transform.forward(markers))
    features = scaler.transform(transform.forward(markers))
    classifier = MLPClassifier(
        hidden_layer_sizes=(hyperparams.hidden_units,),
        activation="relu",
        solver="sgd",
        learning_rate_init=hyperparams.learning_rate,
        momentum=0.9,
        batch_size=min(hyperparams.batch_size, features.shape[0]),
        max_iter=hyperparams.epochs,
        n_iter_no_change=hyperparams.epochs + 1,
        tol=0.0,
        alpha=hyperparams.l2,
        shuffle=True,
        random_state=hyperparams.seed,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=ConvergenceWarning)
        classifier.fit(features, labels.astype(np.int64))

    model = MlpDdm(
        cell_type=cell_type,
        transform=transform,
        scaler_mean=scaler.mean_,
        scaler_scale=scaler.scale_,
        hidden_weights=classifier.coefs_[0],
        hidden_bias=classifier.intercepts_[0],
        output_weights=classifier.coefs_[1][:, 0],
        output_bias=float(classifier.intercepts_[1][0]),
        training={
            "n_events": int(labels.shape[0]),
            "n_positive": n_positive,
            "n_markers": int(markers.shape[1]),
            "hyperparams": hyperparams.to_dict(),
        },
    )
    accuracy = float(np.mean(model.predict_rows("", [], markers) == labels))
    model.training["train_accuracy"] = accuracy
    logger.info(
        "Trained DDM for %s on %s events (%s positive), train accuracy %.4f",
        cell_type,
        labels.shape[0],
        n_positive,
        accuracy,
    )
    return model


def accuracy(ddm: DdmModel, samples: Sequence[Sample]) -> float:
    """Share of events whose prediction matches the ground truth for ``ddm.cell_type``."""
    correct = 0
    total = 0
    for sample in samples:
        predictions = predict_sample(ddm, sample)
        correct += int(np.sum(predictions == sample.label(ddm.cell_type)))
        total += len(sample)
    return correct / total if total else float("nan")


# ---------------------------------------------------------------------------
# Externally produced predictions
# ---------------------------------------------------------------------------


class ExternalPredictionsDdm(DdmModel):
    """A prediction table keyed by ``(sample_id, event_id)``."""

    kind = EXTERNAL_PREDICTIONS

    def __init__(self, cell_type: str, table: Mapping[Tuple[str, str], bool]) -> None:
        super().__init__(cell_type)
        self.table: Dict[Tuple[str, str], bool] = {
            (str(sid), str(eid)): bool(value) for (sid, eid), value in table.items()
        }

    def __len__(self) -> int:
        return len(self.table)

    def predict_rows(self, sample_id: str, event_ids: Sequence[str], markers: np.ndarray) -> np.ndarray:
        result = np.zeros(len(event_ids), dtype=bool)
        for index, event_id in enumerate(event_ids):
            key = (str(sample_id), str(event_id))
            try:
                result[index] = self.table[key]
            except KeyError:
                raise EventLookupError(
                    f"No external {self.cell_type} prediction for event {event_id} of sample {sample_id}"
                ) from None
        return result

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "cell_type": self.cell_type,
            "predictions": [[sid, eid, int(value)] for (sid, eid), value in self.table.items()],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExternalPredictionsDdm":
        try:
            rows = [(str(sid), str(eid), bool(value)) for sid, eid, value in data["predictions"]]
            cell_type = str(data["cell_type"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"Invalid external prediction model: {exc}") from exc
        return cls(cell_type, _unique_table(rows))


def _unique_table(rows: Iterable[Tuple[str, str, bool]]) -> Dict[Tuple[str, str], bool]:
    table: Dict[Tuple[str, str], bool] = {}
    for sample_id, event_id, value in rows:
        key = (sample_id, event_id)
        if key in table:
            raise SchemaError(f"Duplicate prediction for event {event_id} of sample {sample_id}")
        table[key] = value
    return table


def load_external_predictions(path: Path | str, cell_type: str) -> ExternalPredictionsDdm:
    frame = read_text_table(path)
    if list(frame.columns) != PREDICTION_COLUMNS:
        raise SchemaError(f"Predictions CSV must have header {','.join(PREDICTION_COLUMNS)}")
    values = parse_flag_column(frame, "pred")
    rows = zip(frame["sample_id"].tolist(), frame["event_id"].tolist(), values.tolist())
    model = ExternalPredictionsDdm(cell_type, _unique_table(rows))
    logger.info("Loaded %s external %s predictions from %s", len(model), cell_type, path)
    return model


def write_predictions(path: Path | str, ddm: DdmModel, samples: Optional[Sequence[Sample]] = None) -> Path:
    """Write ``sample_id,event_id,pred``; without samples an external table is written as stored."""
    if samples is None:
        if not isinstance(ddm, ExternalPredictionsDdm):
            raise InputError("Samples are required to write predictions of a built-in DDM")
        rows = [(sid, eid, int(value)) for (sid, eid), value in ddm.table.items()]
    else:
        rows = []
        for sample in samples:
            predictions = predict_sample(ddm, sample)
            rows.extend(
                (sample.sample_id, eid, int(value))
                for eid, value in zip(sample.event_ids.tolist(), predictions.tolist())
            )
    frame = pd.DataFrame(rows, columns=PREDICTION_COLUMNS)
    return atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n"))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

_MODEL_KINDS = {BUILTIN_MLP: MlpDdm, EXTERNAL_PREDICTIONS: ExternalPredictionsDdm}


def ddm_from_dict(data: Mapping[str, Any]) -> DdmModel:
    kind = data.get("kind") if isinstance(data, Mapping) else None
    model_cls = _MODEL_KINDS.get(kind)
    if model_cls is None:
        raise SchemaError(f"Unknown DDM kind: {kind!r}")
    return model_cls.from_dict(data)


def save_ddm(path: Path | str, ddm: DdmModel) -> Path:
    return write_json(path, ddm.to_dict())


def load_ddm(path: Path | str) -> DdmModel:
    return ddm_from_dict(read_json(path))
