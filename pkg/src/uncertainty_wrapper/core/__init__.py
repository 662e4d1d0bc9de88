"""Domain data, synthetic data generation and the wrapped classifiers."""

from .data_model import (
    SPLITS,
    CellTypeSpec,
    Dataset,
    Event,
    Panel,
    Sample,
    ValidationReport,
    Violation,
    load_events_csv,
    load_panel,
    split_dataset,
    validate_panel,
    write_events_csv,
)
from .ddm import (
    DdmHyperParams,
    DdmModel,
    ExternalPredictionsDdm,
    MlpDdm,
    load_ddm,
    load_external_predictions,
    predict,
    predict_sample,
    save_ddm,
    train_ddm,
    write_predictions,
)
from .synthgen import (
    GeneratorConfig,
    MixtureComponent,
    QuadrantGate,
    QuadrantGates,
    demo_gates,
    demo_generator_config,
    demo_panel,
    generate_dataset,
    generate_sample,
    quadrant_gate_labels,
)
from .transforms import MarkerTransform

__all__ = [
    "SPLITS",
    "CellTypeSpec",
    "Dataset",
    "Event",
    "Panel",
    "Sample",
    "ValidationReport",
    "Violation",
    "load_events_csv",
    "load_panel",
    "split_dataset",
    "validate_panel",
    "write_events_csv",
    "DdmHyperParams",
    "DdmModel",
    "ExternalPredictionsDdm",
    "MlpDdm",
    "load_ddm",
    "load_external_predictions",
    "predict",
    "predict_sample",
    "save_ddm",
    "train_ddm",
    "write_predictions",
    "GeneratorConfig",
    "MixtureComponent",
    "QuadrantGate",
    "QuadrantGates",
    "demo_gates",
    "demo_generator_config",
    "demo_panel",
    "generate_dataset",
    "generate_sample",
    "quadrant_gate_labels",
    "MarkerTransform",
]
