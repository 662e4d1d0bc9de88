"""Run configuration for the ``uwrap`` pipeline.

A run config is a JSON document; every key is optional and falls back to the
built-in demo (five-marker lymphocyte panel, synthetic generator, the variant
set of the reference study). Relative paths resolve against the config file.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from .core.data_model import Panel
from .core.ddm import DdmHyperParams
from .core.synthgen import GeneratorConfig, QuadrantGates, demo_gates, demo_generator_config, demo_panel
from .errors import ConfigError, SchemaError
from .quality.decision_tree import TreeParams
from .quality.quality_factors import VariantConfig
from .quality.wrapper import SUBTYPE_BASES
from .utils import read_json, write_json

logger = logging.getLogger(__name__)

DEMO = "demo"
LABEL_SOURCES = ("components", "gates")
DEFAULT_SPLIT_COUNTS = (10, 10, 10)

DEMO_VARIANTS: Dict[str, Tuple[str, ...]] = {
    "L": (
        "baseline",
        "basic+outcome",
        "basic-category",
        "percentile+outcome",
        "percentile-category",
        "density+outcome",
        "density-category",
    ),
    "BP": ("baseline", "basic+outcome", "basic-category"),
    "TP": ("baseline", "basic+outcome", "basic-category"),
    "NKP": (
        "baseline",
        "basic+outcome",
        "basic-category",
        "percentile+outcome",
        "percentile-category",
        "density+outcome",
        "density-category",
        "homogeneity+outcome",
        "homogeneity-category",
        "combined+outcome",
        "combined-category",
    ),
}
ROOT_VARIANTS = ("baseline", "basic+outcome", "basic-category", "density+outcome")
SUBTYPE_VARIANTS = ("baseline", "basic+outcome", "basic-category")
DEMO_AGGREGATE_VARIANTS = {"L": "density+outcome", "BP": "basic+outcome", "TP": "basic+outcome", "NKP": "combined+outcome"}


@dataclass
class RunPaths:
    data: Path = Path("data")
    models: Path = Path("models")
    outputs: Path = Path("outputs")

    def resolved(self, base: Path) -> "RunPaths":
        return RunPaths(*(p if p.is_absolute() else base / p for p in (self.data, self.models, self.outputs)))

    @property
    def ddm_dir(self) -> Path:
        return self.models / "ddm"

    @property
    def wrapper_dir(self) -> Path:
        return self.models / "wrappers"


@dataclass
class RunConfig:
    """Everything one pipeline run needs; defaults reproduce the demo study."""

    paths: RunPaths = field(default_factory=RunPaths)
    panel: Panel = field(default_factory=demo_panel)
    generator: Optional[GeneratorConfig] = None
    split_counts: Tuple[int, int, int] = DEFAULT_SPLIT_COUNTS
    seed: int = 0
    ddm: DdmHyperParams = field(default_factory=DdmHyperParams)
    confidence: float = 0.99
    min_leaf_calib: Dict[str, int] = field(default_factory=lambda: {"L": 200, "default": 50})
    tree: TreeParams = field(default_factory=TreeParams)
    variants: Dict[str, List[VariantConfig]] = field(default_factory=dict)
    aggregate_variants: Dict[str, str] = field(default_factory=dict)
    subtype_basis: str = "ground_truth"
    label_source: str = "components"
    gates: Optional[QuadrantGates] = None
    scope_tolerance: float = 0.0
    max_workers: int = 1

    def __post_init__(self) -> None:
        if self.generator is None:
            self.generator = demo_generator_config(self.panel)
        if not 0.0 < self.confidence < 1.0:
            raise ConfigError(f"confidence must lie in (0, 1), got {self.confidence}")
        if self.subtype_basis not in SUBTYPE_BASES:
            raise ConfigError(f"subtype_basis must be one of {SUBTYPE_BASES}")
        if self.label_source not in LABEL_SOURCES:
            raise ConfigError(f"label_source must be one of {LABEL_SOURCES}")
        if self.label_source == "gates" and self.gates is None:
            raise ConfigError("label_source 'gates' needs quadrant gates")
        if self.max_workers < 1:
            raise ConfigError("max_workers must be at least 1")
        if "default" not in self.min_leaf_calib:
            raise ConfigError("min_leaf_calib needs a 'default' entry")
        unknown = set(self.variants) - set(self.panel.cell_type_names)
        if unknown:
            raise ConfigError(f"Variants configured for unknown cell types {sorted(unknown)}")
        for name in self.panel.cell_type_names:
            if name not in self.variants:
                self.variants[name] = [VariantConfig.from_name(v) for v in default_variant_names(self.panel, name)]
            if name not in self.aggregate_variants:
                self.aggregate_variants[name] = default_aggregate_variant(self.panel, name, self.variants[name])

    def min_leaf_for(self, cell_type: str) -> int:
        return int(self.min_leaf_calib.get(cell_type, self.min_leaf_calib["default"]))

    def ddm_params(self) -> DdmHyperParams:
        return replace(self.ddm, seed=self.seed)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "paths": {"data": str(self.paths.data), "models": str(self.paths.models), "outputs": str(self.paths.outputs)},
            "panel": self.panel.to_dict(),
            "generator": self.generator.to_dict() if self.generator else None,
            "split_counts": list(self.split_counts),
            "seed": self.seed,
            "ddm": {k: v for k, v in self.ddm.to_dict().items() if k != "seed"},
            "confidence": self.confidence,
            "min_leaf_calib": dict(self.min_leaf_calib),
            "tree": self.tree.to_dict(),
            "variants": {ct: [v.name for v in items] for ct, items in self.variants.items()},
            "aggregate_variants": dict(self.aggregate_variants),
            "subtype_basis": self.subtype_basis,
            "label_source": self.label_source,
            "gates": self.gates.to_dict() if self.gates else None,
            "scope_tolerance": self.scope_tolerance,
            "max_workers": self.max_workers,
        }


def default_variant_names(panel: Panel, cell_type: str) -> Tuple[str, ...]:
    if cell_type in DEMO_VARIANTS:
        return DEMO_VARIANTS[cell_type]
    return ROOT_VARIANTS if panel.cell_type(cell_type).parent is None else SUBTYPE_VARIANTS


def default_aggregate_variant(panel: Panel, cell_type: str, variants: List[VariantConfig]) -> str:
    names = [v.name for v in variants]
    preferred = DEMO_AGGREGATE_VARIANTS.get(cell_type)
    if preferred in names:
        return preferred
    return "basic+outcome" if "basic+outcome" in names else names[0]


def _load_part(value: Any, base: Path) -> Any:
    """Inline JSON objects pass through; strings are JSON file paths relative to ``base``."""
    if isinstance(value, str):
        path = Path(value)
        try:
            return read_json(path if path.is_absolute() else base / path)
        except SchemaError as exc:
            raise ConfigError(str(exc)) from exc
    return value


def _is_demo_panel(panel: Panel) -> bool:
    return panel.marker_names == demo_panel().marker_names


def run_config_from_dict(data: Mapping[str, Any], base: Path) -> RunConfig:
    """Build a run config from parsed JSON; relative paths resolve against ``base``."""
    if not isinstance(data, Mapping):
        raise ConfigError("Run config must be a JSON object")
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"Unknown run config keys: {sorted(unknown)}")
    try:
        raw_paths = data.get("paths") or {}
        paths = RunPaths(**{key: Path(value) for key, value in raw_paths.items()}).resolved(base)

        panel_data = _load_part(data.get("panel"), base)
        panel = Panel.from_dict(panel_data) if panel_data else demo_panel()

        generator_data = _load_part(data.get("generator"), base)
        if not generator_data:
            generator = demo_generator_config(panel)
        elif "components" in generator_data:
            generator = GeneratorConfig.from_dict(generator_data, panel)
        else:
            generator = demo_generator_config(
                panel,
                events_per_sample=int(generator_data.get("events_per_sample", 5000)),
                sample_shift_sd=float(generator_data.get("sample_shift_sd", 0.0)),
            )

        gates_data = _load_part(data.get("gates"), base)
        gates = QuadrantGates.from_dict(gates_data) if gates_data else (demo_gates() if _is_demo_panel(panel) else None)

        variants = {
            str(ct): [VariantConfig.from_dict(item) for item in items]
            for ct, items in (data.get("variants") or {}).items()
        }
        counts = tuple(int(c) for c in data.get("split_counts", DEFAULT_SPLIT_COUNTS))
        if len(counts) != 3:
            raise ConfigError("split_counts needs three entries (train, calibration, test)")

        return RunConfig(
            paths=paths,
            panel=panel,
            generator=generator,
            split_counts=counts,  # type: ignore[arg-type]
            seed=int(data.get("seed", 0)),
            ddm=DdmHyperParams.from_dict(data.get("ddm")),
            confidence=float(data.get("confidence", 0.99)),
            min_leaf_calib={str(k): int(v) for k, v in (data.get("min_leaf_calib") or {"L": 200, "default": 50}).items()},
            tree=TreeParams.from_dict(data.get("tree")),
            variants=variants,
            aggregate_variants={str(k): str(v) for k, v in (data.get("aggregate_variants") or {}).items()},
            subtype_basis=str(data.get("subtype_basis", "ground_truth")),
            label_source=str(data.get("label_source", "components")),
            gates=gates,
            scope_tolerance=float(data.get("scope_tolerance", 0.0)),
            max_workers=int(data.get("max_workers", 1)),
        )
    except (TypeError, ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"Invalid run config: {exc}") from exc


def demo_run_config(base: Optional[Path] = None) -> RunConfig:
    """The built-in demo; its artifacts go under ``<base>/uwrap-run``."""
    base = Path.cwd() if base is None else base
    return run_config_from_dict({"paths": demo_config_dict()["paths"]}, base / "uwrap-run")


def demo_config_dict() -> Dict[str, Any]:
    """Editable JSON form of the demo run config."""
    config = run_config_from_dict({}, Path("."))
    data = config.to_dict()
    data["paths"] = {"data": "data", "models": "models", "outputs": "outputs"}
    return data


def load_run_config(source: Union[str, Path]) -> RunConfig:
    if str(source) == DEMO:
        return demo_run_config()
    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    try:
        data = read_json(path)
    except SchemaError as exc:
        raise ConfigError(str(exc)) from exc
    config = run_config_from_dict(data, path.parent)
    logger.debug("Loaded run config from %s", path)
    return config


def write_demo_config(path: Union[str, Path]) -> Path:
    return write_json(path, demo_config_dict())
