"""Uncertainty wrappers for automated flow-cytometry gating.

Per-event uncertainty estimates for data-driven cell classifiers, calibrated
with Clopper-Pearson bounds, and population-ratio bounds aggregated from them.
"""

from importlib import metadata

from .core import (
    CellTypeSpec,
    Dataset,
    Event,
    Panel,
    Sample,
    load_events_csv,
    train_ddm,
)
from .errors import UncertaintyWrapperError
from .quality import (
    UncertaintyWrapper,
    VariantConfig,
    build_wrapper,
    load_wrapper,
    save_wrapper,
    wrapper_apply,
    wrapper_estimate,
)


def run_server(*args, **kwargs):
    from .server.server import run as _run
    return _run(*args, **kwargs)


try:
    __version__ = metadata.version("uncertainty-wrapper-cytometry")
except metadata.PackageNotFoundError:  # pragma: no cover - local dev fallback
    __version__ = "0.1.0"

__all__ = [
    "__version__",
    "CellTypeSpec",
    "Dataset",
    "Event",
    "Panel",
    "Sample",
    "load_events_csv",
    "train_ddm",
    "UncertaintyWrapperError",
    "UncertaintyWrapper",
    "VariantConfig",
    "build_wrapper",
    "load_wrapper",
    "save_wrapper",
    "wrapper_apply",
    "wrapper_estimate",
    "run_server",
]
