"""Marker intensity transform shared by the generator, the DDMs and the quality factors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class MarkerTransform:
    """Signed shifted log10: ``t(x) = sign(x) * log10(1 + |x| / offset)``.

    Defined on all reals so compensated (negative) intensities stay usable.
    """

    offset: float = 1.0
    kind: str = "shifted-log"

    def __post_init__(self) -> None:
        if self.kind != "shifted-log":
            raise ConfigError(f"Unsupported marker transform: {self.kind}")
        if not np.isfinite(self.offset) or self.offset <= 0:
            raise ConfigError(f"Transform offset must be positive, got {self.offset}")

    def forward(self, values: Any) -> np.ndarray:
        x = np.asarray(values, dtype=np.float64)
        return np.sign(x) * np.log10(1.0 + np.abs(x) / self.offset)

    def inverse(self, values: Any) -> np.ndarray:
        y = np.asarray(values, dtype=np.float64)
        return np.sign(y) * self.offset * (np.power(10.0, np.abs(y)) - 1.0)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "offset": self.offset}

    @classmethod
    def from_dict(cls, data: Dict[str, Any] | None) -> "MarkerTransform":
        data = data or {}
        return cls(offset=float(data.get("offset", 1.0)), kind=data.get("kind", "shifted-log"))
