"""Exact one-sided binomial confidence bounds for leaf error rates."""

from __future__ import annotations

import math

from scipy.optimize import bisect
from scipy.special import bdtr

from ..errors import DomainError

BISECT_XTOL = 1e-15


def clopper_pearson_upper(k: int, n: int, confidence: float) -> float:
    """Smallest ``u`` with ``P(X <= k | n, u) <= 1 - confidence`` (one-sided Clopper-Pearson).

    Returns ``1.0`` when every trial failed (``k == n``); ``k == 0`` uses the
    closed form ``1 - (1 - confidence) ** (1 / n)``.
    """
    if n < 1:
        raise DomainError(f"Need at least one trial, got n={n}")
    if k < 0 or k > n:
        raise DomainError(f"Error count k={k} outside 0..{n}")
    if not (0.0 < confidence < 1.0) or math.isnan(confidence):
        raise DomainError(f"Confidence must lie in (0, 1), got {confidence}")
    if k == n:
        return 1.0
    alpha = 1.0 - confidence
    if k == 0:
        return 1.0 - alpha ** (1.0 / n)
    return float(
        bisect(lambda u: bdtr(k, n, u) - alpha, 0.0, 1.0, xtol=BISECT_XTOL, maxiter=200)
    )


def error_rate(k: int, n: int) -> float:
    return k / n if n else float("nan")
