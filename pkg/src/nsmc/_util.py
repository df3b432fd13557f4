"""Small numeric helpers shared across the engine.

scipy's logsumexp carries ~100us of array-API dispatch per call, which
dominates the per-iteration cost of the samplers; these stripped-down
versions keep the hot loops in plain numpy.
"""

from __future__ import annotations

import numpy as np


def logsumexp1(a) -> float:
    """log-sum-exp of a 1-d array; -inf entries allowed, empty gives -inf."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return -np.inf
    m = float(np.max(a))
    if not np.isfinite(m):
        return m
    return m + float(np.log(np.sum(np.exp(a - m))))


def logsumexp_last(a) -> np.ndarray:
    """log-sum-exp over the trailing axis, tolerating all--inf rows."""
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=-1, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - safe), axis=-1)) + np.squeeze(safe, axis=-1)
    return out
