"""Multinomial, stratified, and residual resampling of particle indices.

All schemes are unbiased: E[count_k] = N * W_k.  Stratified and residual
counts additionally stay within one of N * W_k by construction.  For
replicate studies the ``size`` argument draws many independent resamplings
in one vectorised call.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolationError

__all__ = ["SCHEMES", "resample"]

SCHEMES = ("multinomial", "stratified", "residual")


def _validate(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ContractViolationError("weights must be a non-empty 1-d array")
    if np.any(w < -1e-12) or np.any(~np.isfinite(w)):
        raise ContractViolationError("weights must be finite and nonnegative")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ContractViolationError("weights must be normalised")
    w = np.clip(w, 0.0, None)
    return w / w.sum()


def _expand_counts(counts: np.ndarray) -> np.ndarray:
    # counts: (reps, N) integer copies per index -> (reps, N) sorted indices
    reps, n = counts.shape
    template = np.tile(np.arange(n), (reps, 1))
    return np.repeat(template.ravel(), counts.ravel()).reshape(reps, n)


def _multinomial(w, reps, rng):
    return _expand_counts(rng.multinomial(w.size, w, size=reps))


def _stratified(w, reps, rng):
    # Kitagawa construction: one uniform per stratum ((k-1)/N, k/N], then
    # invert the weight CDF with a single searchsorted sweep.
    n = w.size
    u = (np.arange(n) + rng.random((reps, n))) / n
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, u, side="left")
    return np.minimum(idx, n - 1)


def _residual(w, reps, rng):
    n = w.size
    scaled = w * n
    base = np.floor(scaled).astype(np.int64)
    remainder = n - int(base.sum())
    counts = np.tile(base, (reps, 1))
    if remainder > 0:
        resid = scaled - base
        total = resid.sum()
        if total <= 0:  # numerically exact integer weights
            resid = np.full(n, 1.0 / n)
        else:
            resid = resid / total
        counts += rng.multinomial(remainder, resid, size=reps)
    return _expand_counts(counts)


_DRAWERS = {
    "multinomial": _multinomial,
    "stratified": _stratified,
    "residual": _residual,
}


def resample(weights, scheme: str, rng, size: int | None = None):
    """Draw particle indices proportional to normalised weights.

    Parameters
    ----------
    weights : array
        Normalised weights of length N.
    scheme : {"multinomial", "stratified", "residual"}
    rng : numpy.random.Generator
    size : int, optional
        Number of independent replicates.  ``None`` returns a single
        ``(N,)`` index array; otherwise the result has shape ``(size, N)``.

    Returns
    -------
    ndarray of int
        Indices into 0..N-1; the caller resets the weights to 1/N.
    """
    if scheme not in _DRAWERS:
        raise ContractViolationError(
            f"unknown scheme {scheme!r}; expected one of {SCHEMES}"
        )
    w = _validate(weights)
    reps = 1 if size is None else int(size)
    if reps < 1:
        raise ContractViolationError("size must be a positive integer")
    idx = _DRAWERS[scheme](w, reps, rng)
    return idx[0] if size is None else idx
