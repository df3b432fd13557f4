"""Weighted-particle arithmetic: normalisation, ESS, archives, summaries."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._util import logsumexp1

from .errors import ContractViolationError, DegenerateCloudError

__all__ = [
    "normalize",
    "ess",
    "ParticleCloud",
    "WeightedArchive",
    "weighted_estimate",
    "weighted_quantile",
]

_NORMALIZATION_ATOL = 1e-8


def normalize(log_weights):
    """Normalise log weights via log-sum-exp.

    Returns ``(weights, log_sum)`` where ``weights`` sum to one and
    ``log_sum`` is the log of the total unnormalised mass.  Raises
    :class:`DegenerateCloudError` when no entry is finite.
    """
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0 or not np.any(lw > -np.inf):
        raise DegenerateCloudError("all log weights are -inf")
    if np.any(np.isnan(lw)) or np.any(np.isposinf(lw)):
        raise ContractViolationError("log weights must be in [-inf, inf)")
    log_sum = logsumexp1(lw)
    return np.exp(lw - log_sum), float(log_sum)


def ess(weights):
    """Effective sample size ``1 / sum(W**2)`` of normalised weights."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=_NORMALIZATION_ATOL):
        raise ContractViolationError("weights must be normalised and nonnegative")
    return float(1.0 / np.sum(np.square(w)))


@dataclass
class ParticleCloud:
    """Positions with cached log likelihoods and (log) weights."""

    positions: np.ndarray
    log_weights: np.ndarray
    log_like: np.ndarray
    iteration: int = 0

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        self.log_like = np.asarray(self.log_like, dtype=float)
        n = self.positions.shape[0]
        if self.log_weights.shape != (n,) or self.log_like.shape != (n,):
            raise ContractViolationError("cloud arrays must share the leading size")

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def dimension(self) -> int:
        return self.positions.shape[1]

    def normalized_weights(self):
        return normalize(self.log_weights)[0]

    def ess(self) -> float:
        return ess(self.normalized_weights())


@dataclass
class WeightedArchive:
    """Posterior sample archive accumulated across levels.

    Records with ``-inf`` log weight carry no posterior mass and are dropped
    on append.  The level index is kept so per-level posterior masses remain
    recoverable for diagnostics.
    """

    _positions: list = field(default_factory=list)
    _log_weights: list = field(default_factory=list)
    _levels: list = field(default_factory=list)

    def append(self, positions, log_weights, level) -> None:
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        log_weights = np.atleast_1d(np.asarray(log_weights, dtype=float))
        levels = np.broadcast_to(
            np.asarray(level, dtype=int), log_weights.shape
        )
        keep = log_weights > -np.inf
        if not np.any(keep):
            return
        self._positions.append(positions[keep].copy())
        self._log_weights.append(log_weights[keep].copy())
        self._levels.append(levels[keep].copy())

    def __len__(self) -> int:
        return int(sum(a.shape[0] for a in self._positions))

    @property
    def positions(self) -> np.ndarray:
        if not self._positions:
            raise DegenerateCloudError("archive is empty")
        return np.vstack(self._positions)

    @property
    def log_weights(self) -> np.ndarray:
        if not self._log_weights:
            raise DegenerateCloudError("archive is empty")
        return np.concatenate(self._log_weights)

    @property
    def levels(self) -> np.ndarray:
        if not self._levels:
            raise DegenerateCloudError("archive is empty")
        return np.concatenate(self._levels)

    def total_log_weight(self) -> float:
        return logsumexp1(self.log_weights)

    def normalized_weights(self) -> np.ndarray:
        return normalize(self.log_weights)[0]

    def level_log_masses(self) -> dict:
        """Log of each level's share of the total archive mass."""
        lw = self.log_weights
        total = logsumexp1(lw)
        lv = self.levels
        return {
            int(t): logsumexp1(lw[lv == t]) - total for t in np.unique(lv)
        }

    def estimate(self, phi) -> float:
        w = self.normalized_weights()
        values = np.asarray(phi(self.positions), dtype=float)
        return float(np.sum(w * values))

    def quantile(self, phi, q: float) -> float:
        if not 0.0 < q < 1.0:
            raise ContractViolationError("q must lie strictly inside (0, 1)")
        w = self.normalized_weights()
        values = np.asarray(phi(self.positions), dtype=float)
        order = np.argsort(values, kind="stable")
        cw = np.cumsum(w[order])
        idx = int(np.searchsorted(cw, q, side="left"))
        idx = min(idx, len(values) - 1)
        return float(values[order][idx])

    # -- serialisation: one JSON record per line ---------------------------
    def to_jsonl(self, path) -> None:
        pos = self.positions
        lw = self.log_weights
        lv = self.levels
        with open(path, "w") as fh:
            for p, w, t in zip(pos, lw, lv):
                fh.write(
                    json.dumps(
                        {
                            "position": [float(v) for v in p],
                            "log_weight": float(w),
                            "level": int(t),
                        }
                    )
                )
                fh.write("\n")

    @classmethod
    def from_jsonl(cls, path) -> "WeightedArchive":
        archive = cls()
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                archive.append(
                    np.asarray(rec["position"], dtype=float)[None, :],
                    np.asarray([rec["log_weight"]], dtype=float),
                    rec["level"],
                )
        return archive


def weighted_estimate(archive: WeightedArchive, phi) -> float:
    """Archive-normalised posterior expectation of ``phi``."""
    return archive.estimate(phi)


def weighted_quantile(archive: WeightedArchive, phi, q: float) -> float:
    """Smallest value v with cumulative archive weight of {phi(X) <= v} >= q.

    Left-continuous inverse CDF; ties resolve toward the smaller value.
    """
    return archive.quantile(phi, q)
