"""Run-level results shared by all samplers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .particles import WeightedArchive


@dataclass
class RunResult:
    """Outcome of one sampler run.

    ``level_log_evidence`` holds the per-level (or per-iteration) log partial
    evidences whose log-sum-exp equals ``log_evidence``.  ``diagnostics`` is
    a column-oriented per-level table (always containing ``log_p`` and
    ``log_like`` for the compression-diagnostic curve).
    """

    log_evidence: float
    level_log_evidence: np.ndarray
    likelihood_evals: int
    wall_time: float
    schedule: object = None
    archive: WeightedArchive = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def evidence(self) -> float:
        return float(np.exp(self.log_evidence))

    @property
    def levels(self) -> int:
        return len(self.level_log_evidence)
