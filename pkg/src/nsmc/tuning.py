"""Automated kernel calibration for pilot runs.

Step scales are chosen by giving each particle a uniformly assigned
candidate, performing one MCMC step, and keeping the candidate with the
highest median estimated ESJD per target evaluation.  The number of MCMC
repeats then grows until half the particles have accumulated an expected
jump distance beyond the cloud's own dispersion scale.  Fixed (replay) runs
consume the resulting report and perform zero adaptation.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ContractViolationError, DegenerateCloudWarning
from .kernels import KernelConfig, regularize_covariance, step

__all__ = [
    "mahalanobis",
    "weighted_mean_and_cov",
    "j_desired",
    "select_step_scale",
    "adaptive_repeats",
    "ScaleSelection",
    "TuningReport",
]


def mahalanobis(y, cov):
    """Mahalanobis norm ``sqrt(y' cov^{-1} y)``; vectorised over rows of y."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ContractViolationError("covariance must be SPD") from None
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    w = solve_triangular(chol, np.atleast_2d(y).T, lower=True)
    out = np.sqrt(np.sum(np.square(w), axis=0))
    return float(out[0]) if single else out


def weighted_mean_and_cov(positions, weights=None):
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    n = positions.shape[0]
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
    mean = w @ positions
    dev = positions - mean
    cov = (dev * w[:, None]).T @ dev
    return mean, cov


def j_desired(positions, weights=None, cov=None):
    """Target jump distance: weighted mean Mahalanobis distance of the
    particles from their weighted mean, taken before resampling."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    n = positions.shape[0]
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
    mean = w @ positions
    dev = positions - mean
    if np.allclose(dev[w > 0], 0.0):
        warnings.warn("all particles identical", DegenerateCloudWarning)
        return 0.0
    if cov is None:
        cov = regularize_covariance((dev * w[:, None]).T @ dev)
    dist = mahalanobis(dev, cov)
    return float(np.sum(w * dist))


@dataclass
class ScaleSelection:
    step_scale: object
    median_esjd_per_eval: dict
    positions: np.ndarray
    log_density: np.ndarray
    log_like: np.ndarray
    jumps: np.ndarray


def select_step_scale(
    positions,
    target,
    candidates,
    family,
    rng,
    *,
    covariance=None,
    log_density=None,
    log_like=None,
    slice_widths=None,
    slice_width_factor=2.0,
    mala_textbook_drift=False,
):
    """Pick the step scale with the highest median ESJD per target evaluation.

    Each particle gets a uniformly assigned candidate and performs one real
    (invariance-preserving) MCMC step, so the tuning step counts as the first
    kernel repeat.  Ties go to the smaller scale.  Returns the moved cloud,
    refreshed caches and the per-particle jump samples.
    """
    cands = sorted(candidates, key=lambda c: np.min(np.atleast_1d(c)))
    if not cands:
        raise ContractViolationError("candidate grid must be non-empty")
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    n = positions.shape[0]
    new_pos = positions.copy()
    new_ld = None if log_density is None else np.array(log_density, dtype=float)
    new_ll = None if log_like is None else np.array(log_like, dtype=float)
    esjd = np.zeros(n)
    jumps = np.zeros(n)
    per_eval = np.zeros(n)
    assign = rng.integers(0, len(cands), size=n)
    medians = {}
    for k, cand in enumerate(cands):
        mask = assign == k
        key = tuple(cand) if isinstance(cand, (tuple, list, np.ndarray)) else float(cand)
        if not np.any(mask):
            medians[key] = -np.inf
            continue
        cfg = KernelConfig(
            family=family,
            step_scale=cand,
            covariance=covariance,
            slice_widths=slice_widths,
            slice_width_factor=slice_width_factor,
            mala_textbook_drift=mala_textbook_drift,
        )
        res = step(
            positions[mask],
            target,
            cfg,
            rng,
            log_density=None if new_ld is None else new_ld[mask],
            log_like=None if new_ll is None else new_ll[mask],
            two_stage=False,
        )
        new_pos[mask] = res.positions
        if res.log_density is not None:
            if new_ld is None:
                new_ld = np.full(n, np.nan)
            new_ld[mask] = res.log_density
        if res.log_like is not None:
            if new_ll is None:
                new_ll = np.full(n, np.nan)
            new_ll[mask] = res.log_like
        esjd[mask] = res.esjd
        jumps[mask] = res.jump
        cost = res.evals if res.evals is not None else 1.0
        per_eval[mask] = res.esjd / np.maximum(cost, 1.0)
        medians[key] = float(np.median(per_eval[mask]))
    values = [medians[tuple(c) if isinstance(c, (tuple, list, np.ndarray)) else float(c)]
              for c in cands]
    best = cands[int(np.argmax(values))]  # argmax takes the first (smallest) max
    return ScaleSelection(
        step_scale=best,
        median_esjd_per_eval=medians,
        positions=new_pos,
        log_density=new_ld,
        log_like=new_ll,
        jumps=jumps,
    )


def adaptive_repeats(
    positions,
    target,
    config,
    j_desired_value,
    rng,
    *,
    max_repeats=100,
    proportion=0.5,
    initial_jumps=None,
    log_density=None,
    log_like=None,
    two_stage=False,
):
    """Sweep the whole population until the required proportion of particles
    has accumulated expected jump distance beyond ``j_desired_value``.

    ``initial_jumps`` lets the step-scale selection sweep count as repeat 1.
    Returns ``(positions, repeats, log_density, log_like)``; the cap
    guarantees termination.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    n = positions.shape[0]
    if initial_jumps is None:
        cum = np.zeros(n)
        done = 0
    else:
        cum = np.asarray(initial_jumps, dtype=float).copy()
        done = 1
    while True:
        if done >= 1 and np.mean(cum > j_desired_value) >= proportion:
            break
        if done >= max_repeats:
            break
        res = step(
            positions,
            target,
            config,
            rng,
            log_density=log_density,
            log_like=log_like,
            two_stage=two_stage,
        )
        positions = res.positions
        log_density = res.log_density
        log_like = res.log_like
        cum += res.jump
        done += 1
    return positions, done, log_density, log_like


@dataclass
class TuningReport:
    """Per-level calibration record, the bridge artifact between a pilot run
    and its fixed replays."""

    step_scales: list = field(default_factory=list)
    repeats: list = field(default_factory=list)
    median_esjd_per_eval: list = field(default_factory=list)
    j_desired: list = field(default_factory=list)
    kernel_configs: list = field(default_factory=list)

    def append_level(self, *, step_scale, repeats, median_esjd_per_eval,
                     j_desired_value, config: KernelConfig):
        if isinstance(step_scale, (tuple, list, np.ndarray)):
            step_scale = [float(s) for s in step_scale]
        else:
            step_scale = float(step_scale)
        self.step_scales.append(step_scale)
        self.repeats.append(int(repeats))
        self.median_esjd_per_eval.append(
            None if median_esjd_per_eval is None else float(median_esjd_per_eval)
        )
        self.j_desired.append(None if j_desired_value is None else float(j_desired_value))
        self.kernel_configs.append(config.to_dict())

    @property
    def levels(self) -> int:
        return len(self.kernel_configs)

    def kernel_plan(self) -> list:
        return [KernelConfig.from_dict(d) for d in self.kernel_configs]

    def to_dict(self) -> dict:
        return {
            "step_scales": self.step_scales,
            "repeats": self.repeats,
            "median_esjd_per_eval": self.median_esjd_per_eval,
            "j_desired": self.j_desired,
            "kernel_configs": self.kernel_configs,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TuningReport":
        return cls(
            step_scales=list(data.get("step_scales", [])),
            repeats=list(data.get("repeats", [])),
            median_esjd_per_eval=list(data.get("median_esjd_per_eval", [])),
            j_desired=list(data.get("j_desired", [])),
            kernel_configs=list(data.get("kernel_configs", [])),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "TuningReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
