"""Temperature-annealed SMC along the geometric prior-to-posterior path.

Temperatures are exponents on the likelihood; the adaptive variant picks the
next one by bisecting the estimated ESS of the incremental weights down to a
target fraction of the population (jumping straight to 1 when feasible).
The evidence accumulates as a product of mean incremental weights, so the
log estimate is a plain sum of per-level log terms.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from ._util import logsumexp1

from .errors import (
    ContractViolationError,
    DegenerateCloudWarning,
    ZeroSurvivorsError,
)
from .kernels import (
    KernelConfig,
    default_step_candidates,
    mutate,
    regularize_covariance,
    tempered_target,
)
from .particles import WeightedArchive
from .resampling import resample
from .results import RunResult
from .tuning import (
    TuningReport,
    adaptive_repeats,
    j_desired,
    select_step_scale,
    weighted_mean_and_cov,
)

__all__ = [
    "TemperatureSchedule",
    "estimated_ess",
    "next_temperature",
    "run_adaptive_tasmc",
    "run_fixed_tasmc",
]


@dataclass
class TemperatureSchedule:
    """Strictly increasing likelihood exponents from exactly 0 to exactly 1."""

    temperatures: np.ndarray
    provenance: str = "user"

    def __post_init__(self):
        self.temperatures = np.asarray(self.temperatures, dtype=float)
        t = self.temperatures
        if t.size < 2 or t[0] != 0.0 or t[-1] != 1.0:
            raise ContractViolationError("temperatures must run from 0 to 1")
        if np.any(np.diff(t) <= 0):
            raise ContractViolationError("temperatures must strictly increase")

    def to_dict(self) -> dict:
        return {
            "temperatures": [float(v) for v in self.temperatures],
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TemperatureSchedule":
        return cls(np.asarray(data["temperatures"], dtype=float),
                   data.get("provenance", "user"))


def _incremental_log_weights(log_w, log_like, delta):
    if delta == 0.0:
        return np.asarray(log_w, dtype=float).copy()
    contrib = np.where(np.isneginf(log_like), -np.inf, delta * log_like)
    return log_w + contrib


def estimated_ess(log_w, log_like, delta) -> float:
    """ESS of the incremental weights for a temperature increment ``delta``."""
    lw = _incremental_log_weights(log_w, log_like, delta)
    total = logsumexp1(lw)
    if not np.isfinite(total):
        return 0.0
    return float(np.exp(2.0 * total - logsumexp1(2.0 * lw)))


def next_temperature(log_like, log_w, current, alpha) -> float:
    """Choose the next temperature by ESS bisection.

    Returns 1 outright when the jump to the posterior already keeps the
    estimated ESS at ``alpha * N``; otherwise bisects the increment on
    ``(current, 1]`` until the bracket collapses to floating-point width,
    returning the feasible endpoint (estimated ESS >= alpha * N).
    """
    log_like = np.asarray(log_like, dtype=float)
    log_w = np.asarray(log_w, dtype=float)
    if not 0.0 <= current < 1.0:
        raise ContractViolationError("current temperature must lie in [0, 1)")
    if not 0.0 < alpha < 1.0:
        raise ContractViolationError("alpha must lie strictly inside (0, 1)")
    n = log_like.size
    if np.count_nonzero(np.isfinite(log_like)) <= 1:
        warnings.warn("a single finite likelihood; jumping to temperature 1",
                      DegenerateCloudWarning)
        return 1.0
    target = alpha * n
    if estimated_ess(log_w, log_like, 1.0 - current) >= target:
        return 1.0
    lo, hi = current, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if estimated_ess(log_w, log_like, mid - current) >= target:
            lo = mid
        else:
            hi = mid
    if lo == current:
        # the ESS is continuous, so this only triggers at fp resolution
        return float(np.nextafter(current, 1.0))
    return float(lo)


def _anneal(
    model,
    n_particles,
    *,
    rng,
    alpha=None,
    schedule=None,
    kernel_plan=None,
    kernel_family="rw",
    candidates=None,
    repeats=None,
    resampling_scheme="stratified",
    repeat_proportion=0.5,
    max_repeats=100,
    max_levels=100_000,
    slice_width_factor=2.0,
    mala_textbook_drift=False,
    keep_archive=True,
):
    adaptive = schedule is None
    n = int(n_particles)
    start = time.perf_counter()
    evals0 = model.likelihood_evals
    if adaptive and candidates is None:
        if kernel_family == "coord_rw":
            candidates = [(0.1, 0.025)]
        elif kernel_family == "slice":
            candidates = [1.0]
        else:
            candidates = default_step_candidates(model.dimension)
    plan = None
    if not adaptive:
        if isinstance(kernel_plan, TuningReport):
            plan = kernel_plan.kernel_plan()
        elif isinstance(kernel_plan, KernelConfig):
            plan = [kernel_plan]
        elif kernel_plan is not None:
            plan = list(kernel_plan)
        if plan is None:
            raise ContractViolationError("fixed runs need a kernel plan")
        fixed_temps = schedule.temperatures

    positions = np.atleast_2d(model.sample_prior(rng, n)).copy()
    log_like = np.asarray(model.log_likelihood(positions), dtype=float).copy()
    log_w = np.full(n, -np.log(n))
    log_z_terms = []
    temps = [0.0]
    report = TuningReport()
    diag = {k: [] for k in
            ("t", "temperature", "log_z_cum", "ess", "repeats", "step_scale")}
    temp = 0.0
    level = 0

    while temp < 1.0:
        level += 1
        if level > max_levels:
            raise ContractViolationError(f"exceeded {max_levels} levels")
        if adaptive:
            new_temp = next_temperature(log_like, log_w, temp, alpha)
        else:
            if level >= len(fixed_temps):
                raise ContractViolationError("schedule exhausted before reaching 1")
            new_temp = float(fixed_temps[level])
        delta = new_temp - temp
        lw = _incremental_log_weights(log_w, log_like, delta)
        inc = logsumexp1(lw)
        if not np.isfinite(inc):
            raise ZeroSurvivorsError("all incremental weights vanished")
        log_z_terms.append(inc)
        ess_val = float(np.exp(2.0 * inc - logsumexp1(2.0 * lw)))
        weights = np.exp(np.where(lw > -np.inf, lw - inc, -np.inf))

        if adaptive and repeats is None:
            _, cov = weighted_mean_and_cov(positions, weights)
            cov = regularize_covariance(cov)
            jdes = j_desired(positions, weights, cov)
        elif adaptive:
            _, cov = weighted_mean_and_cov(positions, weights)
            cov = regularize_covariance(cov)
            jdes = None

        idx = resample(weights, resampling_scheme, rng)
        positions = positions[idx]
        log_like = log_like[idx]
        log_w = np.full(n, -np.log(n))

        target = tempered_target(model, new_temp)
        lp = np.asarray(model.log_prior(positions), dtype=float)
        ld = lp + np.where(np.isneginf(log_like), -np.inf, new_temp * log_like) \
            if new_temp != 0.0 else lp
        if adaptive:
            widths = None
            if kernel_family == "slice":
                widths = slice_width_factor * np.sqrt(np.diag(cov))
            sel = select_step_scale(
                positions, target, candidates, kernel_family, rng,
                covariance=cov, log_density=ld, log_like=log_like,
                slice_widths=widths, slice_width_factor=slice_width_factor,
                mala_textbook_drift=mala_textbook_drift,
            )
            cfg = KernelConfig(
                family=kernel_family, step_scale=sel.step_scale, covariance=cov,
                slice_widths=widths, slice_width_factor=slice_width_factor,
                mala_textbook_drift=mala_textbook_drift,
            )
            if repeats is None:
                positions, r_used, _, log_like = adaptive_repeats(
                    sel.positions, target, cfg, jdes, rng,
                    max_repeats=max_repeats, proportion=repeat_proportion,
                    initial_jumps=sel.jumps,
                    log_density=sel.log_density, log_like=sel.log_like,
                )
            else:
                r_used = int(repeats)
                positions, log_like = sel.positions, sel.log_like
                if r_used > 1:
                    positions, _, log_like, _ = mutate(
                        positions, target, cfg, rng, repeats=r_used - 1,
                        log_density=sel.log_density, log_like=sel.log_like,
                    )
            cfg.repeats = r_used
            key = (tuple(sel.step_scale)
                   if isinstance(sel.step_scale, (tuple, list, np.ndarray))
                   else float(sel.step_scale))
            report.append_level(
                step_scale=sel.step_scale,
                repeats=r_used,
                median_esjd_per_eval=sel.median_esjd_per_eval[key],
                j_desired_value=jdes,
                config=cfg,
            )
            scale_used = (sel.step_scale if np.isscalar(sel.step_scale)
                          else np.nan)
        else:
            cfg = plan[min(level - 1, len(plan) - 1)]
            positions, _, log_like, stats = mutate(
                positions, target, cfg, rng, log_density=ld, log_like=log_like,
            )
            r_used = stats.sweeps
            scale_used = cfg.step_scale if np.isscalar(cfg.step_scale) else np.nan

        temp = new_temp
        temps.append(temp)
        diag["t"].append(level + 1)
        diag["temperature"].append(temp)
        diag["log_z_cum"].append(float(np.sum(log_z_terms)))
        diag["ess"].append(ess_val)
        diag["repeats"].append(r_used)
        diag["step_scale"].append(scale_used)

    archive = None
    if keep_archive:
        archive = WeightedArchive()
        archive.append(positions, log_w, len(temps) - 1)
    sched = TemperatureSchedule(
        np.asarray(temps), provenance="pilot" if adaptive else "user"
    )
    result = RunResult(
        log_evidence=float(np.sum(log_z_terms)),
        level_log_evidence=np.asarray(log_z_terms),
        likelihood_evals=model.likelihood_evals - evals0,
        wall_time=time.perf_counter() - start,
        schedule=sched,
        archive=archive,
        diagnostics=diag,
    )
    if adaptive:
        return result, sched, report
    return result


def run_adaptive_tasmc(
    model,
    n_particles,
    *,
    alpha,
    rng,
    kernel_family="rw",
    candidates=None,
    repeats=None,
    resampling_scheme="stratified",
    repeat_proportion=0.5,
    max_repeats=100,
    max_levels=100_000,
    slice_width_factor=2.0,
    mala_textbook_drift=False,
    keep_archive=True,
):
    """Adaptive annealing: ESS-bisected temperatures, per-level calibration.

    Returns ``(result, schedule, tuning_report)``.
    """
    if not 0.0 < alpha < 1.0:
        raise ContractViolationError("alpha must lie strictly inside (0, 1)")
    return _anneal(
        model, n_particles, rng=rng, alpha=alpha,
        kernel_family=kernel_family, candidates=candidates, repeats=repeats,
        resampling_scheme=resampling_scheme,
        repeat_proportion=repeat_proportion, max_repeats=max_repeats,
        max_levels=max_levels, slice_width_factor=slice_width_factor,
        mala_textbook_drift=mala_textbook_drift, keep_archive=keep_archive,
    )


def run_fixed_tasmc(
    model,
    n_particles,
    schedule: TemperatureSchedule,
    *,
    rng,
    kernel_plan,
    resampling_scheme="stratified",
    keep_archive=True,
):
    """Replay a frozen temperature schedule and kernel plan (unbiased)."""
    return _anneal(
        model, n_particles, rng=rng, schedule=schedule, kernel_plan=kernel_plan,
        resampling_scheme=resampling_scheme, keep_archive=keep_archive,
    )
