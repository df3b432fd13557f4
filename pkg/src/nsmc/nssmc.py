"""Threshold-schedule SMC for evidence estimation (fixed and adaptive).

Each level splits the importance sampling into two branches: particles above
the next likelihood threshold keep propagating the constrained prior, while
the complement -- the shell between consecutive thresholds -- is weighted by
its likelihood and banked as that level's posterior/evidence contribution.
The evidence is the sum of shell masses; resampling happens at every level
and mutation uses a constrained-prior invariant kernel (or exact constrained
draws when the model supports them).

The fixed runner consumes a frozen schedule and kernel plan, which keeps its
evidence estimator unbiased.  The adaptive runner picks thresholds as
population quantiles, terminates on the ratio of the running and
terminate-now evidence estimates, and calibrates kernels per level,
recording everything needed for an exact replay.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ._util import logsumexp1

from .errors import (
    ContractViolationError,
    DegenerateCloudError,
    NonProgressError,
    ZeroSurvivorsError,
)
from .kernels import (
    KernelConfig,
    constrained_prior_target,
    default_step_candidates,
    mutate,
    regularize_covariance,
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
    "ThresholdSchedule",
    "threshold_quantile",
    "run_fixed_nssmc",
    "run_adaptive_nssmc",
]


@dataclass
class ThresholdSchedule:
    """Increasing log-likelihood thresholds with sentinel endpoints -inf/+inf."""

    log_levels: np.ndarray
    provenance: str = "user"

    def __post_init__(self):
        self.log_levels = np.asarray(self.log_levels, dtype=float)
        if self.log_levels.size < 2:
            raise ContractViolationError("schedule needs at least the sentinels")
        if not np.isneginf(self.log_levels[0]) or not np.isposinf(self.log_levels[-1]):
            raise ContractViolationError("schedule endpoints must be -inf and +inf")
        if np.any(np.diff(self.log_levels) <= 0):
            raise ContractViolationError("thresholds must be strictly increasing")

    @property
    def interior(self) -> np.ndarray:
        return self.log_levels[1:-1]

    @property
    def final_level_count(self) -> int:
        return len(self.log_levels) - 1

    def to_dict(self) -> dict:
        return {
            "log_levels": [float(v) for v in self.log_levels],
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ThresholdSchedule":
        return cls(np.asarray(data["log_levels"], dtype=float),
                   data.get("provenance", "user"))


def threshold_quantile(values, rho: float) -> float:
    """The ceil((1-rho)*N)-th order statistic of the likelihood values, so a
    fraction of about rho lies strictly above it."""
    if not 0.0 < rho < 1.0:
        raise ContractViolationError("rho must lie strictly inside (0, 1)")
    v = np.sort(np.asarray(values, dtype=float))
    n = v.size
    k = int(np.ceil((1.0 - rho) * n))
    k = min(max(k, 1), n)
    return float(v[k - 1])


def _masked_logsumexp(values: np.ndarray) -> float:
    return logsumexp1(np.asarray(values, dtype=float))


def _init_cloud(model, n, rng):
    positions = np.atleast_2d(model.sample_prior(rng, n)).copy()
    log_like = np.asarray(model.log_likelihood(positions), dtype=float).copy()
    return positions, log_like


def _kernel_plan_list(kernel_plan):
    if kernel_plan is None:
        return None
    if isinstance(kernel_plan, TuningReport):
        return kernel_plan.kernel_plan()
    if isinstance(kernel_plan, KernelConfig):
        return [kernel_plan]
    return list(kernel_plan)


def run_fixed_nssmc(
    model,
    n_particles,
    schedule: ThresholdSchedule,
    *,
    rng,
    kernel_plan=None,
    exact=False,
    resampling_scheme="stratified",
    strict=False,
    keep_archive=True,
):
    """Run the fixed-threshold sampler once.

    ``kernel_plan`` supplies the per-level mutation kernels (a
    :class:`TuningReport`, a list of :class:`KernelConfig`, or one config
    reused everywhere); ``exact=True`` uses the model's constrained sampler
    instead.  ``strict`` selects the strict-inequality constraint flavour
    used when replaying an adaptively generated schedule.
    """
    n = int(n_particles)
    start = time.perf_counter()
    evals0 = model.likelihood_evals
    plan = _kernel_plan_list(kernel_plan)
    if not exact and plan is None:
        raise ContractViolationError("MCMC runs need a kernel plan")

    positions, log_like = _init_cloud(model, n, rng)
    log_w = np.full(n, -np.log(n))
    log_p = 0.0
    committed = []
    archive = WeightedArchive() if keep_archive else None
    diag = {k: [] for k in
            ("t", "log_level", "log_p", "log_z_level", "ess", "repeats",
             "step_scale")}

    for i, level in enumerate(schedule.log_levels[1:]):
        holds = (log_like > level) if strict else (log_like >= level)
        shell_lw = np.where(holds, -np.inf, log_p + log_w + log_like)
        shell_term = _masked_logsumexp(shell_lw)
        committed.append(shell_term)
        if keep_archive:
            archive.append(positions, shell_lw, i + 1)

        surv_mass = _masked_logsumexp(np.where(holds, log_w, -np.inf))
        cfg = None
        if not np.isfinite(surv_mass):
            if i == 0:
                raise ZeroSurvivorsError(
                    "no particle reached the first threshold"
                )
            diag["t"].append(i + 2)
            diag["log_level"].append(float(level))
            diag["log_p"].append(log_p)
            diag["log_z_level"].append(shell_term)
            diag["ess"].append(0.0)
            diag["repeats"].append(0)
            diag["step_scale"].append(np.nan)
            break
        log_p += surv_mass
        weights = np.where(holds, np.exp(log_w - surv_mass), 0.0)
        ess_val = float(1.0 / np.sum(np.square(weights)))
        idx = resample(weights, resampling_scheme, rng)
        positions = positions[idx]
        log_like = log_like[idx]
        log_w = np.full(n, -np.log(n))

        if exact:
            positions = np.atleast_2d(model.constrained_sampler(rng, level, n))
            log_like = np.asarray(model.log_likelihood(positions), dtype=float)
            r_used, scale_used = 1, np.nan
        else:
            cfg = plan[min(i, len(plan) - 1)]
            target = constrained_prior_target(model, level, strict=strict)
            lp = np.asarray(model.log_prior(positions), dtype=float)
            positions, _, log_like, stats = mutate(
                positions, target, cfg, rng,
                log_density=lp, log_like=log_like, two_stage=True,
            )
            r_used = stats.sweeps
            scale_used = cfg.step_scale if np.isscalar(cfg.step_scale) else np.nan
        diag["t"].append(i + 2)
        diag["log_level"].append(float(level))
        diag["log_p"].append(log_p)
        diag["log_z_level"].append(shell_term)
        diag["ess"].append(ess_val)
        diag["repeats"].append(r_used)
        diag["step_scale"].append(scale_used)

    diag["log_like"] = diag["log_level"]  # diagnostic-curve aliases
    log_evidence = _masked_logsumexp(np.asarray(committed))
    return RunResult(
        log_evidence=log_evidence,
        level_log_evidence=np.asarray(committed),
        likelihood_evals=model.likelihood_evals - evals0,
        wall_time=time.perf_counter() - start,
        schedule=schedule,
        archive=archive,
        diagnostics=diag,
    )


def run_adaptive_nssmc(
    model,
    n_particles,
    *,
    rho,
    rng,
    eps=1e-2,
    kernel_family="rw",
    candidates=None,
    repeats=None,
    exact=False,
    resampling_scheme="stratified",
    repeat_proportion=0.5,
    max_repeats=100,
    max_levels=100_000,
    slice_width_factor=2.0,
    mala_textbook_drift=False,
    keep_archive=True,
):
    """Adaptive thresholds at the (1-rho) likelihood quantile, strict-flavour
    constraints, ratio-based termination, per-level kernel calibration.

    Termination compares the running evidence A (committed shells plus the
    shell the new threshold would create) with the terminate-now evidence B
    (the threshold replaced by +inf); once ``A/B > 1 - eps`` the remaining
    mass above the proposed threshold is negligible and the run finishes on
    the terminal shell.  Returns ``(result, schedule, tuning_report)``.
    """
    if not 0.0 < rho < 1.0:
        raise ContractViolationError("rho must lie strictly inside (0, 1)")
    n = int(n_particles)
    start = time.perf_counter()
    evals0 = model.likelihood_evals
    if exact and model.constrained_sampler is None:
        raise ContractViolationError("model lacks an exact constrained sampler")
    if candidates is None:
        if kernel_family == "coord_rw":
            candidates = [(0.1, 0.025)]
        elif kernel_family == "slice":
            candidates = [1.0]
        else:
            candidates = default_step_candidates(model.dimension)

    positions, log_like = _init_cloud(model, n, rng)
    log_w = np.full(n, -np.log(n))
    log_p = 0.0
    committed = []
    committed_total = -np.inf
    thresholds = [-np.inf]
    report = TuningReport()
    archive = WeightedArchive() if keep_archive else None
    diag = {k: [] for k in
            ("t", "log_level", "log_p", "log_z_level", "ess", "repeats",
             "step_scale")}
    prev_level = -np.inf
    no_progress = 0

    for it in range(2, max_levels + 2):
        level = threshold_quantile(log_like, rho)
        below = log_like <= level
        log_term_all = _masked_logsumexp(log_p + log_w + log_like)
        if not np.isfinite(log_term_all):
            raise DegenerateCloudError("likelihood vanished on every particle")
        log_shell = _masked_logsumexp(
            np.where(below, log_p + log_w + log_like, -np.inf)
        )
        running = np.logaddexp(committed_total, log_shell)
        terminal = np.logaddexp(committed_total, log_term_all)
        if running - terminal > np.log1p(-eps):
            committed.append(log_term_all)
            thresholds.append(np.inf)
            if keep_archive:
                archive.append(positions, log_p + log_w + log_like, it - 1)
            diag["t"].append(it)
            diag["log_level"].append(np.inf)
            diag["log_p"].append(log_p)
            diag["log_z_level"].append(log_term_all)
            diag["ess"].append(0.0)
            diag["repeats"].append(0)
            diag["step_scale"].append(np.nan)
            break
        committed.append(log_shell)
        committed_total = running
        thresholds.append(level)
        if keep_archive:
            archive.append(
                positions[below],
                (log_p + log_w + log_like)[below],
                it - 1,
            )
        if level <= prev_level:
            no_progress += 1
            if no_progress >= 3:
                raise NonProgressError(
                    f"threshold failed to increase for {no_progress} iterations"
                )
        else:
            no_progress = 0
            prev_level = level

        holds = log_like > level
        surv_mass = _masked_logsumexp(np.where(holds, log_w, -np.inf))
        if not np.isfinite(surv_mass):
            raise ZeroSurvivorsError("no survivors above an interior threshold")
        log_p += surv_mass
        weights = np.where(holds, np.exp(log_w - surv_mass), 0.0)
        ess_val = float(1.0 / np.sum(np.square(weights)))

        if exact:
            idx = resample(weights, resampling_scheme, rng)
            positions = positions[idx]
            log_like = log_like[idx]
            positions = np.atleast_2d(model.constrained_sampler(rng, level, n))
            log_like = np.asarray(model.log_likelihood(positions), dtype=float)
            r_used, scale_used = 1, np.nan
        else:
            _, cov = weighted_mean_and_cov(positions, weights)
            cov = regularize_covariance(cov)
            jdes = None
            if repeats is None:
                jdes = j_desired(positions, weights, cov)
            idx = resample(weights, resampling_scheme, rng)
            positions = positions[idx]
            log_like = log_like[idx]
            widths = None
            if kernel_family == "slice":
                widths = slice_width_factor * np.sqrt(np.diag(cov))
            target = constrained_prior_target(model, level, strict=True)
            lp = np.asarray(model.log_prior(positions), dtype=float)
            sel = select_step_scale(
                positions, target, candidates, kernel_family, rng,
                covariance=cov, log_density=lp, log_like=log_like,
                slice_widths=widths, slice_width_factor=slice_width_factor,
                mala_textbook_drift=mala_textbook_drift,
            )
            cfg = KernelConfig(
                family=kernel_family,
                step_scale=sel.step_scale,
                covariance=cov,
                slice_widths=widths,
                slice_width_factor=slice_width_factor,
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
        log_w = np.full(n, -np.log(n))
        diag["t"].append(it)
        diag["log_level"].append(float(level))
        diag["log_p"].append(log_p)
        diag["log_z_level"].append(log_shell)
        diag["ess"].append(ess_val)
        diag["repeats"].append(r_used)
        diag["step_scale"].append(scale_used)
    else:
        raise NonProgressError(f"exceeded {max_levels} adaptive levels")

    diag["log_like"] = diag["log_level"]
    schedule = ThresholdSchedule(np.asarray(thresholds), provenance="pilot")
    result = RunResult(
        log_evidence=_masked_logsumexp(np.asarray(committed)),
        level_log_evidence=np.asarray(committed),
        likelihood_evals=model.likelihood_evals - evals0,
        wall_time=time.perf_counter() - start,
        schedule=schedule,
        archive=archive,
        diagnostics=diag,
    )
    return result, schedule, report
