"""MCMC mutation kernels for constrained-prior and tempered targets.

Every step function is vectorised over a batch of particles: ``x`` may be a
single point ``(d,)`` or a cloud ``(N, d)``, and all randomness comes from
the supplied generator in a fixed draw order, so results are reproducible.

Two target flavours are supported.  Constrained-prior targets (threshold
methods) have density ``prior * I{log L >/>= level}``; their Metropolis
acceptance factorises into a prior-ratio stage and a constraint indicator,
which enables the two-stage trick of only evaluating the likelihood after
the prior ratio has conditionally accepted.  Tempered targets have density
``prior * L**temperature``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    CapabilityError,
    ContractViolationError,
    StuckSliceWarning,
)

__all__ = [
    "LikelihoodConstraint",
    "MutationTarget",
    "KernelConfig",
    "StepResult",
    "rw_step",
    "coord_rw_step",
    "mala_step",
    "slice_step",
    "two_stage_accept",
    "step",
    "mutate",
    "constrained_prior_target",
    "tempered_target",
    "plain_target",
    "regularize_covariance",
    "default_step_candidates",
    "KERNEL_FAMILIES",
]


def regularize_covariance(cov) -> np.ndarray:
    """Add ``1e-8 * trace/d`` to the diagonal so degenerate clouds
    (duplicates after resampling) do not break the Cholesky factor."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = cov.shape[0]
    tr = float(np.trace(cov))
    if not np.isfinite(tr) or tr <= 0.0:
        return np.eye(d)
    return cov + (1e-8 * tr / d) * np.eye(d)


def _safe_cholesky(cov) -> np.ndarray:
    reg = regularize_covariance(cov)
    d = reg.shape[0]
    jitter = 1e-8 * np.trace(reg) / d
    for _ in range(10):
        try:
            return np.linalg.cholesky(reg)
        except np.linalg.LinAlgError:
            reg = reg + jitter * np.eye(d)
            jitter *= 10.0
    raise ContractViolationError("covariance is not SPD even after regularisation")


def _mahalanobis_sq(dx: np.ndarray, chol: np.ndarray) -> np.ndarray:
    w = solve_triangular(chol, dx.T, lower=True)
    return np.sum(np.square(w), axis=0)


@dataclass
class LikelihoodConstraint:
    """Threshold test ``log L > level`` (strict) or ``>= level``."""

    log_level: float
    strict: bool = True

    def holds(self, log_like):
        log_like = np.asarray(log_like, dtype=float)
        if self.strict:
            return log_like > self.log_level
        return log_like >= self.log_level


@dataclass
class MutationTarget:
    """Log density the kernel must leave invariant, in evaluable pieces.

    ``log_prior`` is always present.  A constrained target carries a
    ``constraint`` on the (counted) ``log_likelihood``; a tempered target
    carries a ``temperature`` exponent instead.  Leaving both unset gives a
    plain target whose full density is ``log_prior`` itself.
    """

    log_prior: object
    log_likelihood: object = None
    temperature: float = None
    constraint: LikelihoodConstraint = None
    grad_log_density: object = None

    def log_density(self, x):
        lp = np.asarray(self.log_prior(x), dtype=float)
        if self.constraint is not None:
            ll = np.asarray(self.log_likelihood(x), dtype=float)
            return np.where(self.constraint.holds(ll), lp, -np.inf)
        if self.temperature is not None and self.temperature != 0.0:
            ll = np.asarray(self.log_likelihood(x), dtype=float)
            contrib = np.where(np.isneginf(ll), -np.inf, self.temperature * ll)
            return lp + contrib
        return lp

    def density_parts(self, x):
        """(full log density, log likelihood or None) in one pass."""
        lp = np.asarray(self.log_prior(x), dtype=float)
        if self.constraint is not None:
            ll = np.asarray(self.log_likelihood(x), dtype=float)
            return np.where(self.constraint.holds(ll), lp, -np.inf), ll
        if self.temperature is not None and self.temperature != 0.0:
            ll = np.asarray(self.log_likelihood(x), dtype=float)
            contrib = np.where(np.isneginf(ll), -np.inf, self.temperature * ll)
            return lp + contrib, ll
        return lp, None


def constrained_prior_target(model, log_level, strict=True) -> MutationTarget:
    """Prior restricted to ``{log L >/>= log_level}``; gradient (when the
    model has one) is the prior gradient only -- the likelihood enters solely
    through the constraint."""
    return MutationTarget(
        log_prior=model.log_prior,
        log_likelihood=model.log_likelihood,
        constraint=LikelihoodConstraint(float(log_level), strict),
        grad_log_density=model.grad_log_prior,
    )


def tempered_target(model, temperature) -> MutationTarget:
    """Geometric bridge ``prior * L**temperature``."""
    grad = None
    if model.grad_log_prior is not None and model.grad_log_likelihood is not None:
        t = float(temperature)

        def grad(x, _t=t):
            return model.grad_log_prior(x) + _t * model.grad_log_likelihood(x)

    return MutationTarget(
        log_prior=model.log_prior,
        log_likelihood=model.log_likelihood,
        temperature=float(temperature),
        grad_log_density=grad,
    )


def plain_target(log_density, gradient=None) -> MutationTarget:
    return MutationTarget(log_prior=log_density, grad_log_density=gradient)


def default_step_candidates(dimension: int):
    """Default step-scale grid ``2.38/sqrt(d) * 2**j`` for j = -4..2."""
    base = 2.38 / np.sqrt(dimension)
    return [base * 2.0**j for j in range(-4, 3)]


@dataclass
class KernelConfig:
    """Kernel family plus its tunables.

    ``step_scale`` is a scalar for rw/mala and a pair of axis scales for
    coord_rw.  ``covariance`` is the population covariance estimate used for
    proposal shaping and for the Mahalanobis norm in ESJD/jump statistics
    (regularised before factorisation).  Slice sampling ignores
    ``step_scale`` and uses per-dimension widths instead.
    """

    family: str = "rw"
    step_scale: object = 1.0
    covariance: np.ndarray = None
    repeats: int = 1
    slice_width_factor: float = 2.0
    slice_widths: np.ndarray = None
    mala_textbook_drift: bool = False

    def covariance_matrix(self, dimension: int) -> np.ndarray:
        if self.covariance is None:
            return np.eye(dimension)
        return np.atleast_2d(np.asarray(self.covariance, dtype=float))

    def cholesky(self, dimension: int) -> np.ndarray:
        return _safe_cholesky(self.covariance_matrix(dimension))

    def widths_for(self, dimension: int) -> np.ndarray:
        if self.slice_widths is not None:
            return np.broadcast_to(
                np.asarray(self.slice_widths, dtype=float), (dimension,)
            ).copy()
        cov = regularize_covariance(self.covariance_matrix(dimension))
        return self.slice_width_factor * np.sqrt(np.diag(cov))

    def to_dict(self) -> dict:
        step = self.step_scale
        if isinstance(step, (tuple, list, np.ndarray)):
            step = [float(s) for s in step]
        else:
            step = float(step)
        return {
            "family": self.family,
            "step_scale": step,
            "covariance": None
            if self.covariance is None
            else np.asarray(self.covariance, dtype=float).tolist(),
            "repeats": int(self.repeats),
            "slice_width_factor": float(self.slice_width_factor),
            "slice_widths": None
            if self.slice_widths is None
            else np.asarray(self.slice_widths, dtype=float).tolist(),
            "mala_textbook_drift": bool(self.mala_textbook_drift),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KernelConfig":
        data = dict(data)
        step = data.get("step_scale", 1.0)
        if isinstance(step, list):
            step = tuple(step)
        cov = data.get("covariance")
        widths = data.get("slice_widths")
        return cls(
            family=data.get("family", "rw"),
            step_scale=step,
            covariance=None if cov is None else np.asarray(cov, dtype=float),
            repeats=int(data.get("repeats", 1)),
            slice_width_factor=float(data.get("slice_width_factor", 2.0)),
            slice_widths=None if widths is None else np.asarray(widths, dtype=float),
            mala_textbook_drift=bool(data.get("mala_textbook_drift", False)),
        )


@dataclass
class StepResult:
    """Outcome of one kernel sweep over a batch of particles.

    ``esjd`` and ``jump`` are the per-particle Mahalanobis ESJD and expected
    jump distance samples; ``evals`` is the per-particle count of target
    evaluations (slice sampling only, others cost one per step).
    """

    positions: np.ndarray
    accepted: np.ndarray
    esjd: np.ndarray
    jump: np.ndarray
    log_density: np.ndarray = None
    log_like: np.ndarray = None
    evals: np.ndarray = None


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2:
        raise ContractViolationError("positions must have shape (d,) or (N, d)")
    return x, False


def _squeeze_result(res: StepResult, squeeze: bool) -> StepResult:
    if not squeeze:
        return res
    res.positions = res.positions[0]
    res.accepted = bool(res.accepted[0])
    res.esjd = float(res.esjd[0])
    res.jump = float(res.jump[0])
    if res.log_density is not None:
        res.log_density = float(res.log_density[0])
    if res.log_like is not None:
        res.log_like = float(res.log_like[0])
    if res.evals is not None:
        res.evals = float(res.evals[0])
    return res


def two_stage_accept(proposal, prior_ratio_accept, constraint, log_likelihood):
    """Finish a constrained Metropolis acceptance in two stages.

    The likelihood is evaluated only for proposals the prior-ratio stage
    conditionally accepted, so rejected proposals cost no likelihood calls
    while the composite event keeps probability
    ``min{1, prior ratio} * I{constraint}``.

    Returns ``(accepted, proposal_log_like)`` where the likelihood entries of
    skipped proposals are NaN.
    """
    stage1 = np.atleast_1d(np.asarray(prior_ratio_accept, dtype=bool))
    accepted = np.zeros(stage1.shape, dtype=bool)
    log_like = np.full(stage1.shape, np.nan)
    idx = np.flatnonzero(stage1)
    if idx.size:
        pts = np.atleast_2d(np.asarray(proposal, dtype=float))[idx]
        vals = np.asarray(log_likelihood(pts), dtype=float)
        log_like[idx] = vals
        accepted[idx] = constraint.holds(vals)
    return accepted, log_like


def _mh_finish(
    x,
    proposal,
    msq,
    logq_diff,
    target,
    rng,
    log_density,
    log_like,
    two_stage,
):
    """Shared Metropolis bookkeeping for rw/coord_rw/mala proposals."""
    n = x.shape[0]
    logu = np.log(rng.random(n))
    if target.constraint is not None:
        if log_like is None:
            raise ContractViolationError(
                "constrained targets need the current log-likelihood cache"
            )
        log_like = np.asarray(log_like, dtype=float)
        if log_density is not None:
            lp_x = np.asarray(log_density, dtype=float)
        else:
            lp_x = np.asarray(target.log_prior(x), dtype=float)
        if not np.all(np.isfinite(lp_x)):
            raise ContractViolationError("current points must have finite density")
        lp_y = np.asarray(target.log_prior(proposal), dtype=float)
        log_ratio = lp_y - lp_x + logq_diff
        stage1 = logu < log_ratio
        if two_stage:
            accepted, ll_prop = two_stage_accept(
                proposal, stage1, target.constraint, target.log_likelihood
            )
            # realised acceptance indicator: an unbiased (noisier) ESJD factor
            alpha = accepted.astype(float)
        else:
            ll_prop = np.asarray(target.log_likelihood(proposal), dtype=float)
            holds = target.constraint.holds(ll_prop)
            accepted = stage1 & holds
            alpha = np.exp(np.minimum(log_ratio, 0.0)) * holds
        new_ld = np.where(accepted, lp_y, lp_x)
        new_ll = np.where(accepted, ll_prop, log_like)
    else:
        need_ll = target.temperature is not None and target.temperature != 0.0
        if log_density is None:
            ld_x, ll_x = target.density_parts(x)
        else:
            ld_x = np.asarray(log_density, dtype=float)
            ll_x = None if log_like is None else np.asarray(log_like, dtype=float)
            if need_ll and ll_x is None:
                raise ContractViolationError(
                    "tempered targets need log_like alongside log_density"
                )
        if not np.all(np.isfinite(ld_x)):
            raise ContractViolationError("current points must have finite density")
        ld_y, ll_y = target.density_parts(proposal)
        log_ratio = ld_y - ld_x + logq_diff
        accepted = logu < log_ratio
        alpha = np.exp(np.minimum(log_ratio, 0.0))
        new_ld = np.where(accepted, ld_y, ld_x)
        if ll_y is not None and ll_x is not None:
            new_ll = np.where(accepted, ll_y, ll_x)
        elif ll_y is not None:
            new_ll = np.where(accepted, ll_y, -np.inf)
        else:
            new_ll = log_like
    positions = np.where(accepted[:, None], proposal, x)
    return StepResult(
        positions=positions,
        accepted=accepted,
        esjd=msq * alpha,
        jump=np.sqrt(msq) * alpha,
        log_density=new_ld,
        log_like=new_ll,
    )


def rw_step(x, target, config, rng, *, log_density=None, log_like=None, two_stage=False):
    """Random-walk Metropolis: proposals ``N(x, h^2 * Sigma)``."""
    x, squeeze = _as_batch(x)
    n, d = x.shape
    chol = config.cholesky(d)
    h = float(config.step_scale)
    z = rng.standard_normal((n, d))
    proposal = x + h * (z @ chol.T)
    msq = h * h * np.sum(np.square(z), axis=1)
    res = _mh_finish(
        x, proposal, msq, 0.0, target, rng, log_density, log_like, two_stage
    )
    return _squeeze_result(res, squeeze)


def coord_rw_step(
    x, target, config, rng, *, log_density=None, log_like=None, two_stage=False
):
    """Random-walk move along one uniformly chosen coordinate axis.

    The step size is drawn uniformly from the configured scales (a pair by
    default), which keeps the kernel useful across progressively narrower
    constrained sets.  ESJD uses the global covariance norm.
    """
    x, squeeze = _as_batch(x)
    n, d = x.shape
    scales = np.atleast_1d(np.asarray(config.step_scale, dtype=float))
    axes = rng.integers(0, d, size=n)
    if scales.size > 1:
        h = scales[rng.integers(0, scales.size, size=n)]
    else:
        h = np.full(n, scales[0])
    delta = h * rng.standard_normal(n)
    proposal = x.copy()
    proposal[np.arange(n), axes] += delta
    cov = regularize_covariance(config.covariance_matrix(d))
    inv_diag = np.diag(np.linalg.inv(cov))
    msq = np.square(delta) * inv_diag[axes]
    res = _mh_finish(
        x, proposal, msq, 0.0, target, rng, log_density, log_like, two_stage
    )
    return _squeeze_result(res, squeeze)


def _mala_drift(grad, config, cov):
    if config.mala_textbook_drift:
        h = float(config.step_scale)
        return 0.5 * h * h * (grad @ cov.T)
    return grad


def mala_step(
    x, target, config, rng, *, log_density=None, log_like=None, two_stage=False
):
    """Langevin proposal ``N(x + drift(x), h^2 * Sigma)`` with the full
    asymmetric Metropolis correction.

    The default drift is the raw gradient of the log target; set
    ``mala_textbook_drift`` for the ``(h^2/2) * Sigma * grad`` version.  On
    constrained-prior targets the gradient is the prior's, so the likelihood
    appears only in the constraint stage.
    """
    if target.grad_log_density is None:
        raise CapabilityError("MALA needs a gradient for this target")
    x, squeeze = _as_batch(x)
    n, d = x.shape
    cov = regularize_covariance(config.covariance_matrix(d))
    chol = _safe_cholesky(cov)
    h = float(config.step_scale)
    grad_x = np.asarray(target.grad_log_density(x), dtype=float)
    drift_x = _mala_drift(grad_x, config, cov)
    z = rng.standard_normal((n, d))
    proposal = x + drift_x + h * (z @ chol.T)
    grad_y = np.asarray(target.grad_log_density(proposal), dtype=float)
    drift_y = _mala_drift(grad_y, config, cov)
    fwd = proposal - x - drift_x
    rev = x - proposal - drift_y
    qf = _mahalanobis_sq(fwd, chol) / (2.0 * h * h)
    qr = _mahalanobis_sq(rev, chol) / (2.0 * h * h)
    logq_diff = qf - qr
    bad = ~np.all(np.isfinite(drift_y), axis=1)
    if np.any(bad):
        logq_diff = np.where(bad, -np.inf, logq_diff)
    msq = _mahalanobis_sq(proposal - x, chol)
    res = _mh_finish(
        x, proposal, msq, logq_diff, target, rng, log_density, log_like, two_stage
    )
    return _squeeze_result(res, squeeze)


def slice_step(
    x,
    target,
    config,
    rng,
    *,
    log_density=None,
    log_like=None,
    max_step_out=1000,
    max_shrink=1000,
):
    """One sweep of univariate stepping-out/shrinkage slice updates over all
    coordinates, per-dimension width from the population scale estimate.

    Always lands on a point whose density is at or above the drawn slice
    level.  If an interval collapses below 1e-12 the coordinate is left
    unchanged and a :class:`StuckSliceWarning` is emitted.  ``evals`` counts
    per-particle target evaluations for the tuning cost divisor.
    """
    x, squeeze = _as_batch(x)
    n, d = x.shape
    widths = config.widths_for(d)
    evals = np.zeros(n)

    def f(points, idx):
        evals[idx] += 1
        return np.asarray(target.log_density(points), dtype=float)

    cur = x.copy()
    if log_density is not None:
        ld_cur = np.asarray(log_density, dtype=float).copy()
    else:
        ld_cur = f(cur, np.arange(n))
    if not np.all(np.isfinite(ld_cur)):
        raise ContractViolationError("current points must have finite density")
    any_stuck = False
    for j in range(d):
        level = ld_cur + np.log(rng.random(n))
        r = rng.random(n)
        left = cur[:, j] - r * widths[j]
        right = left + widths[j]
        for side, bound in (("left", left), ("right", right)):
            active = np.arange(n)
            for _ in range(max_step_out):
                pts = cur[active].copy()
                pts[:, j] = bound[active]
                vals = f(pts, active)
                grow = vals > level[active]
                if not np.any(grow):
                    break
                grown = active[grow]
                bound[grown] += -widths[j] if side == "left" else widths[j]
                active = grown
        active = np.arange(n)
        for _ in range(max_shrink):
            if active.size == 0:
                break
            ok_width = (right[active] - left[active]) >= 1e-12
            if not np.all(ok_width):
                any_stuck = True
                active = active[ok_width]
                if active.size == 0:
                    break
            prop = left[active] + rng.random(active.size) * (
                right[active] - left[active]
            )
            pts = cur[active].copy()
            pts[:, j] = prop
            vals = f(pts, active)
            ok = vals >= level[active]
            hit = active[ok]
            cur[hit, j] = prop[ok]
            ld_cur[hit] = vals[ok]
            miss = active[~ok]
            pm = prop[~ok]
            shrink_left = pm < cur[miss, j]
            left[miss[shrink_left]] = pm[shrink_left]
            right[miss[~shrink_left]] = pm[~shrink_left]
            active = miss
    if any_stuck:
        warnings.warn("slice interval collapsed; particle left in place",
                      StuckSliceWarning)
    dx = cur - x
    accepted = np.any(dx != 0.0, axis=1)
    chol = config.cholesky(d)
    msq = _mahalanobis_sq(dx, chol)
    new_ll = None
    if target.constraint is not None:
        new_ll = np.asarray(target.log_likelihood(cur), dtype=float)
        evals += 1
    elif target.temperature is not None and target.temperature != 0.0:
        lp = np.asarray(target.log_prior(cur), dtype=float)
        new_ll = (ld_cur - lp) / target.temperature
    res = StepResult(
        positions=cur,
        accepted=accepted,
        esjd=msq,
        jump=np.sqrt(msq),
        log_density=ld_cur,
        log_like=new_ll,
        evals=evals,
    )
    return _squeeze_result(res, squeeze)


KERNEL_FAMILIES = {
    "rw": rw_step,
    "coord_rw": coord_rw_step,
    "mala": mala_step,
    "slice": slice_step,
}


def step(x, target, config, rng, **kwargs):
    """Dispatch one kernel sweep by configured family."""
    try:
        fn = KERNEL_FAMILIES[config.family]
    except KeyError:
        raise ContractViolationError(
            f"unknown kernel family {config.family!r}"
        ) from None
    if config.family != "slice":
        kwargs.setdefault("two_stage", False)
    else:
        kwargs.pop("two_stage", None)
    return fn(x, target, config, rng, **kwargs)


@dataclass
class MutationStats:
    sweeps: int
    accept_fraction: float
    mean_evals: float


def mutate(
    positions,
    target,
    config,
    rng,
    *,
    repeats=None,
    log_density=None,
    log_like=None,
    two_stage=False,
):
    """Apply ``repeats`` kernel sweeps, threading the density caches through.

    Returns ``(positions, log_density, log_like, MutationStats)``.
    """
    r = int(repeats if repeats is not None else config.repeats)
    if r < 1:
        raise ContractViolationError("repeats must be at least 1")
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    n = positions.shape[0]
    acc = np.zeros(n)
    total_evals = 0.0
    for _ in range(r):
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
        acc += res.accepted
        total_evals += float(np.sum(res.evals)) if res.evals is not None else n
    stats = MutationStats(
        sweeps=r,
        accept_fraction=float(np.mean(acc / r)),
        mean_evals=total_evals / n,
    )
    return positions, log_density, log_like, stats
