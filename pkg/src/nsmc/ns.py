"""Classic nested sampling and its improved-weights variant.

One sampling run serves both estimators: each iteration retires the worst
particle (ties broken by per-particle auxiliary uniforms), records its
likelihood as a level, and replaces it with a draw from the prior
constrained above that level -- either exactly, when the model supports it,
or by copying a random survivor and applying MCMC repeats.  The two
estimators differ only in the prior-mass compression assigned per level:
``exp(-t/N)`` for the classic quadrature, ``((N-1)/N)**t`` for the improved
one, plus an optional randomised Beta-product schedule.  After termination
the remaining live points contribute the filling-in mass.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ._util import logsumexp1

from .errors import CapabilityError, ContractViolationError, StuckRunError
from .kernels import KernelConfig, constrained_prior_target, mutate
from .results import RunResult
from .particles import WeightedArchive

__all__ = [
    "MODES",
    "CompressionSchedule",
    "ns_quadrature_weights",
    "log_quadrature_weights",
    "filling_in",
    "recompute_log_evidence",
    "run_ns",
]

MODES = ("ns", "ins", "beta")


def _log_p(T, N, mode, rng=None):
    t = np.arange(T + 1, dtype=float)
    if mode == "ns":
        return -t / N
    if mode == "ins":
        return t * np.log1p(-1.0 / N)
    if mode == "beta":
        if rng is None:
            raise ContractViolationError("beta mode needs an rng")
        steps = np.log(rng.beta(N, 1.0, size=T))
        return np.concatenate(([0.0], np.cumsum(steps)))
    raise ContractViolationError(f"unknown compression mode {mode!r}")


@dataclass
class CompressionSchedule:
    """Log prior-mass estimates ``log p_0 .. log p_T`` for one run."""

    mode: str
    n_particles: int
    log_p: np.ndarray

    @classmethod
    def generate(cls, iterations, n_particles, mode, rng=None):
        return cls(mode, int(n_particles), _log_p(iterations, n_particles, mode, rng))

    @property
    def iterations(self) -> int:
        return len(self.log_p) - 1

    def __post_init__(self):
        self.log_p = np.asarray(self.log_p, dtype=float)
        if self.log_p[0] != 0.0 or np.any(np.diff(self.log_p) >= 0):
            raise ContractViolationError("p must start at 1 and strictly decrease")


def ns_quadrature_weights(iterations, n_particles, mode="ns", rng=None):
    """Prior-mass increments ``p_{t-1} - p_t`` for t = 1..T.

    In the improved mode the increment is computed as
    ``((N-1)/N)**(t-1) / N``, the exact algebraic form of the difference.
    """
    T, N = int(iterations), int(n_particles)
    if T < 1 or N < 1:
        raise ContractViolationError("iterations and population must be >= 1")
    t = np.arange(1, T + 1, dtype=float)
    if mode == "ns":
        return np.exp(-(t - 1.0) / N) - np.exp(-t / N)
    if mode == "ins":
        b = (N - 1.0) / N
        return np.power(b, t - 1.0) / N
    if mode == "beta":
        p = np.exp(_log_p(T, N, "beta", rng))
        return -np.diff(p)
    raise ContractViolationError(f"unknown compression mode {mode!r}")


def log_quadrature_weights(iterations, n_particles, mode="ns", rng=None):
    """Log of :func:`ns_quadrature_weights`, stable for t >> N."""
    T, N = int(iterations), int(n_particles)
    t = np.arange(1, T + 1, dtype=float)
    if mode == "ns":
        return -(t - 1.0) / N + np.log(-np.expm1(-1.0 / N))
    if mode == "ins":
        return (t - 1.0) * np.log1p(-1.0 / N) - np.log(N)
    if mode == "beta":
        logp = _log_p(T, N, "beta", rng)
        with np.errstate(divide="ignore"):
            return logp[:-1] + np.log(-np.expm1(np.diff(logp)))
    raise ContractViolationError(f"unknown compression mode {mode!r}")


def filling_in(live_log_like, iterations, n_particles, mode="ns"):
    """Log of the terminal live-point contribution ``p_T * mean(L)``."""
    live = np.asarray(live_log_like, dtype=float)
    N = int(n_particles)
    T = int(iterations)
    if mode == "ns":
        log_p_T = -T / N
    elif mode == "ins":
        log_p_T = T * np.log1p(-1.0 / N)
    else:
        raise ContractViolationError("filling-in needs a deterministic mode")
    return float(log_p_T - np.log(N) + logsumexp1(live))


def recompute_log_evidence(dead_log_like, live_log_like, n_particles, mode,
                           rng=None):
    """Evidence under any compression mode from a run's stored levels.

    The sampling never depends on the mode, so estimates are recomputable
    post hoc from ``(L_t)`` and the final live likelihoods alone.
    """
    dead = np.asarray(dead_log_like, dtype=float)
    T = len(dead)
    lw = log_quadrature_weights(T, n_particles, mode, rng) + dead
    terms = [logsumexp1(lw)] if T else []
    if live_log_like is not None and mode in ("ns", "ins"):
        terms.append(filling_in(live_log_like, T, n_particles, mode))
    return float(logsumexp1(terms))


def _default_kernel(positions):
    d = positions.shape[1]
    cov = np.cov(positions, rowvar=False)
    if d == 1:
        cov = np.atleast_2d(cov)
    return KernelConfig(family="rw", step_scale=2.38 / np.sqrt(d), covariance=cov,
                        repeats=10)


def run_ns(
    model,
    n_particles,
    *,
    rng,
    exact=False,
    kernel_config=None,
    repeats=None,
    eps=1e-8,
    max_iter=None,
    max_stuck=1000,
    keep_archive=True,
):
    """Run nested sampling once; return the (classic, improved) result pair.

    Termination follows the standard rule: stop once the optimistic bound on
    the remaining mass, ``p_t * max_k L(X^k)``, drops below ``eps`` times the
    accumulated evidence.  ``exact=True`` uses the model's constrained
    sampler for replacements; otherwise a uniformly chosen survivor is copied
    and moved by ``repeats`` constrained-kernel steps with two-stage
    acceptance.
    """
    N = int(n_particles)
    if N < 2:
        raise ContractViolationError("nested sampling needs at least 2 particles")
    start_time = time.perf_counter()
    start_evals = model.likelihood_evals

    X = np.atleast_2d(model.sample_prior(rng, N)).copy()
    ll = np.asarray(model.log_likelihood(X), dtype=float).copy()
    aux = rng.random(N)
    if exact:
        if model.constrained_sampler is None:
            raise CapabilityError("model lacks an exact constrained sampler")
    elif kernel_config is None:
        kernel_config = _default_kernel(X)

    log_n = np.log(N)
    log_dns = np.log(-np.expm1(-1.0 / N))  # log(1 - e^{-1/N})
    log_b = np.log1p(-1.0 / N)             # log((N-1)/N)
    cap = int(max_iter) if max_iter is not None else 100_000 * N
    log_eps = np.log(eps)

    dead_ll = []
    dead_pos = [] if keep_archive else None
    logz_ns = -np.inf
    logz_ins = -np.inf
    diag_t, diag_like = [], []
    max_ll = float(ll.max())
    stuck = 0
    T = 0

    for t in range(1, cap + 1):
        m = int(np.argmin(ll))
        level = float(ll[m])
        if not exact and np.count_nonzero(ll == level) > 1:
            ties = np.flatnonzero(ll == level)
            m = int(ties[np.argmin(aux[ties])])
        v_level = float(aux[m])

        dead_ll.append(level)
        if keep_archive:
            dead_pos.append(X[m].copy())
        logz_ns = np.logaddexp(logz_ns, -(t - 1.0) / N + log_dns + level)
        logz_ins = np.logaddexp(logz_ins, (t - 1.0) * log_b - log_n + level)
        diag_t.append(t)
        diag_like.append(level)
        T = t

        # replace the worst particle, then test for termination
        j = int(rng.integers(N - 1))
        if j >= m:
            j += 1
        if exact:
            xnew = model.constrained_sampler(rng, level, None)
            X[m] = xnew
            ll[m] = float(model.log_likelihood(xnew))
            aux[m] = rng.random()
            stuck = 0
        else:
            # the survivor's auxiliary variable picks the constraint flavour
            # on the tie-extended space
            strict = aux[j] <= v_level
            target = constrained_prior_target(model, level, strict=strict)
            lp0 = np.asarray(model.log_prior(X[j : j + 1]), dtype=float)
            pos, _, llv, _ = mutate(
                X[j : j + 1].copy(),
                target,
                kernel_config,
                rng,
                repeats=repeats,
                log_density=lp0,
                log_like=np.asarray([ll[j]]),
                two_stage=True,
            )
            X[m] = pos[0]
            ll[m] = float(llv[0])
            if ll[m] == level:
                aux[m] = v_level + rng.random() * (1.0 - v_level)
                stuck += 1
            else:
                aux[m] = rng.random()
                stuck = 0
            if stuck >= max_stuck:
                raise StuckRunError(
                    f"kernel failed to escape level {level} for {stuck} iterations"
                )
        if ll[m] > max_ll:
            max_ll = float(ll[m])

        if -t / N + max_ll < log_eps + logz_ns:
            break

    dead_ll = np.asarray(dead_ll)
    fill_ns = filling_in(ll, T, N, "ns")
    fill_ins = filling_in(ll, T, N, "ins")
    logz_ns = float(np.logaddexp(logz_ns, fill_ns))
    logz_ins = float(np.logaddexp(logz_ins, fill_ins))
    evals = model.likelihood_evals - start_evals
    wall = time.perf_counter() - start_time

    def _build(mode, logz, fill):
        lw = log_quadrature_weights(T, N, mode) + dead_ll
        level_terms = np.concatenate((lw, [fill]))
        archive = None
        if keep_archive:
            archive = WeightedArchive()
            archive.append(np.vstack(dead_pos), lw, np.arange(1, T + 1))
            live_lw = _log_p(T, N, mode)[-1] - log_n + ll
            archive.append(X, live_lw, T + 1)
        sched = CompressionSchedule.generate(T, N, mode)
        diagnostics = {
            "t": list(diag_t),
            "log_like": list(diag_like),
            "log_p": list(sched.log_p[1:]),
            "log_evidence_cum": list(np.logaddexp.accumulate(lw)),
        }
        return RunResult(
            log_evidence=logz,
            level_log_evidence=level_terms,
            likelihood_evals=evals,
            wall_time=wall,
            schedule=sched,
            archive=archive,
            diagnostics=diagnostics,
        )

    return _build("ns", logz_ns, fill_ns), _build("ins", logz_ins, fill_ins)
