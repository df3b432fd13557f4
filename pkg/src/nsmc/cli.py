"""Config-driven experiment harness and command-line entry point.

A single JSON config describes the model, algorithm, population size,
adaptivity knobs, kernel settings and run count; flags override config keys.
Fixed-schedule algorithms run one adaptive pilot first (unless a replay file
is supplied), freeze its schedule and kernel tuning, and then execute the
requested number of independent fixed runs.  Run ``i`` always uses the rng
substream ``(master_seed, i)``, so adding runs never perturbs earlier ones
and summaries are byte-identical across repeats and worker counts.
"""

from __future__ import annotations

import argparse
import csv
import json
import multiprocessing
import os
import sys

import numpy as np

from .errors import ConfigError, ContractViolationError, NsmcError
from .model import build_model
from .ns import run_ns
from .nssmc import ThresholdSchedule, run_adaptive_nssmc, run_fixed_nssmc
from .results import RunResult
from .tasmc import TemperatureSchedule, run_adaptive_tasmc, run_fixed_tasmc
from .tuning import TuningReport

__all__ = [
    "ALGORITHMS",
    "validate_config",
    "run_experiment",
    "wnv",
    "relative_wnv",
    "export_diagnostic_curve",
    "main",
]

ALGORITHMS = (
    "ns",
    "ins",
    "nssmc_fixed",
    "nssmc_adaptive",
    "tasmc_fixed",
    "tasmc_adaptive",
)

_DEFAULT_MODEL_PARAMS = {
    "sphere_mixture": {"dimension": 10},
    "conjugate_gaussian": {"dimension": 2, "obs": [1.0, 1.0], "noise_sd": 0.5},
}

_TOP_KEYS = {
    "model", "algorithm", "n_particles", "runs", "seed", "out_dir", "rho",
    "alpha", "eps", "kernel", "resampling", "pilot", "replay", "workers",
    "save_archives", "max_repeats",
}
_MODEL_KEYS = {"name", "params"}
_KERNEL_KEYS = {
    "family", "candidates", "repeats", "exact", "slice_width_factor",
    "mala_textbook_drift",
}
_PILOT_KEYS = {"n_particles", "rho", "alpha"}


def _reject_unknown(block: dict, allowed: set, where: str) -> None:
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def validate_config(raw: dict) -> dict:
    """Schema-check a config tree and fill defaults; unknown keys reject."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _reject_unknown(raw, _TOP_KEYS, "config")
    cfg = {
        "runs": 1,
        "seed": 0,
        "out_dir": None,
        "rho": 0.5,
        "alpha": 0.5,
        "eps": None,
        "resampling": "stratified",
        "replay": None,
        "workers": 1,
        "save_archives": True,
        "max_repeats": 100,
    }
    cfg.update({k: v for k, v in raw.items() if k not in ("model", "kernel", "pilot")})

    model = dict(raw.get("model") or {})
    _reject_unknown(model, _MODEL_KEYS, "model")
    if "name" not in model:
        raise ConfigError("config needs model.name")
    params = model.get("params")
    if params is None:
        params = _DEFAULT_MODEL_PARAMS.get(model["name"], {})
    cfg["model"] = {"name": model["name"], "params": dict(params)}

    kernel = dict(raw.get("kernel") or {})
    _reject_unknown(kernel, _KERNEL_KEYS, "kernel")
    cfg["kernel"] = {
        "family": kernel.get("family", "rw"),
        "candidates": kernel.get("candidates"),
        "repeats": kernel.get("repeats"),
        "exact": bool(kernel.get("exact", False)),
        "slice_width_factor": float(kernel.get("slice_width_factor", 2.0)),
        "mala_textbook_drift": bool(kernel.get("mala_textbook_drift", False)),
    }

    pilot = dict(raw.get("pilot") or {})
    _reject_unknown(pilot, _PILOT_KEYS, "pilot")
    cfg["pilot"] = {
        "n_particles": pilot.get("n_particles"),
        "rho": pilot.get("rho"),
        "alpha": pilot.get("alpha"),
    }

    if cfg.get("algorithm") not in ALGORITHMS:
        raise ConfigError(
            f"algorithm must be one of {ALGORITHMS}, got {cfg.get('algorithm')!r}"
        )
    if "n_particles" not in cfg or int(cfg["n_particles"]) < 2:
        raise ConfigError("n_particles must be an integer >= 2")
    cfg["n_particles"] = int(cfg["n_particles"])
    cfg["runs"] = int(cfg["runs"])
    cfg["seed"] = int(cfg["seed"])
    cfg["workers"] = max(1, int(cfg["workers"]))
    if cfg["runs"] < 1:
        raise ConfigError("runs must be >= 1")
    for key in ("rho", "alpha"):
        if not 0.0 < float(cfg[key]) < 1.0:
            raise ConfigError(f"{key} must lie strictly inside (0, 1)")
    if cfg["resampling"] not in ("multinomial", "stratified", "residual"):
        raise ConfigError("resampling must be multinomial|stratified|residual")
    return cfg


def _rng_for(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def _candidates(kernel_cfg):
    cands = kernel_cfg.get("candidates")
    if cands is None:
        return None
    return [tuple(c) if isinstance(c, (list, tuple)) else float(c) for c in cands]


def wnv(estimates, evals) -> float:
    """Work-normalised variance: sample variance times mean evaluation count."""
    estimates = np.asarray(estimates, dtype=float)
    evals = np.asarray(evals, dtype=float)
    if estimates.size < 2 or evals.size != estimates.size:
        raise ContractViolationError("wnv needs at least two paired runs")
    return float(np.var(estimates, ddof=1) * np.mean(evals))


def relative_wnv(value: float, baseline: float) -> float:
    return float(value / baseline)


def export_diagnostic_curve(result: RunResult, path) -> None:
    """Write the (log p, log L) compression curve of an NS / NS-SMC run."""
    diag = result.diagnostics
    like_key = "log_like" if "log_like" in diag else "log_level"
    if "log_p" not in diag or like_key not in diag:
        raise ContractViolationError(
            "diagnostic curve needs a nested-sampling style run"
        )
    rows = [
        (p, l)
        for p, l in zip(diag["log_p"], diag[like_key])
        if np.isfinite(l)
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["log_p", "log_like"])
        for p, l in rows:
            writer.writerow([_fmt(p), _fmt(l)])


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".12g")
    return str(value)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _load_replay(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"replay file not found: {path}") from None


def _pilot(cfg: dict):
    """One adaptive run at the pilot population size; returns the replay payload."""
    algo = cfg["algorithm"]
    kernel = cfg["kernel"]
    pilot_n = cfg["pilot"]["n_particles"] or 4 * cfg["n_particles"]
    rng = _rng_for(cfg["seed"], 0)
    model = build_model(cfg["model"]["name"], cfg["model"]["params"])
    common = dict(
        rng=rng,
        kernel_family=kernel["family"],
        candidates=_candidates(kernel),
        repeats=kernel["repeats"],
        resampling_scheme=cfg["resampling"],
        max_repeats=cfg["max_repeats"],
        slice_width_factor=kernel["slice_width_factor"],
        mala_textbook_drift=kernel["mala_textbook_drift"],
        keep_archive=False,
    )
    if algo == "nssmc_fixed":
        rho = cfg["pilot"]["rho"] or cfg["rho"]
        eps = cfg["eps"] if cfg["eps"] is not None else 1e-2
        if kernel["exact"]:
            for key in ("kernel_family", "candidates", "repeats", "max_repeats",
                        "slice_width_factor", "mala_textbook_drift"):
                common.pop(key)
            common["exact"] = True
        _, schedule, report = run_adaptive_nssmc(
            model, pilot_n, rho=rho, eps=eps, **common
        )
        return {
            "algorithm": algo,
            "schedule": schedule.to_dict(),
            "tuning": report.to_dict(),
            "exact": kernel["exact"],
            "strict": True,
        }
    alpha = cfg["pilot"]["alpha"] or cfg["alpha"]
    _, schedule, report = run_adaptive_tasmc(
        model, pilot_n, alpha=alpha, **common
    )
    return {
        "algorithm": algo,
        "schedule": schedule.to_dict(),
        "tuning": report.to_dict(),
    }


def _run_single(args):
    """Execute run ``index`` of the experiment; used by worker pools."""
    cfg, index, replay = args
    model = build_model(cfg["model"]["name"], cfg["model"]["params"])
    rng = _rng_for(cfg["seed"], index)
    algo = cfg["algorithm"]
    kernel = cfg["kernel"]
    n = cfg["n_particles"]
    keep = bool(cfg["save_archives"] and cfg["out_dir"])

    if algo in ("ns", "ins"):
        eps = cfg["eps"] if cfg["eps"] is not None else 1e-8
        pair = run_ns(
            model, n, rng=rng, exact=kernel["exact"],
            repeats=kernel["repeats"], eps=eps, keep_archive=keep,
        )
        result = pair[0] if algo == "ns" else pair[1]
    elif algo == "nssmc_adaptive":
        eps = cfg["eps"] if cfg["eps"] is not None else 1e-2
        kwargs = dict(
            rho=cfg["rho"], rng=rng, eps=eps,
            resampling_scheme=cfg["resampling"], keep_archive=keep,
            max_repeats=cfg["max_repeats"],
        )
        if kernel["exact"]:
            kwargs["exact"] = True
        else:
            kwargs.update(
                kernel_family=kernel["family"],
                candidates=_candidates(kernel),
                repeats=kernel["repeats"],
                slice_width_factor=kernel["slice_width_factor"],
                mala_textbook_drift=kernel["mala_textbook_drift"],
            )
        result, _, _ = run_adaptive_nssmc(model, n, **kwargs)
    elif algo == "tasmc_adaptive":
        result, _, _ = run_adaptive_tasmc(
            model, n, alpha=cfg["alpha"], rng=rng,
            kernel_family=kernel["family"], candidates=_candidates(kernel),
            repeats=kernel["repeats"], resampling_scheme=cfg["resampling"],
            max_repeats=cfg["max_repeats"],
            slice_width_factor=kernel["slice_width_factor"],
            mala_textbook_drift=kernel["mala_textbook_drift"],
            keep_archive=keep,
        )
    elif algo == "nssmc_fixed":
        schedule = ThresholdSchedule.from_dict(replay["schedule"])
        plan = None
        if not replay.get("exact", False):
            plan = TuningReport.from_dict(replay["tuning"]).kernel_plan()
        result = run_fixed_nssmc(
            model, n, schedule, rng=rng, kernel_plan=plan,
            exact=replay.get("exact", False),
            resampling_scheme=cfg["resampling"],
            strict=bool(replay.get("strict", False)),
            keep_archive=keep,
        )
    elif algo == "tasmc_fixed":
        schedule = TemperatureSchedule.from_dict(replay["schedule"])
        plan = TuningReport.from_dict(replay["tuning"]).kernel_plan()
        result = run_fixed_tasmc(
            model, n, schedule, rng=rng, kernel_plan=plan,
            resampling_scheme=cfg["resampling"], keep_archive=keep,
        )
    else:  # pragma: no cover - validate_config guards this
        raise ConfigError(f"unhandled algorithm {algo}")

    record = {
        "run": index,
        "log_evidence": float(result.log_evidence),
        "evidence": float(result.evidence),
        "likelihood_evals": int(result.likelihood_evals),
        "levels": int(result.levels),
        "wall_time": float(result.wall_time),
    }
    if cfg["out_dir"]:
        _write_run_files(cfg, index, result)
    return record


def _write_run_files(cfg, index, result: RunResult) -> None:
    out = cfg["out_dir"]
    diag = result.diagnostics
    keys = list(diag)
    rows = zip(*(diag[k] for k in keys)) if keys else []
    _write_csv(os.path.join(out, f"levels-{index}.csv"), keys, rows)
    if cfg["save_archives"] and result.archive is not None and len(result.archive):
        result.archive.to_jsonl(os.path.join(out, f"archive-{index}.jsonl"))


def run_experiment(config: dict) -> dict:
    """Validate, pilot if needed, run M seeded replicates, aggregate, write.

    Returns the aggregate summary row as a dict.
    """
    cfg = validate_config(config)
    out = cfg["out_dir"]
    if out:
        os.makedirs(out, exist_ok=True)

    replay = None
    if cfg["algorithm"] in ("nssmc_fixed", "tasmc_fixed"):
        if cfg["replay"]:
            replay = _load_replay(cfg["replay"])
            if replay.get("algorithm") != cfg["algorithm"]:
                raise ConfigError("replay file belongs to a different algorithm")
        else:
            replay = _pilot(cfg)
        if out:
            with open(os.path.join(out, "replay.json"), "w") as fh:
                json.dump(replay, fh, indent=1)
            with open(os.path.join(out, "tuning.json"), "w") as fh:
                json.dump(replay.get("tuning", {}), fh, indent=1)

    jobs = [(cfg, i, replay) for i in range(1, cfg["runs"] + 1)]
    if cfg["workers"] > 1 and cfg["runs"] > 1:
        with multiprocessing.get_context("fork").Pool(cfg["workers"]) as pool:
            records = pool.map(_run_single, jobs)
    else:
        records = [_run_single(job) for job in jobs]

    evidences = np.array([r["evidence"] for r in records])
    evals = np.array([r["likelihood_evals"] for r in records])
    mean_ev = float(np.mean(evidences))
    if len(records) >= 2:
        se = float(np.std(evidences, ddof=1) / np.sqrt(len(records)))
        se_pct = 100.0 * se / mean_ev if mean_ev != 0 else float("nan")
        work_nv = wnv(evidences, evals)
    else:
        se_pct = None
        work_nv = None
    summary = {
        "algorithm": cfg["algorithm"],
        "model": cfg["model"]["name"],
        "n_particles": cfg["n_particles"],
        "runs": cfg["runs"],
        "mean_log_evidence": float(np.mean([r["log_evidence"] for r in records])),
        "mean_evidence": mean_ev,
        "se_pct": se_pct,
        "mean_evals": float(np.mean(evals)),
        "wnv": work_nv,
    }
    if out:
        _write_csv(
            os.path.join(out, "runs.csv"),
            ["run", "log_evidence", "evidence", "likelihood_evals", "levels",
             "wall_time"],
            [
                (r["run"], r["log_evidence"], r["evidence"],
                 r["likelihood_evals"], r["levels"], r["wall_time"])
                for r in records
            ],
        )
        _write_csv(
            os.path.join(out, "summary.csv"),
            list(summary),
            [tuple(summary.values())],
        )
    return summary


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="nsmc",
        description="Evidence estimation via nested-sampling and annealed SMC",
    )
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--algorithm", choices=ALGORITHMS)
    p.add_argument("--model", help="built-in model name")
    p.add_argument("--n", type=int, help="population size")
    p.add_argument("--rho", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--replay", help="replay file for fixed algorithms")
    p.add_argument("--workers", type=int)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    raw = {}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
    overrides = {
        "algorithm": args.algorithm,
        "n_particles": args.n,
        "rho": args.rho,
        "alpha": args.alpha,
        "runs": args.runs,
        "seed": args.seed,
        "out_dir": args.out,
        "replay": args.replay,
        "workers": args.workers,
    }
    for key, value in overrides.items():
        if value is not None:
            raw[key] = value
    if args.model is not None:
        raw["model"] = {"name": args.model}
    try:
        summary = run_experiment(raw)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NsmcError as exc:
        print(f"sampler error: {exc}", file=sys.stderr)
        return 3
    line = ", ".join(f"{k}={_fmt(v)}" for k, v in summary.items())
    print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
