"""Replicated simulation studies: simulate, contaminate, estimate, test.

A study runs a grid of noise levels and block tuning values, with a fixed
number of replications per cell. Replication r draws its latent path from
Philox stream (seed, r) and its noise from the same stream jumped once, so
every noise level and tau reuses the same latent paths (matching how such
grids are usually reported) and the study is reproducible regardless of
worker scheduling.

Aggregation follows the usual conventions: per coordinate, the empirical
mean of the estimates and the root-mean-squared error around the true
value; per level, the fraction of replications with Z above the upper-tail
critical value.
"""
from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import NoisediffError
from .estimators import estimate_adaptive, estimate_lga
from .model import derive_scheme, model_from_config, vech
from .noisetest import noise_test
from .seriesio import ingest_csv  # noqa: F401  (harness-level re-export)
from .simulate import contaminate, simulate_path
from .model import NoiseSpec

__all__ = ["StudyConfig", "StudyReport", "run_study", "load_config", "ingest_csv"]


def load_config(path) -> dict:
    """Load a TOML or JSON config file into a dict (by file extension)."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        with open(path) as fh:
            return json.load(fh)
    try:
        import tomllib
    except ImportError:  # Python 3.10
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


@dataclass(frozen=True)
class LambdaLevel:
    label: str
    matrix: np.ndarray

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        w = np.linalg.eigvalsh(0.5 * (m + m.T))
        if w.size and w[0] < -1e-12:
            raise ValueError("noise level %r is not PSD" % (self.label,))
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True)
class StudyConfig:
    """Declarative study description (picklable; workers rebuild models)."""

    model_cfg: dict
    n: int
    replications: int
    seed: int
    taus: tuple = (1.8, 1.9, 2.0)
    lambda_levels: tuple = ()
    h: Optional[float] = None
    gamma: Optional[float] = None
    x0: Optional[tuple] = None
    estimators: tuple = ("adaptive", "lga")
    levels: tuple = (0.05, 0.01, 0.001)
    sim_method: str = "exact"
    substeps: int = 10
    burn_in: int = 0
    threads: int = 1
    with_cov: bool = False
    fourth_moments: Optional[tuple] = None

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replication count must be >= 1")
        if self.h is None and self.gamma is None:
            raise ValueError("give h directly or as an exponent gamma (h = n^-gamma)")
        if not self.lambda_levels:
            raise ValueError("at least one noise level is required")
        for est in self.estimators:
            if est not in ("adaptive", "lga"):
                raise ValueError("unknown estimator %r" % (est,))

    @property
    def resolved_h(self) -> float:
        return self.h if self.h is not None else float(self.n) ** (-self.gamma)

    @staticmethod
    def from_dict(cfg: dict) -> "StudyConfig":
        study = cfg.get("study", {})
        sim = cfg.get("simulation", {})
        model_cfg = cfg["model"]
        d = len(model_cfg["drift_matrix"])
        levels = []
        for entry in study.get("lambda_grid", [{"label": "O", "scale": 0.0}]):
            if "matrix" in entry:
                mat = np.asarray(entry["matrix"], dtype=float)
            else:
                mat = float(entry.get("scale", 0.0)) * np.eye(d)
            levels.append(LambdaLevel(label=str(entry.get("label", "?")), matrix=mat))
        return StudyConfig(
            model_cfg=model_cfg,
            n=int(sim.get("n", study.get("n"))),
            h=sim.get("h"),
            gamma=sim.get("gamma"),
            x0=tuple(sim["x0"]) if "x0" in sim else None,
            sim_method=sim.get("method", "exact"),
            substeps=int(sim.get("substeps", 10)),
            burn_in=int(sim.get("burn_in", 0)),
            replications=int(study.get("replications", 1)),
            seed=int(study.get("seed", 0)),
            taus=tuple(study.get("tau", (1.8, 1.9, 2.0))),
            lambda_levels=tuple(levels),
            estimators=tuple(study.get("estimators", ("adaptive", "lga"))),
            levels=tuple(study.get("levels", (0.05, 0.01, 0.001))),
            threads=int(study.get("threads", 1)),
            with_cov=bool(study.get("with_cov", False)),
            fourth_moments=(
                tuple(study["fourth_moments"]) if "fourth_moments" in study else None
            ),
        )

    @staticmethod
    def from_file(path) -> "StudyConfig":
        return StudyConfig.from_dict(load_config(path))


def _coord_labels(d, m1, m2):
    lam = ["lambda(%d,%d)" % (i + 1, j + 1) for j in range(d) for i in range(j, d)]
    return lam, ["alpha%d" % (i + 1) for i in range(m1)], ["beta%d" % (i + 1) for i in range(m2)]


def _run_replication(config: StudyConfig, level: LambdaLevel, tau: float, rep: int) -> dict:
    """One (noise level, tau, replication) cell. Never raises: failures are
    recorded in the row so the study can continue."""
    t0 = time.perf_counter()
    row = {"lambda": level.label, "tau": tau, "rep": rep, "ok": True, "error": None}
    try:
        model, alpha_star, beta_star = model_from_config(config.model_cfg)
        h = config.resolved_h
        x0 = np.ones(model.d) if config.x0 is None else np.asarray(config.x0, dtype=float)
        scheme = derive_scheme(config.n, h, tau)
        path = simulate_path(
            model,
            alpha_star,
            beta_star,
            x0,
            config.n,
            h,
            substeps=config.substeps,
            seed=config.seed,
            stream=rep,
            method=config.sim_method,
            burn_in=config.burn_in,
        )
        noise = NoiseSpec(
            lam=level.matrix,
            fourth_moments=None
            if config.fourth_moments is None
            else np.asarray(config.fourth_moments, dtype=float),
        )
        obs = contaminate(path, noise, seed=config.seed, stream=rep)

        tr = noise_test(obs, scheme, level=config.levels[0], tau=tau)
        row["z"] = tr.z
        row["p_value"] = tr.p_value
        row["reject"] = {
            str(lv): bool(tr.z >= _upper_quantile(lv)) for lv in config.levels
        }

        if "adaptive" in config.estimators:
            res = estimate_adaptive(
                obs,
                scheme,
                model,
                with_cov=config.with_cov,
                noise_fourth_moments=noise.fourth_moments,
            )
            row["adaptive"] = {
                "lambda_hat_vech": [float(v) for v in res.theta_eps_hat],
                "alpha": [float(v) for v in res.alpha_hat],
                "beta": [float(v) for v in res.beta_hat],
            }
        if "lga" in config.estimators:
            a_lga, b_lga, _, _ = estimate_lga(obs, model)
            row["lga"] = {
                "alpha": [float(v) for v in a_lga],
                "beta": [float(v) for v in b_lga],
            }
    except (NoisediffError, ValueError, np.linalg.LinAlgError) as exc:
        row["ok"] = False
        row["error"] = "%s: %s" % (type(exc).__name__, exc)
    row["seconds"] = time.perf_counter() - t0
    return row


def _upper_quantile(level):
    from scipy.special import ndtri

    return float(ndtri(1.0 - level))


@dataclass
class StudyReport:
    """Aggregated study output plus the raw per-replication rows."""

    config: dict
    rows: list
    estimates: list
    rejections: list
    failures: list
    runtime: dict = field(default_factory=dict)

    def to_dict(self, include_runtime=True):
        out = {
            "config": self.config,
            "rows": self.rows,
            "estimates": self.estimates,
            "rejections": self.rejections,
            "failures": self.failures,
        }
        if include_runtime:
            out["runtime"] = self.runtime
        return out

    def write(self, out_dir):
        """Persist report.json, per-replication reps.jsonl, and plot-ready
        estimates.csv / rejections.csv."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "report.json", "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        with open(out_dir / "reps.jsonl", "w") as fh:
            for row in self.rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        with open(out_dir / "estimates.csv", "w") as fh:
            fh.write("lambda,tau,estimator,coord,truth,mean,rmse,n_ok\n")
            for e in self.estimates:
                fh.write(
                    "%s,%s,%s,%s,%.17g,%.17g,%.17g,%d\n"
                    % (
                        e["lambda"],
                        e["tau"],
                        e["estimator"],
                        e["coord"],
                        e["truth"],
                        e["mean"],
                        e["rmse"],
                        e["n_ok"],
                    )
                )
        with open(out_dir / "rejections.csv", "w") as fh:
            fh.write("lambda,tau,level,rate,n_ok\n")
            for r in self.rejections:
                fh.write(
                    "%s,%s,%s,%.17g,%d\n"
                    % (r["lambda"], r["tau"], r["level"], r["rate"], r["n_ok"])
                )


def _aggregate(config: StudyConfig, rows):
    model, alpha_star, beta_star = model_from_config(config.model_cfg)
    lam_labels, alpha_labels, beta_labels = _coord_labels(model.d, model.m1, model.m2)
    estimates = []
    rejections = []
    failures = [r for r in rows if not r["ok"]]

    def add_estimates(cell_rows, lam_label, tau, estimator, key, coords, truths):
        ok = [r for r in cell_rows if r["ok"] and key in r]
        if not ok:
            return
        subkeys = ok[0][key].keys()
        for sub in subkeys:
            labels, truth_vec = coords[sub], truths[sub]
            arr = np.array([r[key][sub] for r in ok], dtype=float)
            for c, (lab, tr) in enumerate(zip(labels, truth_vec)):
                est = arr[:, c]
                estimates.append(
                    {
                        "lambda": lam_label,
                        "tau": tau,
                        "estimator": estimator,
                        "coord": lab,
                        "truth": float(tr),
                        "mean": float(np.mean(est)),
                        "rmse": float(np.sqrt(np.mean((est - tr) ** 2))),
                        "n_ok": len(ok),
                    }
                )

    for level in config.lambda_levels:
        lam_truth = vech(level.matrix)
        for tau in config.taus:
            cell = [r for r in rows if r["lambda"] == level.label and r["tau"] == tau]
            ok = [r for r in cell if r["ok"]]
            if "adaptive" in config.estimators:
                add_estimates(
                    cell,
                    level.label,
                    tau,
                    "adaptive",
                    "adaptive",
                    {"lambda_hat_vech": lam_labels, "alpha": alpha_labels, "beta": beta_labels},
                    {"lambda_hat_vech": lam_truth, "alpha": alpha_star, "beta": beta_star},
                )
            if "lga" in config.estimators:
                add_estimates(
                    cell,
                    level.label,
                    tau,
                    "lga",
                    "lga",
                    {"alpha": alpha_labels, "beta": beta_labels},
                    {"alpha": alpha_star, "beta": beta_star},
                )
            for lv in config.levels:
                flags = [r["reject"][str(lv)] for r in ok if "reject" in r]
                if flags:
                    rejections.append(
                        {
                            "lambda": level.label,
                            "tau": tau,
                            "level": lv,
                            "rate": float(np.mean(flags)),
                            "n_ok": len(flags),
                        }
                    )
    return estimates, rejections, failures


def run_study(config: StudyConfig, out_dir=None) -> StudyReport:
    """Execute the study grid; optionally persist everything to ``out_dir``.

    Cells run in a bounded process pool when config.threads > 1. The
    returned report is identical run to run for a fixed config and seed,
    except for the wall-clock entries under "runtime" and the per-row
    "seconds" fields.
    """
    tasks = [
        (level, tau, rep)
        for level in config.lambda_levels
        for tau in config.taus
        for rep in range(config.replications)
    ]
    t0 = time.perf_counter()
    if config.threads > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            rows = list(
                pool.map(
                    _run_replication,
                    [config] * len(tasks),
                    [t[0] for t in tasks],
                    [t[1] for t in tasks],
                    [t[2] for t in tasks],
                    chunksize=max(1, len(tasks) // (4 * config.threads)),
                )
            )
    else:
        rows = [_run_replication(config, *t) for t in tasks]
    elapsed = time.perf_counter() - t0

    estimates, rejections, failures = _aggregate(config, rows)
    secs = [r["seconds"] for r in rows]
    report = StudyReport(
        config=_config_echo(config),
        rows=rows,
        estimates=estimates,
        rejections=rejections,
        failures=failures,
        runtime={
            "total_seconds": elapsed,
            "mean_seconds_per_replication": float(np.mean(secs)) if secs else 0.0,
            "n_cells": len(tasks),
            "threads": config.threads,
        },
    )
    if out_dir is not None:
        report.write(out_dir)
    return report


def _config_echo(config: StudyConfig) -> dict:
    return {
        "model": config.model_cfg,
        "n": config.n,
        "h": config.resolved_h,
        "gamma": config.gamma,
        "x0": None if config.x0 is None else list(config.x0),
        "sim_method": config.sim_method,
        "substeps": config.substeps,
        "burn_in": config.burn_in,
        "replications": config.replications,
        "seed": config.seed,
        "taus": list(config.taus),
        "lambda_levels": [
            {"label": lv.label, "matrix": [[float(v) for v in row] for row in lv.matrix]}
            for lv in config.lambda_levels
        ],
        "estimators": list(config.estimators),
        "levels": list(config.levels),
        "with_cov": config.with_cov,
    }
