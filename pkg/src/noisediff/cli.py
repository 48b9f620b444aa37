"""Command line interface.

Subcommands:

    simulate   model/simulation config -> observations CSV (optionally the
               latent path too)
    estimate   observations CSV -> estimation result JSON
    test       observations CSV -> noise-test result JSON
    study      study config -> report JSON + per-replication JSONL +
               plot-ready CSV tables

Exit codes: 0 on success, 2 on degenerate-data errors, 3 on optimizer
non-convergence.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .errors import DegenerateDataError, NonConvergenceError
from .estimators import estimate_adaptive, estimate_lga
from .mc import StudyConfig, load_config, run_study
from .model import NoiseSpec, derive_scheme, model_from_config
from .noisetest import DEFAULT_TAU, noise_test
from .seriesio import ingest_csv, write_series_csv
from .simulate import contaminate, simulate_path

EXIT_OK = 0
EXIT_DEGENERATE = 2
EXIT_NONCONVERGENCE = 3


def _add_common(p):
    p.add_argument("--seed", type=int, default=0, help="base RNG seed")
    p.add_argument("--config", help="TOML or JSON config file")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="noisediff",
        description="Estimation and noise detection for diffusions observed "
        "with additive measurement noise",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a path and write observations CSV")
    _add_common(p)
    p.add_argument("--out", required=True, help="observations CSV path")
    p.add_argument("--latent-out", help="also write the latent path CSV")
    p.add_argument("--stream", type=int, default=0, help="RNG stream index")
    p.add_argument("--n", type=int, help="override number of increments")
    p.add_argument("--method", choices=["euler", "exact"], help="override sampler")

    p = sub.add_parser("estimate", help="estimate parameters from a CSV series")
    _add_common(p)
    p.add_argument("--in", dest="infile", required=True, help="observations CSV")
    p.add_argument("--h", type=float, required=True, help="step in time units")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU, help="block tuning parameter")
    p.add_argument("--columns", help="comma-separated column names or indices")
    p.add_argument("--lga", action="store_true", help="raw-increment baseline instead of adaptive")
    p.add_argument("--with-cov", action="store_true", help="attach plug-in covariance")
    p.add_argument("--opt-method", choices=["nelder-mead", "qn"], default="nelder-mead")
    p.add_argument("--out", help="write JSON here instead of stdout")

    p = sub.add_parser("test", help="noise-detection test on a CSV series")
    _add_common(p)
    p.add_argument("--in", dest="infile", required=True, help="observations CSV")
    p.add_argument("--h", type=float, required=True, help="step in time units")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--level", type=float, default=0.05)
    p.add_argument("--columns", help="comma-separated column names or indices")

    p = sub.add_parser("study", help="run a replicated simulation study")
    _add_common(p)
    p.add_argument("--out-dir", default="study_out", help="output directory")
    p.add_argument("--threads", type=int, help="override worker count")

    return parser


def _parse_columns(spec):
    if spec is None:
        return None
    cols = []
    for item in spec.split(","):
        item = item.strip()
        cols.append(int(item) if item.lstrip("+-").isdigit() else item)
    return cols


def _emit(payload, out=None):
    text = json.dumps(payload, indent=1, sort_keys=True)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _cmd_simulate(args):
    cfg = load_config(args.config)
    model, alpha_star, beta_star = model_from_config(cfg["model"])
    sim = cfg.get("simulation", {})
    n = args.n if args.n is not None else int(sim["n"])
    h = sim.get("h")
    if h is None:
        h = float(n) ** (-float(sim["gamma"]))
    x0 = np.asarray(sim.get("x0", np.ones(model.d)), dtype=float)
    method = args.method or sim.get("method", "euler")
    path = simulate_path(
        model,
        alpha_star,
        beta_star,
        x0,
        n,
        h,
        substeps=int(sim.get("substeps", 10)),
        seed=args.seed,
        stream=args.stream,
        method=method,
        burn_in=int(sim.get("burn_in", 0)),
    )
    noise_cfg = cfg.get("noise", {})
    if "matrix" in noise_cfg:
        lam = np.asarray(noise_cfg["matrix"], dtype=float)
    else:
        lam = float(noise_cfg.get("scale", 0.0)) * np.eye(model.d)
    obs = contaminate(path, NoiseSpec(lam=lam), seed=args.seed, stream=args.stream)
    write_series_csv(args.out, obs.values, obs.h)
    if args.latent_out:
        write_series_csv(args.latent_out, path.values, path.h)
    print(
        json.dumps(
            {"n": n, "h": h, "d": model.d, "method": method, "out": args.out},
            sort_keys=True,
        )
    )
    return EXIT_OK


def _cmd_estimate(args):
    cfg = load_config(args.config)
    model, _, _ = model_from_config(cfg["model"])
    obs = ingest_csv(args.infile, h=args.h, columns=_parse_columns(args.columns))
    scheme = derive_scheme(obs.n, obs.h, args.tau)
    if args.lga:
        alpha, beta, value, report = estimate_lga(obs, model, method=args.opt_method)
        payload = {
            "estimator": "lga",
            "alpha_hat": [float(v) for v in alpha],
            "beta_hat": [float(v) for v in beta],
            "loglik": float(value),
            "optimizer_report": report.to_dict(),
            "scheme": {"n": scheme.n, "h": scheme.h, "tau": scheme.tau,
                       "p": scheme.p, "k": scheme.k, "delta": scheme.delta,
                       "k_delta_sq": scheme.k_delta_sq},
        }
    else:
        res = estimate_adaptive(
            obs, scheme, model, with_cov=args.with_cov, method=args.opt_method
        )
        payload = {"estimator": "adaptive", **res.to_dict()}
    _emit(payload, args.out)
    return EXIT_OK


def _cmd_test(args):
    obs = ingest_csv(args.infile, h=args.h, columns=_parse_columns(args.columns))
    result = noise_test(obs, level=args.level, tau=args.tau)
    _emit(result.to_dict())
    return EXIT_OK


def _cmd_study(args):
    import dataclasses

    cfg = load_config(args.config)
    study = StudyConfig.from_dict(cfg)
    if args.threads is not None:
        study = dataclasses.replace(study, threads=args.threads)
    if args.seed:
        study = dataclasses.replace(study, seed=args.seed)
    report = run_study(study, out_dir=args.out_dir)
    print(
        json.dumps(
            {
                "out_dir": args.out_dir,
                "cells": report.runtime["n_cells"],
                "failures": len(report.failures),
                "total_seconds": report.runtime["total_seconds"],
            },
            sort_keys=True,
        )
    )
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "estimate": _cmd_estimate,
        "test": _cmd_test,
        "study": _cmd_study,
    }
    try:
        return handlers[args.command](args)
    except DegenerateDataError as exc:
        print("degenerate data: %s" % exc, file=sys.stderr)
        return EXIT_DEGENERATE
    except NonConvergenceError as exc:
        print("optimizer did not converge: %s" % exc, file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (ValueError, OSError, KeyError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
