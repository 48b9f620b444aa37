"""Benchmark the compiled kernels against the pure-NumPy fallbacks.

Usage:
    python benchmarks/bench_kernels.py [--steps 1000000] [--blocks 8000]

Covers the two hot loops behind estimation-scale workloads: the sequential
affine path recursion (simulation) and the per-block quadratic-form plus
log-determinant reduction (quasi-likelihood evaluation with state-dependent
diffusion). End-to-end timings of a simulate/estimate/test cycle follow.
"""
import argparse
import time

import numpy as np

from noisediff import _kernels
from noisediff._kernels import fallback


def timed(fn, repeats=3):
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def bench_linear_path(steps):
    # Euler stepping matrices of the benchmark mean-reverting model: the
    # recursion must be contractive or floating-point noise amplifies
    rng = np.random.default_rng(0)
    d = 2
    dt = 1e-4
    B = np.array([[-1.0, -0.1], [-0.1, -1.0]])
    a = np.array([[1.0, 0.1], [0.1, 1.0]])
    M = np.eye(d) + B * dt
    m = np.array([1.0, 1.0]) * dt
    L = a * np.sqrt(dt)
    xi = rng.normal(size=(steps, d))
    x0 = np.ones(d)
    t_fb, a = timed(lambda: fallback.linear_path(M, m, L, xi, x0, 10))
    rows = [("linear_path (fallback)", t_fb, steps / t_fb)]
    if _kernels.IS_COMPILED:
        t_c, b = timed(lambda: _kernels.linear_path(M, m, L, xi, x0, 10))
        assert np.allclose(a, b, rtol=1e-9, atol=1e-12)
        rows.append(("linear_path (compiled)", t_c, steps / t_c))
        rows.append(("  speedup", t_fb / t_c, None))
    return rows


def bench_block_reduction(blocks):
    rng = np.random.default_rng(1)
    d = 2
    base = rng.normal(size=(blocks, d, d))
    a_stack = base @ np.swapaxes(base, 1, 2) + np.eye(d)
    v = rng.normal(size=(blocks, d))
    t_fb, a = timed(lambda: fallback.block_quad_logdet(a_stack, v, 0.5))
    rows = [("block_quad_logdet (fallback)", t_fb, blocks / t_fb)]
    if _kernels.IS_COMPILED:
        t_c, b = timed(lambda: _kernels.block_quad_logdet(a_stack, v, 0.5))
        assert np.allclose(a[:2], b[:2], rtol=1e-9)
        rows.append(("block_quad_logdet (compiled)", t_c, blocks / t_c))
        rows.append(("  speedup", t_fb / t_c, None))
    return rows


def bench_pipeline(n):
    from noisediff import (
        contaminate,
        derive_scheme,
        estimate_adaptive,
        gaussian_noise,
        model_from_config,
        noise_test,
        simulate_path,
    )

    model, alpha_star, beta_star = model_from_config(
        {
            "drift_matrix": [[-1.0, -0.1], [-0.1, -1.0]],
            "drift_intercept": [1.0, 1.0],
            "diffusion": [[1.0, 0.1], [0.1, 1.0]],
        }
    )
    h = float(n) ** -0.7
    t0 = time.perf_counter()
    path = simulate_path(model, alpha_star, beta_star, [1.0, 1.0], n, h, seed=0, method="exact")
    t_sim = time.perf_counter() - t0
    obs = contaminate(path, gaussian_noise(1e-4 * np.eye(2)), seed=0)
    scheme = derive_scheme(n, h, 2.0)
    t0 = time.perf_counter()
    estimate_adaptive(obs, scheme, model)
    t_est = time.perf_counter() - t0
    t0 = time.perf_counter()
    noise_test(obs, scheme)
    t_test = time.perf_counter() - t0
    return [
        ("simulate n=%d (exact)" % n, t_sim, n / t_sim),
        ("adaptive estimate", t_est, None),
        ("noise test", t_test, None),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=1_000_000)
    ap.add_argument("--blocks", type=int, default=8000)
    ap.add_argument("--n", type=int, default=100_000)
    args = ap.parse_args()

    print("compiled kernels available:", _kernels.IS_COMPILED)
    print()
    print("%-34s %12s %16s" % ("kernel", "seconds", "items/s"))
    for name, secs, rate in (
        bench_linear_path(args.steps)
        + bench_block_reduction(args.blocks)
        + bench_pipeline(args.n)
    ):
        if rate is None and "speedup" in name:
            print("%-34s %11.1fx" % (name, secs))
        elif rate is None:
            print("%-34s %12.4f" % (name, secs))
        else:
            print("%-34s %12.4f %16.3e" % (name, secs, rate))


if __name__ == "__main__":
    main()
