"""Path simulation and noise contamination.

Latent paths follow Euler-Maruyama with configurable sub-stepping; models
built by :func:`noisediff.model.linear_sde_model` additionally support an
exact transition sampler (matrix exponentials, useful to eliminate
discretisation bias in simulation studies).

Randomness comes from Philox, a counter-based 64-bit generator with cheap
independent streams: stream ``s`` under seed ``seed`` is
``Philox(key=[seed, s])``. Replication r of a Monte Carlo study uses stream
r for the latent path and the same stream jumped once for the noise, so all
noise levels share latent paths and results do not depend on scheduling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from . import _kernels
from .errors import SimulationError
from .model import ModelSpec, NoiseSpec, ObservationSeries, psd_sqrt

__all__ = [
    "LatentPath",
    "rng_stream",
    "simulate_path",
    "contaminate",
    "exact_linear_transition",
]

_CHUNK = 1 << 16
_MASK64 = 2**64 - 1


def rng_stream(seed: int, stream: int = 0, jumps: int = 0) -> np.random.Generator:
    """Independent Philox stream: key = (seed, stream), advanced by ``jumps``."""
    bg = np.random.Philox(key=np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64))
    if jumps:
        bg = bg.jumped(jumps)
    return np.random.Generator(bg)


@dataclass(frozen=True)
class LatentPath:
    """Simulated latent states on the observation grid, seed recorded."""

    h: float
    values: np.ndarray
    rng_seed: int
    rng_stream: int = 0

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if not np.all(np.isfinite(values)):
            raise ValueError("latent path contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0] - 1

    @property
    def d(self) -> int:
        return self.values.shape[1]


def exact_linear_transition(B, c, a, dt):
    """One-step transition of dX = (B X + c) dt + a dW over time ``dt``.

    Returns (F, m, L) with X' = F X + m + L xi, xi standard normal:
    F = expm(B dt), m = int_0^dt expm(B s) c ds (computed via an augmented
    exponential, so singular B is fine) and L L^T = int_0^dt expm(B s) a a^T
    expm(B^T s) ds (van Loan block-exponential).
    """
    B = np.asarray(B, dtype=float)
    c = np.asarray(c, dtype=float)
    a = np.asarray(a, dtype=float)
    d = B.shape[0]
    F = expm(B * dt)
    aug = np.zeros((d + 1, d + 1))
    aug[:d, :d] = B * dt
    aug[:d, d] = c * dt
    m = expm(aug)[:d, d]
    blk = np.zeros((2 * d, 2 * d))
    blk[:d, :d] = B
    blk[:d, d:] = a @ a.T
    blk[d:, d:] = -B.T
    eb = expm(blk * dt)
    V = eb[:d, d:] @ F.T
    L = psd_sqrt(0.5 * (V + V.T))
    return np.ascontiguousarray(F), m, np.ascontiguousarray(L)


def _euler_python(model: ModelSpec, alpha, beta, x0, n, dt, substeps, rng):
    """Generic Euler loop for arbitrary model callables."""
    d = model.d
    out = np.empty((n + 1, d))
    out[0] = x0
    x = np.array(x0, dtype=float)
    sq = math.sqrt(dt)
    nsteps = n * substeps
    done = 0
    while done < nsteps:
        m = min(_CHUNK, nsteps - done)
        xi = rng.standard_normal((m, model.r))
        for s in range(m):
            b = model.drift_at(x, beta)
            a = model.diffusion_at(x, alpha)
            x = x + b * dt + sq * (a @ xi[s])
            if not np.all(np.isfinite(x)):
                raise SimulationError(
                    "non-finite state at step %d (time %.6g)"
                    % (done + s + 1, (done + s + 1) * dt),
                    step_index=done + s + 1,
                )
            if (done + s + 1) % substeps == 0:
                out[(done + s + 1) // substeps] = x
        done += m
    return out


def simulate_path(
    model: ModelSpec,
    alpha,
    beta,
    x0,
    n: int,
    h: float,
    substeps: int = 10,
    seed: int = 0,
    stream: int = 0,
    method: str = "euler",
    burn_in: int = 0,
) -> LatentPath:
    """Simulate the latent diffusion on the grid {0, h, ..., n*h}.

    Parameters
    ----------
    method : {"euler", "exact"}
        "euler" integrates with Euler-Maruyama on step h/substeps and
        records every substeps-th state. "exact" draws from the exact
        Gaussian transition; it requires a model carrying ``linear_parts``
        (linear drift, constant diffusion) and ignores substeps.
    burn_in : int
        Number of leading grid steps simulated and discarded before
        recording starts (default 0: the path starts at x0).
    seed, stream : int
        Philox key; the same pair reproduces the path bitwise.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    x0 = np.asarray(x0, dtype=float).reshape(model.d)
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    gen = rng_stream(seed, stream)
    total = n + burn_in

    if method == "exact":
        if model.linear_parts is None:
            raise ValueError("exact sampling needs a model with linear_parts")
        B, c, a = model.linear_parts(alpha, beta)
        F, m, L = exact_linear_transition(B, c, a, h)
        xi = gen.standard_normal((total, model.d))
        values = _kernels.linear_path(F, m, L, xi, x0, 1)
    elif method == "euler":
        dt = h / substeps
        if model.linear_parts is not None:
            B, c, a = model.linear_parts(alpha, beta)
            M = np.ascontiguousarray(np.eye(model.d) + np.asarray(B, dtype=float) * dt)
            mv = np.asarray(c, dtype=float) * dt
            L = np.ascontiguousarray(np.asarray(a, dtype=float) * math.sqrt(dt))
            xi = gen.standard_normal((total * substeps, L.shape[1]))
            values = _kernels.linear_path(M, mv, L, xi, x0, substeps)
            if not np.all(np.isfinite(values)):
                bad = int(np.argmax(~np.all(np.isfinite(values), axis=1)))
                raise SimulationError(
                    "non-finite state at recorded step %d" % bad, step_index=bad
                )
        else:
            values = _euler_python(model, alpha, beta, x0, total, dt, substeps, gen)
    else:
        raise ValueError("method must be 'euler' or 'exact', got %r" % (method,))

    if burn_in:
        values = values[burn_in:]
    return LatentPath(h=h, values=values, rng_seed=int(seed), rng_stream=int(stream))


def contaminate(path: LatentPath, noise: NoiseSpec, seed: int = 0, stream: int = 0) -> ObservationSeries:
    """Add observation noise: Y_i = X_i + Lambda^{1/2} eps_i.

    Noise draws come from stream (seed, stream) jumped once, so they are
    independent of a path simulated with the same (seed, stream). A zero
    Lambda returns the latent values unchanged bit-for-bit (no draws are
    consumed).
    """
    if noise.d != path.d:
        raise ValueError(
            "noise dimension %d does not match path dimension %d" % (noise.d, path.d)
        )
    if noise.is_zero:
        return ObservationSeries(h=path.h, values=path.values)
    gen = rng_stream(seed, stream, jumps=1)
    eps = noise.sample(gen, path.values.shape[0])
    root = psd_sqrt(noise.lam)
    return ObservationSeries(h=path.h, values=path.values + eps @ root.T)
