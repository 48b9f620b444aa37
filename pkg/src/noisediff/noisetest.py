"""Nonparametric detection of additive observation noise.

The test contrasts the quadratic variation of the component-sum series at
full observation frequency with the same quantity at half frequency. For a
pure diffusion both scale with the sampled time horizon, so their
difference is asymptotically centred; additive noise inflates the full-
frequency sum to twice the halved one, and the difference diverges. The
statistic

    Z = sqrt( 2 p / (3 * sum_{j=1}^{k-2} (Sbar_{j+1} - Sbar_j)^4) )
        * ( sum_{i=0}^{n-1} (S_{i+1} - S_i)^2
            - sum_{0 <= 2i <= n-2} (S_{2i+2} - S_{2i})^2 )

is asymptotically standard normal under the no-noise null, where S is the
component sum of the observations and Sbar its block local means. The test
rejects for Z >= z_level (upper-tail critical value).

The statistic is nonparametric: no model structure enters, only the block
tuning parameter tau (default 1.9) and the time unit via h.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DegenerateDataError
from .model import ObservationSeries, SamplingScheme, derive_scheme

__all__ = [
    "NoiseTestResult",
    "component_sum_series",
    "noise_test",
    "power_approximation",
    "DEFAULT_TAU",
]

DEFAULT_TAU = 1.9


@dataclass(frozen=True)
class NoiseTestResult:
    """Test outcome: statistic, one-sided upper-tail p-value, decision."""

    z: float
    p_value: float
    level: float
    reject: bool
    numerator_full: float
    numerator_halved: float
    normalizer: float
    scheme: SamplingScheme

    def to_dict(self):
        return {
            "z": float(self.z),
            "p_value": float(self.p_value),
            "level": float(self.level),
            "reject": bool(self.reject),
            "numerator_full": float(self.numerator_full),
            "numerator_halved": float(self.numerator_halved),
            "normalizer": float(self.normalizer),
            "n": self.scheme.n,
            "p": self.scheme.p,
            "k": self.scheme.k,
            "tau": self.scheme.tau,
        }


def component_sum_series(obs: ObservationSeries) -> np.ndarray:
    """Sum the d components of each observation row (length n+1)."""
    return obs.values.sum(axis=1)


def noise_test(
    obs: ObservationSeries,
    scheme: Optional[SamplingScheme] = None,
    level: float = 0.05,
    tau: float = DEFAULT_TAU,
) -> NoiseTestResult:
    """Run the noise-detection test at the given level.

    ``scheme`` defaults to derive_scheme(obs.n, obs.h, tau). The halved sum
    pairs indices (2i, 2i+2) with 2i <= n-2, dropping a final odd increment
    when n is odd. Raises DegenerateDataError when the normalizer vanishes
    (constant series carries no information).
    """
    if scheme is None:
        scheme = derive_scheme(obs.n, obs.h, tau)
    if not (0.0 < level < 1.0):
        raise ValueError("level must lie in (0, 1)")
    s = component_sum_series(obs)
    n = obs.n
    full = float(np.sum(np.diff(s) ** 2))
    idx = np.arange(0, n - 1, 2)
    halved = float(np.sum((s[idx + 2] - s[idx]) ** 2)) if idx.size else 0.0
    if idx.size == 0:
        raise DegenerateDataError("series too short for the halved-frequency sum")

    k, p = scheme.k, scheme.p
    if k < 3:
        raise ValueError("the normalizer sum needs k >= 3 blocks, got %d" % k)
    sbar = s[: k * p].reshape(k, p).mean(axis=1)
    diffs = sbar[2:] - sbar[1:-1]
    normalizer = float(np.sum(diffs**4))
    if not (normalizer > 0.0 and math.isfinite(normalizer)):
        raise DegenerateDataError(
            "normalizer of the test statistic vanished; the series is "
            "(numerically) constant"
        )
    z = math.sqrt(2.0 * p / (3.0 * normalizer)) * (full - halved)
    p_value = float(ndtr(-z))
    z_crit = float(ndtri(1.0 - level))
    return NoiseTestResult(
        z=z,
        p_value=p_value,
        level=level,
        reject=bool(z >= z_crit),
        numerator_full=full,
        numerator_halved=halved,
        normalizer=normalizer,
        scheme=scheme,
    )


def power_approximation(mfrak_sum: float, level: float) -> float:
    """Approximate limiting power under a local alternative of strength delta.

    For noise variance shrinking like (h/sqrt(n)) * M with M PSD, the
    rejection probability tends to Phi(delta - z_level) where delta is the
    sum of the entries of M. delta = 0 returns the level exactly.
    """
    if mfrak_sum < 0:
        raise ValueError("the alternative strength must be non-negative")
    if not (0.0 < level < 1.0):
        raise ValueError("level must lie in (0, 1)")
    return float(ndtr(mfrak_sum - ndtri(1.0 - level)))
