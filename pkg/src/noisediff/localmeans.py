"""Block-wise local means of an observation series.

Block j (j = 0..k-1) covers observation indices j*p .. j*p + p - 1, and its
local mean is the plain arithmetic average of those p rows. Averaging
attenuates the observation noise by a factor 1/p while keeping the latent
state information, which is what every downstream estimator relies on.
The block start at index j*p is load-bearing: an off-by-one here would bias
all estimators, so it is pinned by tests.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ObservationSeries, SamplingScheme

__all__ = ["LocalMeanSeries", "local_means"]


@dataclass(frozen=True)
class LocalMeanSeries:
    """k rows of block means on the coarse grid {0, delta, ..., (k-1)*delta}."""

    scheme: SamplingScheme
    means: np.ndarray

    def __post_init__(self):
        means = np.ascontiguousarray(np.asarray(self.means, dtype=float))
        if means.shape[0] != self.scheme.k:
            raise ValueError("expected %d rows of local means" % self.scheme.k)
        means.setflags(write=False)
        object.__setattr__(self, "means", means)

    @property
    def k(self) -> int:
        return self.scheme.k

    @property
    def d(self) -> int:
        return self.means.shape[1]


def local_means(obs: ObservationSeries, scheme: SamplingScheme) -> LocalMeanSeries:
    """Average each block of p consecutive observations.

    Uses rows 0 .. k*p-1 of the series; trailing rows are ignored. For very
    long blocks (p > 1e4) accumulation runs in extended precision to keep
    the block means exact to the last bit of a double.
    """
    k, p = scheme.k, scheme.p
    if obs.values.shape[0] < k * p:
        raise ValueError(
            "series has %d rows but the scheme needs k*p = %d"
            % (obs.values.shape[0], k * p)
        )
    blocks = obs.values[: k * p].reshape(k, p, obs.d)
    if p > 10_000:
        means = blocks.astype(np.longdouble).mean(axis=1).astype(float)
    else:
        means = blocks.mean(axis=1)
    return LocalMeanSeries(scheme=scheme, means=means)
