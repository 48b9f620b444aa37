"""Model specification, sampling scheme, and small matrix utilities.

The observation model is a d-dimensional ergodic diffusion

    dX_t = b(X_t, beta) dt + a(X_t, alpha) dw_t

sampled on the grid {i*h : i = 0..n} and contaminated by additive noise,

    Y_{i*h} = X_{i*h} + Lambda^{1/2} eps_{i*h},

with eps i.i.d., componentwise independent, symmetric, mean 0, unit
variance. Estimation operates on block-wise local means of Y; the block
structure (p observations per block, k blocks, block length delta = p*h)
is derived from a tuning parameter tau in (1, 2] via p = floor(h^(-1/tau)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "ModelSpec",
    "SamplingScheme",
    "NoiseSpec",
    "ObservationSeries",
    "derive_scheme",
    "vech",
    "unvech",
    "psd_sqrt",
    "gaussian_noise",
    "linear_sde_model",
    "model_from_config",
]


def vech(m, tol=1e-10):
    """Half-vectorise a symmetric matrix, stacking the lower triangle by columns.

    Ordering is (1,1),(2,1),...,(d,1),(2,2),...,(d,d). Raises ValueError if
    the input is asymmetric beyond ``tol``.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("vech expects a square matrix, got shape %s" % (m.shape,))
    asym = np.max(np.abs(m - m.T)) if m.size else 0.0
    if asym > tol:
        raise ValueError("matrix asymmetric beyond tolerance: max |M-M^T| = %.3g" % asym)
    r, c = np.triu_indices(m.shape[0])
    return m[c, r].copy()


def unvech(v, d=None):
    """Inverse of :func:`vech`: rebuild the symmetric d x d matrix."""
    v = np.asarray(v, dtype=float)
    if d is None:
        d = int(round((math.sqrt(8 * v.size + 1) - 1) / 2))
    if d * (d + 1) // 2 != v.size:
        raise ValueError("length %d is not a triangular number for d=%d" % (v.size, d))
    out = np.zeros((d, d))
    r, c = np.triu_indices(d)
    out[c, r] = v
    out[r, c] = v
    return out


def psd_sqrt(m, tol=1e-12):
    """Symmetric square root of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues in [-tol, 0) are clamped to zero; anything below -tol raises.
    """
    m = np.asarray(m, dtype=float)
    sym = 0.5 * (m + m.T)
    if m.size and np.max(np.abs(m - m.T)) > 1e-10 * max(1.0, np.max(np.abs(m))):
        raise ValueError("psd_sqrt expects a symmetric matrix")
    w, u = np.linalg.eigh(sym)
    if w.size and w[0] < -tol:
        raise ValueError("matrix has negative eigenvalue %.3g" % w[0])
    w = np.clip(w, 0.0, None)
    root = (u * np.sqrt(w)) @ u.T
    return 0.5 * (root + root.T)


@dataclass(frozen=True)
class SamplingScheme:
    """Block structure used by the local-mean estimators.

    n observation increments at step h are grouped into k non-overlapping
    blocks of p consecutive observations; delta = p*h is the block length.
    Any trailing observations beyond k*p are unused.
    """

    n: int
    h: float
    tau: float
    p: int
    k: int
    delta: float

    def __post_init__(self):
        if self.n < 1 or self.p < 1 or self.k < 1:
            raise ValueError("n, p and k must be positive")
        if not self.h > 0:
            raise ValueError("h must be positive")

    @property
    def n_used(self) -> int:
        """Number of observations entering the local means (k*p)."""
        return self.k * self.p

    @property
    def n_unused(self) -> int:
        """Trailing observations dropped by the block partition."""
        return self.n - self.k * self.p

    @property
    def k_delta_sq(self) -> float:
        """k * delta^2, reported as a finite-sample adequacy diagnostic."""
        return self.k * self.delta**2

    def noise_attenuation(self) -> float:
        """The factor 3 * delta^((2-tau)/(tau-1)) scaling the noise variance
        inside the diffusion quasi-likelihood. Exactly 3.0 at tau = 2."""
        if self.tau == 2.0:
            return 3.0
        expo = (2.0 - self.tau) / (self.tau - 1.0)
        return 3.0 * math.exp(expo * math.log(self.delta))


def derive_scheme(n: int, h: float, tau: float) -> SamplingScheme:
    """Derive the block structure (p, k, delta) from (n, h, tau).

    Parameters
    ----------
    n : int
        Number of observation increments (the series has n+1 rows). n >= 4.
    h : float
        Discretisation step, in (0, 1).
    tau : float
        Block tuning parameter in (1, 2]. Larger tau gives shorter blocks
        and more of them.

    Returns
    -------
    SamplingScheme
        With p = floor(h^(-1/tau)), k = floor(n/p), delta = p*h.

    Notes
    -----
    The power is evaluated in log space and floored with a tiny relative
    guard so that exact cases (e.g. h=0.01, tau=2 giving p=10) do not fall
    to p-1 through floating-point rounding.
    """
    if not n >= 4:
        raise ValueError("n must be >= 4, got %r" % (n,))
    if not (0.0 < h < 1.0):
        raise ValueError("h must lie in (0, 1), got %r" % (h,))
    if not (1.0 < tau <= 2.0):
        raise ValueError("tau must lie in (1, 2], got %r" % (tau,))
    t = math.exp(-math.log(h) / tau)
    p = int(math.floor(t + 1e-9 * max(1.0, t)))
    p = max(p, 1)
    k = n // p
    if k < 3:
        raise ValueError(
            "scheme has only k=%d blocks (p=%d); estimation sums over "
            "j=1..k-2 need k >= 3" % (k, p)
        )
    return SamplingScheme(n=int(n), h=float(h), tau=float(tau), p=p, k=k, delta=p * h)


def _gaussian_sampler(rng: np.random.Generator, size: int, d: int) -> np.ndarray:
    return rng.standard_normal((size, d))


@dataclass(frozen=True)
class NoiseSpec:
    """Additive observation-noise description.

    lam is the noise variance matrix Lambda (symmetric PSD, possibly zero
    or rank-deficient). epsilon_sampler draws i.i.d. unit-variance vectors:
    it receives (rng, size) and must return an array of shape (size, d)
    with componentwise independent, symmetric, mean-zero entries.
    fourth_moments holds E|eps^(k)|^4 per component (3.0 for Gaussian),
    used only by the plug-in covariance.
    """

    lam: np.ndarray
    epsilon_sampler: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None
    fourth_moments: Optional[np.ndarray] = None

    def __post_init__(self):
        lam = np.atleast_2d(np.asarray(self.lam, dtype=float))
        if lam.shape[0] != lam.shape[1]:
            raise ValueError("lam must be square")
        if np.max(np.abs(lam - lam.T), initial=0.0) > 1e-12:
            raise ValueError("lam must be symmetric within 1e-12")
        w = np.linalg.eigvalsh(0.5 * (lam + lam.T))
        if w.size and w[0] < -1e-12:
            raise ValueError("lam has eigenvalue %.3g < -1e-12" % w[0])
        object.__setattr__(self, "lam", lam)
        fm = self.fourth_moments
        fm = np.full(lam.shape[0], 3.0) if fm is None else np.asarray(fm, dtype=float)
        if fm.shape != (lam.shape[0],):
            raise ValueError("fourth_moments must have one entry per component")
        if np.any(fm < 1.0):
            raise ValueError("fourth moments of unit-variance variables are >= 1")
        object.__setattr__(self, "fourth_moments", fm)

    @property
    def d(self) -> int:
        return self.lam.shape[0]

    @property
    def is_zero(self) -> bool:
        return not np.any(self.lam)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.epsilon_sampler is None:
            return _gaussian_sampler(rng, size, self.d)
        eps = np.asarray(self.epsilon_sampler(rng, size), dtype=float)
        if eps.shape != (size, self.d):
            raise ValueError(
                "epsilon_sampler returned shape %s, expected %s"
                % (eps.shape, (size, self.d))
            )
        return eps


def gaussian_noise(lam) -> NoiseSpec:
    """NoiseSpec with standard-normal components (fourth moments all 3)."""
    return NoiseSpec(lam=np.asarray(lam, dtype=float))


@dataclass(frozen=True)
class ObservationSeries:
    """Equally spaced d-dimensional observations: rows Y_0, Y_h, ..., Y_{n*h}."""

    h: float
    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if values.ndim != 2 or values.shape[0] < 2:
            raise ValueError("values must be a 2-D array with at least 2 rows")
        if not np.all(np.isfinite(values)):
            raise ValueError("observations contain non-finite values")
        if not self.h > 0:
            raise ValueError("h must be positive")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        """Number of increments (rows minus one)."""
        return self.values.shape[0] - 1

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ModelSpec:
    """User-supplied parametric diffusion model with compact parameter boxes.

    drift(x, beta) returns a length-d vector; diffusion(x, alpha) returns a
    d x r matrix. theta1_box / theta2_box are (m, 2) arrays of closed
    intervals defining the compact parameter spaces for alpha and beta.
    A coordinate may be pinned by an interval of zero width.

    Optional fast-path hooks (all derivable from the two callables, supplied
    by built-in factories for speed and exactness):

    - drift_batch(X, beta): vectorised drift over rows of X, shape (N, d);
    - diffusion_outer_batch(X, alpha): A = a a^T over rows of X, (N, d, d);
    - constant_diffusion: True when a(x, alpha) does not depend on x;
    - drift_design_batch(X): design D with b(x, beta) = D(x) beta, (N, d, m2),
      declaring the drift linear in beta (enables generalized least squares);
    - drift_jac_beta(x, beta): analytic d b / d beta, shape (d, m2);
    - diffusion_outer_jac_alpha(x, alpha): analytic d A / d alpha, (m1, d, d);
    - linear_parts(alpha, beta): (B, c, a) with b(x) = B x + c and constant
      diffusion a, enabling the compiled simulation kernels and the exact
      transition sampler;
    - alpha_canonical(alpha): maps alpha to a canonical representative with
      identical A = a a^T, used to resolve exact likelihood ties (e.g. the
      symmetric-square-root sign ambiguity of the linear family).
    """

    d: int
    r: int
    m1: int
    m2: int
    drift: Callable[[np.ndarray, np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray, np.ndarray], np.ndarray]
    theta1_box: np.ndarray
    theta2_box: np.ndarray
    drift_batch: Optional[Callable] = None
    diffusion_outer_batch: Optional[Callable] = None
    constant_diffusion: bool = False
    drift_design_batch: Optional[Callable] = None
    drift_jac_beta: Optional[Callable] = None
    diffusion_outer_jac_alpha: Optional[Callable] = None
    linear_parts: Optional[Callable] = None
    alpha_canonical: Optional[Callable] = None
    name: str = "custom"

    def __post_init__(self):
        for attr in ("d", "r"):
            if getattr(self, attr) < 1:
                raise ValueError("%s must be a positive integer" % attr)
        if self.m1 < 0 or self.m2 < 0:
            raise ValueError("parameter dimensions must be non-negative")
        for attr, m in (("theta1_box", self.m1), ("theta2_box", self.m2)):
            box = np.asarray(getattr(self, attr), dtype=float).reshape(m, 2)
            if not np.all(np.isfinite(box)):
                raise ValueError("%s must have finite bounds (compact space)" % attr)
            if np.any(box[:, 0] > box[:, 1]):
                raise ValueError("%s has lower > upper" % attr)
            box.setflags(write=False)
            object.__setattr__(self, attr, box)

    # -- evaluation helpers -------------------------------------------------

    def drift_at(self, x, beta):
        b = np.asarray(self.drift(np.asarray(x, dtype=float), np.asarray(beta, dtype=float)), dtype=float)
        return b.reshape(self.d)

    def diffusion_at(self, x, alpha):
        a = np.asarray(self.diffusion(np.asarray(x, dtype=float), np.asarray(alpha, dtype=float)), dtype=float)
        return a.reshape(self.d, self.r)

    def outer_at(self, x, alpha):
        """A(x, alpha) = a a^T at a single point."""
        a = self.diffusion_at(x, alpha)
        return a @ a.T

    def drift_stack(self, xs, beta):
        """Drift evaluated at every row of xs, shape (N, d)."""
        xs = np.asarray(xs, dtype=float)
        beta = np.asarray(beta, dtype=float)
        if self.drift_batch is not None:
            out = np.asarray(self.drift_batch(xs, beta), dtype=float)
            return out.reshape(xs.shape[0], self.d)
        return np.stack([self.drift_at(x, beta) for x in xs])

    def outer_stack(self, xs, alpha):
        """A = a a^T at every row of xs, shape (N, d, d).

        For constant-diffusion models a single matrix is broadcast (no copy).
        """
        xs = np.asarray(xs, dtype=float)
        alpha = np.asarray(alpha, dtype=float)
        if self.constant_diffusion:
            one = self.outer_at(np.zeros(self.d), alpha)
            return np.broadcast_to(one, (xs.shape[0], self.d, self.d))
        if self.diffusion_outer_batch is not None:
            out = np.asarray(self.diffusion_outer_batch(xs, alpha), dtype=float)
            return out.reshape(xs.shape[0], self.d, self.d)
        return np.stack([self.outer_at(x, alpha) for x in xs])

    def outer_jac_stack(self, xs, alpha, rel_step=1e-6):
        """dA/dalpha at every row of xs, shape (N, m1, d, d).

        Uses the analytic hook when present, otherwise central finite
        differences with per-coordinate step rel_step*(1+|alpha_i|).
        """
        xs = np.asarray(xs, dtype=float)
        alpha = np.asarray(alpha, dtype=float)
        n = xs.shape[0]
        if self.diffusion_outer_jac_alpha is not None:
            return np.stack(
                [np.asarray(self.diffusion_outer_jac_alpha(x, alpha), dtype=float).reshape(self.m1, self.d, self.d) for x in xs]
            )
        out = np.empty((n, self.m1, self.d, self.d))
        for i in range(self.m1):
            step = rel_step * (1.0 + abs(alpha[i]))
            up = alpha.copy()
            up[i] += step
            dn = alpha.copy()
            dn[i] -= step
            out[:, i] = (self.outer_stack(xs, up) - self.outer_stack(xs, dn)) / (2.0 * step)
        return out

    def drift_jac_stack(self, xs, beta, rel_step=1e-6):
        """db/dbeta at every row of xs, shape (N, d, m2)."""
        xs = np.asarray(xs, dtype=float)
        beta = np.asarray(beta, dtype=float)
        if self.drift_design_batch is not None:
            return np.asarray(self.drift_design_batch(xs), dtype=float).reshape(
                xs.shape[0], self.d, self.m2
            )
        if self.drift_jac_beta is not None:
            return np.stack(
                [np.asarray(self.drift_jac_beta(x, beta), dtype=float).reshape(self.d, self.m2) for x in xs]
            )
        out = np.empty((xs.shape[0], self.d, self.m2))
        for i in range(self.m2):
            step = rel_step * (1.0 + abs(beta[i]))
            up = beta.copy()
            up[i] += step
            dn = beta.copy()
            dn[i] -= step
            out[:, :, i] = (self.drift_stack(xs, up) - self.drift_stack(xs, dn)) / (2.0 * step)
        return out


# -- built-in family: linear drift, constant symmetric diffusion ------------


def _default_alpha_box(d):
    box = np.empty((d * (d + 1) // 2, 2))
    idx = 0
    for j in range(d):
        for i in range(j, d):
            box[idx] = (1e-3, 20.0) if i == j else (-10.0, 10.0)
            idx += 1
    return box


def linear_sde_model(d, alpha_box=None, beta_box=None) -> ModelSpec:
    """Multivariate Ornstein-Uhlenbeck-type model.

        dX_t = (B X_t + c) dt + a dw_t

    with a symmetric constant d x d diffusion matrix. Parameters are packed
    as alpha = vech(a) (column-stacked lower triangle) and
    beta = (vec(B) column-major, then c), so m1 = d(d+1)/2 and m2 = d^2 + d.
    For d = 2 this is the matrix [[alpha1, alpha2], [alpha2, alpha3]] and
    drift ([[beta1, beta3], [beta2, beta4]]) x + (beta5, beta6).
    """
    m1 = d * (d + 1) // 2
    m2 = d * d + d
    if alpha_box is None:
        alpha_box = _default_alpha_box(d)
    if beta_box is None:
        beta_box = np.tile((-20.0, 20.0), (m2, 1))

    def unpack_beta(beta):
        beta = np.asarray(beta, dtype=float)
        B = beta[: d * d].reshape(d, d, order="F")
        c = beta[d * d :]
        return B, c

    def drift(x, beta):
        B, c = unpack_beta(beta)
        return B @ x + c

    def diffusion(x, alpha):
        return unvech(alpha, d)

    def drift_batch(xs, beta):
        B, c = unpack_beta(beta)
        return xs @ B.T + c

    def drift_design_batch(xs):
        n = xs.shape[0]
        out = np.zeros((n, d, m2))
        # b(x)^(i) = sum_j B[i,j] x[j] + c[i]; vec(B) column-major puts
        # B[i,j] at position j*d + i.
        for j in range(d):
            for i in range(d):
                out[:, i, j * d + i] = xs[:, j]
        for i in range(d):
            out[:, i, d * d + i] = 1.0
        return out

    def outer_jac(x, alpha):
        a = unvech(alpha, d)
        out = np.empty((m1, d, d))
        idx = 0
        for j in range(d):
            for i in range(j, d):
                e = np.zeros((d, d))
                e[i, j] = 1.0
                e[j, i] = 1.0
                out[idx] = e @ a + a @ e
                idx += 1
        return out

    def linear_parts(alpha, beta):
        B, c = unpack_beta(beta)
        return B, c, unvech(alpha, d)

    def alpha_canonical(alpha):
        # a and its eigenvalue-sign flips share A = a^2; report the unique
        # PSD square root
        a = unvech(alpha, d)
        return vech(psd_sqrt(a @ a.T))

    return ModelSpec(
        d=d,
        r=d,
        m1=m1,
        m2=m2,
        drift=drift,
        diffusion=diffusion,
        theta1_box=alpha_box,
        theta2_box=beta_box,
        drift_batch=drift_batch,
        diffusion_outer_batch=None,
        constant_diffusion=True,
        drift_design_batch=drift_design_batch,
        diffusion_outer_jac_alpha=outer_jac,
        linear_parts=linear_parts,
        alpha_canonical=alpha_canonical,
        name="linear",
    )


def pack_linear_params(drift_matrix, drift_intercept, diffusion_matrix):
    """Pack (B, c, a) of the linear family into (alpha, beta) vectors."""
    B = np.asarray(drift_matrix, dtype=float)
    c = np.asarray(drift_intercept, dtype=float)
    a = np.asarray(diffusion_matrix, dtype=float)
    alpha = vech(a)
    beta = np.concatenate([B.reshape(-1, order="F"), c])
    return alpha, beta


def model_from_config(cfg: dict):
    """Build (model, alpha_star, beta_star) from a config mapping.

    Expected keys for the built-in family:

        family          "linear" (the default)
        drift_matrix    d x d nested list, true B
        drift_intercept length-d list, true c
        diffusion       d x d nested list (symmetric), true a
        alpha_box       optional (m1, 2) nested list
        beta_box        optional (m2, 2) nested list

    The matrices double as the true parameter values for simulation studies.
    """
    family = cfg.get("family", "linear")
    if family != "linear":
        raise ValueError("unknown model family %r" % (family,))
    B = np.asarray(cfg["drift_matrix"], dtype=float)
    d = B.shape[0]
    c = np.asarray(cfg.get("drift_intercept", np.zeros(d)), dtype=float)
    a = np.asarray(cfg["diffusion"], dtype=float)
    if a.shape != (d, d) or np.max(np.abs(a - a.T)) > 1e-12:
        raise ValueError("diffusion must be a symmetric d x d matrix")
    alpha_box = cfg.get("alpha_box")
    beta_box = cfg.get("beta_box")
    model = linear_sde_model(
        d,
        alpha_box=None if alpha_box is None else np.asarray(alpha_box, dtype=float),
        beta_box=None if beta_box is None else np.asarray(beta_box, dtype=float),
    )
    alpha_star, beta_star = pack_linear_params(B, c, a)
    return model, alpha_star, beta_star
