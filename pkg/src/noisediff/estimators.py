"""Three-stage adaptive estimation on noisy diffusion observations.

Stage 1 estimates the noise variance from the quadratic variation of the
raw observations,

    Lambda_hat = (1/2n) sum_i (Y_{i+1} - Y_i)^{otimes 2}.

Stage 2 estimates the diffusion parameter alpha by maximising a Gaussian
quasi-likelihood of local-mean increments whose block covariance is
(2/3) * delta * (A(x, alpha) + atten * Lambda), where A = a a^T and
atten = 3 * delta^((2-tau)/(tau-1)) corrects for the residual noise left
in the block means (atten = 3 exactly when tau = 2). Stage 3 estimates the
drift parameter beta by weighted least squares of local-mean increments
against delta * b(x, beta), weighted by A(x, alpha_hat)^{-1}.

The three stages converge at rates sqrt(n), sqrt(k), sqrt(n h) and are
asymptotically independent; ``plugin_covariance`` assembles the limiting
block-diagonal sandwich covariance with invariant-measure integrals
replaced by empirical averages over the local means.

``estimate_lga`` provides the classical raw-increment Gaussian
quasi-likelihood (local Gaussian approximation) as a comparison baseline;
it is efficient when no observation noise is present and degrades sharply
otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .errors import (
    NoisediffError,
    SingularBlockError,
    SingularInformationError,
)
from .localmeans import LocalMeanSeries, local_means
from .model import ModelSpec, ObservationSeries, SamplingScheme, psd_sqrt, vech
from .optimize import BoxProblem, OptimizerReport, maximize

__all__ = [
    "EstimationResult",
    "estimate_noise_variance",
    "diffusion_loglik",
    "drift_loglik",
    "estimate_diffusion",
    "estimate_drift",
    "estimate_adaptive",
    "plugin_covariance",
    "estimate_lga",
    "lga_loglik",
]


def estimate_noise_variance(obs: ObservationSeries) -> np.ndarray:
    """Noise variance estimate: half the mean outer product of increments.

    Symmetric PSD by construction (a scaled sum of outer products); no
    positivity projection is applied, so a noise-free series yields a
    matrix of size O(h).
    """
    dy = np.diff(obs.values, axis=0)
    out = dy.T @ dy / (2.0 * obs.n)
    return 0.5 * (out + out.T)


def _lm_arrays(lm: LocalMeanSeries):
    """(xs, diffs) with xs_j = mean_{j-1} and diffs_j = mean_{j+1} - mean_j
    for j = 1..k-2 (the index set of both quasi-likelihood sums)."""
    means = lm.means
    k = lm.k
    if k < 3:
        raise ValueError("quasi-likelihood sums need k >= 3 blocks, got %d" % k)
    return means[: k - 2], means[2:k] - means[1 : k - 1]


def _chol_solve_sym(mat, context):
    try:
        c = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        raise SingularBlockError(0, float(np.linalg.det(mat)), context) from None
    return c


def _const_quad_logdet(a_mat, v, scale, context):
    """Quadratic-form and logdet sums when the block matrix is constant."""
    c = _chol_solve_sym(a_mat, context)
    sol = np.linalg.solve(a_mat, v.T)
    qf = float(np.einsum("ji,ij->", v, sol)) / scale
    logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
    return qf, logdet


def _stack_quad_logdet(a_stack, v, scale, context):
    a_stack = np.ascontiguousarray(a_stack)
    v = np.ascontiguousarray(v)
    qf, logdet, bad = _kernels.block_quad_logdet(a_stack, v, scale)
    if bad >= 0:
        raise SingularBlockError(int(bad), float(np.linalg.det(a_stack[bad])), context)
    return qf, logdet


def diffusion_loglik(alpha, lam, lm: LocalMeanSeries, model: ModelSpec) -> float:
    """Local-mean quasi-log-likelihood for the diffusion parameter.

    -1/2 sum_{j=1}^{k-2} [ d_j^T ((2/3) delta M_j)^{-1} d_j + log det M_j ]
    with d_j the local-mean increment and M_j = A(xbar_{j-1}, alpha)
    + atten * lam. Raises SingularBlockError when any M_j is not positive
    definite (degenerate diffusion or alpha outside the usable region).
    """
    alpha = np.asarray(alpha, dtype=float)
    lam = np.asarray(lam, dtype=float)
    xs, diffs = _lm_arrays(lm)
    scheme = lm.scheme
    atten = scheme.noise_attenuation()
    scale = (2.0 / 3.0) * scheme.delta
    if model.constant_diffusion:
        m = model.outer_at(np.zeros(model.d), alpha) + atten * lam
        qf, logdet = _const_quad_logdet(m, diffs, scale, "diffusion quasi-likelihood")
        return -0.5 * (qf + diffs.shape[0] * logdet)
    a_stack = model.outer_stack(xs, alpha) + atten * lam
    qf, logdet = _stack_quad_logdet(a_stack, diffs, scale, "diffusion quasi-likelihood")
    return -0.5 * (qf + logdet)


def drift_loglik(beta, alpha, lm: LocalMeanSeries, model: ModelSpec) -> float:
    """Local-mean quasi-log-likelihood for the drift parameter.

    -1/2 sum_{j=1}^{k-2} r_j^T (delta A_j)^{-1} r_j with residual
    r_j = d_j - delta * b(xbar_{j-1}, beta) and A_j = A(xbar_{j-1}, alpha).
    Non-positive, and zero exactly when every residual vanishes.
    """
    beta = np.asarray(beta, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    xs, diffs = _lm_arrays(lm)
    delta = lm.scheme.delta
    resid = diffs - delta * model.drift_stack(xs, beta)
    if model.constant_diffusion:
        a_mat = model.outer_at(np.zeros(model.d), alpha)
        qf, _ = _const_quad_logdet(a_mat, resid, delta, "drift quasi-likelihood")
        return -0.5 * qf
    a_stack = model.outer_stack(xs, alpha)
    qf, _ = _stack_quad_logdet(a_stack, resid, delta, "drift quasi-likelihood")
    return -0.5 * qf


def estimate_diffusion(
    lm: LocalMeanSeries,
    lambda_hat,
    model: ModelSpec,
    method: str = "nelder-mead",
    starts=None,
):
    """Maximise the diffusion quasi-likelihood over the alpha box.

    Returns (alpha_hat, value, OptimizerReport). Coordinates of the argmax
    within 1e-6 of a box bound are flagged in the report.
    """
    if model.m1 == 0:
        empty = np.zeros(0)
        val = diffusion_loglik(empty, lambda_hat, lm, model)
        return empty, val, _trivial_report()
    objective = lambda a: diffusion_loglik(a, lambda_hat, lm, model)
    problem = BoxProblem(
        objective=objective,
        lower=model.theta1_box[:, 0],
        upper=model.theta1_box[:, 1],
        starts=starts,
    )
    alpha_hat, value, report = maximize(problem, method=method)
    alpha_hat, value = _canonical_alpha(model, alpha_hat, value, objective, report)
    return alpha_hat, value, report


def _canonical_alpha(model, alpha_hat, value, objective, report):
    """Resolve exact likelihood ties toward the model's canonical alpha."""
    if model.alpha_canonical is None:
        return alpha_hat, value
    cand = np.asarray(model.alpha_canonical(alpha_hat), dtype=float)
    if np.array_equal(cand, alpha_hat):
        return alpha_hat, value
    lo, up = model.theta1_box[:, 0], model.theta1_box[:, 1]
    if np.any(cand < lo) or np.any(cand > up):
        return alpha_hat, value
    cand_value = objective(cand)
    if not cand_value >= value - 1e-9 * (1.0 + abs(value)):
        return alpha_hat, value
    flags = (cand - lo <= 1e-6) | (up - cand <= 1e-6)
    if report.boundary.size >= model.m1:
        report.boundary = np.concatenate([flags, report.boundary[model.m1 :]])
    return cand, cand_value


def estimate_drift(
    lm: LocalMeanSeries,
    alpha_hat,
    model: ModelSpec,
    method: str = "nelder-mead",
    starts=None,
):
    """Maximise the drift quasi-likelihood over the beta box."""
    if model.m2 == 0:
        empty = np.zeros(0)
        val = drift_loglik(empty, alpha_hat, lm, model)
        return empty, val, _trivial_report()
    problem = BoxProblem(
        objective=lambda b: drift_loglik(b, alpha_hat, lm, model),
        lower=model.theta2_box[:, 0],
        upper=model.theta2_box[:, 1],
        starts=starts,
    )
    return maximize(problem, method=method)


def _trivial_report() -> OptimizerReport:
    return OptimizerReport(
        iterations=0, n_evals=1, converged=True, boundary=np.zeros(0, dtype=bool)
    )


@dataclass
class PluginCovariance:
    """Block-diagonal plug-in covariance of the rate-scaled estimation errors.

    Ordering: sqrt(n)*(vech(Lambda_hat) - vech(Lambda*)), then
    sqrt(k)*(alpha_hat - alpha*), then sqrt(n h)*(beta_hat - beta*).
    """

    matrix: np.ndarray
    labels: list

    def to_dict(self):
        return {
            "labels": list(self.labels),
            "matrix": [[float(v) for v in row] for row in self.matrix],
        }


@dataclass
class EstimationResult:
    """Output of the adaptive three-stage estimation."""

    lambda_hat: np.ndarray
    theta_eps_hat: np.ndarray
    alpha_hat: np.ndarray
    beta_hat: np.ndarray
    loglik_diffusion: float
    loglik_drift: float
    optimizer_report: dict
    scheme: SamplingScheme
    cov: Optional[PluginCovariance] = None

    def to_dict(self):
        out = {
            "lambda_hat": [[float(v) for v in row] for row in self.lambda_hat],
            "theta_eps_hat": [float(v) for v in self.theta_eps_hat],
            "alpha_hat": [float(v) for v in self.alpha_hat],
            "beta_hat": [float(v) for v in self.beta_hat],
            "loglik_diffusion": float(self.loglik_diffusion),
            "loglik_drift": float(self.loglik_drift),
            "optimizer_report": {
                name: rep.to_dict() for name, rep in self.optimizer_report.items()
            },
            "scheme": {
                "n": self.scheme.n,
                "h": self.scheme.h,
                "tau": self.scheme.tau,
                "p": self.scheme.p,
                "k": self.scheme.k,
                "delta": self.scheme.delta,
                "k_delta_sq": self.scheme.k_delta_sq,
            },
        }
        out["cov"] = None if self.cov is None else self.cov.to_dict()
        return out


def _stage(name, fn):
    try:
        return fn()
    except NoisediffError as exc:
        exc.stage = name
        exc.args = ("stage '%s': %s" % (name, exc.args[0] if exc.args else ""),) + exc.args[1:]
        raise


def estimate_adaptive(
    obs: ObservationSeries,
    scheme: SamplingScheme,
    model: ModelSpec,
    with_cov: bool = False,
    noise_fourth_moments=None,
    method: str = "nelder-mead",
) -> EstimationResult:
    """Run the full pipeline: noise variance, local means, alpha, beta.

    When ``with_cov`` is set the plug-in covariance is attached, using
    ``noise_fourth_moments`` (default: Gaussian, all 3).
    """
    lambda_hat = _stage("noise-variance", lambda: estimate_noise_variance(obs))
    lm = _stage("local-means", lambda: local_means(obs, scheme))
    alpha_hat, v1, rep1 = _stage(
        "diffusion", lambda: estimate_diffusion(lm, lambda_hat, model, method=method)
    )
    beta_hat, v2, rep2 = _stage(
        "drift", lambda: estimate_drift(lm, alpha_hat, model, method=method)
    )
    cov = None
    if with_cov:
        cov = _stage(
            "covariance",
            lambda: plugin_covariance(
                lm, model, alpha_hat, beta_hat, lambda_hat, noise_fourth_moments
            ),
        )
    return EstimationResult(
        lambda_hat=lambda_hat,
        theta_eps_hat=vech(lambda_hat),
        alpha_hat=alpha_hat,
        beta_hat=beta_hat,
        loglik_diffusion=v1,
        loglik_drift=v2,
        optimizer_report={"diffusion": rep1, "drift": rep2},
        scheme=scheme,
        cov=cov,
    )


# -- plug-in covariance ------------------------------------------------------


def _noise_quartic_block(lam, fourth_moments):
    """Covariance of the rate-scaled noise-variance estimate, vech ordering."""
    d = lam.shape[0]
    root = psd_sqrt(lam)
    pairs = [(i, j) for j in range(d) for i in range(j, d)]
    excess = np.asarray(fourth_moments, dtype=float) - 3.0
    m = len(pairs)
    out = np.empty((m, m))
    for a, (l1, l2) in enumerate(pairs):
        for b, (l3, l4) in enumerate(pairs):
            quartic = float(np.sum(root[l1] * root[l2] * root[l3] * root[l4] * excess))
            out[a, b] = quartic + 1.5 * (
                lam[l1, l3] * lam[l2, l4] + lam[l1, l4] * lam[l2, l3]
            )
    return out


def plugin_covariance(
    lm: LocalMeanSeries,
    model: ModelSpec,
    alpha_hat,
    beta_hat,
    lambda_hat,
    fourth_moments=None,
) -> PluginCovariance:
    """Assemble the block-diagonal sandwich covariance at the estimates.

    Invariant-measure integrals are approximated by empirical averages of
    the integrands over the local-mean series (the only observable state
    proxy). The alpha block uses the tau = 2 branch (extra noise terms)
    exactly when the scheme has tau = 2; the beta block is the inverse
    Fisher information. Raises SingularInformationError when an information
    block is singular (parameters not identifiable from these data).
    """
    alpha_hat = np.asarray(alpha_hat, dtype=float)
    beta_hat = np.asarray(beta_hat, dtype=float)
    lam = np.asarray(lambda_hat, dtype=float)
    d = model.d
    tau_is_2 = lm.scheme.tau == 2.0
    if fourth_moments is None:
        fourth_moments = np.full(d, 3.0)

    xs = lm.means
    blocks = []
    labels = []

    w1 = _noise_quartic_block(lam, fourth_moments)
    blocks.append(w1)
    labels += ["lambda(%d,%d)" % (i + 1, j + 1) for j in range(d) for i in range(j, d)]

    a_stack = np.asarray(model.outer_stack(xs, alpha_hat))
    atau_stack = a_stack + 3.0 * lam if tau_is_2 else a_stack

    if model.m1 > 0:
        da = model.outer_jac_stack(xs, alpha_hat)  # (N, m1, d, d)
        atau_inv = np.linalg.inv(atau_stack)
        bmats = 0.75 * np.einsum("nij,nmjk,nkl->nmil", atau_inv, da, atau_inv, optimize=True)
        bmats = 0.5 * (bmats + np.swapaxes(bmats, 2, 3))
        core = np.einsum(
            "nmij,njk,nqkl,nli->mq", bmats, a_stack, bmats, a_stack, optimize=True
        )
        if tau_is_2:
            core = core + 4.0 * np.einsum(
                "nmij,njk,nqkl,li->mq", bmats, a_stack, bmats, lam, optimize=True
            )
            core = core + 12.0 * np.einsum(
                "nmij,jk,nqkl,li->mq", bmats, lam, bmats, lam, optimize=True
            )
        i22 = core / xs.shape[0]
        j22 = 0.5 * np.einsum(
            "nij,nmjk,nkl,nqli->mq", atau_inv, da, atau_inv, da, optimize=True
        ) / xs.shape[0]
        try:
            alpha_block = np.linalg.solve(j22, np.linalg.solve(j22, i22).T)
        except np.linalg.LinAlgError:
            raise SingularInformationError(
                "diffusion information block is singular"
            ) from None
        alpha_block = 0.5 * (alpha_block + alpha_block.T)
        blocks.append(alpha_block)
        labels += ["alpha%d" % (i + 1) for i in range(model.m1)]

    if model.m2 > 0:
        db = model.drift_jac_stack(xs, beta_hat)  # (N, d, m2)
        a_inv = np.linalg.inv(a_stack)
        i33 = np.einsum("nim,nij,njq->mq", db, a_inv, db, optimize=True) / xs.shape[0]
        try:
            beta_block = np.linalg.inv(i33)
        except np.linalg.LinAlgError:
            raise SingularInformationError("drift information block is singular") from None
        beta_block = 0.5 * (beta_block + beta_block.T)
        blocks.append(beta_block)
        labels += ["beta%d" % (i + 1) for i in range(model.m2)]

    total = sum(b.shape[0] for b in blocks)
    out = np.zeros((total, total))
    at = 0
    for b in blocks:
        out[at : at + b.shape[0], at : at + b.shape[0]] = b
        at += b.shape[0]
    return PluginCovariance(matrix=out, labels=labels)


# -- raw-increment Gaussian baseline (local Gaussian approximation) ----------


def lga_loglik(alpha, beta, obs: ObservationSeries, model: ModelSpec) -> float:
    """Raw-increment Gaussian quasi-log-likelihood.

    -1/2 sum_i [ r_i^T (h A(Y_i, alpha))^{-1} r_i + log det A(Y_i, alpha) ]
    with r_i = Y_{i+1} - Y_i - h b(Y_i, beta). Valid as a likelihood only
    when the observations are noise-free.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    ys = obs.values[:-1]
    h = obs.h
    resid = np.diff(obs.values, axis=0) - h * model.drift_stack(ys, beta)
    if model.constant_diffusion:
        a_mat = model.outer_at(np.zeros(model.d), alpha)
        qf, logdet = _const_quad_logdet(a_mat, resid, h, "raw-increment likelihood")
        return -0.5 * (qf + resid.shape[0] * logdet)
    a_stack = model.outer_stack(ys, alpha)
    qf, logdet = _stack_quad_logdet(a_stack, resid, h, "raw-increment likelihood")
    return -0.5 * (qf + logdet)


class _AffineLgaProfile:
    """Sufficient statistics for profiling beta out of the raw-increment
    likelihood when the drift is linear in beta and the diffusion constant.

    Precomputes S[a,b] = sum_i D_i[a,:]^T D_i[b,:], R[a,b] = sum_i
    D_i[a,:] r_i[b] and Q = sum_i r_i r_i^T where b(x, beta) = D(x) beta
    + b0(x); each alpha evaluation then costs O(d^2 m2^2).
    """

    def __init__(self, obs, model):
        self.model = model
        self.h = obs.h
        self.n = obs.n
        ys = obs.values[:-1]
        design = model.drift_jac_stack(ys, np.zeros(model.m2))  # (n, d, m2)
        offset = model.drift_stack(ys, np.zeros(model.m2))
        r = np.diff(obs.values, axis=0) - self.h * offset
        self.s_stat = np.einsum("nam,nbq->abmq", design, design)
        self.r_stat = np.einsum("nam,nb->abm", design, r)
        self.q_stat = np.einsum("na,nb->ab", r, r)

    def beta_gls(self, a_inv):
        m2 = self.model.m2
        gram = np.einsum("ab,abmq->mq", a_inv, self.s_stat) * self.h
        rhs = np.einsum("ab,abm->m", a_inv, self.r_stat)
        try:
            return np.linalg.solve(gram, rhs)
        except np.linalg.LinAlgError:
            raise SingularInformationError(
                "drift design matrix is singular in the raw-increment fit"
            ) from None

    def value(self, a_mat, a_inv, logdet, beta):
        h = self.h
        cross = np.einsum("abm,m->ab", self.r_stat, beta)
        quad = np.einsum("abmq,m,q->ab", self.s_stat, beta, beta)
        e_mat = self.q_stat - h * (cross + cross.T) + h * h * quad
        qf = float(np.einsum("ab,ab->", a_inv, e_mat)) / h
        return -0.5 * (qf + self.n * logdet)


def estimate_lga(
    obs: ObservationSeries,
    model: ModelSpec,
    method: str = "nelder-mead",
):
    """Fit (alpha, beta) by the raw-increment Gaussian quasi-likelihood.

    For models declaring a linear-in-beta drift (``drift_design_batch``)
    with constant diffusion, beta is profiled out by generalized least
    squares and only alpha is searched; otherwise the search runs jointly
    over both boxes. Returns (alpha_hat, beta_hat, value, report).
    """
    lo1, up1 = model.theta1_box[:, 0], model.theta1_box[:, 1]
    lo2, up2 = model.theta2_box[:, 0], model.theta2_box[:, 1]

    if model.drift_design_batch is not None and model.constant_diffusion and model.m2 > 0:
        prof = _AffineLgaProfile(obs, model)

        def objective(alpha):
            a_mat = model.outer_at(np.zeros(model.d), alpha)
            try:
                chol = np.linalg.cholesky(a_mat)
            except np.linalg.LinAlgError:
                return -np.inf
            a_inv = np.linalg.inv(a_mat)
            logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
            beta = np.clip(prof.beta_gls(a_inv), lo2, up2)
            return prof.value(a_mat, a_inv, logdet, beta)

        problem = BoxProblem(objective=objective, lower=lo1, upper=up1)
        alpha_hat, value, report = maximize(problem, method=method)
        alpha_hat, value = _canonical_alpha(model, alpha_hat, value, objective, report)
        a_inv = np.linalg.inv(model.outer_at(np.zeros(model.d), alpha_hat))
        beta_free = prof.beta_gls(a_inv)
        beta_hat = np.clip(beta_free, lo2, up2)
        if np.any(beta_hat != beta_free):
            # profile solution violated the box; polish beta inside it
            beta_hat, value, rep2 = maximize(
                BoxProblem(
                    objective=lambda b: lga_loglik(alpha_hat, b, obs, model),
                    lower=lo2,
                    upper=up2,
                    starts=[beta_hat],
                ),
                method=method,
            )
            report.iterations += rep2.iterations
        else:
            value = lga_loglik(alpha_hat, beta_hat, obs, model)
        boundary2 = (beta_hat - lo2 <= 1e-6) | (up2 - beta_hat <= 1e-6)
        report.boundary = np.concatenate([report.boundary, boundary2])
        return alpha_hat, beta_hat, value, report

    lower = np.concatenate([lo1, lo2])
    upper = np.concatenate([up1, up2])
    problem = BoxProblem(
        objective=lambda th: lga_loglik(th[: model.m1], th[model.m1 :], obs, model),
        lower=lower,
        upper=upper,
    )
    theta, value, report = maximize(problem, method=method)
    alpha_hat, beta_hat = theta[: model.m1], theta[model.m1 :]
    alpha_hat, value = _canonical_alpha(
        model, alpha_hat, value, lambda a: lga_loglik(a, beta_hat, obs, model), report
    )
    return alpha_hat, beta_hat, value, report
