import dataclasses
import math

import numpy as np
import pytest

from noisediff import (
    LocalMeanSeries,
    ModelSpec,
    ObservationSeries,
    SamplingScheme,
    diffusion_loglik,
    drift_loglik,
    estimate_adaptive,
    estimate_diffusion,
    estimate_drift,
    estimate_lga,
    estimate_noise_variance,
    gaussian_noise,
    lga_loglik,
    linear_sde_model,
    local_means,
    pack_linear_params,
    plugin_covariance,
    simulate_path,
    contaminate,
    derive_scheme,
)
from noisediff.errors import SingularBlockError


def brute_force_noise_variance(values):
    """Literal double loop over increments and matrix entries."""
    n = values.shape[0] - 1
    d = values.shape[1]
    out = np.zeros((d, d))
    for i in range(n):
        dy = values[i + 1] - values[i]
        for a in range(d):
            for b in range(d):
                out[a, b] += dy[a] * dy[b]
    return out / (2.0 * n)


def scale_drift_model(sigma_box=((0.05, 5.0),), beta_box=((-5.0, 5.0),)):
    """1-D model with drift beta*x and constant diffusion sigma."""
    return ModelSpec(
        d=1,
        r=1,
        m1=1,
        m2=1,
        drift=lambda x, b: b[0] * x,
        diffusion=lambda x, a: np.array([[a[0]]]),
        theta1_box=np.asarray(sigma_box),
        theta2_box=np.asarray(beta_box),
        drift_batch=lambda xs, b: b[0] * xs,
        constant_diffusion=True,
        drift_design_batch=lambda xs: xs[:, :, None],
    )


def synthetic_lm(means, h=0.1, tau=1.5):
    means = np.asarray(means, dtype=float)
    if means.ndim == 1:
        means = means[:, None]
    k = means.shape[0]
    p = 2
    scheme = SamplingScheme(n=k * p, h=h, tau=tau, p=p, k=k, delta=p * h)
    return LocalMeanSeries(scheme=scheme, means=means)


# -- noise variance ----------------------------------------------------------


def test_noise_variance_constant_series():
    obs = ObservationSeries(h=0.1, values=np.full((20, 2), 3.0))
    assert np.array_equal(estimate_noise_variance(obs), np.zeros((2, 2)))


def test_noise_variance_hand_value():
    obs = ObservationSeries(h=0.1, values=np.array([[0.0], [1.0], [0.0], [1.0]]))
    assert estimate_noise_variance(obs)[0, 0] == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_noise_variance_oracle(seed):
    rng = np.random.default_rng(seed)
    d = rng.integers(1, 4)
    n = rng.integers(2, 1000)
    values = rng.normal(size=(n + 1, d))
    obs = ObservationSeries(h=0.01, values=values)
    est = estimate_noise_variance(obs)
    assert np.max(np.abs(est - brute_force_noise_variance(values))) < 1e-12
    assert np.array_equal(est, est.T)
    assert np.min(np.linalg.eigvalsh(est)) > -1e-12  # PSD by construction


# -- diffusion quasi-likelihood ----------------------------------------------


def test_diffusion_loglik_single_term():
    model = linear_sde_model(1, alpha_box=np.array([[0.05, 5.0]]))
    s = 0.7
    lm = synthetic_lm([0.0, 0.0, s], h=0.05, tau=1.5)
    delta = lm.scheme.delta
    for alpha in (0.5, 1.0, 2.3):
        expected = -0.5 * (
            s**2 / ((2.0 / 3.0) * delta * alpha**2) + math.log(alpha**2)
        )
        got = diffusion_loglik([alpha], np.zeros((1, 1)), lm, model)
        assert got == pytest.approx(expected, rel=1e-12)


def test_diffusion_loglik_trace_identity():
    # when every squared increment equals (2/3)*delta*M the quadratic form
    # contributes d per block
    model = linear_sde_model(1, alpha_box=np.array([[0.05, 5.0]]))
    alpha, lam, h, tau = 1.3, 0.2, 0.05, 1.5
    k = 12
    scheme = SamplingScheme(n=2 * k, h=h, tau=tau, p=2, k=k, delta=2 * h)
    atten = scheme.noise_attenuation()
    m_val = alpha**2 + atten * lam
    s = math.sqrt((2.0 / 3.0) * scheme.delta * m_val)
    means = np.concatenate([[0.0], np.cumsum(np.full(k - 1, s))])[:, None]
    lm = LocalMeanSeries(scheme=scheme, means=means)
    got = diffusion_loglik([alpha], np.array([[lam]]), lm, model)
    expected = -0.5 * (k - 2) * (1.0 + math.log(m_val))
    assert got == pytest.approx(expected, rel=1e-10)


def test_diffusion_loglik_singular_block_reports_index():
    model = ModelSpec(
        d=1,
        r=1,
        m1=1,
        m2=1,
        drift=lambda x, b: np.zeros(1),
        # diffusion vanishes for x > 2: blocks there are singular
        diffusion=lambda x, a: np.array([[a[0] if x[0] <= 2.0 else 0.0]]),
        theta1_box=np.array([[0.05, 5.0]]),
        theta2_box=np.array([[-1.0, 1.0]]),
    )
    means = np.array([0.0, 1.0, 2.5, 3.0, 3.5, 4.0])
    lm = synthetic_lm(means)
    with pytest.raises(SingularBlockError) as exc:
        diffusion_loglik([1.0], np.zeros((1, 1)), lm, model)
    assert exc.value.block_index == 2  # first xs entry above 2 is index 2
    assert exc.value.determinant == 0.0


def test_estimate_diffusion_stationary_point_oracle():
    """Scalar constant diffusion: the maximiser has a closed form."""
    model = linear_sde_model(1, alpha_box=np.array([[0.05, 5.0]]))
    rng = np.random.default_rng(42)
    k, h, tau = 60, 0.05, 1.5
    scheme = SamplingScheme(n=2 * k, h=h, tau=tau, p=2, k=k, delta=2 * h)
    means = np.cumsum(rng.normal(scale=0.3, size=k))[:, None]
    lm = LocalMeanSeries(scheme=scheme, means=means)
    lam_hat = np.array([[0.3]])

    diffs = means[2:, 0] - means[1:-1, 0]
    delta = scheme.delta
    expo = (2.0 - tau) / (tau - 1.0)
    oracle_sq = (3.0 / (2.0 * delta * (k - 2))) * np.sum(diffs**2) - 3.0 * delta**expo * 0.3
    oracle = math.sqrt(oracle_sq)
    assert 0.05 < oracle < 5.0  # interior of the box

    alpha_hat, value, report = estimate_diffusion(lm, lam_hat, model)
    assert alpha_hat[0] == pytest.approx(oracle, abs=1e-6)
    assert value == pytest.approx(diffusion_loglik(alpha_hat, lam_hat, lm, model))


def test_estimate_diffusion_degenerate_hits_boundary():
    model = linear_sde_model(1, alpha_box=np.array([[0.05, 5.0]]))
    lm = synthetic_lm(np.zeros(10))
    alpha_hat, value, report = estimate_diffusion(lm, np.zeros((1, 1)), model)
    assert alpha_hat[0] == pytest.approx(0.05, abs=1e-9)
    assert report.boundary[0]


# -- drift quasi-likelihood ---------------------------------------------------


def test_drift_loglik_exact_fit_is_maximum(ou_model):
    model, alpha_star, beta_star = ou_model
    k, delta = 40, 0.2
    scheme = SamplingScheme(n=2 * k, h=0.1, tau=2.0, p=2, k=k, delta=delta)
    means = np.zeros((k, 2))
    means[0] = [0.5, -0.3]
    means[1] = [0.6, -0.2]
    for j in range(1, k - 1):
        means[j + 1] = means[j] + delta * model.drift_at(means[j - 1], beta_star)
    lm = LocalMeanSeries(scheme=scheme, means=means)
    at_truth = drift_loglik(beta_star, alpha_star, lm, model)
    assert at_truth == pytest.approx(0.0, abs=1e-18)
    rng = np.random.default_rng(0)
    for _ in range(10):
        other = beta_star + rng.normal(scale=0.2, size=6)
        assert drift_loglik(other, alpha_star, lm, model) < at_truth


def test_drift_loglik_vertex_oracle_1d():
    model = scale_drift_model()
    rng = np.random.default_rng(7)
    # near-linear dynamics with small innovations keep the quadratic well
    # conditioned, so the simplex can resolve the vertex to 1e-8
    means = np.empty(50)
    means[0], means[1] = 1.0, 1.02
    for j in range(1, 49):
        means[j + 1] = means[j] + 0.2 * 0.5 * means[j - 1] + rng.normal(scale=0.02)
    lm = synthetic_lm(means, h=0.1)
    delta = lm.scheme.delta
    xs = means[:-2]
    diffs = means[2:] - means[1:-1]
    vertex = float(np.sum(xs * diffs) / (delta * np.sum(xs**2)))
    assert abs(vertex) < 5.0
    beta_hat, value, _ = estimate_drift(lm, [1.2], model)
    assert beta_hat[0] == pytest.approx(vertex, abs=1e-8)
    # quadratic vertex dominates nearby points
    for eps in (-1e-3, 1e-3):
        assert drift_loglik([vertex + eps], [1.2], lm, model) < drift_loglik(
            [vertex], [1.2], lm, model
        )


def test_drift_loglik_scaling_invariance(ou_model):
    model, alpha_star, beta_star = ou_model
    rng = np.random.default_rng(3)
    means = rng.normal(size=(30, 2))
    lm = synthetic_lm(means)
    c = 1.7
    base = drift_loglik(beta_star, alpha_star, lm, model)
    scaled = drift_loglik(beta_star, c * alpha_star, lm, model)
    assert scaled == pytest.approx(base / c**2, rel=1e-12)
    # argmax unaffected by pure scaling (up to optimizer resolution)
    b1, _, _ = estimate_drift(lm, alpha_star, model)
    b2, _, _ = estimate_drift(lm, c * np.asarray(alpha_star), model)
    assert np.allclose(b1, b2, atol=1e-6)
    assert drift_loglik(beta_star, alpha_star, lm, model) <= 0.0


def drifted_means(model, beta, k, delta, scale, seed, d=2):
    """Means following the drift recursion with small innovations: keeps the
    drift quadratic well conditioned for tight oracle comparisons."""
    rng = np.random.default_rng(seed)
    means = np.zeros((k, d))
    means[0] = rng.normal(size=d)
    means[1] = means[0] + rng.normal(scale=scale, size=d)
    for j in range(1, k - 1):
        means[j + 1] = (
            means[j]
            + delta * model.drift_at(means[j - 1], beta)
            + rng.normal(scale=scale, size=d)
        )
    return means


def test_estimate_drift_gls_oracle(ou_model):
    model, alpha_star, beta_star = ou_model
    means = drifted_means(model, beta_star, k=60, delta=0.1, scale=0.02, seed=5)
    lm = synthetic_lm(means, h=0.05)
    delta = lm.scheme.delta
    xs = means[:-2]
    diffs = means[2:] - means[1:-1]

    a_mat = model.outer_at(np.zeros(2), alpha_star)
    a_inv = np.linalg.inv(a_mat)
    design = model.drift_jac_stack(xs, np.zeros(6))
    gram = np.zeros((6, 6))
    rhs = np.zeros(6)
    for j in range(xs.shape[0]):
        dj = design[j]
        gram += dj.T @ a_inv @ dj
        rhs += dj.T @ a_inv @ (diffs[j] / delta)
    gls = np.linalg.solve(gram, rhs)
    assert np.all(np.abs(gls) < 19.0)

    beta_hat, _, _ = estimate_drift(lm, alpha_star, model)
    assert np.allclose(beta_hat, gls, atol=1e-6)


def test_estimate_drift_pinned_zero_drift():
    model = scale_drift_model(beta_box=((0.0, 0.0),))
    rng = np.random.default_rng(11)
    lm = synthetic_lm(rng.normal(size=30))
    beta_hat, value, report = estimate_drift(lm, [1.0], model)
    assert beta_hat[0] == 0.0
    assert value == pytest.approx(drift_loglik([0.0], [1.0], lm, model))


# -- adaptive pipeline --------------------------------------------------------


def test_adaptive_pipeline_noise_free(ou_model):
    model, alpha_star, beta_star = ou_model
    n, h = 20000, 20000.0**-0.7
    path = simulate_path(model, alpha_star, beta_star, [1.0, 1.0], n, h, seed=21, method="exact")
    obs = contaminate(path, gaussian_noise(np.zeros((2, 2))), seed=21)
    scheme = derive_scheme(n, h, 1.8)
    res = estimate_adaptive(obs, scheme, model)
    # noise-free: the quadratic-variation estimate decays with h
    assert np.max(np.abs(res.lambda_hat)) < 2.0 * h
    assert np.all(res.alpha_hat >= model.theta1_box[:, 0])
    assert np.all(res.alpha_hat <= model.theta1_box[:, 1])
    assert np.all(res.beta_hat >= model.theta2_box[:, 0])
    assert np.all(res.beta_hat <= model.theta2_box[:, 1])
    assert np.isfinite(res.loglik_diffusion) and res.loglik_drift <= 0.0


def test_adaptive_pipeline_deterministic(ou_model):
    model, alpha_star, beta_star = ou_model
    n, h = 10000, 10000.0**-0.7
    path = simulate_path(model, alpha_star, beta_star, [1.0, 1.0], n, h, seed=22, method="exact")
    obs = contaminate(path, gaussian_noise(1e-4 * np.eye(2)), seed=22)
    scheme = derive_scheme(n, h, 2.0)
    r1 = estimate_adaptive(obs, scheme, model)
    r2 = estimate_adaptive(obs, scheme, model)
    assert np.array_equal(r1.alpha_hat, r2.alpha_hat)
    assert np.array_equal(r1.beta_hat, r2.beta_hat)
    assert r1.loglik_diffusion == r2.loglik_diffusion


def test_adaptive_large_scale_lambda(ou_model):
    """Unit noise variance recovered to 1e-2 from a single long run."""
    model, alpha_star, beta_star = ou_model
    n = 10**6
    h = float(n) ** -0.7
    path = simulate_path(model, alpha_star, beta_star, [1.0, 1.0], n, h, seed=30, method="exact")
    obs = contaminate(path, gaussian_noise(np.eye(2)), seed=30)
    lam = estimate_noise_variance(obs)
    assert abs(lam[0, 0] - 1.0) < 0.01
    assert abs(lam[1, 1] - 1.0) < 0.01
    assert abs(lam[0, 1]) < 0.01


def test_result_serialization(ou_model):
    model, alpha_star, beta_star = ou_model
    n, h = 5000, 5000.0**-0.7
    path = simulate_path(model, alpha_star, beta_star, [1.0, 1.0], n, h, seed=23, method="exact")
    obs = contaminate(path, gaussian_noise(1e-4 * np.eye(2)), seed=23)
    res = estimate_adaptive(obs, derive_scheme(n, h, 1.9), model, with_cov=True)
    import json

    payload = json.dumps(res.to_dict())
    back = json.loads(payload)
    assert back["scheme"]["k_delta_sq"] > 0
    assert len(back["cov"]["labels"]) == 3 + 3 + 6
    assert np.allclose(back["theta_eps_hat"], res.theta_eps_hat)


# -- plug-in covariance -------------------------------------------------------


def test_plugin_covariance_scalar_gaussian_noise_block():
    model = scale_drift_model()
    rng = np.random.default_rng(13)
    lm = synthetic_lm(rng.normal(size=40), h=0.05, tau=1.5)
    lam = 0.25
    cov = plugin_covariance(lm, model, [1.1], [-0.9], np.array([[lam]]))
    assert cov.labels[0] == "lambda(1,1)"
    assert cov.matrix[0, 0] == pytest.approx(3.0 * lam**2, rel=1e-12)
    # off-diagonal blocks vanish
    assert np.array_equal(cov.matrix[0, 1:], np.zeros(2))


def test_plugin_covariance_psd_and_symmetric(ou_model):
    model, alpha_star, beta_star = ou_model
    rng = np.random.default_rng(17)
    means = np.cumsum(rng.normal(scale=0.2, size=(80, 2)), axis=0)
    lm = synthetic_lm(means, h=0.02, tau=2.0)
    lam = np.array([[0.3, 0.1], [0.1, 0.4]])
    cov = plugin_covariance(lm, model, alpha_star, beta_star, lam)
    assert np.allclose(cov.matrix, cov.matrix.T, atol=1e-12)
    assert np.min(np.linalg.eigvalsh(cov.matrix)) > -1e-10
    assert len(cov.labels) == 12


def test_plugin_covariance_ergodic_oracle_1d():
    """Fisher block for drift: local-mean average against the latent-path
    time average of x^2 / sigma^2."""
    family = linear_sde_model(
        1,
        alpha_box=np.array([[0.05, 5.0]]),
        beta_box=np.array([[-5.0, 5.0], [0.0, 0.0]]),  # intercept pinned at 0
    )
    alpha_star, beta_star = pack_linear_params([[-1.0]], [0.0], [[1.0]])
    n, h = 200000, 1e-3
    path = simulate_path(family, alpha_star, beta_star, [0.0], n, h, seed=31, method="exact")
    obs = contaminate(path, gaussian_noise(np.zeros((1, 1))), seed=31)
    scheme = derive_scheme(n, h, 1.9)
    lm = local_means(obs, scheme)

    model = scale_drift_model()
    res_alpha, _, _ = estimate_diffusion(lm, np.zeros((1, 1)), model)
    sigma_sq = res_alpha[0] ** 2
    cov = plugin_covariance(lm, model, res_alpha, [-1.0], np.zeros((1, 1)))
    beta_block = cov.matrix[2, 2]
    oracle = sigma_sq / np.mean(path.values[:, 0] ** 2)
    assert beta_block == pytest.approx(oracle, rel=0.05)


def test_plugin_covariance_absent_blocks():
    fixed_diff = ModelSpec(
        d=1,
        r=1,
        m1=0,
        m2=1,
        drift=lambda x, b: b[0] * x,
        diffusion=lambda x, a: np.array([[1.0]]),
        theta1_box=np.zeros((0, 2)),
        theta2_box=np.array([[-5.0, 5.0]]),
        drift_batch=lambda xs, b: b[0] * xs,
        constant_diffusion=True,
        drift_design_batch=lambda xs: xs[:, :, None],
    )
    rng = np.random.default_rng(19)
    lm = synthetic_lm(rng.normal(size=30))
    cov = plugin_covariance(lm, fixed_diff, np.zeros(0), [-1.0], np.array([[0.1]]))
    assert cov.labels == ["lambda(1,1)", "beta1"]
    assert cov.matrix.shape == (2, 2)

    fixed_drift = dataclasses.replace(
        fixed_diff,
        m1=1,
        m2=0,
        theta1_box=np.array([[0.05, 5.0]]),
        theta2_box=np.zeros((0, 2)),
        diffusion=lambda x, a: np.array([[a[0]]]),
        drift=lambda x, b: np.zeros(1),
        drift_batch=lambda xs, b: np.zeros_like(xs),
        drift_design_batch=None,
    )
    cov2 = plugin_covariance(lm, fixed_drift, [1.0], np.zeros(0), np.array([[0.1]]))
    assert cov2.labels == ["lambda(1,1)", "alpha1"]


# -- raw-increment baseline ---------------------------------------------------


def test_lga_quadratic_variation_oracle():
    family = linear_sde_model(
        1,
        alpha_box=np.array([[0.05, 5.0]]),
        beta_box=np.array([[-5.0, 5.0], [-5.0, 5.0]]),
    )
    alpha_star, beta_star = pack_linear_params([[-1.0]], [1.0], [[0.8]])
    n, h = 20000, 20000.0**-0.7
    path = simulate_path(family, alpha_star, beta_star, [1.0], n, h, seed=41, method="exact")
    obs = contaminate(path, gaussian_noise(np.zeros((1, 1))), seed=41)
    alpha_hat, beta_hat, value, report = estimate_lga(obs, family)
    qv = float(np.sum(np.diff(obs.values[:, 0]) ** 2) / (n * h))
    assert alpha_hat[0] ** 2 == pytest.approx(qv, rel=0.02)
    assert value == pytest.approx(lga_loglik(alpha_hat, beta_hat, obs, family), rel=1e-9)


def test_lga_accurate_without_noise(ou_model):
    """Noise-free desk-scale run: the raw-increment baseline is accurate."""
    model, alpha_star, beta_star = ou_model
    n = 10**5
    h = float(n) ** -0.7
    path = simulate_path(model, alpha_star, beta_star, [1.0, 1.0], n, h, seed=44, method="exact")
    obs = contaminate(path, gaussian_noise(np.zeros((2, 2))), seed=44)
    alpha_hat, beta_hat, _, _ = estimate_lga(obs, model)
    assert abs(alpha_hat[0] - 1.0) < 0.05
    assert abs(alpha_hat[2] - 1.0) < 0.05


def test_lga_profile_matches_joint(ou_model):
    model, alpha_star, beta_star = ou_model
    n, h = 4000, 4000.0**-0.7
    path = simulate_path(model, alpha_star, beta_star, [1.0, 1.0], n, h, seed=43, method="exact")
    obs = contaminate(path, gaussian_noise(np.zeros((2, 2))), seed=43)
    a_prof, b_prof, v_prof, _ = estimate_lga(obs, model)
    joint_model = dataclasses.replace(model, drift_design_batch=None)
    a_joint, b_joint, v_joint, _ = estimate_lga(obs, joint_model)
    # the profiled optimum must dominate (same objective, exact inner step)
    assert v_prof >= v_joint - 1e-6 * abs(v_prof)
    assert np.allclose(a_prof, a_joint, atol=0.05)
