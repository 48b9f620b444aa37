"""Statistical trend checks: consistency in n and rate-scaling stability.

These run replicated estimations at two sample sizes and compare
distributional summaries, so they are the slowest part of the suite
(single-digit minutes on two cores).
"""
import numpy as np
import pytest

from noisediff import StudyConfig, derive_scheme, run_study, vech
from noisediff.mc import LambdaLevel

from conftest import OU_MODEL_CFG

pytestmark = pytest.mark.slow

LAM = 1e-4


def _study(n, reps, seed=2024):
    return StudyConfig(
        model_cfg=OU_MODEL_CFG,
        n=n,
        gamma=0.7,
        replications=reps,
        seed=seed,
        taus=(2.0,),
        lambda_levels=(LambdaLevel("lam", LAM * np.eye(2)),),
        estimators=("adaptive",),
        levels=(0.05,),
        sim_method="exact",
        threads=2,
    )


def _errors(report, alpha_star, beta_star):
    alphas = np.array([r["adaptive"]["alpha"] for r in report.rows if r["ok"]])
    betas = np.array([r["adaptive"]["beta"] for r in report.rows if r["ok"]])
    lams = np.array([r["adaptive"]["lambda_hat_vech"] for r in report.rows if r["ok"]])
    return alphas - alpha_star, betas - beta_star, lams - vech(LAM * np.eye(2))


def test_estimation_errors_shrink_with_n(ou_model):
    _, alpha_star, beta_star = ou_model
    med = {}
    for n in (10**5, 4 * 10**5):
        report = run_study(_study(n, reps=50))
        da, db, _ = _errors(report, alpha_star, beta_star)
        med[n] = (
            float(np.median(np.linalg.norm(da, axis=1))),
            float(np.median(np.linalg.norm(db, axis=1))),
        )
    assert med[4 * 10**5][0] < med[10**5][0]
    assert med[4 * 10**5][1] < med[10**5][1]


def test_full_scale_large_noise_single_run(ou_model):
    """One n = 1e6 replication under unit noise variance lands within three
    published RMSEs of the truth for every coordinate (tau = 1.8)."""
    import noisediff as nd

    model = nd.linear_sde_model(
        2,
        alpha_box=np.array([[1e-3, 400.0], [-20.0, 20.0], [1e-3, 400.0]]),
        beta_box=np.tile((-100.0, 100.0), (6, 1)),
    )
    _, alpha_star, beta_star = ou_model
    n = 10**6
    h = float(n) ** -0.7
    path = nd.simulate_path(model, alpha_star, beta_star, [1.0, 1.0], n, h, seed=606, method="exact")
    obs = nd.contaminate(path, nd.gaussian_noise(np.eye(2)), seed=606)
    res = nd.estimate_adaptive(obs, nd.derive_scheme(n, h, 1.8), model)
    rmse_alpha = np.array([0.0217, 0.0155, 0.0211])
    rmse_beta = np.array([0.1919, 0.1931, 0.1908, 0.1891, 0.2719, 0.2716])
    assert np.all(np.abs(res.alpha_hat - alpha_star) <= 3 * rmse_alpha)
    assert np.all(np.abs(res.beta_hat - beta_star) <= 3 * rmse_beta)
    assert np.max(np.abs(res.lambda_hat - np.eye(2))) <= 3 * 0.0019


def test_rate_scaled_spreads_stable(ou_model):
    """Scaling the errors by their theoretical rates keeps the spread flat
    (within a factor 2) when n is quadrupled."""
    _, alpha_star, beta_star = ou_model
    spreads = {}
    for n in (25000, 100000):
        h = float(n) ** -0.7
        scheme = derive_scheme(n, h, 2.0)
        report = run_study(_study(n, reps=100))
        da, db, dl = _errors(report, alpha_star, beta_star)
        spreads[n] = np.concatenate(
            [
                np.sqrt(n) * dl.std(axis=0),
                np.sqrt(scheme.k) * da.std(axis=0),
                np.sqrt(n * h) * db.std(axis=0),
            ]
        )
    ratio = spreads[100000] / spreads[25000]
    assert np.all(ratio < 2.0), ratio
    assert np.all(ratio > 0.5), ratio
