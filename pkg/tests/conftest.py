import numpy as np
import pytest

from noisediff import linear_sde_model, pack_linear_params

# 2-D Ornstein-Uhlenbeck benchmark used across the suite
OU_DRIFT = [[-1.0, -0.1], [-0.1, -1.0]]
OU_INTERCEPT = [1.0, 1.0]
OU_DIFFUSION = [[1.0, 0.1], [0.1, 1.0]]

OU_MODEL_CFG = {
    "drift_matrix": OU_DRIFT,
    "drift_intercept": OU_INTERCEPT,
    "diffusion": OU_DIFFUSION,
    "alpha_box": [[0.01, 20.0], [-5.0, 5.0], [0.01, 20.0]],
    "beta_box": [[-20.0, 20.0]] * 6,
}


@pytest.fixture(scope="session")
def ou_model():
    model = linear_sde_model(
        2,
        alpha_box=np.asarray(OU_MODEL_CFG["alpha_box"]),
        beta_box=np.asarray(OU_MODEL_CFG["beta_box"]),
    )
    alpha_star, beta_star = pack_linear_params(OU_DRIFT, OU_INTERCEPT, OU_DIFFUSION)
    return model, alpha_star, beta_star


@pytest.fixture(scope="session")
def ou_1d():
    """dX = -(X - 1) dt + dW as a linear-family model."""
    model = linear_sde_model(
        1,
        alpha_box=np.array([[0.05, 5.0]]),
        beta_box=np.array([[-5.0, 5.0], [-5.0, 5.0]]),
    )
    alpha_star, beta_star = pack_linear_params([[-1.0]], [1.0], [[1.0]])
    return model, alpha_star, beta_star
