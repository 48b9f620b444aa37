"""noisediff: estimation and noise detection for ergodic diffusions observed
with additive measurement noise at high frequency.

Workflow: derive a block sampling scheme from (n, h, tau), average the
observations block-wise into local means, then estimate in three adaptive
stages (noise variance from the raw quadratic variation, diffusion
parameter from local-mean increments, drift parameter by weighted least
squares on the same increments). A nonparametric quadratic-variation test
decides whether observation noise is present at all, and a Monte Carlo
harness runs replicated simulation studies.
"""
from ._kernels import IS_COMPILED
from .errors import (
    DegenerateDataError,
    NoisediffError,
    NonConvergenceError,
    SimulationError,
    SingularBlockError,
    SingularInformationError,
)
from .estimators import (
    EstimationResult,
    diffusion_loglik,
    drift_loglik,
    estimate_adaptive,
    estimate_diffusion,
    estimate_drift,
    estimate_lga,
    estimate_noise_variance,
    lga_loglik,
    plugin_covariance,
)
from .localmeans import LocalMeanSeries, local_means
from .mc import StudyConfig, StudyReport, ingest_csv, load_config, run_study
from .model import (
    ModelSpec,
    NoiseSpec,
    ObservationSeries,
    SamplingScheme,
    derive_scheme,
    gaussian_noise,
    linear_sde_model,
    model_from_config,
    pack_linear_params,
    psd_sqrt,
    unvech,
    vech,
)
from .noisetest import (
    DEFAULT_TAU,
    NoiseTestResult,
    component_sum_series,
    noise_test,
    power_approximation,
)
from .optimize import BoxProblem, OptimizerReport, maximize, numeric_gradient
from .seriesio import write_series_csv
from .simulate import LatentPath, contaminate, rng_stream, simulate_path

__version__ = "0.1.0"

__all__ = [
    "BoxProblem",
    "DEFAULT_TAU",
    "DegenerateDataError",
    "EstimationResult",
    "IS_COMPILED",
    "LatentPath",
    "LocalMeanSeries",
    "ModelSpec",
    "NoiseSpec",
    "NoiseTestResult",
    "NoisediffError",
    "NonConvergenceError",
    "ObservationSeries",
    "OptimizerReport",
    "SamplingScheme",
    "SimulationError",
    "SingularBlockError",
    "SingularInformationError",
    "StudyConfig",
    "StudyReport",
    "component_sum_series",
    "contaminate",
    "derive_scheme",
    "diffusion_loglik",
    "drift_loglik",
    "estimate_adaptive",
    "estimate_diffusion",
    "estimate_drift",
    "estimate_lga",
    "estimate_noise_variance",
    "gaussian_noise",
    "ingest_csv",
    "lga_loglik",
    "linear_sde_model",
    "load_config",
    "local_means",
    "maximize",
    "model_from_config",
    "noise_test",
    "numeric_gradient",
    "pack_linear_params",
    "plugin_covariance",
    "power_approximation",
    "psd_sqrt",
    "rng_stream",
    "run_study",
    "simulate_path",
    "unvech",
    "vech",
    "write_series_csv",
]
