"""Multi-cell massive-MIMO channel estimation under pilot contamination and
residual hardware impairments: simulator, genie LMMSE baseline, learned pilots
and a residual convolutional estimator trained with a small autodiff engine."""

from .config import ExperimentConfig, EvalConfig, ScenarioConfig, TrainConfig, load_config
from .errors import (BundleError, ConfigError, DivergedLoss, MimoEstError, NotPositiveDefinite,
                     PayloadLengthMismatch, RankDeficient, RejectionOverflow,
                     SchemaVersionMismatch, ZeroColumn)
from .estimators import (LmmseContext, analytic_mse, empirical_mse, lmmse_estimate,
                         lmmse_matrices, ls_preprocess, phi_coefficients)
from .numerics import RngStream, cholesky, hpd_inverse, sample_complex_gaussian
from .pilots import PilotSet, normalize_power, orthogonal_pilots, random_pilots
from .scenario import Scenario, TopologyConfig, make_scenario

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig", "EvalConfig", "ScenarioConfig", "TrainConfig", "load_config",
    "BundleError", "ConfigError", "DivergedLoss", "MimoEstError", "NotPositiveDefinite",
    "PayloadLengthMismatch", "RankDeficient", "RejectionOverflow", "SchemaVersionMismatch",
    "ZeroColumn", "LmmseContext", "analytic_mse", "empirical_mse", "lmmse_estimate",
    "lmmse_matrices", "ls_preprocess", "phi_coefficients", "RngStream", "cholesky",
    "hpd_inverse", "sample_complex_gaussian", "PilotSet", "normalize_power",
    "orthogonal_pilots", "random_pilots", "Scenario", "TopologyConfig", "make_scenario",
]
