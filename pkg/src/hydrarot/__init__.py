from .hydrarot_averaging import RotationSample, align_signs, chordal_mean, karcher_mean, quat_mean
from .hydrarot_config import load_settings, parse_overrides
from .hydrarot_datasets import (
    CameraIntrinsics,
    Config1D,
    HemisphereConfig,
    PixelNormalization,
    f_1d,
    gen_1d,
    gen_hemisphere,
    project,
)
from .hydrarot_error import ErrorSeverity, ErrorType, HydrarotError, HydrarotException
from .hydrarot_experiments import run_1d, run_gradient_checks, run_hemisphere
from .hydrarot_fusion import (
    OdomEdge,
    OdometryNoise,
    PoseGraph,
    RotEdge,
    SolverOptions,
    fuse_pair,
    pair_residuals,
    relax_graph,
    simulate_odometry,
    simulate_trajectory,
)
from .hydrarot_graph_io import read_graph, write_graph
from .hydrarot_hydranet import (
    Estimator1D,
    HydraNetSO3,
    Method1D,
    build_so3_model,
    predict_1d,
    predict_so3,
    train_1d,
    train_so3,
)
from .hydrarot_losses import gaussian_nll_1d_loss, mse_loss, so3_nll_loss
from .hydrarot_nnet import LayerSpec, MlpModel, TrainConfig, backward, forward, grad_check, load_checkpoint, save_checkpoint
from .hydrarot_result import CalibrationReport, FusePairResult, RelaxResult, RotationMeanResult, TrajectoryMetrics
from .hydrarot_so3 import (
    Metric,
    PoseSE3,
    dist,
    exp_so3,
    log_so3,
    matrix_to_quat,
    quat_inv,
    quat_mul,
    quat_normalize,
    quat_to_matrix,
    se3_compose,
    se3_exp,
    se3_inverse,
    se3_log,
)
from .hydrarot_trajectory import traj_metrics
from .hydrarot_uncertainty import (
    RotationBelief,
    calibration_report,
    combine,
    cov_from_logits,
    sample_covariance,
    sample_rotation,
    so3_nll,
)
from .main import main

__all__ = [
    "align_signs",
    "backward",
    "build_so3_model",
    "calibration_report",
    "CalibrationReport",
    "CameraIntrinsics",
    "chordal_mean",
    "combine",
    "Config1D",
    "cov_from_logits",
    "dist",
    "ErrorSeverity",
    "ErrorType",
    "Estimator1D",
    "exp_so3",
    "f_1d",
    "forward",
    "fuse_pair",
    "FusePairResult",
    "gaussian_nll_1d_loss",
    "gen_1d",
    "gen_hemisphere",
    "grad_check",
    "HemisphereConfig",
    "HydraNetSO3",
    "HydrarotError",
    "HydrarotException",
    "karcher_mean",
    "LayerSpec",
    "load_checkpoint",
    "load_settings",
    "log_so3",
    "main",
    "matrix_to_quat",
    "Method1D",
    "Metric",
    "MlpModel",
    "mse_loss",
    "OdomEdge",
    "OdometryNoise",
    "pair_residuals",
    "parse_overrides",
    "PixelNormalization",
    "PoseGraph",
    "PoseSE3",
    "predict_1d",
    "predict_so3",
    "project",
    "quat_inv",
    "quat_mean",
    "quat_mul",
    "quat_normalize",
    "quat_to_matrix",
    "read_graph",
    "relax_graph",
    "RelaxResult",
    "RotationBelief",
    "RotationMeanResult",
    "RotationSample",
    "RotEdge",
    "run_1d",
    "run_gradient_checks",
    "run_hemisphere",
    "sample_covariance",
    "sample_rotation",
    "save_checkpoint",
    "se3_compose",
    "se3_exp",
    "se3_inverse",
    "se3_log",
    "simulate_odometry",
    "simulate_trajectory",
    "so3_nll",
    "so3_nll_loss",
    "SolverOptions",
    "traj_metrics",
    "train_1d",
    "train_so3",
    "TrainConfig",
    "TrajectoryMetrics",
    "write_graph",
]

# Rebuild Pydantic models after all classes are defined
HydrarotError.model_rebuild()
