"""Gaussian beliefs on SO(3) expressed in tangent coordinates.

A belief is a mean rotation plus a 3x3 covariance over the rotation vector
``phi`` such that ``q = Exp(phi) ⊗ mean``. The negative log likelihood omits
the ``(2 pi)^{3/2}`` normalisation constant.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .hydrarot_error import ErrorType, HydrarotException
from .hydrarot_result import CalibrationReport
from .hydrarot_so3 import _hamilton, exp_so3, log_so3, quat_inv, quat_mul, quat_normalize

logger = logging.getLogger(__name__)

SIGMA_MIN = 1e-4
CHOLESKY_JITTER = 1e-12
SYMMETRY_TOL = 1e-12

CovSO3 = NDArray[np.float64]


def validate_cov(cov: ArrayLike, name: str = "covariance") -> CovSO3:
    cov = np.asarray(cov, dtype=float)
    if cov.shape[-2:] != (3, 3):
        raise HydrarotException.of(ErrorType.INVALID_INPUT, f"{name} must be 3x3", shape=list(cov.shape))
    asym = float(np.abs(cov - np.swapaxes(cov, -1, -2)).max(initial=0.0))
    scale = max(1.0, float(np.abs(cov).max(initial=0.0)))
    if asym > SYMMETRY_TOL * scale:
        raise HydrarotException.of(ErrorType.SINGULAR_COVARIANCE, f"{name} is not symmetric", asymmetry=asym)
    if float(np.linalg.eigvalsh(cov).min(initial=0.0)) < -1e-12 * scale:
        raise HydrarotException.of(ErrorType.SINGULAR_COVARIANCE, f"{name} has negative eigenvalues")
    return cov


@dataclass(frozen=True, eq=False)
class RotationBelief:
    mean: np.ndarray
    epistemic: CovSO3
    aleatoric: CovSO3
    total: Optional[CovSO3] = field(default=None)
    # heads spread beyond pi/2 of each other, so the mean is unreliable
    dispersed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "total", combine(self.epistemic, self.aleatoric))


def _psd_factor(cov: CovSO3) -> NDArray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        # semidefinite: factor through the eigen-decomposition
        vals, vecs = np.linalg.eigh(cov)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def sample_rotation(mean: ArrayLike, cov: ArrayLike, rng: np.random.Generator, size=None) -> np.ndarray:
    """Inject tangent-space Gaussian noise: ``Exp(eps) ⊗ mean`` with ``eps ~ N(0, cov)``."""
    mean = quat_normalize(mean)
    cov = validate_cov(cov)
    shape = () if size is None else tuple(np.atleast_1d(size))
    if not np.any(cov):
        return np.broadcast_to(mean, shape + (4,)).copy()
    factor = _psd_factor(cov)
    eps = rng.standard_normal(shape + (3,)) @ factor.T
    return quat_mul(exp_so3(eps), mean)


def sample_covariance(mean: ArrayLike, samples: ArrayLike) -> CovSO3:
    """``1/(H-1) sum phi_i phi_i^T`` with ``phi_i = Log(q_i ⊗ mean^-1)``; residuals are not re-centred."""
    samples = np.asarray(samples, dtype=float).reshape(-1, 4)
    h = samples.shape[0]
    if h < 2:
        raise HydrarotException.of(ErrorType.TOO_FEW_SAMPLES, "Sample covariance needs at least two samples", count=h)
    phi = log_so3(_hamilton(samples, quat_inv(np.asarray(mean, dtype=float))))
    return phi.T @ phi / (h - 1)


def _cholesky(cov: CovSO3, jitter: float):
    try:
        return cho_factor(cov + jitter * np.eye(3), lower=True)
    except (LinAlgError, ValueError) as e:
        raise HydrarotException.of(ErrorType.SINGULAR_COVARIANCE, f"Cholesky factorization failed: {e}")


def tangent_nll(phi: ArrayLike, cov: ArrayLike, jitter: float = CHOLESKY_JITTER) -> np.ndarray:
    """``0.5 phi^T cov^-1 phi + 0.5 log det cov`` for rotation-vector errors (batched over leading axes)."""
    phi = np.asarray(phi, dtype=float)
    cov = np.asarray(cov, dtype=float)
    flat_phi = phi.reshape(-1, 3)
    flat_cov = np.broadcast_to(cov, phi.shape[:-1] + (3, 3)).reshape(-1, 3, 3)
    out = np.empty(flat_phi.shape[0])
    for i, (p, c) in enumerate(zip(flat_phi, flat_cov)):
        factor = _cholesky(c, jitter)
        maha = float(p @ cho_solve(factor, p))
        logdet = 2.0 * float(np.log(np.diag(factor[0])).sum())
        out[i] = 0.5 * maha + 0.5 * logdet
    return out.reshape(phi.shape[:-1]) if phi.ndim > 1 else out[0]


def so3_nll(q: ArrayLike, q_t: ArrayLike, cov: ArrayLike, jitter: float = CHOLESKY_JITTER):
    """Negative log likelihood of the target ``q_t`` under the belief ``(q, cov)``."""
    phi = log_so3(_hamilton(np.asarray(q, dtype=float), quat_inv(np.asarray(q_t, dtype=float))))
    return tangent_nll(phi, cov, jitter)


def cov_from_logits(u: ArrayLike, sigma_min: float = SIGMA_MIN) -> CovSO3:
    """Diagonal covariance ``diag(max(exp(u), sigma_min)^2)``; batched over leading axes."""
    sigma = np.maximum(np.exp(np.asarray(u, dtype=float)), sigma_min)
    return sigma[..., :, None] * np.eye(3) * sigma[..., None, :]


def combine(epistemic: ArrayLike, aleatoric: ArrayLike) -> CovSO3:
    """Total covariance; the directly regressed term is not scaled by the head count."""
    return validate_cov(epistemic, "epistemic covariance") + validate_cov(aleatoric, "aleatoric covariance")


def calibration_report(errors: ArrayLike, covs: ArrayLike, jitter: float = CHOLESKY_JITTER) -> CalibrationReport:
    """Per-axis 3-sigma coverage, mean squared Mahalanobis distance and mean NLL of tangent errors."""
    errors = np.asarray(errors, dtype=float).reshape(-1, 3)
    covs = np.asarray(covs, dtype=float).reshape(-1, 3, 3)
    if errors.shape[0] != covs.shape[0]:
        raise HydrarotException.of(
            ErrorType.LENGTH_MISMATCH, "Errors and covariances differ in length", errors=errors.shape[0], covs=covs.shape[0]
        )
    if errors.shape[0] == 0:
        raise HydrarotException.of(ErrorType.TOO_FEW_SAMPLES, "Calibration needs at least one error")
    sigmas = np.sqrt(np.clip(np.diagonal(covs, axis1=1, axis2=2), 0.0, None))
    within = np.abs(errors) <= 3.0 * sigmas
    maha = np.empty(errors.shape[0])
    for i, (p, c) in enumerate(zip(errors, covs)):
        maha[i] = float(p @ cho_solve(_cholesky(c, jitter), p))
    nll = tangent_nll(errors, covs, jitter)
    report = CalibrationReport(
        per_axis_within_3sigma=within.mean(axis=0),
        mean_mahalanobis_sq=float(maha.mean()),
        mean_nll=float(np.mean(nll)),
        count=int(errors.shape[0]),
    )
    logger.debug(f"Calibration report: {report}")
    return report
