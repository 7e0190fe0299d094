"""Rotation means under the quaternionic, chordal and angular metrics.

``quat_mean`` is the closed-form production path; ``chordal_mean`` projects the
mean rotation matrix back onto SO(3) with an SVD; ``karcher_mean`` iterates in
the tangent space until the geodesic mean is reached.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike

from .hydrarot_error import ErrorSeverity, ErrorType, HydrarotError, HydrarotException
from .hydrarot_result import RotationMeanResult
from .hydrarot_so3 import (
    EPS_NORM,
    _hamilton,
    exp_so3,
    log_so3,
    matrix_to_quat,
    quat_inv,
    quat_mul,
    quat_normalize,
    quat_to_matrix,
)

logger = logging.getLogger(__name__)

# two rotations are within pi/2 of each other iff |<q_a, q_b>| >= cos(pi/4)
_HALF_PI_DOT = np.cos(np.pi / 4.0)
RANK_TOL = 1e-9


@dataclass(frozen=True)
class RotationSample:
    q: np.ndarray
    weight: float = 1.0


Samples = Union[ArrayLike, Sequence[RotationSample]]


def _unpack(samples: Samples, weights: Optional[ArrayLike]):
    if isinstance(samples, (list, tuple)) and samples and isinstance(samples[0], RotationSample):
        quats = np.stack([np.asarray(s.q, dtype=float) for s in samples])
        if weights is None:
            weights = [s.weight for s in samples]
    else:
        quats = np.asarray(samples, dtype=float).reshape(-1, 4)
    if quats.shape[0] == 0:
        raise HydrarotException.of(ErrorType.TOO_FEW_SAMPLES, "At least one rotation sample is required")
    if weights is None:
        w = np.ones(quats.shape[0])
    else:
        w = np.asarray(weights, dtype=float).reshape(-1)
        if w.shape[0] != quats.shape[0]:
            raise HydrarotException.of(
                ErrorType.LENGTH_MISMATCH, "Weights and samples differ in length", samples=quats.shape[0], weights=w.shape[0]
            )
        if np.any(w < 0) or w.sum() <= 0:
            raise HydrarotException.of(ErrorType.INVALID_INPUT, "Weights must be non-negative with a positive sum")
    return quat_normalize(quats), w


def _dispersion_errors(quats: np.ndarray):
    dots = np.abs(quats @ quats.T)
    if dots.min() >= _HALF_PI_DOT:
        return []
    worst = float(2.0 * np.arccos(np.clip(dots.min(), -1.0, 1.0)))
    logger.warning(f"Rotation samples spread beyond pi/2 (max pairwise angle {worst:.4f} rad); mean may be unreliable")
    return [
        HydrarotError(
            error_type=ErrorType.DISPERSION,
            severity=ErrorSeverity.WARNING,
            message="Rotation samples are not within pi/2 of each other",
            details={"max_pairwise_angle": worst, "count": int(quats.shape[0])},
        )
    ]


def align_signs(quats: ArrayLike) -> np.ndarray:
    """Flip samples onto the hemisphere of the first one."""
    quats = np.asarray(quats, dtype=float)
    signs = np.where(quats @ quats[0] < 0.0, -1.0, 1.0)
    return quats * signs[:, None]


def quat_mean(samples: Samples, weights: Optional[ArrayLike] = None, eps_norm: float = EPS_NORM) -> RotationMeanResult:
    """Normalized (weighted) arithmetic mean of sign-aligned unit quaternions."""
    quats, w = _unpack(samples, weights)
    errors = _dispersion_errors(quats)
    aligned = align_signs(quats)
    total = (w[:, None] * aligned).sum(axis=0)
    if np.linalg.norm(total) <= eps_norm:
        raise HydrarotException.of(
            ErrorType.DEGENERATE_NORM, "Aligned quaternion sum cancels out", norm=float(np.linalg.norm(total))
        )
    mean = quat_normalize(total, eps_norm=0.0)
    return RotationMeanResult(mean=mean, matrix=quat_to_matrix(mean), iterations=0, errors=errors)


def chordal_mean(samples: Samples, weights: Optional[ArrayLike] = None) -> RotationMeanResult:
    """Project the weighted mean rotation matrix onto SO(3)."""
    quats, w = _unpack(samples, weights)
    m = np.einsum("n,nij->ij", w / w.sum(), quat_to_matrix(quats))
    u, s, vt = np.linalg.svd(m)
    if np.sum(s < RANK_TOL) >= 2:
        raise HydrarotException.of(ErrorType.RANK_DEFICIENT, "Mean rotation matrix is rank deficient", singular_values=s.tolist())
    d = np.sign(np.linalg.det(u @ vt)) or 1.0
    r = u @ np.diag([1.0, 1.0, d]) @ vt
    return RotationMeanResult(mean=matrix_to_quat(r), matrix=r, iterations=0, errors=_dispersion_errors(quats))


def karcher_mean(
    samples: Samples, weights: Optional[ArrayLike] = None, tol: float = 1e-10, max_iter: int = 100
) -> RotationMeanResult:
    """Geodesic (angular) mean by fixed-point iteration from ``quat_mean``."""
    quats, w = _unpack(samples, weights)
    start = quat_mean(quats, w)
    q = start.mean
    w = w / w.sum()
    for iteration in range(1, max_iter + 1):
        step = w @ log_so3(_hamilton(quats, quat_inv(q)))
        norm = float(np.linalg.norm(step))
        logger.debug(f"Karcher iteration {iteration}: |update| = {norm:.3e}")
        if norm < tol:
            return RotationMeanResult(mean=q, matrix=quat_to_matrix(q), iterations=iteration, errors=start.errors)
        q = quat_mul(exp_so3(step), q)
    raise HydrarotException.of(ErrorType.NO_CONVERGENCE, "Karcher mean did not converge", max_iter=max_iter, tol=tol)
