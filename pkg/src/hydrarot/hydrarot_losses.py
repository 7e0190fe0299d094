"""Training losses with their gradients with respect to raw network outputs.

Heads that carry uncertainty come first: for the Gaussian losses ``outputs[0]``
is the log-standard-deviation (1D) or covariance-logit (SO(3)) head and
``outputs[1:]`` are the estimate heads. Per-head losses are summed; each is a
mean over the minibatch.
"""

import logging
import math
from typing import Callable, List, Optional, Tuple

import numpy as np

from .hydrarot_error import ErrorType, HydrarotException
from .hydrarot_nnet import LossKind
from .hydrarot_so3 import EPS_NORM, _hamilton, log_so3, log_so3_jacobian, quat_inv, right_mul_matrix
from .hydrarot_uncertainty import SIGMA_MIN

logger = logging.getLogger(__name__)

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

LossResult = Tuple[float, List[Optional[np.ndarray]]]


def mse_loss(outputs: List[np.ndarray], targets: np.ndarray) -> LossResult:
    """Squared error of every head against the same target."""
    y = np.asarray(targets, dtype=float).reshape(outputs[0].shape[0], -1)
    batch = y.shape[0]
    total = 0.0
    grads = []
    for out in outputs:
        diff = out - y
        total += float(np.sum(diff**2)) / batch
        grads.append(2.0 * diff / batch)
    return total, grads


def gaussian_nll_1d(mean, variance, y) -> np.ndarray:
    """Per-sample Gaussian negative log likelihood, normalising constant included."""
    mean, variance, y = (np.asarray(a, dtype=float) for a in (mean, variance, y))
    return 0.5 * (y - mean) ** 2 / variance + 0.5 * np.log(variance) + HALF_LOG_2PI


def gaussian_nll_1d_loss(outputs: List[np.ndarray], targets: np.ndarray, sigma_min: float = SIGMA_MIN) -> LossResult:
    """Shared regressed ``log sigma`` (outputs[0]) against every mean head (outputs[1:])."""
    if len(outputs) < 2:
        raise HydrarotException.of(ErrorType.INVALID_INPUT, "Gaussian NLL needs a sigma head and at least one mean head")
    s = outputs[0][:, 0]
    y = np.asarray(targets, dtype=float).reshape(-1)
    batch = y.shape[0]
    raw_sigma = np.exp(s)
    sigma = np.maximum(raw_sigma, sigma_min)
    var = sigma**2
    active = raw_sigma > sigma_min
    total = 0.0
    d_s = np.zeros(batch)
    grads: List[Optional[np.ndarray]] = [None]
    for out in outputs[1:]:
        mu = out[:, 0]
        resid2 = (y - mu) ** 2
        total += float(np.mean(0.5 * resid2 / var + np.log(sigma) + HALF_LOG_2PI))
        grads.append(((mu - y) / var / batch)[:, None])
        d_s += (1.0 - resid2 / var) * active / batch
    grads[0] = d_s[:, None]
    return total, grads


def so3_nll_loss(
    outputs: List[np.ndarray],
    targets: np.ndarray,
    sigma_min: float = SIGMA_MIN,
    eps_norm: float = EPS_NORM,
    fixed_variance: bool = False,
) -> LossResult:
    """Rotation NLL of every quaternion head (outputs[1:]) with the shared diagonal covariance head (outputs[0]).

    Each head's raw 4-vector is normalised, compared with the target through
    ``phi = Log(q ⊗ q_t^-1)`` and scored with ``0.5 phi^T S^-1 phi + 0.5 log det S``.
    With ``fixed_variance`` the covariance head is ignored (S = I, zero gradient),
    which is how the quaternion heads are warmed up before the covariance is learned.
    """
    if len(outputs) < 2:
        raise HydrarotException.of(ErrorType.INVALID_INPUT, "SO(3) NLL needs a covariance head and a quaternion head")
    q_t = np.asarray(targets, dtype=float).reshape(-1, 4)
    batch = q_t.shape[0]
    u = outputs[0]
    raw_sigma = np.exp(u)
    sigma = np.maximum(raw_sigma, sigma_min)
    var = sigma**2
    active = raw_sigma > sigma_min
    half_logdet = np.log(sigma).sum(axis=1)
    if fixed_variance:
        var = np.ones_like(u)
        active = np.zeros_like(active)
        half_logdet = np.zeros(batch)
    right = right_mul_matrix(quat_inv(q_t))

    total = 0.0
    d_u = np.zeros_like(u)
    grads: List[Optional[np.ndarray]] = [None]
    for v in outputs[1:]:
        norm = np.linalg.norm(v, axis=1, keepdims=True)
        if np.any(norm <= eps_norm):
            raise HydrarotException.of(ErrorType.DEGENERATE_NORM, "Quaternion head produced a near-zero vector")
        q = v / norm
        r = _hamilton(q, quat_inv(q_t))
        phi = log_so3(r)
        total += float(np.mean(0.5 * np.sum(phi**2 / var, axis=1) + half_logdet))
        d_phi = phi / var / batch
        d_r = np.einsum("bi,bij->bj", d_phi, log_so3_jacobian(r))
        d_q = np.einsum("bi,bij->bj", d_r, right)
        # d q / d v = (I - q q^T) / |v|
        d_v = (d_q - np.sum(d_q * q, axis=1, keepdims=True) * q) / norm
        grads.append(d_v)
        d_u += (1.0 - phi**2 / var) * active / batch
    grads[0] = d_u
    return total, grads


def loss_for(
    kind: LossKind, sigma_min: float = SIGMA_MIN, fixed_variance: bool = False
) -> Callable[[List[np.ndarray], np.ndarray], LossResult]:
    kind = LossKind(kind)
    if kind == LossKind.MSE:
        return mse_loss
    if kind == LossKind.GAUSSIAN_NLL_1D:
        return lambda outputs, targets: gaussian_nll_1d_loss(outputs, targets, sigma_min)
    return lambda outputs, targets: so3_nll_loss(outputs, targets, sigma_min, fixed_variance=fixed_variance)
