"""Rotation and rigid-transform algebra.

Quaternions are stored scalar-first, ``(w, x, y, z)``, and multiplied with the
Hamilton convention. All functions accept a single element or a stack of them
along leading axes (``(..., 4)`` quaternions, ``(..., 3)`` rotation vectors,
``(..., 3, 3)`` matrices) and return new arrays; nothing is modified in place.

The exponential map uses the rotation-vector convention: ``exp_so3(phi)`` is a
rotation by ``|phi|`` radians about ``phi / |phi|``.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.transform import Rotation

from .hydrarot_error import ErrorType, HydrarotException

logger = logging.getLogger(__name__)

EPS_NORM = 1e-8
THETA_TAYLOR = 1e-6
ROTATION_TOL = 1e-6
# J_l coefficients lose precision to cancellation below this angle
SE3_SERIES_THETA = 1e-4

UnitQuaternion = NDArray[np.float64]
TangentSO3 = NDArray[np.float64]
RotationMatrix = NDArray[np.float64]
TangentSE3 = NDArray[np.float64]

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


class Metric(str, Enum):
    ANGULAR = "angular"
    CHORDAL = "chordal"
    QUATERNIONIC = "quaternionic"

    @classmethod
    def _missing_(cls, value):
        aliases = {"ang": cls.ANGULAR, "chord": cls.CHORDAL, "quat": cls.QUATERNIONIC}
        if isinstance(value, str):
            return aliases.get(value.lower())
        return None


def quat_normalize(v: ArrayLike, eps_norm: float = EPS_NORM) -> UnitQuaternion:
    """Scale 4-vectors to unit length. The sign is left untouched."""
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm <= eps_norm):
        raise HydrarotException.of(
            ErrorType.DEGENERATE_NORM, "Cannot normalize a near-zero quaternion", min_norm=float(norm.min()), eps_norm=eps_norm
        )
    return v / norm


def _hamilton(a: NDArray, b: NDArray) -> NDArray:
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_mul(a: ArrayLike, b: ArrayLike) -> UnitQuaternion:
    """Hamilton product ``a ⊗ b``, renormalized."""
    product = _hamilton(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    return product / np.linalg.norm(product, axis=-1, keepdims=True)


def right_mul_matrix(p: ArrayLike) -> NDArray:
    """Matrix M(p) with ``q ⊗ p = M(p) q``."""
    pw, px, py, pz = np.moveaxis(np.asarray(p, dtype=float), -1, 0)
    rows = [
        [pw, -px, -py, -pz],
        [px, pw, pz, -py],
        [py, -pz, pw, px],
        [pz, py, -px, pw],
    ]
    return np.stack([np.stack(row, axis=-1) for row in rows], axis=-2)


def quat_inv(q: ArrayLike) -> UnitQuaternion:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def canonicalize(q: ArrayLike) -> UnitQuaternion:
    """Choose the sign making the first nonzero component positive (w >= 0, ties broken in order x, y, z)."""
    q = np.asarray(q, dtype=float)
    nonzero = q != 0.0
    first = np.argmax(nonzero, axis=-1)[..., None]
    lead = np.take_along_axis(q, first, axis=-1)
    sign = np.where(lead < 0.0, -1.0, 1.0)
    return q * sign


def skew(v: ArrayLike) -> NDArray:
    v = np.asarray(v, dtype=float)
    x, y, z = np.moveaxis(v, -1, 0)
    zero = np.zeros_like(x)
    return np.stack(
        [
            np.stack([zero, -z, y], axis=-1),
            np.stack([z, zero, -x], axis=-1),
            np.stack([-y, x, zero], axis=-1),
        ],
        axis=-2,
    )


def vee(m: ArrayLike) -> NDArray:
    m = np.asarray(m, dtype=float)
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def exp_so3(phi: ArrayLike, theta_taylor: float = THETA_TAYLOR) -> UnitQuaternion:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1, keepdims=True)
    small = theta < theta_taylor
    safe_theta = np.where(small, 1.0, theta)
    # sin(theta/2)/theta, series below theta_taylor
    k = np.where(small, 0.5 - theta**2 / 48.0, np.sin(safe_theta / 2.0) / safe_theta)
    return np.concatenate([np.cos(theta / 2.0), k * phi], axis=-1)


def log_so3(q: ArrayLike, theta_taylor: float = THETA_TAYLOR) -> TangentSO3:
    """Principal logarithm, ``|phi|`` in ``[0, pi]``; ``q`` and ``-q`` map to the same vector.

    At exactly ``pi`` the axis sign makes its largest-magnitude component positive.
    """
    q = canonicalize(q)
    w = q[..., :1]
    v = q[..., 1:]
    lead = np.take_along_axis(v, np.argmax(np.abs(v), axis=-1)[..., None], axis=-1)
    v = np.where((w == 0.0) & (lead < 0.0), -v, v)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    small = n < theta_taylor
    safe_n = np.where(small, 1.0, n)
    safe_w = np.where(small, w, 1.0)
    series = (2.0 / safe_w) * (1.0 - n**2 / (3.0 * safe_w**2))
    exact = 2.0 * np.arctan2(n, w) / safe_n
    return np.where(small, series, exact) * v


def log_so3_jacobian(q: ArrayLike, theta_taylor: float = THETA_TAYLOR) -> NDArray:
    """Derivative of ``log_so3`` with respect to the four quaternion components, shape ``(..., 3, 4)``.

    Valid for any nonzero 4-vector (not only unit ones) away from ``w = 0``.
    """
    q = np.asarray(q, dtype=float)
    qc = canonicalize(q)
    sign = np.where(np.all(qc == q, axis=-1), 1.0, -1.0)[..., None, None]
    w = qc[..., 0]
    v = qc[..., 1:]
    n = np.linalg.norm(v, axis=-1)
    r2 = n**2 + w**2
    small = n < theta_taylor
    safe_n = np.where(small, 1.0, n)
    safe_w = np.where(small, w, 1.0)
    atan = np.arctan2(n, w)

    f = np.where(small, (2.0 / safe_w) * (1.0 - n**2 / (3.0 * safe_w**2)), 2.0 * atan / safe_n)
    # (df/dn) / n, multiplies v v^T
    dfdn_over_n = np.where(
        small,
        -4.0 / (3.0 * safe_w**3),
        2.0 * (w * safe_n / r2 - atan) / safe_n**3,
    )
    dfdw = -2.0 / r2

    eye = np.eye(3)
    d_dv = f[..., None, None] * eye + dfdn_over_n[..., None, None] * v[..., :, None] * v[..., None, :]
    d_dw = (dfdw[..., None] * v)[..., :, None]
    jac = np.concatenate([d_dw, d_dv], axis=-1)
    return jac * sign


def quat_to_matrix(q: ArrayLike) -> RotationMatrix:
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
        ],
        axis=-2,
    )


def check_rotation_matrix(r: ArrayLike, tol: float = ROTATION_TOL) -> RotationMatrix:
    r = np.asarray(r, dtype=float)
    if r.shape[-2:] != (3, 3):
        raise HydrarotException.of(ErrorType.NOT_A_ROTATION, "Rotation matrix must be 3x3", shape=list(r.shape))
    orth = np.abs(np.swapaxes(r, -1, -2) @ r - np.eye(3)).max(initial=0.0)
    det = np.linalg.det(r)
    det_err = float(np.abs(det - 1.0).max(initial=0.0))
    if orth > tol or det_err > tol:
        raise HydrarotException.of(
            ErrorType.NOT_A_ROTATION, "Matrix is not in SO(3)", orthogonality_error=float(orth), det_error=det_err
        )
    return r


def matrix_to_quat(r: ArrayLike) -> UnitQuaternion:
    """Convert rotation matrices to canonical-sign quaternions."""
    r = check_rotation_matrix(r)
    flat = r.reshape(-1, 3, 3)
    xyzw = Rotation.from_matrix(flat).as_quat()
    wxyz = np.concatenate([xyzw[:, 3:], xyzw[:, :3]], axis=-1)
    return canonicalize(wxyz).reshape(r.shape[:-2] + (4,))


def _as_quat(rotation: ArrayLike) -> UnitQuaternion:
    rotation = np.asarray(rotation, dtype=float)
    if rotation.ndim >= 2 and rotation.shape[-2:] == (3, 3):
        return matrix_to_quat(rotation)
    return rotation


def _as_matrix(rotation: ArrayLike) -> RotationMatrix:
    rotation = np.asarray(rotation, dtype=float)
    if rotation.ndim >= 2 and rotation.shape[-2:] == (3, 3):
        return rotation
    return quat_to_matrix(rotation)


def dist(metric, a: ArrayLike, b: ArrayLike) -> NDArray:
    """Distance between rotations given as quaternions or matrices."""
    metric = Metric(metric)
    if metric == Metric.ANGULAR:
        qa, qb = _as_quat(a), _as_quat(b)
        return np.linalg.norm(log_so3(_hamilton(qa, quat_inv(qb))), axis=-1)
    if metric == Metric.CHORDAL:
        return np.linalg.norm(_as_matrix(a) - _as_matrix(b), axis=(-2, -1))
    qa, qb = _as_quat(a), _as_quat(b)
    return np.minimum(np.linalg.norm(qa - qb, axis=-1), np.linalg.norm(qa + qb, axis=-1))


def quat_rotate(q: ArrayLike, v: ArrayLike) -> NDArray:
    return np.einsum("...ij,...j->...i", quat_to_matrix(q), np.asarray(v, dtype=float))


def random_rotation(rng: np.random.Generator, size=None) -> UnitQuaternion:
    """Uniform rotations from normalized 4-vectors of standard normals."""
    shape = (4,) if size is None else tuple(np.atleast_1d(size)) + (4,)
    return quat_normalize(rng.standard_normal(shape))


@dataclass(frozen=True, eq=False)
class PoseSE3:
    """Rigid transform ``T = (R, t)`` acting as ``x -> R x + t``; translation in meters."""

    rotation: UnitQuaternion
    translation: NDArray

    def __post_init__(self):
        object.__setattr__(self, "rotation", quat_normalize(self.rotation))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(IDENTITY_QUAT.copy(), np.zeros(3))

    @property
    def matrix(self) -> NDArray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.rotation)
        m[:3, 3] = self.translation
        return m

    def __repr__(self) -> str:
        return f"PoseSE3(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def se3_compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """``a ∘ b``: apply ``b`` first, then ``a``."""
    return PoseSE3(quat_mul(a.rotation, b.rotation), quat_rotate(a.rotation, b.translation) + a.translation)


def se3_inverse(t: PoseSE3) -> PoseSE3:
    inv = quat_inv(t.rotation)
    return PoseSE3(inv, -quat_rotate(inv, t.translation))


def se3_left_jacobian(phi: ArrayLike) -> NDArray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    k = skew(phi)
    if theta < SE3_SERIES_THETA:
        a = 0.5 - theta**2 / 24.0
        b = 1.0 / 6.0 - theta**2 / 120.0
    else:
        a = (1.0 - np.cos(theta)) / theta**2
        b = (theta - np.sin(theta)) / theta**3
    return np.eye(3) + a * k + b * (k @ k)


def se3_left_jacobian_inverse(phi: ArrayLike) -> NDArray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    k = skew(phi)
    if theta < SE3_SERIES_THETA:
        c = 1.0 / 12.0 + theta**2 / 720.0
    else:
        c = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) - 0.5 * k + c * (k @ k)


def se3_exp(xi: ArrayLike) -> PoseSE3:
    """``xi = (rho, phi)``: translational part first, rotational part second."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    rho, phi = xi[:3], xi[3:]
    return PoseSE3(exp_so3(phi), se3_left_jacobian(phi) @ rho)


def se3_log(t: PoseSE3) -> TangentSE3:
    phi = log_so3(t.rotation)
    rho = se3_left_jacobian_inverse(phi) @ t.translation
    return np.concatenate([rho, phi])
