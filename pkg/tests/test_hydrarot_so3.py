import logging
import math

import numpy as np
import pytest
from hydrarot.hydrarot_error import ErrorType, HydrarotException
from hydrarot.hydrarot_so3 import (
    IDENTITY_QUAT,
    Metric,
    PoseSE3,
    canonicalize,
    check_rotation_matrix,
    dist,
    exp_so3,
    log_so3,
    log_so3_jacobian,
    matrix_to_quat,
    quat_inv,
    quat_mul,
    quat_normalize,
    quat_rotate,
    quat_to_matrix,
    random_rotation,
    right_mul_matrix,
    se3_compose,
    se3_exp,
    se3_inverse,
    se3_left_jacobian,
    se3_left_jacobian_inverse,
    se3_log,
    skew,
    vee,
)
from prepdir import configure_logging
from scipy.spatial.transform import Rotation

logger = logging.getLogger("hydrarot_test")
configure_logging(logger, level=logging.DEBUG)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _random_tangent(rng, n, max_angle):
    axes = rng.normal(size=(n, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    return axes * rng.uniform(0.0, max_angle, size=(n, 1))


def test_quat_normalize_scales_to_unit():
    q = quat_normalize([2.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(q, [1.0, 0.0, 0.0, 0.0])
    # sign is preserved
    np.testing.assert_allclose(quat_normalize([0.0, -3.0, 0.0, 4.0]), [0.0, -0.6, 0.0, 0.8])


def test_quat_normalize_degenerate():
    with pytest.raises(HydrarotException) as info:
        quat_normalize([0.0, 0.0, 0.0, 1e-9])
    assert info.value.error_type == ErrorType.DEGENERATE_NORM


def test_quat_mul_identity_and_inverse(rng):
    q = random_rotation(rng)
    np.testing.assert_allclose(quat_mul(q, IDENTITY_QUAT), q, atol=1e-15)
    np.testing.assert_allclose(quat_mul(IDENTITY_QUAT, q), q, atol=1e-15)
    np.testing.assert_allclose(canonicalize(quat_mul(q, quat_inv(q))), IDENTITY_QUAT, atol=1e-15)


def test_quat_mul_matches_matrix_product(rng):
    a, b = random_rotation(rng, 2)
    np.testing.assert_allclose(quat_to_matrix(quat_mul(a, b)), quat_to_matrix(a) @ quat_to_matrix(b), atol=1e-12)


def test_right_mul_matrix(rng):
    q, p = random_rotation(rng, 2)
    np.testing.assert_allclose(right_mul_matrix(p) @ q, quat_mul(q, p), atol=1e-14)


@pytest.mark.parametrize(
    "q,expected",
    [
        ([-1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]),
        ([0.0, -1.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]),
        ([0.0, 0.0, -0.6, 0.8], [0.0, 0.0, 0.6, -0.8]),
        ([0.5, -0.5, 0.5, -0.5], [0.5, -0.5, 0.5, -0.5]),
    ],
)
def test_canonicalize(q, expected):
    np.testing.assert_allclose(canonicalize(q), expected)


def test_skew_vee_roundtrip(rng):
    v = rng.normal(size=3)
    w = rng.normal(size=3)
    np.testing.assert_allclose(skew(v) @ w, np.cross(v, w), atol=1e-14)
    np.testing.assert_allclose(vee(skew(v)), v)


def test_exp_of_zero_is_identity():
    np.testing.assert_array_equal(exp_so3(np.zeros(3)), IDENTITY_QUAT)
    np.testing.assert_array_equal(log_so3(IDENTITY_QUAT), np.zeros(3))


def test_exp_matches_scipy(rng):
    phi = _random_tangent(rng, 50, math.pi)
    expected = Rotation.from_rotvec(phi).as_matrix()
    np.testing.assert_allclose(quat_to_matrix(exp_so3(phi)), expected, atol=1e-12)


def test_so3_exp_log_roundtrip(rng):
    phi = _random_tangent(rng, 10_000, math.pi - 1e-6)
    np.testing.assert_allclose(log_so3(exp_so3(phi)), phi, atol=1e-9)


@pytest.mark.parametrize("angle", [0.0, 1e-12, 1e-8, 5e-7, 2e-6, 1e-3])
def test_small_angle_branches(angle):
    phi = np.array([angle, -angle / 2.0, angle / 3.0])
    q = exp_so3(phi)
    assert abs(np.linalg.norm(q) - 1.0) < 1e-15
    np.testing.assert_allclose(log_so3(q), phi, atol=1e-15)


def test_log_is_sign_invariant(rng):
    q = random_rotation(rng, 100)
    np.testing.assert_allclose(log_so3(q), log_so3(-q), atol=1e-15)


def test_log_at_pi():
    np.testing.assert_allclose(log_so3([0.0, 1.0, 0.0, 0.0]), [math.pi, 0.0, 0.0])
    np.testing.assert_allclose(log_so3([0.0, -1.0, 0.0, 0.0]), [math.pi, 0.0, 0.0])


@pytest.mark.parametrize("q", [[0.0, 0.6, -0.8, 0.0], [0.0, -0.6, 0.8, 0.0], [0.0, 0.0, 0.6, -0.8]])
def test_log_at_pi_largest_axis_component_positive(q):
    phi = log_so3(q)
    assert np.linalg.norm(phi) == pytest.approx(math.pi)
    assert phi[np.argmax(np.abs(phi))] > 0.0
    np.testing.assert_allclose(log_so3(-np.asarray(q)), phi)
    np.testing.assert_allclose(quat_to_matrix(exp_so3(phi)), quat_to_matrix(q), atol=1e-12)


def test_log_norm_in_principal_range(rng):
    angles = np.linalg.norm(log_so3(random_rotation(rng, 1000)), axis=1)
    assert angles.max() <= math.pi + 1e-12


def test_log_jacobian_matches_finite_differences(rng):
    step = 1e-6
    for _ in range(20):
        q = rng.normal(size=4)
        q[0] = abs(q[0]) + 0.2
        jac = log_so3_jacobian(q)
        numeric = np.empty((3, 4))
        for j in range(4):
            e = np.zeros(4)
            e[j] = step
            numeric[:, j] = (log_so3(q + e) - log_so3(q - e)) / (2.0 * step)
        np.testing.assert_allclose(jac, numeric, atol=1e-6)


def test_log_jacobian_negative_hemisphere(rng):
    q = quat_normalize(rng.normal(size=4))
    q = -canonicalize(q)
    step = 1e-6
    numeric = np.stack(
        [(log_so3(q + step * e) - log_so3(q - step * e)) / (2.0 * step) for e in np.eye(4)], axis=-1
    )
    np.testing.assert_allclose(log_so3_jacobian(q), numeric, atol=1e-6)


def test_log_jacobian_small_angle():
    q = np.array([1.0, 1e-8, -2e-8, 0.0])
    jac = log_so3_jacobian(q)
    np.testing.assert_allclose(jac[:, 1:], 2.0 * np.eye(3), atol=1e-12)
    np.testing.assert_allclose(jac[:, 0], [-2e-8, 4e-8, 0.0], atol=1e-12)


def test_metric_identities(rng):
    a = random_rotation(rng, 1000)
    b = random_rotation(rng, 1000)
    theta = dist(Metric.ANGULAR, a, b)
    np.testing.assert_allclose(dist(Metric.QUATERNIONIC, a, b), 2.0 * np.sin(theta / 4.0), atol=1e-9)
    np.testing.assert_allclose(dist(Metric.CHORDAL, a, b), 2.0 * math.sqrt(2.0) * np.sin(theta / 2.0), atol=1e-9)


def test_metrics_accept_matrices(rng):
    a, b = random_rotation(rng, 2)
    for metric in Metric:
        assert dist(metric, quat_to_matrix(a), quat_to_matrix(b)) == pytest.approx(float(dist(metric, a, b)), abs=1e-9)


def test_metric_is_zero_for_double_cover(rng):
    q = random_rotation(rng)
    for metric in Metric:
        assert float(dist(metric, q, -q)) == pytest.approx(0.0, abs=1e-7)


@pytest.mark.parametrize("alias,metric", [("quat", Metric.QUATERNIONIC), ("ang", Metric.ANGULAR), ("CHORD", Metric.CHORDAL)])
def test_metric_aliases(alias, metric):
    assert Metric(alias) is metric


def test_matrix_to_quat_roundtrip(rng):
    q = canonicalize(random_rotation(rng, 200))
    np.testing.assert_allclose(matrix_to_quat(quat_to_matrix(q)), q, atol=1e-12)


@pytest.mark.parametrize(
    "matrix",
    [
        np.diag([1.0, 1.0, -1.0]),
        np.eye(3) * 1.1,
        np.array([[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
    ],
)
def test_not_a_rotation(matrix):
    with pytest.raises(HydrarotException) as info:
        check_rotation_matrix(matrix)
    assert info.value.error_type == ErrorType.NOT_A_ROTATION


def test_quat_rotate_quarter_turn():
    q = exp_so3([0.0, 0.0, math.pi / 2.0])
    np.testing.assert_allclose(quat_rotate(q, [1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-15)


def test_random_rotation_shapes(rng):
    assert random_rotation(rng).shape == (4,)
    many = random_rotation(rng, (3, 5))
    assert many.shape == (3, 5, 4)
    np.testing.assert_allclose(np.linalg.norm(many, axis=-1), 1.0)


def test_pose_matrix_and_compose(rng):
    a = PoseSE3(random_rotation(rng), rng.normal(size=3))
    b = PoseSE3(random_rotation(rng), rng.normal(size=3))
    np.testing.assert_allclose(se3_compose(a, b).matrix, a.matrix @ b.matrix, atol=1e-12)
    ident = se3_compose(a, se3_inverse(a))
    np.testing.assert_allclose(ident.matrix, np.eye(4), atol=1e-12)
    assert "PoseSE3" in repr(a)


@pytest.mark.parametrize("theta", [0.0, 1e-6, 5e-5, 2e-4, 0.5, 2.5])
def test_left_jacobian_inverse(theta):
    phi = np.array([0.6, -0.48, 0.64]) * theta
    np.testing.assert_allclose(se3_left_jacobian(phi) @ se3_left_jacobian_inverse(phi), np.eye(3), atol=1e-12)


def test_se3_exp_log_roundtrip(rng):
    for _ in range(10_000):
        xi = np.concatenate([rng.normal(size=3) * 2.0, _random_tangent(rng, 1, 3.0)[0]])
        np.testing.assert_allclose(se3_log(se3_exp(xi)), xi, atol=1e-9)


def test_se3_exp_pure_translation():
    pose = se3_exp([1.0, 2.0, 3.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(pose.rotation, IDENTITY_QUAT)
    np.testing.assert_allclose(pose.translation, [1.0, 2.0, 3.0])


def test_se3_exp_matches_matrix_exponential(rng):
    from scipy.linalg import expm

    xi = np.concatenate([rng.normal(size=3), _random_tangent(rng, 1, 2.0)[0]])
    twist = np.zeros((4, 4))
    twist[:3, :3] = skew(xi[3:])
    twist[:3, 3] = xi[:3]
    np.testing.assert_allclose(se3_exp(xi).matrix, expm(twist), atol=1e-10)


@pytest.mark.parametrize("metric", list(Metric))
def test_metrics_are_bi_invariant(rng, metric):
    a = random_rotation(rng, 500)
    b = random_rotation(rng, 500)
    g = random_rotation(rng)
    base = dist(metric, a, b)
    np.testing.assert_allclose(dist(metric, quat_mul(g, a), quat_mul(g, b)), base, atol=1e-9)
    np.testing.assert_allclose(dist(metric, quat_mul(a, g), quat_mul(b, g)), base, atol=1e-9)


def test_random_rotation_is_haar_uniform(rng):
    from scipy import stats

    # angle of a uniform rotation has CDF (theta - sin theta) / pi
    theta = np.linalg.norm(log_so3(random_rotation(rng, 20_000)), axis=1)
    result = stats.kstest(theta, lambda t: (t - np.sin(t)) / math.pi)
    assert result.pvalue > 1e-3
    # axis directions are isotropic
    q = random_rotation(rng, 20_000)
    np.testing.assert_allclose(np.mean(q[:, 1:] ** 2, axis=0), 0.25, atol=0.01)
