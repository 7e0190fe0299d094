import logging

import numpy as np
import pytest
from hydrarot.hydrarot_datasets import (
    CameraIntrinsics,
    Config1D,
    HemisphereConfig,
    PixelNormalization,
    camera_position,
    f_1d,
    gen_1d,
    gen_hemisphere,
    landmark_grid,
    look_at_origin,
    project,
)
from hydrarot.hydrarot_error import ErrorType, HydrarotException
from hydrarot.hydrarot_so3 import PoseSE3, quat_to_matrix, se3_inverse
from prepdir import configure_logging
from pydantic import ValidationError

logger = logging.getLogger("hydrarot_test")
configure_logging(logger, level=logging.DEBUG)


@pytest.fixture
def rng():
    return np.random.default_rng(99)


def test_f_1d_values():
    assert float(f_1d(0.0)) == pytest.approx(0.0)
    x = 0.3
    assert float(f_1d(x, 0.5)) == pytest.approx(x + np.sin(4.0 * 0.8) + np.sin(13.0 * 0.8) + 0.5)


def test_gen_1d_respects_ranges(rng):
    train, test = gen_1d(Config1D(n_train=2000, n_test=300), rng)
    assert train.x.shape == (2000,)
    in_first = (train.x >= 0.0) & (train.x <= 0.6)
    in_second = (train.x >= 0.8) & (train.x <= 1.0)
    assert np.all(in_first | in_second)
    # sampling is proportional to range width
    assert in_first.mean() == pytest.approx(0.75, abs=0.05)
    assert np.all(np.diff(test.x) >= 0.0)
    assert test.x.min() >= -2.0 and test.x.max() <= 2.0
    np.testing.assert_allclose(train.y, f_1d(train.x, train.omega))


def test_gen_1d_noise_level(rng):
    train, _ = gen_1d(Config1D(n_train=5000, noise_std=3.0), rng)
    assert train.omega.std() == pytest.approx(3.0, rel=0.05)


def test_gen_1d_without_noise(rng):
    train, test = gen_1d(Config1D(n_train=10, n_test=10, noise_std=0.0), rng)
    np.testing.assert_array_equal(train.omega, 0.0)
    np.testing.assert_allclose(test.y, f_1d(test.x))


def test_gen_1d_is_reproducible():
    config = Config1D(n_train=20, n_test=5)
    a, _ = gen_1d(config, np.random.default_rng(3))
    b, _ = gen_1d(config, np.random.default_rng(3))
    np.testing.assert_array_equal(a.y, b.y)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"train_ranges": []},
        {"train_ranges": [[0.5, 0.5]]},
        {"test_range": [1.0, -1.0]},
        {"heads": 1},
        {"noise_std": -1.0},
    ],
)
def test_config_1d_validation(kwargs):
    with pytest.raises(ValidationError):
        Config1D(**kwargs)


def test_config_1d_train_config_merges_method_settings():
    config = Config1D(
        seed=4,
        target_noise_std=0.1,
        training={"epochs": 7, "minibatch_size": 25},
        methods={"mc_dropout": {"learning_rate": 0.05, "momentum": 0.5, "dropout_p": 0.03}},
    )
    train = config.train_config("mc_dropout")
    assert (train.epochs, train.minibatch_size, train.learning_rate, train.dropout_p) == (7, 25, 0.05, 0.03)
    assert train.seed == 4
    assert train.target_noise_std == 0.1
    # methods without an entry fall back to the default rate
    assert config.train_config("bagging").learning_rate == 0.01


def test_projection_at_apex():
    intrinsics = CameraIntrinsics()
    pose = look_at_origin(camera_position(25.0, 0.0, 0.0))
    pixels = project(intrinsics, pose, [[0.0, 0.0, 0.0], [0.0, -1.0, 0.0], [-1.0, 0.0, 0.0]])
    np.testing.assert_allclose(pixels, [[250.0, 250.0], [270.0, 250.0], [250.0, 270.0]], atol=1e-9)


def test_projection_behind_camera():
    pose = PoseSE3([1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0])
    with pytest.raises(HydrarotException) as info:
        project(CameraIntrinsics(), pose, [[0.0, 0.0, -1.0]])
    assert info.value.error_type == ErrorType.BEHIND_CAMERA


def test_intrinsics_contains():
    intrinsics = CameraIntrinsics(width=100, height=50)
    np.testing.assert_array_equal(intrinsics.contains([[0.0, 0.0], [100.0, 50.0], [101.0, 10.0], [10.0, -1.0]]), [True, True, False, False])
    np.testing.assert_allclose(intrinsics.principal_point, [50.0, 25.0])


def test_pixel_normalization():
    norm = PixelNormalization.for_sensor(CameraIntrinsics())
    np.testing.assert_allclose(norm.normalize([[250.0, 250.0], [500.0, 0.0]]), [[0.0, 0.0], [1.0, -1.0]])
    pixels = np.array([[12.5, 480.0]])
    np.testing.assert_allclose(norm.denormalize(norm.normalize(pixels)), pixels)


def test_camera_position_signed_polar():
    np.testing.assert_allclose(camera_position(2.0, 90.0 - 1e-12, 0.0), [2.0, 0.0, 0.0], atol=1e-9)
    np.testing.assert_allclose(camera_position(2.0, -30.0, 0.0), camera_position(2.0, 30.0, 180.0), atol=1e-12)
    positions = camera_position(25.0, [10.0, 45.0], [0.0, 270.0])
    np.testing.assert_allclose(np.linalg.norm(positions, axis=1), 25.0)


@pytest.mark.parametrize("polar,azimuth", [(0.0, 0.0), (30.0, 45.0), (-75.0, 300.0), (60.0, 180.0)])
def test_look_at_origin(polar, azimuth):
    position = camera_position(25.0, polar, azimuth)
    pose = look_at_origin(position)
    r = quat_to_matrix(pose.rotation)
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0)
    np.testing.assert_allclose(se3_inverse(pose).translation, position, atol=1e-9)
    np.testing.assert_allclose(project(CameraIntrinsics(), pose, [[0.0, 0.0, 0.0]])[0], [250.0, 250.0], atol=1e-9)


def test_landmark_grid_is_centred():
    grid = landmark_grid(HemisphereConfig(grid_rows=2, grid_cols=3, grid_spacing=2.0))
    assert grid.shape == (6, 3)
    np.testing.assert_allclose(grid.mean(axis=0), 0.0)
    np.testing.assert_allclose(grid[:3, 0], [-2.0, 0.0, 2.0])
    np.testing.assert_allclose(grid[0, 1], -1.0)


@pytest.mark.parametrize("kwargs", [{"train_polar_deg": [-90.0, 10.0]}, {"test_polar_deg": [10.0, 5.0]}, {"heads": 1}])
def test_hemisphere_config_validation(kwargs):
    with pytest.raises(ValidationError):
        HemisphereConfig(**kwargs)


def test_hemisphere_train_config():
    config = HemisphereConfig(seed=8, training={"epochs": 2, "optimizer": "adam"})
    train = config.train_config()
    assert train.learning_rate == pytest.approx(1e-3)
    assert train.epochs == 2
    assert train.seed == 8


def test_gen_hemisphere(rng):
    config = HemisphereConfig(n_train=12, n_test=8)
    train, test = gen_hemisphere(config, rng)
    assert len(train) == 12 and len(test) == 8
    assert train.inputs.shape == (12, config.input_dim)
    np.testing.assert_allclose(np.linalg.norm(train.targets, axis=1), 1.0)
    assert np.all(np.abs(train.polar_deg) <= 60.0)
    assert np.all(np.abs(test.polar_deg) <= 80.0)
    np.testing.assert_allclose(np.linalg.norm(test.positions, axis=1), 25.0)
    assert np.all(np.abs(train.inputs) < 1.0)


def test_gen_hemisphere_targets_match_inputs(rng):
    config = HemisphereConfig(n_train=3, n_test=1, pixel_noise_std=0.0)
    train, _ = gen_hemisphere(config, rng)
    landmarks = landmark_grid(config)
    for i in range(3):
        pose = look_at_origin(train.positions[i])
        np.testing.assert_allclose(train.targets[i], pose.rotation)
        pixels = train.normalization.denormalize(train.inputs[i].reshape(-1, 2))
        np.testing.assert_allclose(pixels, project(config.intrinsics, pose, landmarks), atol=1e-9)


def test_gen_hemisphere_out_of_bounds(rng):
    config = HemisphereConfig(n_train=3, n_test=1, grid_spacing=6.0)
    with pytest.raises(HydrarotException) as info:
        gen_hemisphere(config, rng)
    assert info.value.error_type == ErrorType.PROJECTION_OUT_OF_BOUNDS
