"""Synthetic data: the noisy 1D regression function and the hemisphere camera world."""

import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .hydrarot_error import ErrorType, HydrarotException
from .hydrarot_nnet import TrainConfig
from .hydrarot_so3 import PoseSE3, matrix_to_quat, quat_rotate

logger = logging.getLogger(__name__)

Range = Tuple[float, float]


def _check_range(r: Range) -> Range:
    lo, hi = float(r[0]), float(r[1])
    if not lo < hi:
        raise ValueError(f"Range [{lo}, {hi}] is empty")
    return lo, hi


class Config1D(BaseModel):
    n_train: int = Field(default=1000, ge=1)
    train_ranges: List[Range] = [(0.0, 0.6), (0.8, 1.0)]
    n_test: int = Field(default=100, ge=1)
    test_range: Range = (-2.0, 2.0)
    noise_std: float = Field(default=3.0, ge=0.0)
    repetitions: int = Field(default=100, ge=1)
    seed: int = 0
    hidden_width: int = Field(default=20, ge=1)
    heads: int = Field(default=10, ge=2)
    bagging_models: int = Field(default=10, ge=2)
    dropout_passes: int = Field(default=50, ge=2)
    target_noise_std: float = Field(default=0.0, ge=0.0)
    training: Dict = {}
    methods: Dict[str, Dict] = {}

    model_config = ConfigDict(extra="ignore")

    @field_validator("train_ranges")
    @classmethod
    def validate_train_ranges(cls, v: List[Range]) -> List[Range]:
        if not v:
            raise ValueError("At least one training range is required")
        return [_check_range(r) for r in v]

    @field_validator("test_range")
    @classmethod
    def validate_test_range(cls, v: Range) -> Range:
        return _check_range(v)

    def train_config(self, method: str) -> TrainConfig:
        """Shared training settings overlaid with the per-method learning rate, momentum and dropout."""
        values = dict(self.training)
        values.update(self.methods.get(str(getattr(method, "value", method)), {}))
        values.setdefault("learning_rate", 0.01)
        values["seed"] = self.seed
        values["target_noise_std"] = self.target_noise_std
        return TrainConfig(**values)


@dataclass
class Dataset1D:
    x: np.ndarray
    y: np.ndarray
    omega: np.ndarray


def f_1d(x, omega=0.0) -> np.ndarray:
    """``x + sin(4(x + w)) + sin(13(x + w)) + w``."""
    x = np.asarray(x, dtype=float)
    s = x + omega
    return x + np.sin(4.0 * s) + np.sin(13.0 * s) + omega


def _sample_union(ranges: List[Range], n: int, rng: np.random.Generator) -> np.ndarray:
    widths = np.array([hi - lo for lo, hi in ranges])
    which = rng.choice(len(ranges), size=n, p=widths / widths.sum())
    lo = np.array([r[0] for r in ranges])[which]
    return lo + rng.random(n) * widths[which]


def gen_1d(config: Config1D, rng: np.random.Generator) -> Tuple[Dataset1D, Dataset1D]:
    """Training inputs uniform over the union of training ranges; sorted test inputs uniform over the test range."""
    x_train = _sample_union(config.train_ranges, config.n_train, rng)
    lo, hi = config.test_range
    x_test = np.sort(rng.uniform(lo, hi, config.n_test))
    datasets = []
    for x in (x_train, x_test):
        omega = rng.normal(0.0, config.noise_std, x.shape[0]) if config.noise_std > 0 else np.zeros(x.shape[0])
        datasets.append(Dataset1D(x=x, y=f_1d(x, omega), omega=omega))
    logger.debug(f"Generated 1D data: {config.n_train} train, {config.n_test} test, noise std {config.noise_std}")
    return datasets[0], datasets[1]


class CameraIntrinsics(BaseModel):
    focal_length: float = Field(default=500.0, gt=0)
    width: int = Field(default=500, gt=0)
    height: int = Field(default=500, gt=0)

    model_config = ConfigDict(frozen=True)

    @property
    def principal_point(self) -> np.ndarray:
        return np.array([self.width / 2.0, self.height / 2.0])

    def contains(self, pixels) -> np.ndarray:
        pixels = np.asarray(pixels, dtype=float)
        return (
            (pixels[..., 0] >= 0.0)
            & (pixels[..., 0] <= self.width)
            & (pixels[..., 1] >= 0.0)
            & (pixels[..., 1] <= self.height)
        )


def project(intrinsics: CameraIntrinsics, pose: PoseSE3, landmarks) -> np.ndarray:
    """Pinhole projection of world points through the camera pose ``T_{c,w}``; ``(..., 3) -> (..., 2)``."""
    landmarks = np.asarray(landmarks, dtype=float)
    cam = quat_rotate(pose.rotation, landmarks) + pose.translation
    depth = cam[..., 2]
    if np.any(depth <= 0.0):
        raise HydrarotException.of(
            ErrorType.BEHIND_CAMERA, "Landmark has non-positive depth", min_depth=float(np.min(depth))
        )
    return intrinsics.focal_length * cam[..., :2] / depth[..., None] + intrinsics.principal_point


class PixelNormalization(BaseModel):
    """``normalized = (pixel - center) / half_extent``; maps the sensor onto [-1, 1]."""

    center: Tuple[float, float]
    half_extent: Tuple[float, float]

    @classmethod
    def for_sensor(cls, intrinsics: CameraIntrinsics) -> "PixelNormalization":
        return cls(
            center=(intrinsics.width / 2.0, intrinsics.height / 2.0),
            half_extent=(intrinsics.width / 2.0, intrinsics.height / 2.0),
        )

    def normalize(self, pixels) -> np.ndarray:
        return (np.asarray(pixels, dtype=float) - np.array(self.center)) / np.array(self.half_extent)

    def denormalize(self, values) -> np.ndarray:
        return np.asarray(values, dtype=float) * np.array(self.half_extent) + np.array(self.center)


class HemisphereConfig(BaseModel):
    grid_rows: int = Field(default=6, ge=1)
    grid_cols: int = Field(default=6, ge=1)
    grid_spacing: float = Field(default=1.0, gt=0)
    radius: float = Field(default=25.0, gt=0)
    image_width: int = Field(default=500, gt=0)
    image_height: int = Field(default=500, gt=0)
    focal_length: float = Field(default=500.0, gt=0)
    pixel_noise_std: float = Field(default=1.0, ge=0)
    n_train: int = Field(default=15000, ge=1)
    train_polar_deg: Range = (-60.0, 60.0)
    n_test: int = Field(default=500, ge=1)
    test_polar_deg: Range = (-80.0, 80.0)
    seed: int = 0
    body_width: int = Field(default=128, ge=1)
    residual_blocks: int = Field(default=5, ge=0)
    heads: int = Field(default=25, ge=2)
    head_width: int = Field(default=64, ge=1)
    head_dropout: float = Field(default=0.0, ge=0.0, lt=1.0)
    target_noise_std: float = Field(default=0.0, ge=0.0)
    training: Dict = {}

    model_config = ConfigDict(extra="ignore")

    @model_validator(mode="after")
    def validate_bands(self) -> "HemisphereConfig":
        for band in (self.train_polar_deg, self.test_polar_deg):
            _check_range(band)
            if max(abs(band[0]), abs(band[1])) >= 90.0:
                raise ValueError("Polar angles must stay above the landmark plane (|angle| < 90 degrees)")
        return self

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(focal_length=self.focal_length, width=self.image_width, height=self.image_height)

    @property
    def input_dim(self) -> int:
        return 2 * self.grid_rows * self.grid_cols

    def train_config(self) -> TrainConfig:
        values = dict(self.training)
        values.setdefault("learning_rate", 1e-3)
        values["seed"] = self.seed
        values["target_noise_std"] = self.target_noise_std
        return TrainConfig(**values)


def landmark_grid(config: HemisphereConfig) -> np.ndarray:
    """Grid on the ``z = 0`` plane centred at the origin, row-major order."""
    xs = (np.arange(config.grid_cols) - (config.grid_cols - 1) / 2.0) * config.grid_spacing
    ys = (np.arange(config.grid_rows) - (config.grid_rows - 1) / 2.0) * config.grid_spacing
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=-1)


def camera_position(radius: float, polar_deg, azimuth_deg) -> np.ndarray:
    """Signed polar angle from the apex swept along the azimuth direction."""
    polar = np.radians(np.asarray(polar_deg, dtype=float))
    azimuth = np.radians(np.asarray(azimuth_deg, dtype=float))
    return radius * np.stack(
        [np.sin(polar) * np.cos(azimuth), np.sin(polar) * np.sin(azimuth), np.cos(polar)], axis=-1
    )


def look_at_origin(position) -> PoseSE3:
    """Camera pose ``T_{c,w}`` with the optical axis through the origin.

    Image "up" is world z projected onto the image plane (world x at the apex);
    the camera y axis points down the image.
    """
    position = np.asarray(position, dtype=float)
    z_axis = -position / np.linalg.norm(position)
    up = None
    for candidate in (np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0])):
        up = candidate - candidate.dot(z_axis) * z_axis
        if np.linalg.norm(up) > 1e-9:
            break
    y_axis = -up / np.linalg.norm(up)
    x_axis = np.cross(y_axis, z_axis)
    r_cw = np.stack([x_axis, y_axis, z_axis])
    q_cw = matrix_to_quat(r_cw)
    return PoseSE3(q_cw, -r_cw @ position)


@dataclass
class HemisphereDataset:
    inputs: np.ndarray
    targets: np.ndarray
    positions: np.ndarray
    polar_deg: np.ndarray
    azimuth_deg: np.ndarray
    normalization: PixelNormalization

    def __len__(self) -> int:
        return self.inputs.shape[0]


def _gen_band(config: HemisphereConfig, n: int, band: Range, rng: np.random.Generator) -> HemisphereDataset:
    intrinsics = config.intrinsics
    normalization = PixelNormalization.for_sensor(intrinsics)
    landmarks = landmark_grid(config)
    polar = rng.uniform(band[0], band[1], n)
    azimuth = rng.uniform(0.0, 360.0, n)
    positions = camera_position(config.radius, polar, azimuth)
    inputs = np.empty((n, 2 * landmarks.shape[0]))
    targets = np.empty((n, 4))
    for i in range(n):
        pose = look_at_origin(positions[i])
        pixels = project(intrinsics, pose, landmarks)
        if not np.all(intrinsics.contains(pixels)):
            raise HydrarotException.of(
                ErrorType.PROJECTION_OUT_OF_BOUNDS,
                "Landmark projects outside the sensor",
                polar_deg=float(polar[i]),
                azimuth_deg=float(azimuth[i]),
            )
        if config.pixel_noise_std > 0:
            pixels = pixels + rng.normal(0.0, config.pixel_noise_std, pixels.shape)
        inputs[i] = normalization.normalize(pixels).ravel()
        targets[i] = pose.rotation
    return HemisphereDataset(
        inputs=inputs,
        targets=targets,
        positions=positions,
        polar_deg=polar,
        azimuth_deg=azimuth,
        normalization=normalization,
    )


def gen_hemisphere(config: HemisphereConfig, rng: np.random.Generator) -> Tuple[HemisphereDataset, HemisphereDataset]:
    """Training set in the narrow polar band, test set in the wide one; targets are ``q_{c,w}``."""
    train = _gen_band(config, config.n_train, config.train_polar_deg, rng)
    test = _gen_band(config, config.n_test, config.test_polar_deg, rng)
    logger.info(
        f"Generated hemisphere data: {len(train)} train poses in {config.train_polar_deg} deg, "
        f"{len(test)} test poses in {config.test_polar_deg} deg"
    )
    return train, test

