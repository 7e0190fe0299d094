"""Uncertainty estimators: the four 1D baselines, HydraNet in 1D and HydraNet on SO(3).

A HydraNet is one ``MlpModel`` whose heads share a body. Head 0 regresses the
aleatoric term (``log sigma`` in 1D, diagonal covariance logits on SO(3)); the
remaining heads are independently initialised estimates whose spread gives the
epistemic term. Heads are trained on the same targets (no bootstrapping).
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np

from .hydrarot_averaging import quat_mean
from .hydrarot_error import ErrorType, HydrarotException
from .hydrarot_losses import loss_for
from .hydrarot_nnet import LayerSpec, LossKind, MlpModel, Mode, TrainConfig, forward, train_model
from .hydrarot_so3 import exp_so3, quat_mul, quat_normalize
from .hydrarot_uncertainty import SIGMA_MIN, RotationBelief, cov_from_logits, sample_covariance

logger = logging.getLogger("hydrarot")

UNIT_TOL = 1e-6


class Method1D(str, Enum):
    DIRECT_SIGMA = "direct_sigma"
    MC_DROPOUT = "mc_dropout"
    BAGGING = "bagging"
    HYDRANET_HEADS_ONLY = "hydranet_heads_only"
    HYDRANET_FULL = "hydranet_full"

    @property
    def uses_nll(self) -> bool:
        return self in (Method1D.DIRECT_SIGMA, Method1D.HYDRANET_FULL)


def _block(width_in: int, width: int, dropout_p: float) -> List[LayerSpec]:
    layers = [LayerSpec.fc(width_in, width), LayerSpec.selu(width)]
    if dropout_p > 0.0:
        layers.append(LayerSpec.dropout(width, dropout_p))
    return layers


def build_1d_model(method: Method1D, width: int, heads: int, dropout_p: float, seed: int) -> MlpModel:
    """Four fully-connected SELU layers, split into body and heads according to the method."""
    method = Method1D(method)
    if method in (Method1D.HYDRANET_HEADS_ONLY, Method1D.HYDRANET_FULL):
        body = _block(1, width, 0.0) + _block(width, width, 0.0)
        head = _block(width, width, dropout_p) + [LayerSpec.fc(width, 1)]
        all_heads = [head] * heads
        if method == Method1D.HYDRANET_FULL:
            all_heads = [head] + all_heads
        return MlpModel(body, all_heads, seed=seed)
    p = dropout_p if method == Method1D.MC_DROPOUT else 0.0
    body = _block(1, width, p) + _block(width, width, p) + _block(width, width, p)
    if method == Method1D.DIRECT_SIGMA:
        return MlpModel(body, [[LayerSpec.fc(width, 1)], [LayerSpec.fc(width, 1)]], seed=seed)
    return MlpModel(body, [[LayerSpec.fc(width, 1)]], seed=seed)


@dataclass
class Estimator1D:
    method: Method1D
    models: List[MlpModel]
    config: TrainConfig
    passes: int = 1
    sigma_min: float = SIGMA_MIN
    history: List[List[float]] = field(default_factory=list)


@dataclass
class Prediction1D:
    mean: np.ndarray
    var_epistemic: np.ndarray
    var_aleatoric: np.ndarray
    var_total: np.ndarray


def _seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**31 - 1))


def train_1d(
    method,
    x,
    y,
    config: TrainConfig,
    rng: np.random.Generator,
    heads: int = 10,
    bagging_models: int = 10,
    dropout_passes: int = 50,
    width: int = 20,
    sigma_min: float = SIGMA_MIN,
) -> Estimator1D:
    """Train one estimator. NLL methods use the Gaussian NLL, the others mean squared error."""
    method = Method1D(method)
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape[0] == 0:
        raise HydrarotException.of(ErrorType.EMPTY_DATASET, "Cannot train on an empty dataset", method=method.value)
    if method == Method1D.BAGGING and bagging_models < 2:
        raise HydrarotException.of(ErrorType.INVALID_INPUT, "Bagging needs at least two models", models=bagging_models)
    if method == Method1D.MC_DROPOUT and dropout_passes < 2:
        raise HydrarotException.of(ErrorType.INVALID_INPUT, "MC dropout needs at least two passes", passes=dropout_passes)
    if method in (Method1D.HYDRANET_HEADS_ONLY, Method1D.HYDRANET_FULL) and heads < 2:
        raise HydrarotException.of(ErrorType.INVALID_INPUT, "HydraNet needs at least two heads", heads=heads)

    loss_kind = LossKind.GAUSSIAN_NLL_1D if method.uses_nll else LossKind.MSE
    config = config.model_copy(update={"loss": loss_kind})
    loss_fn = loss_for(loss_kind, sigma_min)
    target_noise = None
    if config.target_noise_std > 0.0:
        std = config.target_noise_std

        def target_noise(targets, noise_rng):
            return targets + noise_rng.normal(0.0, std, targets.shape)

    n_models = bagging_models if method == Method1D.BAGGING else 1
    models, history = [], []
    for i in range(n_models):
        model = build_1d_model(method, width, heads, config.dropout_p, _seed(rng))
        if method == Method1D.BAGGING:
            idx = rng.integers(0, x.shape[0], x.shape[0])
            xs, ys = x[idx], y[idx]
        else:
            xs, ys = x, y
        history.append(train_model(model, loss_fn, xs, ys, config, rng, target_noise))
        logger.debug(f"{method.value} model {i + 1}/{n_models} final loss {history[-1][-1]:.5g}")
        models.append(model)
    passes = dropout_passes if method == Method1D.MC_DROPOUT else 1
    return Estimator1D(method=method, models=models, config=config, passes=passes, sigma_min=sigma_min, history=history)


def predict_1d(estimator: Estimator1D, x, rng: Optional[np.random.Generator] = None) -> Prediction1D:
    """Mean over heads, passes or models; epistemic variance is their unbiased sample variance."""
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    method = estimator.method
    var_a = np.zeros(x.shape[0])
    if method == Method1D.MC_DROPOUT:
        rng = rng or np.random.default_rng(estimator.config.seed)
        samples = np.stack([forward(estimator.models[0], x, Mode.TRAIN, rng)[0][0][:, 0] for _ in range(estimator.passes)])
    elif method == Method1D.BAGGING:
        samples = np.stack([forward(m, x, Mode.EVAL)[0][0][:, 0] for m in estimator.models])
    else:
        outputs, _ = forward(estimator.models[0], x, Mode.EVAL)
        if method.uses_nll:
            var_a = np.maximum(np.exp(outputs[0][:, 0]), estimator.sigma_min) ** 2
            outputs = outputs[1:]
        samples = np.stack([out[:, 0] for out in outputs])
    mean = samples.mean(axis=0)
    var_e = samples.var(axis=0, ddof=1) if samples.shape[0] > 1 else np.zeros_like(mean)
    return Prediction1D(mean=mean, var_epistemic=var_e, var_aleatoric=var_a, var_total=var_e + var_a)


@dataclass
class HydraNetSO3:
    model: MlpModel
    heads: int
    sigma_min: float = SIGMA_MIN
    history: List[float] = field(default_factory=list)


def build_so3_model(
    input_dim: int,
    heads: int = 25,
    body_width: int = 128,
    residual_blocks: int = 5,
    head_width: int = 64,
    head_dropout: float = 0.0,
    seed: int = 0,
) -> MlpModel:
    """Residual body, one covariance-logit head (index 0) and ``heads`` quaternion heads."""
    body = [LayerSpec.fc(input_dim, body_width), LayerSpec.relu(body_width)]
    body += [LayerSpec.residual(body_width) for _ in range(residual_blocks)]
    quat_head = [LayerSpec.fc(body_width, head_width), LayerSpec.relu(head_width)]
    if head_dropout > 0.0:
        quat_head.append(LayerSpec.dropout(head_width, head_dropout))
    quat_head.append(LayerSpec.fc(head_width, 4))
    cov_head = [LayerSpec.fc(body_width, head_width), LayerSpec.relu(head_width), LayerSpec.fc(head_width, 3)]
    return MlpModel(body, [cov_head] + [quat_head] * heads, seed=seed)


def check_unit_targets(targets) -> np.ndarray:
    targets = np.asarray(targets, dtype=float).reshape(-1, 4)
    deviation = np.abs(np.linalg.norm(targets, axis=1) - 1.0)
    if deviation.size and deviation.max() > UNIT_TOL:
        raise HydrarotException.of(
            ErrorType.NON_UNIT_TARGET,
            "Target quaternions must be unit norm",
            worst_index=int(deviation.argmax()),
            deviation=float(deviation.max()),
        )
    return targets


def train_so3(
    inputs,
    targets,
    config: TrainConfig,
    heads: int,
    rng: np.random.Generator,
    model: Optional[MlpModel] = None,
    sigma_min: float = SIGMA_MIN,
    **architecture,
) -> HydraNetSO3:
    """Supervised SO(3) training: every quaternion head's NLL against the shared covariance head, summed."""
    targets = check_unit_targets(targets)
    inputs = np.asarray(inputs, dtype=float)
    if inputs.shape[0] == 0:
        raise HydrarotException.of(ErrorType.EMPTY_DATASET, "Cannot train on an empty dataset")
    if heads < 2:
        raise HydrarotException.of(ErrorType.INVALID_INPUT, "HydraNet needs at least two quaternion heads", heads=heads)
    if model is None:
        model = build_so3_model(inputs.shape[1], heads=heads, seed=_seed(rng), **architecture)
    elif len(model.heads) != heads + 1:
        raise HydrarotException.of(ErrorType.DIM_MISMATCH, "Model head count does not match", expected=heads + 1, got=len(model.heads))

    target_noise = None
    if config.target_noise_std > 0.0:
        std = config.target_noise_std

        def target_noise(q, noise_rng):
            return quat_mul(exp_so3(noise_rng.normal(0.0, std, (q.shape[0], 3))), q)

    config = config.model_copy(update={"loss": LossKind.SO3_NLL})
    # warm-up fits the quaternion heads under a unit covariance before the covariance head learns
    warmup = loss_for(LossKind.SO3_NLL, sigma_min, fixed_variance=True) if config.warmup_epochs else None
    history = train_model(
        model, loss_for(LossKind.SO3_NLL, sigma_min), inputs, targets, config, rng, target_noise, warmup_loss_fn=warmup
    )
    logger.info(f"Trained HydraNet with {heads} heads for {config.epochs} epochs, final loss {history[-1]:.5g}")
    return HydraNetSO3(model=model, heads=heads, sigma_min=sigma_min, history=history)


def beliefs_from_outputs(outputs: List[np.ndarray], sigma_min: float = SIGMA_MIN) -> List[RotationBelief]:
    """Turn raw head outputs (covariance logits first) into one belief per input row."""
    logits = outputs[0]
    quats = quat_normalize(np.stack(outputs[1:], axis=1))
    beliefs = []
    for i in range(logits.shape[0]):
        averaged = quat_mean(quats[i])
        mean = averaged.mean
        beliefs.append(
            RotationBelief(
                mean=mean,
                epistemic=sample_covariance(mean, quats[i]),
                aleatoric=cov_from_logits(logits[i], sigma_min),
                dispersed=averaged.dispersion_warning,
            )
        )
    return beliefs


def predict_so3_batch(net: HydraNetSO3, inputs) -> List[RotationBelief]:
    outputs, _ = forward(net.model, inputs, Mode.EVAL)
    return beliefs_from_outputs(outputs, net.sigma_min)


def predict_so3(net: HydraNetSO3, x) -> RotationBelief:
    """Belief for a single input: quaternion mean of the heads, head covariance plus learned covariance."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return predict_so3_batch(net, x)[0]
