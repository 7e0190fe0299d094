"""Feed-forward networks with a shared body and several heads, trained by exact backpropagation.

Parameters live in one flat float64 vector; every layer reads its weights
through views into it, so optimizers and gradient checks work on the vector
directly. Dropout is inverted (scaled at train time), which keeps eval mode
deterministic and mask-free.
"""

import base64
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .hydrarot_error import ErrorType, HydrarotException

logger = logging.getLogger(__name__)

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772
CHECKPOINT_VERSION = 1
# below this magnitude gradient disagreements are measured absolutely
GRAD_CHECK_FLOOR = 1e-6


class LayerKind(str, Enum):
    FC = "fc"
    SELU = "selu"
    RELU = "relu"
    DROPOUT = "dropout"
    RESIDUAL_FC_BLOCK = "residual_fc_block"


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


class OptimizerKind(str, Enum):
    SGD_MOMENTUM = "sgd_momentum"
    ADAM = "adam"


class LrSchedule(str, Enum):
    CONSTANT = "constant"
    COSINE = "cosine"


class LossKind(str, Enum):
    MSE = "mse"
    GAUSSIAN_NLL_1D = "gaussian_nll_1d"
    SO3_NLL = "so3_nll"


class LayerSpec(BaseModel):
    """One layer. Only ``fc`` changes width; ``residual_fc_block`` computes ``x + relu(W x + b)``."""

    kind: LayerKind
    input_dim: int = Field(gt=0)
    output_dim: int = Field(gt=0)
    p: float = 0.0

    model_config = ConfigDict(frozen=True)

    @field_validator("p")
    @classmethod
    def validate_p(cls, v: float) -> float:
        if not 0.0 <= v < 1.0:
            raise ValueError("Dropout probability must lie in [0, 1)")
        return v

    @model_validator(mode="after")
    def validate_dims(self) -> "LayerSpec":
        if self.kind != LayerKind.FC and self.input_dim != self.output_dim:
            raise ValueError(f"{self.kind.value} layers keep their width")
        return self

    @property
    def n_params(self) -> int:
        if self.kind == LayerKind.FC:
            return self.input_dim * self.output_dim + self.output_dim
        if self.kind == LayerKind.RESIDUAL_FC_BLOCK:
            return self.input_dim * self.input_dim + self.input_dim
        return 0

    @classmethod
    def fc(cls, input_dim: int, output_dim: int) -> "LayerSpec":
        return cls(kind=LayerKind.FC, input_dim=input_dim, output_dim=output_dim)

    @classmethod
    def selu(cls, dim: int) -> "LayerSpec":
        return cls(kind=LayerKind.SELU, input_dim=dim, output_dim=dim)

    @classmethod
    def relu(cls, dim: int) -> "LayerSpec":
        return cls(kind=LayerKind.RELU, input_dim=dim, output_dim=dim)

    @classmethod
    def dropout(cls, dim: int, p: float) -> "LayerSpec":
        return cls(kind=LayerKind.DROPOUT, input_dim=dim, output_dim=dim, p=p)

    @classmethod
    def residual(cls, width: int) -> "LayerSpec":
        return cls(kind=LayerKind.RESIDUAL_FC_BLOCK, input_dim=width, output_dim=width)


class TrainConfig(BaseModel):
    learning_rate: float = Field(gt=0)
    momentum: float = Field(default=0.0, ge=0.0, lt=1.0)
    optimizer: OptimizerKind = OptimizerKind.SGD_MOMENTUM
    epochs: int = Field(default=1, ge=1)
    minibatch_size: int = Field(default=50, ge=1)
    dropout_p: float = Field(default=0.0, ge=0.0, lt=1.0)
    loss: LossKind = LossKind.MSE
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    target_noise_std: float = Field(default=0.0, ge=0.0)
    lr_schedule: LrSchedule = LrSchedule.CONSTANT
    final_lr_fraction: float = Field(default=0.05, gt=0.0, le=1.0)
    warmup_epochs: int = Field(default=0, ge=0)

    def learning_rate_at(self, epoch: int) -> float:
        """Cosine decay from ``learning_rate`` to ``final_lr_fraction`` of it over the run."""
        if self.lr_schedule == LrSchedule.CONSTANT or self.epochs == 1:
            return self.learning_rate
        progress = epoch / (self.epochs - 1)
        floor = self.final_lr_fraction
        return self.learning_rate * (floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * progress)))

    model_config = ConfigDict(extra="ignore")


def _chain(layers: Sequence[LayerSpec], where: str) -> None:
    for prev, nxt in zip(layers, layers[1:]):
        if prev.output_dim != nxt.input_dim:
            raise HydrarotException.of(
                ErrorType.DIM_MISMATCH,
                "Layer dimensions do not chain",
                where=where,
                output_dim=prev.output_dim,
                input_dim=nxt.input_dim,
            )


class MlpModel:
    """Shared body followed by independent heads, all parameters in ``self.params``."""

    def __init__(self, body: Sequence[LayerSpec], heads: Sequence[Sequence[LayerSpec]], params=None, seed: int = 0):
        self.body = [LayerSpec.model_validate(s) for s in body]
        self.heads = [[LayerSpec.model_validate(s) for s in head] for head in heads]
        self.seed = int(seed)
        if not self.heads or any(not head for head in self.heads):
            raise HydrarotException.of(ErrorType.INVALID_INPUT, "A model needs at least one non-empty head")
        _chain(self.body, "body")
        body_out = self.body[-1].output_dim if self.body else self.heads[0][0].input_dim
        for i, head in enumerate(self.heads):
            _chain(head, f"head {i}")
            if head[0].input_dim != body_out:
                raise HydrarotException.of(
                    ErrorType.DIM_MISMATCH, "Head does not consume the body output", head=i, body_output_dim=body_out
                )

        offset = 0
        self._body_offsets = []
        for spec in self.body:
            self._body_offsets.append(offset)
            offset += spec.n_params
        self._head_offsets = []
        for head in self.heads:
            offsets = []
            for spec in head:
                offsets.append(offset)
                offset += spec.n_params
            self._head_offsets.append(offsets)
        self.n_params = offset

        if params is None:
            self.params = self._initial_params(np.random.default_rng(self.seed))
        else:
            params = np.array(params, dtype=np.float64).reshape(-1)
            if params.shape[0] != self.n_params:
                raise HydrarotException.of(
                    ErrorType.DIM_MISMATCH, "Parameter vector has the wrong length", expected=self.n_params, got=params.shape[0]
                )
            self.params = params

    @property
    def input_dim(self) -> int:
        return self.body[0].input_dim if self.body else self.heads[0][0].input_dim

    def _initial_params(self, rng: np.random.Generator) -> np.ndarray:
        params = np.zeros(self.n_params)
        stacks = [(self.body, self._body_offsets)] + list(zip(self.heads, self._head_offsets))
        for layers, offsets in stacks:
            for i, (spec, off) in enumerate(zip(layers, offsets)):
                if spec.kind == LayerKind.FC:
                    nxt = layers[i + 1].kind if i + 1 < len(layers) else None
                    # He normal ahead of ReLU, LeCun normal otherwise (SELU and linear outputs)
                    gain = 2.0 if nxt in (LayerKind.RELU, LayerKind.RESIDUAL_FC_BLOCK) else 1.0
                elif spec.kind == LayerKind.RESIDUAL_FC_BLOCK:
                    gain = 2.0
                else:
                    continue
                n_w = spec.input_dim * spec.output_dim
                params[off : off + n_w] = rng.normal(0.0, math.sqrt(gain / spec.input_dim), n_w)
        return params

    def _weights(self, params: np.ndarray, spec: LayerSpec, off: int) -> Tuple[np.ndarray, np.ndarray]:
        n_w = spec.input_dim * spec.output_dim
        w = params[off : off + n_w].reshape(spec.output_dim, spec.input_dim)
        b = params[off + n_w : off + n_w + spec.output_dim]
        return w, b

    def copy(self) -> "MlpModel":
        return MlpModel(self.body, self.heads, params=self.params.copy(), seed=self.seed)


@dataclass
class ForwardTrace:
    body: List = field(default_factory=list)
    heads: List[List] = field(default_factory=list)
    batch_size: int = 0


def _layer_forward(model: MlpModel, spec: LayerSpec, off: int, x: np.ndarray, mode: Mode, rng):
    if spec.kind == LayerKind.FC:
        w, b = model._weights(model.params, spec, off)
        return x @ w.T + b, x
    if spec.kind == LayerKind.SELU:
        return np.where(x > 0, SELU_LAMBDA * x, SELU_LAMBDA * SELU_ALPHA * np.expm1(np.minimum(x, 0.0))), x
    if spec.kind == LayerKind.RELU:
        return np.maximum(x, 0.0), x
    if spec.kind == LayerKind.DROPOUT:
        if mode == Mode.EVAL or spec.p == 0.0:
            return x, None
        if rng is None:
            raise HydrarotException.of(ErrorType.INVALID_INPUT, "Train-mode dropout needs an rng")
        mask = (rng.random(x.shape) >= spec.p) / (1.0 - spec.p)
        return x * mask, mask
    w, b = model._weights(model.params, spec, off)
    pre = x @ w.T + b
    return x + np.maximum(pre, 0.0), (x, pre)


def _layer_backward(model: MlpModel, spec: LayerSpec, off: int, cache, dy: np.ndarray, grad: np.ndarray) -> np.ndarray:
    if spec.kind == LayerKind.FC:
        w, _ = model._weights(model.params, spec, off)
        gw, gb = model._weights(grad, spec, off)
        gw += dy.T @ cache
        gb += dy.sum(axis=0)
        return dy @ w
    if spec.kind == LayerKind.SELU:
        return dy * np.where(cache > 0, SELU_LAMBDA, SELU_LAMBDA * SELU_ALPHA * np.exp(np.minimum(cache, 0.0)))
    if spec.kind == LayerKind.RELU:
        return dy * (cache > 0)
    if spec.kind == LayerKind.DROPOUT:
        return dy if cache is None else dy * cache
    x, pre = cache
    w, _ = model._weights(model.params, spec, off)
    gw, gb = model._weights(grad, spec, off)
    dpre = dy * (pre > 0)
    gw += dpre.T @ x
    gb += dpre.sum(axis=0)
    return dy + dpre @ w


def forward(
    model: MlpModel, x, mode: Union[Mode, str] = Mode.EVAL, rng: Optional[np.random.Generator] = None
) -> Tuple[List[np.ndarray], ForwardTrace]:
    """Run the body once and every head on its output. Returns per-head outputs of shape (batch, out)."""
    mode = Mode(mode)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :] if x.shape[0] == model.input_dim else x[:, None]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise HydrarotException.of(
            ErrorType.DIM_MISMATCH, "Input does not match the model input dimension", expected=model.input_dim, shape=list(x.shape)
        )
    trace = ForwardTrace(batch_size=x.shape[0])
    h = x
    for spec, off in zip(model.body, model._body_offsets):
        h, cache = _layer_forward(model, spec, off, h, mode, rng)
        trace.body.append(cache)
    outputs = []
    for head, offsets in zip(model.heads, model._head_offsets):
        y = h
        caches = []
        for spec, off in zip(head, offsets):
            y, cache = _layer_forward(model, spec, off, y, mode, rng)
            caches.append(cache)
        trace.heads.append(caches)
        outputs.append(y)
    return outputs, trace


def backward(model: MlpModel, trace: ForwardTrace, output_grads: Sequence[Optional[np.ndarray]]) -> np.ndarray:
    """Exact chain rule; gradients from all heads accumulate into the shared body."""
    if len(output_grads) != len(model.heads):
        raise HydrarotException.of(
            ErrorType.DIM_MISMATCH, "One output gradient per head is required", heads=len(model.heads), got=len(output_grads)
        )
    grad = np.zeros(model.n_params)
    body_out = model.body[-1].output_dim if model.body else model.input_dim
    d_body = np.zeros((trace.batch_size, body_out))
    for head, offsets, caches, dy in zip(model.heads, model._head_offsets, trace.heads, output_grads):
        if dy is None:
            continue
        dy = np.asarray(dy, dtype=float).reshape(trace.batch_size, head[-1].output_dim)
        for spec, off, cache in reversed(list(zip(head, offsets, caches))):
            dy = _layer_backward(model, spec, off, cache, dy, grad)
        d_body += dy
    dy = d_body
    for spec, off, cache in reversed(list(zip(model.body, model._body_offsets, trace.body))):
        dy = _layer_backward(model, spec, off, cache, dy, grad)
    return grad


@dataclass
class OptimizerState:
    velocity: Optional[np.ndarray] = None
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    t: int = 0


def step(
    state: OptimizerState, params: np.ndarray, grads: np.ndarray, config: TrainConfig
) -> Tuple[np.ndarray, OptimizerState]:
    """One optimizer update; returns new parameters and state, inputs untouched."""
    if params.shape != grads.shape:
        raise HydrarotException.of(ErrorType.DIM_MISMATCH, "Parameters and gradients differ in shape")
    if config.optimizer == OptimizerKind.SGD_MOMENTUM:
        velocity = np.zeros_like(params) if state.velocity is None else state.velocity
        velocity = config.momentum * velocity - config.learning_rate * grads
        return params + velocity, OptimizerState(velocity=velocity, t=state.t + 1)
    m = np.zeros_like(params) if state.m is None else state.m
    v = np.zeros_like(params) if state.v is None else state.v
    t = state.t + 1
    m = config.adam_beta1 * m + (1.0 - config.adam_beta1) * grads
    v = config.adam_beta2 * v + (1.0 - config.adam_beta2) * grads**2
    m_hat = m / (1.0 - config.adam_beta1**t)
    v_hat = v / (1.0 - config.adam_beta2**t)
    return params - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps), OptimizerState(m=m, v=v, t=t)


LossFn = Callable[[List[np.ndarray], np.ndarray], Tuple[float, List[Optional[np.ndarray]]]]
TargetNoiseFn = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def train_model(
    model: MlpModel,
    loss_fn: LossFn,
    inputs,
    targets,
    config: TrainConfig,
    rng: np.random.Generator,
    target_noise: Optional[TargetNoiseFn] = None,
    warmup_loss_fn: Optional[LossFn] = None,
) -> List[float]:
    """Minibatch training in place; returns the mean minibatch loss of every epoch.

    The first ``config.warmup_epochs`` epochs use ``warmup_loss_fn`` when one is given.
    The optimizer state carries across the switch.
    """
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    n = inputs.shape[0]
    if n == 0:
        raise HydrarotException.of(ErrorType.EMPTY_DATASET, "Cannot train on an empty dataset")
    if targets.shape[0] != n:
        raise HydrarotException.of(ErrorType.LENGTH_MISMATCH, "Inputs and targets differ in length", inputs=n, targets=targets.shape[0])
    state = OptimizerState()
    history = []
    for epoch in range(config.epochs):
        epoch_config = config.model_copy(update={"learning_rate": config.learning_rate_at(epoch)})
        epoch_loss = warmup_loss_fn if warmup_loss_fn is not None and epoch < config.warmup_epochs else loss_fn
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.minibatch_size):
            idx = order[start : start + config.minibatch_size]
            batch_targets = targets[idx]
            if target_noise is not None:
                batch_targets = target_noise(batch_targets, rng)
            outputs, trace = forward(model, inputs[idx], Mode.TRAIN, rng)
            loss, output_grads = epoch_loss(outputs, batch_targets)
            grads = backward(model, trace, output_grads)
            model.params, state = step(state, model.params, grads, epoch_config)
            losses.append(loss)
        history.append(float(np.mean(losses)))
        if epoch == 0 or (epoch + 1) % max(1, config.epochs // 10) == 0:
            logger.debug(
                f"Epoch {epoch + 1}/{config.epochs}: loss {history[-1]:.6g} (lr {epoch_config.learning_rate:.3g})"
            )
    return history


def grad_check(
    model: MlpModel,
    loss_fn: LossFn,
    x,
    target,
    fraction: float = 0.05,
    step_size: float = 1e-5,
    rng: Optional[np.random.Generator] = None,
    min_params: int = 10,
    mode: Mode = Mode.EVAL,
    mask_seed: int = 0,
    floor: float = GRAD_CHECK_FLOOR,
) -> float:
    """Largest relative disagreement between backprop and central differences over a random parameter subset.

    The error is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``. The numeric
    derivative uses the five-point central stencil. In train mode every forward pass
    draws its dropout masks from a fresh generator seeded with ``mask_seed``, so the
    masks are frozen across the perturbed evaluations.
    """
    rng = rng or np.random.default_rng(0)
    mode = Mode(mode)

    def evaluate():
        return forward(model, x, mode, np.random.default_rng(mask_seed))

    outputs, trace = evaluate()
    _, output_grads = loss_fn(outputs, target)
    analytic = backward(model, trace, output_grads)

    count = min(model.n_params, max(min_params, math.ceil(fraction * model.n_params)))
    chosen = rng.choice(model.n_params, size=count, replace=False)
    original = model.params.copy()
    worst = 0.0
    try:
        for i in chosen:
            values = {}
            for k in (-2, -1, 1, 2):
                model.params[i] = original[i] + k * step_size
                values[k], _ = loss_fn(evaluate()[0], target)
            model.params[i] = original[i]
            numeric = (values[-2] - 8.0 * values[-1] + 8.0 * values[1] - values[2]) / (12.0 * step_size)
            err = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), floor)
            worst = max(worst, err)
    finally:
        model.params = original
    logger.debug(f"Gradient check ({mode.value}) over {count} parameters: max error {worst:.3e}")
    return worst


class Checkpoint(BaseModel):
    format_version: int = CHECKPOINT_VERSION
    body: List[LayerSpec]
    heads: List[List[LayerSpec]]
    seed: int
    n_params: int
    params_f64le_b64: str


def save_checkpoint(model: MlpModel, path: Union[str, Path]) -> Path:
    blob = base64.b64encode(model.params.astype("<f8").tobytes()).decode("ascii")
    checkpoint = Checkpoint(body=model.body, heads=model.heads, seed=model.seed, n_params=model.n_params, params_f64le_b64=blob)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(checkpoint.model_dump_json(indent=2), encoding="utf-8")
    return path


def load_checkpoint(path: Union[str, Path]) -> MlpModel:
    try:
        checkpoint = Checkpoint.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except Exception as e:
        raise HydrarotException.of(ErrorType.INVALID_INPUT, f"Cannot read checkpoint: {e}", path=str(path))
    if checkpoint.format_version != CHECKPOINT_VERSION:
        raise HydrarotException.of(
            ErrorType.INVALID_INPUT, "Unsupported checkpoint version", version=checkpoint.format_version
        )
    params = np.frombuffer(base64.b64decode(checkpoint.params_f64le_b64), dtype="<f8").astype(np.float64)
    return MlpModel(checkpoint.body, checkpoint.heads, params=params, seed=checkpoint.seed)
