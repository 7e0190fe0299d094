"""Experiment drivers: repeated 1D comparisons of the five estimators and the hemisphere SO(3) run."""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .hydrarot_datasets import Config1D, Dataset1D, HemisphereConfig, gen_1d, gen_hemisphere
from .hydrarot_hydranet import HydraNetSO3, Method1D, predict_1d, predict_so3_batch, train_1d, train_so3
from .hydrarot_losses import gaussian_nll_1d, loss_for
from .hydrarot_nnet import LayerSpec, LossKind, MlpModel, Mode, grad_check
from .hydrarot_so3 import _hamilton, log_so3, quat_inv, random_rotation
from .hydrarot_uncertainty import CHOLESKY_JITTER, SIGMA_MIN, calibration_report, so3_nll

logger = logging.getLogger("hydrarot")

OOD_RANGE = (-2.0, -0.5)
IN_RANGE = (0.1, 0.5)
# upper triangle of the total covariance, enough to rebuild it from a report row
COV_TERMS = (("xx", 0, 0), ("xy", 0, 1), ("xz", 0, 2), ("yy", 1, 1), ("yz", 1, 2), ("zz", 2, 2))


@dataclass
class Experiment1DReport:
    results: pd.DataFrame
    box_stats: pd.DataFrame
    predictions: pd.DataFrame
    summary: Dict = field(default_factory=dict)


@dataclass
class ExperimentReport:
    predictions: pd.DataFrame
    summary: Dict = field(default_factory=dict)
    runtime_s: float = 0.0
    history: List[float] = field(default_factory=list)
    net: Optional[HydraNetSO3] = None


def _run_repetition(
    config: Config1D, rep: int, seed_seq: np.random.SeedSequence, train: Dataset1D, test: Dataset1D, sigma_min: float
) -> Tuple[List[Dict], List[Dict]]:
    rows, pred_rows = [], []
    for method, child in zip(Method1D, seed_seq.spawn(len(Method1D))):
        rng = np.random.default_rng(child)
        estimator = train_1d(
            method,
            train.x,
            train.y,
            config.train_config(method),
            rng,
            heads=config.heads,
            bagging_models=config.bagging_models,
            dropout_passes=config.dropout_passes,
            width=config.hidden_width,
            sigma_min=sigma_min,
        )
        pred = predict_1d(estimator, test.x, rng)
        var = np.maximum(pred.var_total, sigma_min**2)
        rows.append(
            {
                "method": method.value,
                "rep": rep,
                "nll": float(np.mean(gaussian_nll_1d(pred.mean, var, test.y))),
                "mse": float(np.mean((pred.mean - test.y) ** 2)),
            }
        )
        if rep == 0:
            for i, x in enumerate(test.x):
                pred_rows.append(
                    {
                        "method": method.value,
                        "x": float(x),
                        "y": float(test.y[i]),
                        "mean": float(pred.mean[i]),
                        "var_epistemic": float(pred.var_epistemic[i]),
                        "var_aleatoric": float(pred.var_aleatoric[i]),
                        "var_total": float(pred.var_total[i]),
                    }
                )
        logger.debug(f"rep {rep} {method.value}: nll {rows[-1]['nll']:.4f} mse {rows[-1]['mse']:.4f}")
    return rows, pred_rows


def box_statistics(results: pd.DataFrame) -> pd.DataFrame:
    """Median, quartiles and extremes of the test NLL per method, plus MSE summaries."""
    grouped = results.groupby("method", sort=False)
    stats = pd.DataFrame(
        {
            "nll_median": grouped["nll"].median(),
            "nll_q1": grouped["nll"].quantile(0.25),
            "nll_q3": grouped["nll"].quantile(0.75),
            "nll_min": grouped["nll"].min(),
            "nll_max": grouped["nll"].max(),
            "mse_mean": grouped["mse"].mean(),
            "mse_median": grouped["mse"].median(),
            "reps": grouped["rep"].count(),
        }
    )
    return stats.reset_index()


def epistemic_ratio(predictions: pd.DataFrame, method: str = Method1D.HYDRANET_FULL.value) -> float:
    """Mean epistemic sigma far outside the training data over mean epistemic sigma inside it."""
    rows = predictions[predictions["method"] == method]
    sigma = np.sqrt(rows["var_epistemic"])
    far = sigma[rows["x"].between(*OOD_RANGE)]
    near = sigma[rows["x"].between(*IN_RANGE)]
    if far.empty or near.empty or near.mean() == 0.0:
        return float("nan")
    return float(far.mean() / near.mean())


def run_1d(
    config: Config1D, repetitions: Optional[int] = None, workers: int = 1, sigma_min: float = SIGMA_MIN
) -> Experiment1DReport:
    """Train every estimator ``repetitions`` times on one dataset and record test NLL and MSE."""
    reps = repetitions or config.repetitions
    root = np.random.SeedSequence(config.seed)
    data_seq, train_seq = root.spawn(2)
    train, test = gen_1d(config, np.random.default_rng(data_seq))
    rep_seqs = train_seq.spawn(reps)
    logger.info(f"Running 1D comparison: {reps} repetitions of {len(Method1D)} methods, {workers} worker(s)")

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_repetition, config, r, rep_seqs[r], train, test, sigma_min) for r in range(reps)]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [_run_repetition(config, r, rep_seqs[r], train, test, sigma_min) for r in range(reps)]

    results = pd.DataFrame([row for rows, _ in outcomes for row in rows], columns=["method", "rep", "nll", "mse"])
    predictions = pd.DataFrame([row for _, pred_rows in outcomes for row in pred_rows])
    box = box_statistics(results)
    summary = {
        "repetitions": reps,
        "median_nll": dict(zip(box["method"], box["nll_median"])),
        "mean_mse": dict(zip(box["method"], box["mse_mean"])),
        "train_mean_baseline_mse": float(np.mean((train.y.mean() - test.y) ** 2)),
        "epistemic_ratio_hydranet_full": epistemic_ratio(predictions),
    }
    logger.info(f"1D medians: {summary['median_nll']}")
    return Experiment1DReport(results=results, box_stats=box, predictions=predictions, summary=summary)


def _diag(covs: np.ndarray) -> np.ndarray:
    return np.diagonal(covs, axis1=-2, axis2=-1)


def run_hemisphere(
    config: HemisphereConfig, sigma_min: float = SIGMA_MIN, jitter: float = CHOLESKY_JITTER
) -> ExperimentReport:
    """Train HydraNet on the narrow polar band and evaluate beliefs on the wide one, sorted by polar angle."""
    start = time.perf_counter()
    data_seq, train_seq = np.random.SeedSequence(config.seed).spawn(2)
    train, test = gen_hemisphere(config, np.random.default_rng(data_seq))
    net = train_so3(
        train.inputs,
        train.targets,
        config.train_config(),
        config.heads,
        np.random.default_rng(train_seq),
        sigma_min=sigma_min,
        body_width=config.body_width,
        residual_blocks=config.residual_blocks,
        head_width=config.head_width,
        head_dropout=config.head_dropout,
    )
    beliefs = predict_so3_batch(net, test.inputs)
    means = np.stack([b.mean for b in beliefs])
    epistemic = np.stack([b.epistemic for b in beliefs])
    aleatoric = np.stack([b.aleatoric for b in beliefs])
    total = np.stack([b.total for b in beliefs])
    errors = log_so3(_hamilton(means, quat_inv(test.targets)))
    nll = so3_nll(means, test.targets, total, jitter)
    runtime = time.perf_counter() - start

    frame = pd.DataFrame(
        {
            "id": np.arange(len(test)),
            "polar_deg": test.polar_deg,
            "azimuth_deg": test.azimuth_deg,
            "qw": means[:, 0],
            "qx": means[:, 1],
            "qy": means[:, 2],
            "qz": means[:, 3],
            "qt_w": test.targets[:, 0],
            "qt_x": test.targets[:, 1],
            "qt_y": test.targets[:, 2],
            "qt_z": test.targets[:, 3],
        }
    )
    for name, covs in (("sigma_e", epistemic), ("sigma_a", aleatoric), ("sigma_t", total)):
        for axis, values in zip("xyz", np.sqrt(_diag(covs)).T):
            frame[f"{name}_{axis}"] = values
    for suffix, i, j in COV_TERMS:
        frame[f"cov_t_{suffix}"] = total[:, i, j]
    for axis, values in zip("xyz", errors.T):
        frame[f"err_{axis}"] = values
    frame["angular_error_deg"] = np.degrees(np.linalg.norm(errors, axis=1))
    frame["nll"] = nll
    frame["dispersed"] = [b.dispersed for b in beliefs]
    frame = frame.sort_values("polar_deg", kind="mergesort").reset_index(drop=True)

    report = calibration_report(errors, total, jitter)
    trace_e = np.trace(epistemic, axis1=1, axis2=2)
    inside = np.abs(test.polar_deg) <= max(abs(config.train_polar_deg[0]), abs(config.train_polar_deg[1]))
    trace_in = float(trace_e[inside].mean()) if inside.any() else float("nan")
    trace_out = float(trace_e[~inside].mean()) if (~inside).any() else float("nan")
    summary = {
        "n_train": len(train),
        "n_test": len(test),
        "mean_angular_error_deg": float(frame["angular_error_deg"].mean()),
        "mean_nll": float(np.mean(nll)),
        "within_3sigma": [float(v) for v in report.per_axis_within_3sigma],
        "mean_mahalanobis_sq": report.mean_mahalanobis_sq,
        "mean_trace_epistemic_in": trace_in,
        "mean_trace_epistemic_out": trace_out,
        "trace_ratio_out_in": trace_out / trace_in if trace_in > 0 else float("nan"),
        "n_dispersed": int(frame["dispersed"].sum()),
        "pixel_normalization": train.normalization.model_dump(mode="json"),
        "final_train_loss": net.history[-1],
        "runtime_s": runtime,
    }
    logger.info(
        f"Hemisphere: mean error {summary['mean_angular_error_deg']:.3f} deg, mean NLL {summary['mean_nll']:.3f}, "
        f"3-sigma coverage {summary['within_3sigma']}, epistemic trace ratio {summary['trace_ratio_out_in']:.2f}"
    )
    return ExperimentReport(predictions=frame, summary=summary, runtime_s=runtime, history=net.history, net=net)


def _gradcheck_cases(rng: np.random.Generator):
    y1 = rng.normal(size=6)
    q_t = random_rotation(rng, 6)
    plain = [[LayerSpec.fc(5, 1)]]
    yield "fc", [LayerSpec.fc(4, 5)], plain, LossKind.MSE, y1, Mode.EVAL
    yield "selu", [LayerSpec.fc(4, 5), LayerSpec.selu(5)], plain, LossKind.MSE, y1, Mode.EVAL
    yield "relu", [LayerSpec.fc(4, 5), LayerSpec.relu(5)], plain, LossKind.MSE, y1, Mode.EVAL
    yield "dropout", [LayerSpec.fc(4, 5), LayerSpec.dropout(5, 0.2)], plain, LossKind.MSE, y1, Mode.EVAL
    # masks frozen by seed, so the train-time scaling is what gets differentiated
    yield "dropout_train", [LayerSpec.fc(4, 5), LayerSpec.dropout(5, 0.2)], plain, LossKind.MSE, y1, Mode.TRAIN
    yield "residual_fc_block", [LayerSpec.fc(4, 5), LayerSpec.residual(5)], plain, LossKind.MSE, y1, Mode.EVAL
    sigma_head = [LayerSpec.fc(5, 1)]
    mean_head = [LayerSpec.fc(5, 5), LayerSpec.selu(5), LayerSpec.fc(5, 1)]
    body = [LayerSpec.fc(4, 5), LayerSpec.selu(5)]
    yield "gaussian_nll_1d", body, [sigma_head, mean_head, mean_head], LossKind.GAUSSIAN_NLL_1D, y1, Mode.EVAL
    cov_head = [LayerSpec.fc(5, 3)]
    quat_head = [LayerSpec.fc(5, 5), LayerSpec.selu(5), LayerSpec.fc(5, 4)]
    yield "so3_nll", body, [cov_head, quat_head, quat_head], LossKind.SO3_NLL, q_t, Mode.EVAL


def run_gradient_checks(
    seed: int = 0, step_size: float = 1e-5, fraction: float = 0.05, tolerance: float = 1e-4
) -> pd.DataFrame:
    """Backprop against central differences for every layer kind and every loss."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(6, 4))
    rows = []
    for name, body, heads, loss, target, mode in _gradcheck_cases(rng):
        model = MlpModel(body, heads, seed=int(rng.integers(0, 2**31 - 1)))
        error = grad_check(
            model,
            loss_for(loss),
            x,
            target,
            fraction=fraction,
            step_size=step_size,
            rng=rng,
            mode=mode,
            mask_seed=int(rng.integers(0, 2**31 - 1)),
        )
        rows.append(
            {"case": name, "mode": mode.value, "n_params": model.n_params, "max_error": error, "passed": bool(error < tolerance)}
        )
        logger.info(f"Gradient check {name}: max error {error:.3e}")
    return pd.DataFrame(rows)
