import logging
from typing import List, Optional, Sequence

import numpy as np

from .hydrarot_error import ErrorType, HydrarotException
from .hydrarot_result import TrajectoryMetrics
from .hydrarot_so3 import PoseSE3, dist, quat_rotate, quat_inv, se3_compose, se3_inverse

logger = logging.getLogger(__name__)

SEGMENT_LENGTHS = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)
SEGMENT_STEP = 10


def camera_centers(poses: Sequence[PoseSE3]) -> np.ndarray:
    """World positions ``-R^T t`` of frames stored as ``T_{k,w}``."""
    return np.stack([-quat_rotate(quat_inv(p.rotation), p.translation) for p in poses])


def align_to_first(estimate: Sequence[PoseSE3], ground_truth: Sequence[PoseSE3]) -> List[PoseSE3]:
    """Rigidly move the estimate so its first frame coincides with the ground truth's."""
    correction = se3_compose(se3_inverse(estimate[0]), ground_truth[0])
    return [se3_compose(p, correction) for p in estimate]


def path_distances(centers: np.ndarray) -> np.ndarray:
    steps = np.linalg.norm(np.diff(centers, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def segment_lengths(total_length: float) -> List[float]:
    """Standard 100..800 m lengths, shrunk proportionally when the path is shorter than 800 m."""
    if total_length <= 0.0:
        return []
    scale = min(1.0, 0.9 * total_length / SEGMENT_LENGTHS[-1])
    return [length * scale for length in SEGMENT_LENGTHS]


def _last_frame(distances: np.ndarray, first: int, length: float) -> int:
    beyond = np.nonzero(distances[first:] > distances[first] + length)[0]
    return int(first + beyond[0]) if beyond.size else -1


def segment_errors(estimate: Sequence[PoseSE3], ground_truth: Sequence[PoseSE3], lengths: Sequence[float]):
    """Per-segment (translation error / length, rotation error rad / length) pairs, start frames every 10."""
    # frame-to-world transforms, the convention segment errors are defined in
    est_wk = [se3_inverse(p) for p in estimate]
    gt_wk = [se3_inverse(p) for p in ground_truth]
    distances = path_distances(camera_centers(ground_truth))
    errors = []
    for first in range(0, len(ground_truth), SEGMENT_STEP):
        for length in lengths:
            last = _last_frame(distances, first, length)
            if last < 0:
                continue
            delta_gt = se3_compose(se3_inverse(gt_wk[first]), gt_wk[last])
            delta_est = se3_compose(se3_inverse(est_wk[first]), est_wk[last])
            error = se3_compose(se3_inverse(delta_est), delta_gt)
            t_err = float(np.linalg.norm(error.translation))
            r_err = float(dist("angular", error.rotation, np.array([1.0, 0.0, 0.0, 0.0])))
            errors.append((t_err / length, r_err / length))
    return errors


def traj_metrics(estimate: Sequence[PoseSE3], ground_truth: Sequence[PoseSE3]) -> TrajectoryMetrics:
    """m-ATE over frames 1..N-1 after aligning frame 0, plus mean segment errors.

    Segment translation error is in percent, rotation error in degrees per 100 m;
    both are None when the path is too short to hold a single segment.
    """
    if len(estimate) != len(ground_truth):
        raise HydrarotException.of(
            ErrorType.LENGTH_MISMATCH, "Trajectories differ in length", estimate=len(estimate), ground_truth=len(ground_truth)
        )
    if len(ground_truth) < 2:
        raise HydrarotException.of(ErrorType.TOO_FEW_SAMPLES, "Metrics need at least two frames", count=len(ground_truth))
    aligned = align_to_first(estimate, ground_truth)
    t_err = np.linalg.norm(camera_centers(aligned) - camera_centers(ground_truth), axis=1)[1:]
    r_err = np.array([dist("angular", a.rotation, g.rotation) for a, g in zip(aligned[1:], ground_truth[1:])])

    total = float(path_distances(camera_centers(ground_truth))[-1])
    lengths = segment_lengths(total)
    segments = segment_errors(aligned, ground_truth, lengths)
    seg_t: Optional[float] = None
    seg_r: Optional[float] = None
    if segments:
        seg = np.array(segments)
        seg_t = float(seg[:, 0].mean() * 100.0)
        seg_r = float(np.degrees(seg[:, 1].mean()) * 100.0)
    metrics = TrajectoryMetrics(
        ate_translation=float(t_err.mean()),
        ate_rotation_deg=float(np.degrees(r_err.mean())),
        segment_translation_pct=seg_t,
        segment_rotation_deg_per_100m=seg_r,
        segment_lengths=lengths,
    )
    logger.debug(f"Trajectory metrics over {len(ground_truth)} frames: {metrics}")
    return metrics
