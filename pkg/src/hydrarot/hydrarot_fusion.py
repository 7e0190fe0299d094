"""Pose-graph relaxation of SE(3) odometry with SO(3)-only rotation measurements.

Poses are ``T_{k,w}`` (world into frame k). An odometry edge from node 1 to
node 2 measures ``T_{2,1}`` with ``T_{2,w} = T_{2,1} T_{1,w}``; a rotation edge
measures only its rotation. Fusion runs pair by pair along the chain, holding
the earlier pose fixed and solving for the later one by Gauss-Newton on a left
perturbation ``T_2 <- Exp(delta) T_2``.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular

from .hydrarot_error import ErrorType, HydrarotException
from .hydrarot_result import FusePairResult, RelaxResult
from .hydrarot_so3 import (
    PoseSE3,
    _hamilton,
    exp_so3,
    log_so3,
    quat_inv,
    quat_mul,
    quat_normalize,
    quat_rotate,
    se3_compose,
    se3_exp,
    se3_inverse,
    se3_log,
)
from .hydrarot_uncertainty import validate_cov

logger = logging.getLogger(__name__)

PSD_TOL = 1e-10
MAX_DAMPING = 1e5


def _validate_cov6(cov) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (6, 6):
        raise HydrarotException.of(ErrorType.INVALID_INPUT, "Odometry covariance must be 6x6", shape=list(cov.shape))
    if np.abs(cov - cov.T).max() > PSD_TOL or np.linalg.eigvalsh(cov).min() < -PSD_TOL:
        raise HydrarotException.of(ErrorType.SINGULAR_COVARIANCE, "Odometry covariance is not symmetric PSD")
    return cov


@dataclass(frozen=True, eq=False)
class OdomEdge:
    source: int
    target: int
    measurement: PoseSE3
    covariance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "covariance", _validate_cov6(self.covariance))


@dataclass(frozen=True, eq=False)
class RotEdge:
    source: int
    target: int
    rotation: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", quat_normalize(self.rotation))
        object.__setattr__(self, "covariance", validate_cov(self.covariance, "rotation edge covariance"))


@dataclass
class PoseGraph:
    nodes: Dict[int, PoseSE3]
    odom: List[OdomEdge] = field(default_factory=list)
    rot: List[RotEdge] = field(default_factory=list)
    fixed: Optional[int] = None

    def __post_init__(self):
        if not self.nodes:
            raise HydrarotException.of(ErrorType.INVALID_INPUT, "Pose graph has no nodes")
        if self.fixed is None:
            self.fixed = min(self.nodes)
        if self.fixed not in self.nodes:
            raise HydrarotException.of(ErrorType.INVALID_INPUT, "Fixed node is not in the graph", fixed=self.fixed)
        for edge in list(self.odom) + list(self.rot):
            if edge.source not in self.nodes or edge.target not in self.nodes:
                raise HydrarotException.of(
                    ErrorType.INVALID_INPUT, "Edge references an unknown node", source=edge.source, target=edge.target
                )

    def odom_edge(self, source: int, target: int) -> Optional[OdomEdge]:
        return next((e for e in self.odom if e.source == source and e.target == target), None)

    def rot_edge(self, source: int, target: int) -> Optional[RotEdge]:
        return next((e for e in self.rot if e.source == source and e.target == target), None)


class SolverOptions(BaseModel):
    max_iter: int = Field(default=50, ge=1)
    xtol: float = Field(default=1e-10, gt=0)
    fd_step: float = Field(default=1e-7, gt=0)
    damping: float = Field(default=1e-8, gt=0)

    model_config = ConfigDict(extra="ignore")


class OdometryNoise(BaseModel):
    """Simulation noise. ``cov_rot_vo`` / ``cov_rot_hn`` (rad^2) replace the isotropic scalar sigmas when given."""

    sigma_trans: float = Field(default=0.05, ge=0)
    sigma_rot_vo_deg: float = Field(default=0.5, ge=0)
    sigma_rot_hn_deg: float = Field(default=0.15, ge=0)
    rot_bias_deg: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    cov_rot_vo: Optional[List[List[float]]] = None
    cov_rot_hn: Optional[List[List[float]]] = None

    model_config = ConfigDict(extra="ignore")

    @field_validator("cov_rot_vo", "cov_rot_hn")
    @classmethod
    def validate_rotation_covariance(cls, v, info):
        if v is None:
            return v
        try:
            cov = validate_cov(v, info.field_name)
        except HydrarotException as e:
            raise ValueError(str(e))
        if cov.shape != (3, 3) or np.linalg.eigvalsh(cov).min() <= 0.0:
            raise ValueError(f"{info.field_name} must be a positive definite 3x3 matrix")
        return v

    @property
    def odom_covariance(self) -> np.ndarray:
        cov = np.zeros((6, 6))
        cov[:3, :3] = np.eye(3) * self.sigma_trans**2
        if self.cov_rot_vo is not None:
            cov[3:, 3:] = np.asarray(self.cov_rot_vo, dtype=float)
        else:
            cov[3:, 3:] = np.eye(3) * np.radians(self.sigma_rot_vo_deg) ** 2
        return cov

    @property
    def rot_covariance(self) -> np.ndarray:
        if self.cov_rot_hn is not None:
            return np.asarray(self.cov_rot_hn, dtype=float)
        return np.eye(3) * np.radians(self.sigma_rot_hn_deg) ** 2


def pair_residuals(t1: PoseSE3, t2: PoseSE3, odom: OdomEdge, rot: RotEdge) -> Tuple[np.ndarray, np.ndarray]:
    """``Log((T2 T1^-1) T21^-1)`` and ``Log((R2 R1^T) R21^T)``."""
    if odom is None or rot is None:
        raise HydrarotException.of(ErrorType.MISSING_EDGE, "Both an odometry and a rotation edge are required")
    if (odom.source, odom.target) != (rot.source, rot.target):
        raise HydrarotException.of(
            ErrorType.MISSING_EDGE,
            "Edges do not connect the same pose pair",
            odom=[odom.source, odom.target],
            rot=[rot.source, rot.target],
        )
    relative = se3_compose(t2, se3_inverse(t1))
    d_xi = se3_log(se3_compose(relative, se3_inverse(odom.measurement)))
    d_phi = log_so3(_hamilton(relative.rotation, quat_inv(rot.rotation)))
    return d_xi, d_phi


def _sqrt_info(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise HydrarotException.of(ErrorType.SINGULAR_COVARIANCE, "Covariance is not positive definite")


def _perturb(pose: PoseSE3, delta: np.ndarray) -> PoseSE3:
    return se3_compose(se3_exp(delta), pose)


def fuse_pair(
    t1: PoseSE3, t2: PoseSE3, odom: OdomEdge, rot: RotEdge, options: Optional[SolverOptions] = None
) -> FusePairResult:
    """Minimise ``d_xi^T S_vo^-1 d_xi + d_phi^T S_hn^-1 d_phi`` over ``T2`` with ``T1`` held fixed."""
    options = options or SolverOptions()
    l_vo = _sqrt_info(odom.covariance)
    l_hn = _sqrt_info(rot.covariance)

    def whitened(pose: PoseSE3) -> np.ndarray:
        d_xi, d_phi = pair_residuals(t1, pose, odom, rot)
        return np.concatenate([solve_triangular(l_vo, d_xi, lower=True), solve_triangular(l_hn, d_phi, lower=True)])

    pose = t2
    r = whitened(pose)
    cost = float(r @ r)
    costs = [cost]
    h = options.fd_step
    for iteration in range(1, options.max_iter + 1):
        jac = np.empty((9, 6))
        for j in range(6):
            e = np.zeros(6)
            e[j] = h
            jac[:, j] = (whitened(_perturb(pose, e)) - whitened(_perturb(pose, -e))) / (2.0 * h)
        hessian = jac.T @ jac
        gradient = jac.T @ r

        damping = 0.0
        while True:
            try:
                delta = -cho_solve(cho_factor(hessian + damping * np.eye(6)), gradient)
            except (LinAlgError, ValueError):
                if damping >= options.damping:
                    raise HydrarotException.of(
                        ErrorType.SINGULAR_NORMAL_EQUATIONS, "Normal equations are singular", iteration=iteration
                    )
                damping = options.damping
                logger.warning(f"Normal equations singular at iteration {iteration}; applying damping {damping:g}")
                continue
            candidate = _perturb(pose, delta)
            r_new = whitened(candidate)
            new_cost = float(r_new @ r_new)
            if new_cost <= cost:
                break
            damping = max(damping * 10.0, options.damping)
            if damping > MAX_DAMPING:
                # no descent left at floating-point resolution
                logger.debug(f"Cost cannot decrease further at iteration {iteration} (cost {cost:.6e})")
                return FusePairResult(pose=pose, cost=cost, iterations=iteration, costs=costs)

        pose, r, cost = candidate, r_new, new_cost
        costs.append(cost)
        step = float(np.linalg.norm(delta))
        logger.debug(f"Gauss-Newton iteration {iteration}: cost {cost:.6e}, |delta| {step:.3e}")
        if step < options.xtol:
            return FusePairResult(pose=pose, cost=cost, iterations=iteration, costs=costs)
    raise HydrarotException.of(
        ErrorType.NO_CONVERGENCE, "Gauss-Newton did not converge", max_iter=options.max_iter, cost=cost
    )


def relax_graph(graph: PoseGraph, options: Optional[SolverOptions] = None) -> RelaxResult:
    """Fuse consecutive pairs in node order starting from the fixed node; pairs without a rotation edge dead-reckon."""
    ids = sorted(graph.nodes)
    if ids[0] != graph.fixed:
        raise HydrarotException.of(
            ErrorType.INVALID_INPUT, "The fixed node must start the chain", fixed=graph.fixed, first=ids[0]
        )
    poses = {ids[0]: graph.nodes[ids[0]]}
    costs: Dict[int, float] = {}
    fused = 0
    for source, target in zip(ids, ids[1:]):
        odom = graph.odom_edge(source, target)
        if odom is None:
            raise HydrarotException.of(ErrorType.MISSING_EDGE, "Chain has no odometry edge", source=source, target=target)
        predicted = se3_compose(odom.measurement, poses[source])
        rot = graph.rot_edge(source, target)
        if rot is None:
            poses[target] = predicted
            continue
        result = fuse_pair(poses[source], predicted, odom, rot, options)
        poses[target] = result.pose
        costs[target] = result.cost
        fused += 1
    logger.info(f"Relaxed chain of {len(ids)} poses, fused {fused} pairs")
    return RelaxResult(poses=poses, costs=costs, fused_pairs=fused)


def simulate_trajectory(
    n_poses: int, step_length: float, rng: np.random.Generator, turn_std_deg: float = 2.0, tilt_std_deg: float = 0.2
) -> List[PoseSE3]:
    """Ground truth ``T_{k,w}`` for a vehicle driving forward with random yaw turns and slight tilt."""
    if n_poses < 2:
        raise HydrarotException.of(ErrorType.TOO_FEW_SAMPLES, "A trajectory needs at least two poses", n_poses=n_poses)
    q_wk = np.array([1.0, 0.0, 0.0, 0.0])
    position = np.zeros(3)
    poses = []
    for _ in range(n_poses):
        inv = quat_inv(q_wk)
        poses.append(PoseSE3(inv, -quat_rotate(inv, position)))
        turn = np.radians([rng.normal(0.0, tilt_std_deg), rng.normal(0.0, tilt_std_deg), rng.normal(0.0, turn_std_deg)])
        q_wk = quat_mul(q_wk, exp_so3(turn))
        position = position + quat_rotate(q_wk, np.array([step_length, 0.0, 0.0]))
    return poses


def simulate_odometry(
    ground_truth: Sequence[PoseSE3], noise: OdometryNoise, rng: np.random.Generator
) -> Tuple[List[OdomEdge], List[RotEdge]]:
    """Noisy relative measurements between consecutive poses, reported with their sampling covariances."""
    if len(ground_truth) < 2:
        raise HydrarotException.of(ErrorType.TOO_FEW_SAMPLES, "At least two poses are required", count=len(ground_truth))
    cov_vo = noise.odom_covariance
    cov_hn = noise.rot_covariance
    bias = exp_so3(np.radians(noise.rot_bias_deg))
    odom, rot = [], []
    for k in range(len(ground_truth) - 1):
        truth = se3_compose(ground_truth[k + 1], se3_inverse(ground_truth[k]))
        xi = rng.multivariate_normal(np.zeros(6), cov_vo)
        odom.append(OdomEdge(k, k + 1, se3_compose(se3_exp(xi), truth), cov_vo))
        eps = rng.multivariate_normal(np.zeros(3), cov_hn)
        rot.append(RotEdge(k, k + 1, quat_mul(bias, quat_mul(exp_so3(eps), truth.rotation)), cov_hn))
    return odom, rot


def dead_reckon(start: PoseSE3, odom: Sequence[OdomEdge]) -> List[PoseSE3]:
    poses = [start]
    for edge in odom:
        poses.append(se3_compose(edge.measurement, poses[-1]))
    return poses
