from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .hydrarot_error import ErrorType, HydrarotError
from .hydrarot_so3 import PoseSE3


@dataclass
class RotationMeanResult:
    mean: np.ndarray
    matrix: np.ndarray
    iterations: int = 0
    errors: List[HydrarotError] = field(default_factory=list)

    @property
    def dispersion_warning(self) -> bool:
        return any(e.error_type == ErrorType.DISPERSION for e in self.errors)


@dataclass
class CalibrationReport:
    per_axis_within_3sigma: np.ndarray
    mean_mahalanobis_sq: float
    mean_nll: float
    count: int


@dataclass
class FusePairResult:
    pose: PoseSE3
    cost: float
    iterations: int
    costs: List[float] = field(default_factory=list)


@dataclass
class RelaxResult:
    poses: Dict[int, PoseSE3]
    costs: Dict[int, float]
    fused_pairs: int


@dataclass
class TrajectoryMetrics:
    ate_translation: float
    ate_rotation_deg: float
    segment_translation_pct: Optional[float]
    segment_rotation_deg_per_100m: Optional[float]
    segment_lengths: List[float] = field(default_factory=list)
