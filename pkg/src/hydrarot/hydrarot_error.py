from typing import Dict, Optional
from pydantic import BaseModel, field_validator
from enum import Enum


class ErrorSeverity(str, Enum):
    ERROR = "error"
    WARNING = "warning"
    INFO = "info"


class ErrorType(str, Enum):
    BEHIND_CAMERA = "behind_camera"
    CONFIGURATION = "configuration"
    DEGENERATE_NORM = "degenerate_norm"
    DIM_MISMATCH = "dim_mismatch"
    DISPERSION = "dispersion"
    EMPTY_DATASET = "empty_dataset"
    GRADIENT_MISMATCH = "gradient_mismatch"
    GRAPH_FORMAT = "graph_format"
    INVALID_INPUT = "invalid_input"
    LENGTH_MISMATCH = "length_mismatch"
    MISSING_EDGE = "missing_edge"
    NO_CONVERGENCE = "no_convergence"
    NON_UNIT_TARGET = "non_unit_target"
    NOT_A_ROTATION = "not_a_rotation"
    PROJECTION_OUT_OF_BOUNDS = "projection_out_of_bounds"
    RANK_DEFICIENT = "rank_deficient"
    SINGULAR_COVARIANCE = "singular_covariance"
    SINGULAR_NORMAL_EQUATIONS = "singular_normal_equations"
    TOO_FEW_SAMPLES = "too_few_samples"

    def __str__(self):
        return {
            ErrorType.BEHIND_CAMERA: "Point lies behind the camera",
            ErrorType.CONFIGURATION: "Invalid configuration",
            ErrorType.DEGENERATE_NORM: "Vector norm too small to normalize",
            ErrorType.DIM_MISMATCH: "Input dimension does not match the model",
            ErrorType.DISPERSION: "Rotation samples are not within pi/2 of each other",
            ErrorType.EMPTY_DATASET: "Dataset is empty",
            ErrorType.GRADIENT_MISMATCH: "Backpropagated gradient disagrees with finite differences",
            ErrorType.GRAPH_FORMAT: "Malformed pose graph file",
            ErrorType.INVALID_INPUT: "Invalid input",
            ErrorType.LENGTH_MISMATCH: "Inputs have mismatched lengths",
            ErrorType.MISSING_EDGE: "Required edge is missing",
            ErrorType.NO_CONVERGENCE: "Iterative solver did not converge",
            ErrorType.NON_UNIT_TARGET: "Target quaternion is not unit norm",
            ErrorType.NOT_A_ROTATION: "Matrix is not a rotation",
            ErrorType.PROJECTION_OUT_OF_BOUNDS: "Projected landmark falls outside the sensor",
            ErrorType.RANK_DEFICIENT: "Matrix is rank deficient",
            ErrorType.SINGULAR_COVARIANCE: "Covariance is not positive definite",
            ErrorType.SINGULAR_NORMAL_EQUATIONS: "Normal equations are singular",
            ErrorType.TOO_FEW_SAMPLES: "Too few samples",
        }[self]


class HydrarotError(BaseModel):
    error_type: ErrorType
    severity: ErrorSeverity = ErrorSeverity.ERROR
    message: str
    details: Optional[Dict] = None

    @field_validator("message")
    @classmethod
    def message_non_empty(cls, v: str) -> str:
        if not v or not v.strip():
            raise ValueError("Message cannot be empty or whitespace-only")
        return v

    @field_validator("details", mode="before")
    @classmethod
    def ensure_details_dict(cls, v: Optional[Dict]) -> Optional[Dict]:
        return v or {}


class HydrarotException(Exception):
    """Raised by library operations; carries the structured HydrarotError record."""

    def __init__(self, error: HydrarotError):
        super().__init__(f"{error.message}: {error.details}" if error.details else error.message)
        self.error = error

    @classmethod
    def of(cls, error_type: ErrorType, message: str, **details) -> "HydrarotException":
        return cls(HydrarotError(error_type=error_type, severity=ErrorSeverity.ERROR, message=message, details=details))

    @property
    def error_type(self) -> ErrorType:
        return self.error.error_type

    @property
    def details(self) -> Dict:
        return self.error.details
