"""
Triangulation
Receiver position from two world-frame DOAs and the known Tx baseline
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Tuple

import numpy as np

from src.core.errors import TriangulationError
from src.core.geometry.scenario import PointLike, SphericalDirection, direction_to_unit_vector

logger = logging.getLogger(__name__)

MIN_INTERIOR_ANGLE = 1e-9
MIN_APEX_SINE = 1e-6
NEAR_DEGENERATE_SINE = 1e-3
DEFAULT_SKEW_TOLERANCE_M = 0.01


class ConditionFlag(str, Enum):
    OK = "ok"
    NEAR_DEGENERATE = "near_degenerate"


@dataclass(frozen=True, eq=False)
class TriangulationInput:
    """DOAs are expressed in the world frame"""
    doa1: SphericalDirection
    doa2: SphericalDirection
    tx1_origin: np.ndarray
    tx2_origin: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tx1_origin", np.asarray(self.tx1_origin, dtype=float).reshape(3))
        object.__setattr__(self, "tx2_origin", np.asarray(self.tx2_origin, dtype=float).reshape(3))
        if not self.baseline_d > 0:
            raise TriangulationError("tx1 and tx2 origins coincide; baseline is zero")

    @property
    def baseline_d(self) -> float:
        return float(np.linalg.norm(self.tx2_origin - self.tx1_origin))

    @property
    def baseline_unit(self) -> np.ndarray:
        return (self.tx2_origin - self.tx1_origin) / self.baseline_d


@dataclass(frozen=True, eq=False)
class PositionEstimate:
    coordinates: np.ndarray
    range_r1: float
    interior_angles: Tuple[float, float]
    condition_flag: ConditionFlag = ConditionFlag.OK
    skew_distance: float = 0.0


def _vector_angle(a: np.ndarray, b: np.ndarray) -> float:
    return math.atan2(float(np.linalg.norm(np.cross(a, b))), float(a @ b))


def interior_angles(inp: TriangulationInput) -> Tuple[float, float]:
    """
    Unsigned triangle angles at Tx1 (ray vs baseline) and Tx2 (ray vs reversed baseline)
    """
    b = inp.baseline_unit
    gamma1 = _vector_angle(direction_to_unit_vector(inp.doa1), b)
    gamma2 = _vector_angle(direction_to_unit_vector(inp.doa2), -b)

    if gamma1 < MIN_INTERIOR_ANGLE or gamma2 < MIN_INTERIOR_ANGLE:
        raise TriangulationError(
            f"receiver lies on the baseline (gamma1={math.degrees(gamma1):.3g} deg, "
            f"gamma2={math.degrees(gamma2):.3g} deg)"
        )
    if gamma1 + gamma2 >= math.pi:
        raise TriangulationError(
            f"rays do not meet: gamma1 + gamma2 = {math.degrees(gamma1 + gamma2):.4f} deg"
        )
    return gamma1, gamma2


def range_from_sine_rule(gamma1: float, gamma2: float, baseline_d: float) -> float:
    """R1 = d sin(gamma2) / sin(gamma1 + gamma2)"""
    if gamma1 <= 0 or gamma2 <= 0 or gamma1 + gamma2 >= math.pi:
        raise TriangulationError(
            f"interior angles ({gamma1:.6g}, {gamma2:.6g}) rad do not form a triangle"
        )
    apex = math.sin(gamma1 + gamma2)
    if apex < MIN_APEX_SINE:
        raise TriangulationError(f"rays are nearly parallel (sin(gamma1+gamma2)={apex:.3g})")
    return baseline_d * math.sin(gamma2) / apex


def skew_distance(p1: PointLike, u1: PointLike, p2: PointLike, u2: PointLike) -> float:
    """Minimum distance between the lines p1 + t u1 and p2 + s u2"""
    p1, u1, p2, u2 = (np.asarray(v, dtype=float) for v in (p1, u1, p2, u2))
    normal = np.cross(u1, u2)
    norm = float(np.linalg.norm(normal))
    offset = p2 - p1
    if norm < 1e-12:
        return float(np.linalg.norm(np.cross(offset, u1)) / np.linalg.norm(u1))
    return abs(float(offset @ normal)) / norm


def triangulate(inp: TriangulationInput, skew_tolerance_m: float = DEFAULT_SKEW_TOLERANCE_M) -> PositionEstimate:
    gamma1, gamma2 = interior_angles(inp)
    r1 = range_from_sine_rule(gamma1, gamma2, inp.baseline_d)
    u1 = direction_to_unit_vector(inp.doa1)
    coordinates = inp.tx1_origin + r1 * u1

    skew = skew_distance(inp.tx1_origin, u1, inp.tx2_origin, direction_to_unit_vector(inp.doa2))
    flag = ConditionFlag.OK
    if skew > skew_tolerance_m or math.sin(gamma1 + gamma2) < NEAR_DEGENERATE_SINE:
        flag = ConditionFlag.NEAR_DEGENERATE
        logger.debug(f"Near-degenerate triangulation: skew {skew:.4g} m, apex angle {math.degrees(math.pi - gamma1 - gamma2):.4g} deg")

    return PositionEstimate(
        coordinates=coordinates,
        range_r1=r1,
        interior_angles=(gamma1, gamma2),
        condition_flag=flag,
        skew_distance=skew,
    )


def trial_errors(trials: Sequence[PointLike], truth: PointLike) -> Tuple[np.ndarray, np.ndarray]:
    """Per-trial error vectors (estimate - truth) and their norms"""
    estimates = np.atleast_2d(np.asarray(trials, dtype=float))
    errors = estimates - np.asarray(truth, dtype=float)
    return errors, np.linalg.norm(errors, axis=1)


def rmse(trials: Sequence[PointLike], truth: PointLike) -> float:
    if len(trials) == 0:
        raise TriangulationError("RMSE needs at least one trial")
    _, norms = trial_errors(trials, truth)
    return float(np.sqrt(np.mean(norms ** 2)))
