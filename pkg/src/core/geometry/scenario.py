"""
Scenario Geometry
Array lattices, orientations and the angle convention shared by every stage

Angles follow the spherical convention u = (sin t cos p, sin t sin p, cos t):
elevation t is measured from the array boresight (local +z) and azimuth p
from the local +x axis (the array's in-plane axis), wrapped to (-pi, pi].
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist

from src.core.errors import GeometryError
from src.infrastructure.settings import ArrayConfig, ScenarioConfig

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0
ORTHONORMAL_TOLERANCE = 1e-12
WAVELENGTH_TOLERANCE = 1e-6
MIN_SEPARATION_M = 1e-12


class ArrayId(str, Enum):
    TX1 = "tx1"
    TX2 = "tx2"
    RX = "rx"


TX_ARRAYS = (ArrayId.TX1, ArrayId.TX2)

PointLike = Union[Sequence[float], np.ndarray]


def wrap_to_pi(angle):
    """Wrap radians to (-pi, pi]; accepts scalars or arrays"""
    wrapped = np.mod(np.asarray(angle, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    wrapped = np.where(wrapped <= -np.pi, np.pi, wrapped)
    if wrapped.ndim == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class SphericalDirection:
    """Elevation from boresight and azimuth from the in-plane axis, in radians"""
    elevation_theta: float
    azimuth_phi: float

    def __post_init__(self):
        if not (math.isfinite(self.elevation_theta) and math.isfinite(self.azimuth_phi)):
            raise GeometryError(
                f"direction angles must be finite, got ({self.elevation_theta}, {self.azimuth_phi})"
            )
        object.__setattr__(self, "elevation_theta", float(self.elevation_theta))
        object.__setattr__(self, "azimuth_phi", wrap_to_pi(self.azimuth_phi))

    @classmethod
    def from_degrees(cls, elevation_deg: float, azimuth_deg: float) -> "SphericalDirection":
        return cls(math.radians(elevation_deg), math.radians(azimuth_deg))

    @property
    def elevation_deg(self) -> float:
        return math.degrees(self.elevation_theta)

    @property
    def azimuth_deg(self) -> float:
        return math.degrees(self.azimuth_phi)

    def within(self, theta_min: float, theta_max: float) -> bool:
        return theta_min <= self.elevation_theta <= theta_max


def direction_to_unit_vector(direction: SphericalDirection) -> np.ndarray:
    theta, phi = direction.elevation_theta, direction.azimuth_phi
    return np.array([
        math.sin(theta) * math.cos(phi),
        math.sin(theta) * math.sin(phi),
        math.cos(theta),
    ])


def unit_vector_to_direction(vector: PointLike) -> SphericalDirection:
    """Inverse of direction_to_unit_vector; the input need not be normalized"""
    vx, vy, vz = (float(c) for c in vector)
    if math.hypot(vx, vy, vz) < MIN_SEPARATION_M:
        raise GeometryError("cannot take the direction of a zero vector")
    return SphericalDirection(math.atan2(math.hypot(vx, vy), vz), math.atan2(vy, vx))


@dataclass(frozen=True)
class ElementGrid:
    """Rectangular lattice centred on the array origin, row-major order"""
    rows: int
    cols: int
    spacing: float

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise GeometryError(f"grid needs at least one row and column, got {self.rows}x{self.cols}")
        if not self.spacing > 0:
            raise GeometryError(f"element spacing must be positive, got {self.spacing}")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    @cached_property
    def element_positions(self) -> np.ndarray:
        """(rows*cols, 3) local coordinates; z is zero on the array plane"""
        row, col = np.divmod(np.arange(self.size), self.cols)
        positions = np.zeros((self.size, 3))
        positions[:, 0] = (col - (self.cols - 1) / 2.0) * self.spacing
        positions[:, 1] = (row - (self.rows - 1) / 2.0) * self.spacing
        return positions


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    grid: ElementGrid
    origin: np.ndarray
    boresight: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    in_plane_axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    name: str = ""

    def __post_init__(self):
        for attr in ("origin", "boresight", "in_plane_axis"):
            value = np.asarray(getattr(self, attr), dtype=float).reshape(3)
            value.setflags(write=False)
            object.__setattr__(self, attr, value)

        if abs(np.linalg.norm(self.boresight) - 1.0) > ORTHONORMAL_TOLERANCE:
            raise GeometryError(f"{self.name or 'array'} boresight is not unit length: {self.boresight}")
        if abs(np.linalg.norm(self.in_plane_axis) - 1.0) > ORTHONORMAL_TOLERANCE:
            raise GeometryError(f"{self.name or 'array'} in-plane axis is not unit length: {self.in_plane_axis}")
        if abs(float(np.dot(self.boresight, self.in_plane_axis))) > ORTHONORMAL_TOLERANCE:
            raise GeometryError(f"{self.name or 'array'} boresight and in-plane axis are not orthogonal")

    @property
    def size(self) -> int:
        return self.grid.size

    @cached_property
    def rotation(self) -> np.ndarray:
        """Local-to-world rotation; columns are the local x, y, z axes"""
        y_axis = np.cross(self.boresight, self.in_plane_axis)
        return np.column_stack([self.in_plane_axis, y_axis, self.boresight])

    @cached_property
    def local_positions(self) -> np.ndarray:
        return self.grid.element_positions

    @cached_property
    def world_positions(self) -> np.ndarray:
        return self.origin + self.local_positions @ self.rotation.T

    def local_to_world_direction(self, vector: PointLike) -> np.ndarray:
        return self.rotation @ np.asarray(vector, dtype=float)

    def world_to_local_direction(self, vector: PointLike) -> np.ndarray:
        return self.rotation.T @ np.asarray(vector, dtype=float)

    def to_world(self, direction: SphericalDirection) -> SphericalDirection:
        """Re-express a direction measured in this array's frame in the world frame"""
        return unit_vector_to_direction(self.local_to_world_direction(direction_to_unit_vector(direction)))

    def subarray(self, rows: int, cols: int) -> Tuple["ArrayGeometry", np.ndarray]:
        """
        Centred sub-lattice with the same pitch and orientation

        Returns the sub-geometry and the indices of its elements in this
        array's row-major order. When the size difference is odd the
        sub-array origin moves by half a pitch so element positions coincide.
        """
        if rows > self.grid.rows or cols > self.grid.cols:
            raise GeometryError(
                f"subarray {rows}x{cols} does not fit in {self.grid.rows}x{self.grid.cols}"
            )
        row_start = (self.grid.rows - rows) // 2
        col_start = (self.grid.cols - cols) // 2
        row_idx = np.arange(row_start, row_start + rows)
        col_idx = np.arange(col_start, col_start + cols)
        indices = (row_idx[:, None] * self.grid.cols + col_idx[None, :]).ravel()

        offset = self.local_positions[indices].mean(axis=0)
        sub = ArrayGeometry(
            grid=ElementGrid(rows, cols, self.grid.spacing),
            origin=self.origin + self.rotation @ offset,
            boresight=self.boresight,
            in_plane_axis=self.in_plane_axis,
            name=self.name,
        )
        return sub, indices


@dataclass(frozen=True, eq=False)
class Scenario:
    tx1: ArrayGeometry
    tx2: ArrayGeometry
    rx: ArrayGeometry
    wavelength: float
    frequency: float
    far_field_violations: int = 0

    @property
    def baseline_d(self) -> float:
        return float(np.linalg.norm(self.tx2.origin - self.tx1.origin))

    @property
    def far_field_ok(self) -> bool:
        return self.far_field_violations == 0

    @property
    def far_field_threshold(self) -> float:
        return far_field_distance(self.tx1.grid.spacing, self.wavelength)

    @property
    def wavenumber(self) -> float:
        return 2.0 * np.pi / self.wavelength

    def array(self, array_id: Union[ArrayId, str]) -> ArrayGeometry:
        try:
            return getattr(self, ArrayId(array_id).value)
        except ValueError:
            raise GeometryError(f"unknown array id '{array_id}'")


def far_field_distance(aperture: float, wavelength: float) -> float:
    """Single-element far-field boundary 2D^2/lambda"""
    return 2.0 * aperture ** 2 / wavelength


def _build_array(name: str, config: ArrayConfig) -> ArrayGeometry:
    try:
        return ArrayGeometry(
            grid=ElementGrid(config.rows, config.cols, config.spacing_m),
            origin=np.array(config.origin, dtype=float),
            boresight=np.array(config.boresight, dtype=float),
            in_plane_axis=np.array(config.in_plane_axis, dtype=float),
            name=name,
        )
    except GeometryError as e:
        raise GeometryError(f"{name}: {e.message}")


def count_far_field_violations(tx: ArrayGeometry, rx: ArrayGeometry, wavelength: float) -> int:
    threshold = far_field_distance(tx.grid.spacing, wavelength)
    distances = cdist(rx.world_positions, tx.world_positions)
    return int(np.count_nonzero(distances < threshold))


def build_scenario(config: ScenarioConfig) -> Scenario:
    """Materialize a validated scenario config into world-frame geometry"""
    wavelength = config.wavelength_m if config.wavelength_m is not None else SPEED_OF_LIGHT / config.frequency_hz
    mismatch = abs(wavelength * config.frequency_hz - SPEED_OF_LIGHT) / SPEED_OF_LIGHT
    if mismatch > WAVELENGTH_TOLERANCE:
        raise GeometryError(
            f"wavelength {wavelength} m is inconsistent with frequency {config.frequency_hz} Hz "
            f"(relative mismatch {mismatch:.2e})"
        )

    tx1 = _build_array(ArrayId.TX1.value, config.tx1)
    tx2 = _build_array(ArrayId.TX2.value, config.tx2)
    rx = _build_array(ArrayId.RX.value, config.rx)

    if np.linalg.norm(tx2.origin - tx1.origin) < MIN_SEPARATION_M:
        raise GeometryError("tx1 and tx2 share an origin; baseline is zero")

    violations = sum(count_far_field_violations(tx, rx, wavelength) for tx in (tx1, tx2))
    if violations:
        logger.warning(
            f"{violations} Tx/Rx element pairs are closer than the far-field distance "
            f"{far_field_distance(config.tx1.spacing_m, wavelength):.4g} m"
        )

    scenario = Scenario(
        tx1=tx1, tx2=tx2, rx=rx,
        wavelength=wavelength,
        frequency=config.frequency_hz,
        far_field_violations=violations,
    )
    logger.info(
        f"Scenario built: baseline {scenario.baseline_d:.3f} m, "
        f"{tx1.size}/{tx2.size}/{rx.size} elements, wavelength {wavelength:.6g} m"
    )
    return scenario


def true_direction(scenario: Scenario, from_array: Union[ArrayId, str], to_point: PointLike) -> SphericalDirection:
    """Exact direction from an array's origin to a point, in that array's frame"""
    geometry = scenario.array(from_array)
    displacement = np.asarray(to_point, dtype=float) - geometry.origin
    if np.linalg.norm(displacement) < MIN_SEPARATION_M:
        raise GeometryError(f"point coincides with the {geometry.name} origin")
    return unit_vector_to_direction(geometry.world_to_local_direction(displacement))


def place_on_sphere(origin: PointLike, distance: float, direction: SphericalDirection) -> np.ndarray:
    """World point at a range and direction from an origin"""
    if not distance > 0:
        raise GeometryError(f"placement distance must be positive, got {distance}")
    return np.asarray(origin, dtype=float) + distance * direction_to_unit_vector(direction)
