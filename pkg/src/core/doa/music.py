"""
Direction of Arrival
Snapshot synthesis and 2-D MUSIC estimation on a planar (sub)array
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg, optimize

from src.core.errors import DoaError
from src.core.geometry.scenario import (
    ArrayGeometry,
    SphericalDirection,
    direction_to_unit_vector,
)
from src.core.resonance.resonator import ResonanceState
from src.infrastructure.settings import DoaConfig

logger = logging.getLogger(__name__)

HERMITIAN_TOLERANCE = 1e-10
BOUNDARY_PENALTY = 1.0e3


@dataclass(frozen=True, eq=False)
class SteeringVector:
    values: np.ndarray

    def __post_init__(self):
        if not np.allclose(np.abs(self.values), 1.0, rtol=0.0, atol=1e-12):
            raise DoaError("steering vector entries must have unit modulus")


@dataclass(frozen=True, eq=False)
class SnapshotBatch:
    """M x T complex samples of the echo at one transmitter"""
    snapshots: np.ndarray
    noise_power: float
    source_count: int = 1

    def __post_init__(self):
        if self.noise_power < 0:
            raise DoaError(f"noise power must be non-negative, got {self.noise_power}")
        if self.snapshots.ndim != 2 or self.snapshots.shape[1] < 1:
            raise DoaError(f"snapshot batch must be a non-empty M x T matrix, got {self.snapshots.shape}")

    @property
    def element_count(self) -> int:
        return self.snapshots.shape[0]

    @property
    def snapshot_count(self) -> int:
        return self.snapshots.shape[1]


@dataclass(frozen=True)
class DoaEstimate:
    direction: SphericalDirection
    peak_value: float
    refined: bool


@dataclass(frozen=True, eq=False)
class SubspaceSplit:
    signal_basis: np.ndarray
    noise_basis: np.ndarray
    eigenvalues: np.ndarray


@dataclass(frozen=True, eq=False)
class SearchGrid:
    """Coarse (theta, phi) grid with its steering matrix, reusable across trials"""
    theta_grid: np.ndarray
    phi_grid: np.ndarray
    steering: np.ndarray
    theta_bounds: Tuple[float, float]
    coarse_step: float


@dataclass(frozen=True, eq=False)
class MusicSpectrum:
    theta_grid: np.ndarray
    phi_grid: np.ndarray
    pseudospectrum: np.ndarray
    peak: DoaEstimate

    def to_db(self) -> np.ndarray:
        return 10.0 * np.log10(self.pseudospectrum)


def _steering_matrix(local_positions: np.ndarray, unit_vectors: np.ndarray, wavelength: float) -> np.ndarray:
    """M x G matrix of exp(-j k r_m . u_g)"""
    k = 2.0 * np.pi / wavelength
    return np.exp(-1j * k * (local_positions @ unit_vectors.T))


def steering_vector(geometry: ArrayGeometry, direction: SphericalDirection, wavelength: float) -> SteeringVector:
    if not wavelength > 0:
        raise DoaError(f"wavelength must be positive, got {wavelength}")
    unit = direction_to_unit_vector(direction)[None, :]
    return SteeringVector(_steering_matrix(geometry.local_positions, unit, wavelength)[:, 0])


def synthesize_snapshots(
    state: Optional[ResonanceState],
    geometry: ArrayGeometry,
    true_dir: SphericalDirection,
    echo_power: Optional[float],
    noise_power: float,
    wavelength: float,
    snapshot_count: int = 256,
    seed: int = 0,
    source_count: int = 1,
) -> SnapshotBatch:
    """
    x_t = sqrt(P_echo) s_t a(true_dir) + n_t

    s_t is unit-power circular complex Gaussian and n_t is white circular
    Gaussian with per-element variance noise_power. When echo_power is None
    the per-element echo level of the resonance state is used.
    """
    if snapshot_count < 1:
        raise DoaError(f"snapshot count must be >= 1, got {snapshot_count}")
    if echo_power is None:
        if state is None:
            raise DoaError("either an echo power or a resonance state is required")
        echo_power = state.echo_power()
    if echo_power < 0 or noise_power < 0:
        raise DoaError(f"powers must be non-negative (echo {echo_power}, noise {noise_power})")

    m = geometry.size
    if snapshot_count < m:
        logger.debug(f"{snapshot_count} snapshots for {m} elements; sample covariance is rank deficient")

    rng = np.random.default_rng(seed)
    symbols = (rng.standard_normal(snapshot_count) + 1j * rng.standard_normal(snapshot_count)) / math.sqrt(2.0)
    noise = (rng.standard_normal((m, snapshot_count)) + 1j * rng.standard_normal((m, snapshot_count))) * math.sqrt(noise_power / 2.0)
    alpha = steering_vector(geometry, true_dir, wavelength).values

    snapshots = math.sqrt(echo_power) * np.outer(alpha, symbols) + noise
    return SnapshotBatch(snapshots=snapshots, noise_power=noise_power, source_count=source_count)


def sample_covariance(batch: SnapshotBatch) -> np.ndarray:
    x = batch.snapshots
    if x.size == 0:
        raise DoaError("cannot form a covariance from an empty batch")
    r = x @ x.conj().T / x.shape[1]
    return 0.5 * (r + r.conj().T)


def subspace_split(r: np.ndarray, source_count: int = 1) -> SubspaceSplit:
    """Eigen-split of a Hermitian covariance, eigenvalues in descending order"""
    m = r.shape[0]
    if r.shape != (m, m):
        raise DoaError(f"covariance must be square, got {r.shape}")
    if not 1 <= source_count < m:
        raise DoaError(f"source count must satisfy 1 <= K < M, got K={source_count}, M={m}")
    asymmetry = float(np.max(np.abs(r - r.conj().T)))
    if asymmetry > HERMITIAN_TOLERANCE * max(1.0, float(np.max(np.abs(r)))):
        raise DoaError(f"covariance is not Hermitian (max asymmetry {asymmetry:.3g})")

    eigenvalues, vectors = linalg.eigh(r)
    eigenvalues, vectors = eigenvalues[::-1], vectors[:, ::-1]
    return SubspaceSplit(
        signal_basis=vectors[:, :source_count],
        noise_basis=vectors[:, source_count:],
        eigenvalues=eigenvalues,
    )


def _uv_to_direction(u: float, v: float) -> SphericalDirection:
    radius = min(math.hypot(u, v), 1.0)
    return SphericalDirection(math.asin(radius), math.atan2(v, u))


def build_search_grid(
    geometry: ArrayGeometry,
    wavelength: float,
    theta_bounds: Tuple[float, float] = (0.0, math.radians(80.0)),
    coarse_step: float = math.radians(0.5),
) -> SearchGrid:
    theta_min, theta_max = theta_bounds
    if not (coarse_step > 0 and theta_max > theta_min):
        raise DoaError("search grid is empty")
    n_theta = int(round((theta_max - theta_min) / coarse_step)) + 1
    n_phi = int(round(2.0 * math.pi / coarse_step))
    theta_grid = np.linspace(theta_min, theta_max, n_theta)
    phi_grid = -math.pi + 2.0 * math.pi * np.arange(1, n_phi + 1) / n_phi

    tt, pp = np.meshgrid(theta_grid, phi_grid, indexing="ij")
    units = np.column_stack([
        (np.sin(tt) * np.cos(pp)).ravel(),
        (np.sin(tt) * np.sin(pp)).ravel(),
        np.cos(tt).ravel(),
    ])
    steering = _steering_matrix(geometry.local_positions, units, wavelength)
    return SearchGrid(theta_grid, phi_grid, steering, (theta_min, theta_max), coarse_step)


def _projector(noise_basis: np.ndarray):
    """Denominator a^H U_N U_N^H a for a batch of steering columns"""
    m, n_noise = noise_basis.shape
    if n_noise > m / 2:
        signal_basis = linalg.null_space(noise_basis.conj().T)
        return lambda a: m - np.sum(np.abs(signal_basis.conj().T @ a) ** 2, axis=0)
    return lambda a: np.sum(np.abs(noise_basis.conj().T @ a) ** 2, axis=0)


def music_spectrum(
    geometry: ArrayGeometry,
    noise_basis: np.ndarray,
    wavelength: float,
    theta_bounds: Tuple[float, float] = (0.0, math.radians(80.0)),
    coarse_step: float = math.radians(0.5),
    refine_step: float = math.radians(0.01),
    search_grid: Optional[SearchGrid] = None,
) -> MusicSpectrum:
    """
    Pseudospectrum 1 / (a^H U_N U_N^H a) on the coarse grid, then a local
    Nelder-Mead refinement of the peak in direction-cosine space (u, v)
    """
    m = geometry.size
    if noise_basis.shape[0] != m or noise_basis.shape[1] < 1:
        raise DoaError(f"noise basis {noise_basis.shape} does not match a {m}-element array")
    grid = search_grid or build_search_grid(geometry, wavelength, theta_bounds, coarse_step)
    denominator = _projector(noise_basis)
    floor = np.finfo(float).eps * m

    coarse = np.maximum(denominator(grid.steering), floor).reshape(len(grid.theta_grid), len(grid.phi_grid))
    spectrum = 1.0 / coarse
    i_theta, i_phi = np.unravel_index(int(np.argmin(coarse)), coarse.shape)
    theta0, phi0 = float(grid.theta_grid[i_theta]), float(grid.phi_grid[i_phi])
    coarse_peak = SphericalDirection(theta0, phi0)

    theta_min, theta_max = grid.theta_bounds
    r_min, r_max = math.sin(theta_min), math.sin(theta_max)
    positions = geometry.local_positions

    def objective(uv: np.ndarray) -> float:
        u, v = float(uv[0]), float(uv[1])
        radius = math.hypot(u, v)
        clamped = min(max(radius, r_min), r_max)
        if radius > 0 and clamped != radius:
            u, v = u * clamped / radius, v * clamped / radius
        w = math.sqrt(max(1.0 - u * u - v * v, 0.0))
        alpha = _steering_matrix(positions, np.array([[u, v, w]]), wavelength)
        return float(denominator(alpha)[0]) + BOUNDARY_PENALTY * m * (radius - clamped) ** 2

    x0 = np.array([math.sin(theta0) * math.cos(phi0), math.sin(theta0) * math.sin(phi0)])
    h = math.sin(grid.coarse_step)
    result = optimize.minimize(
        objective,
        x0,
        method="Nelder-Mead",
        options={
            "initial_simplex": np.array([x0, x0 + [h, 0.0], x0 + [0.0, h]]),
            "xatol": math.sin(refine_step) * 1e-4,
            "fatol": floor,
            "maxiter": 4000,
        },
    )

    peak_den = coarse[i_theta, i_phi]
    refined = bool(result.fun <= peak_den)
    if refined:
        direction = _uv_to_direction(float(result.x[0]), float(result.x[1]))
        theta = min(max(direction.elevation_theta, theta_min), theta_max)
        direction = SphericalDirection(theta, direction.azimuth_phi)
        peak_den = max(float(result.fun), floor)
    else:
        direction = coarse_peak

    peak = DoaEstimate(direction=direction, peak_value=1.0 / peak_den, refined=refined)
    return MusicSpectrum(grid.theta_grid, grid.phi_grid, spectrum, peak)


def estimate_doa(
    batch: SnapshotBatch,
    geometry: ArrayGeometry,
    wavelength: float,
    source_count: int = 1,
    config: Optional[DoaConfig] = None,
    search_grid: Optional[SearchGrid] = None,
) -> DoaEstimate:
    config = config or DoaConfig()
    if batch.element_count != geometry.size:
        raise DoaError(f"batch has {batch.element_count} channels, array has {geometry.size} elements")
    covariance = sample_covariance(batch)
    split = subspace_split(covariance, source_count)
    spectrum = music_spectrum(
        geometry,
        split.noise_basis,
        wavelength,
        theta_bounds=(math.radians(config.theta_min_deg), math.radians(config.theta_max_deg)),
        coarse_step=math.radians(config.coarse_step_deg),
        refine_step=math.radians(config.refine_step_deg),
        search_grid=search_grid,
    )
    return spectrum.peak


def angular_error(a: SphericalDirection, b: SphericalDirection) -> float:
    """Great-circle angle between two directions, in degrees"""
    ua, ub = direction_to_unit_vector(a), direction_to_unit_vector(b)
    return math.degrees(math.atan2(float(np.linalg.norm(np.cross(ua, ub))), float(ua @ ub)))
