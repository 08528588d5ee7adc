"""
Resonance Loop
Phase-conjugate power cycling between one transmitter array and the passive receiver

One round trip radiates the Tx amplitudes, reflects a fraction of the received
wave back after phase conjugation at the Rx, and re-amplifies the conjugated
echo at the Tx. Without clipping this is a power iteration on C^H C, so the
steady state is the dominant right singular vector of the channel.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from src.core.channel.propagation import ChannelMatrix, FREE_SPACE_IMPEDANCE, GainPattern, power_density
from src.core.errors import ResonanceError
from src.core.geometry.scenario import ArrayId, MIN_SEPARATION_M, Scenario, wrap_to_pi
from src.infrastructure.settings import FieldMapConfig

logger = logging.getLogger(__name__)

NOMINAL_MAX_GAIN_DB = 24.0
POWER_FLOOR_W = 1e-250
FIELD_CHUNK_POINTS = 2048


def conjugate_phase(phase_in, delta_phi: float = 0.0):
    """Conjugate-circuit output phase -phase_in + delta_phi, wrapped to (-pi, pi]"""
    return wrap_to_pi(-np.asarray(phase_in, dtype=float) + delta_phi)


@dataclass(frozen=True)
class AmplifierModel:
    """Per-element hard-clipping amplifier f(p) = min(G p, p_sat)"""
    gain_linear: float
    p_saturation: Optional[float] = 0.01

    def __post_init__(self):
        if not self.gain_linear > 0:
            raise ResonanceError(f"amplifier gain must be positive, got {self.gain_linear}")
        if self.p_saturation is not None and not self.p_saturation > 0:
            raise ResonanceError(f"saturation power must be positive, got {self.p_saturation}")

    @classmethod
    def from_db(cls, gain_db: float = NOMINAL_MAX_GAIN_DB, p_saturation_w: Optional[float] = 0.01) -> "AmplifierModel":
        if gain_db > NOMINAL_MAX_GAIN_DB:
            logger.warning(f"Amplifier gain {gain_db} dB exceeds the nominal {NOMINAL_MAX_GAIN_DB} dB cap")
        return cls(gain_linear=10.0 ** (gain_db / 10.0), p_saturation=p_saturation_w)

    @classmethod
    def unity_loop(cls, channel: ChannelMatrix, reflection_ratio: float) -> "AmplifierModel":
        """Linear gain 1 / (delta sigma_1^4): the dominant mode neither grows nor decays"""
        if not 0.0 < reflection_ratio <= 1.0:
            raise ResonanceError(f"reflection ratio must lie in (0, 1], got {reflection_ratio}")
        sigma, _ = channel.dominant_mode()
        if not sigma > 0:
            raise ResonanceError(f"{channel.source} channel has no coupling to {channel.destination}")
        gain = 1.0 / (reflection_ratio * sigma ** 4)
        logger.debug(f"Unity-loop gain for {channel.source}: {10.0 * np.log10(gain):.2f} dB")
        return cls(gain_linear=gain, p_saturation=None)

    @property
    def linear(self) -> bool:
        return self.p_saturation is None

    def output_power(self, input_power):
        amplified = self.gain_linear * np.asarray(input_power, dtype=float)
        if self.p_saturation is None:
            return amplified
        return np.minimum(amplified, self.p_saturation)

    def saturated(self, input_power) -> np.ndarray:
        if self.p_saturation is None:
            return np.zeros(np.shape(input_power), dtype=bool)
        return self.gain_linear * np.asarray(input_power, dtype=float) >= self.p_saturation


def rx_reflect(rx_incident: np.ndarray, reflection_ratio: float, delta_phi: float = 0.0) -> np.ndarray:
    """Passive conjugate reflection returning a fraction delta of the incident power"""
    if not 0.0 < reflection_ratio <= 1.0:
        raise ResonanceError(f"reflection ratio must lie in (0, 1], got {reflection_ratio}")
    rx_incident = np.asarray(rx_incident, dtype=complex)
    return np.sqrt(reflection_ratio) * np.conj(rx_incident) * np.exp(1j * delta_phi)


def tx_amplify(tx_incident: np.ndarray, amp: AmplifierModel, delta_phi: float = 0.0) -> np.ndarray:
    """Conjugate and amplify the echo; clipped elements keep their phase"""
    tx_incident = np.asarray(tx_incident, dtype=complex)
    power_in = np.abs(tx_incident) ** 2
    power_out = amp.output_power(power_in)
    scale = np.sqrt(np.divide(power_out, power_in, out=np.zeros_like(power_in), where=power_in > 0))
    return scale * np.conj(tx_incident) * np.exp(1j * delta_phi)


@dataclass(frozen=True)
class PowerRecord:
    iteration: int
    p_tx_total: float
    p_rx_total: float
    efficiency: float


@dataclass
class ResonanceState:
    """Amplitudes of the last recorded round trip plus the power history"""
    tx_amplitudes: np.ndarray
    rx_amplitudes: np.ndarray
    iteration: int
    power_history: List[PowerRecord]
    converged: bool
    tx_incident: np.ndarray
    loop_gain: float = float("nan")
    saturated_elements: int = 0
    array_id: str = ArrayId.TX1.value
    snapshots: Dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def efficiency(self) -> float:
        return self.power_history[-1].efficiency if self.power_history else float("nan")

    @property
    def p_tx_total(self) -> float:
        return float(np.sum(np.abs(self.tx_amplitudes) ** 2))

    @property
    def p_rx_total(self) -> float:
        return float(np.sum(np.abs(self.rx_amplitudes) ** 2))

    def echo_power(self, indices: Optional[np.ndarray] = None, amp: Optional[AmplifierModel] = None) -> float:
        """
        Mean echo power per Tx element, optionally over a subset

        With `amp` the level is read after the gain stage, so it never
        exceeds the saturation power.
        """
        incident = self.tx_incident if indices is None else self.tx_incident[indices]
        power = np.abs(incident) ** 2
        if amp is not None:
            power = amp.output_power(power)
        return float(np.mean(power))


def run_resonance(
    scenario: Scenario,
    channel: ChannelMatrix,
    amp: AmplifierModel,
    reflection_ratio: float,
    initial_tx_power: float = 1.0e-3,
    tolerance: float = 1.0e-6,
    max_iterations: int = 1000,
    tx_delta_phi: float = 0.0,
    rx_delta_phi: float = 0.0,
    snapshot_iterations: Sequence[int] = (),
) -> ResonanceState:
    """
    Iterate round trips until the mode reproduces itself

    Round trip i radiates the current Tx amplitudes (round trip 1 radiates the
    uniform zero-phase initial excitation) and appends one PowerRecord. The
    mode is converged when the amplitude direction, the round-trip efficiency
    and the total Rx power all change by at most `tolerance`. A linear loop
    whose round-trip gain settles below one cannot hold power, so it stops
    early and reports converged=False, as does a diverging or collapsing loop.
    """
    if not initial_tx_power > 0:
        raise ResonanceError(f"initial Tx power must be positive, got {initial_tx_power}")
    if max_iterations < 1:
        raise ResonanceError(f"max_iterations must be >= 1, got {max_iterations}")
    if not 0.0 < reflection_ratio <= 1.0:
        raise ResonanceError(f"reflection ratio must lie in (0, 1], got {reflection_ratio}")

    array_id = channel.source
    n_rx, n_tx = channel.shape
    if n_rx != scenario.rx.size or n_tx != scenario.array(array_id).size:
        raise ResonanceError(f"channel shape {channel.shape} does not match the {array_id} scenario arrays")

    # Settling transients shrink the gain by less than sqrt(tol) once efficiency is steady
    decay_margin = float(np.sqrt(tolerance))
    forward = channel.entries
    backward = channel.reversed().entries
    wanted = set(snapshot_iterations)

    amplitudes = np.full(n_tx, np.sqrt(initial_tx_power / n_tx), dtype=complex)
    history: List[PowerRecord] = []
    snapshots: Dict[int, np.ndarray] = {}
    converged = False
    loop_gain = float("nan")
    saturated = 0

    for iteration in range(1, max_iterations + 1):
        if iteration in wanted:
            snapshots[iteration] = amplitudes.copy()

        p_tx = float(np.sum(np.abs(amplitudes) ** 2))
        rx_incident = forward @ amplitudes
        p_rx = float(np.sum(np.abs(rx_incident) ** 2))
        history.append(PowerRecord(iteration, p_tx, p_rx, p_rx / p_tx))

        tx_incident = backward @ rx_reflect(rx_incident, reflection_ratio, rx_delta_phi)
        next_amplitudes = tx_amplify(tx_incident, amp, tx_delta_phi)
        saturated = int(np.count_nonzero(amp.saturated(np.abs(tx_incident) ** 2)))
        p_next = float(np.sum(np.abs(next_amplitudes) ** 2))

        if not np.isfinite(p_next) or p_next < POWER_FLOOR_W:
            logger.warning(f"{array_id} resonator lost power at round trip {iteration} (next Tx power {p_next:.3g} W)")
            break
        loop_gain = p_next / p_tx

        alignment = abs(np.vdot(amplitudes, next_amplitudes)) / np.sqrt(p_tx * p_next)
        aligned = alignment >= 1.0 - tolerance
        if len(history) >= 2 and aligned:
            previous = history[-2]
            efficiency_steady = abs(history[-1].efficiency - previous.efficiency) <= tolerance * previous.efficiency
            power_steady = abs(p_rx - previous.p_rx_total) <= tolerance * previous.p_rx_total
            if efficiency_steady and power_steady:
                converged = True
                break
            if efficiency_steady and saturated == 0 and loop_gain < 1.0 - decay_margin:
                logger.warning(
                    f"{array_id} resonator does not sustain power: round-trip gain {loop_gain:.4g} < 1 "
                    f"with no element clipping"
                )
                break

        if iteration < max_iterations:
            amplitudes = next_amplitudes
    else:
        logger.warning(f"{array_id} resonator did not converge within {max_iterations} round trips")

    state = ResonanceState(
        tx_amplitudes=amplitudes,
        rx_amplitudes=rx_incident,
        iteration=history[-1].iteration,
        power_history=history,
        converged=converged,
        tx_incident=tx_incident,
        loop_gain=loop_gain,
        saturated_elements=saturated,
        array_id=array_id,
        snapshots=snapshots,
    )
    if state.efficiency > 1.0:
        logger.warning(f"{array_id} efficiency {state.efficiency:.4f} exceeds 1; geometry is outside model validity")
    logger.info(
        f"Resonator {array_id}: {'converged' if converged else 'stopped'} after {state.iteration} round trips, "
        f"efficiency {state.efficiency:.4%}, {saturated}/{n_tx} elements clipped"
    )
    return state


@dataclass
class FieldMap:
    """Radiated power density sampled on a set of points"""
    grid_points: np.ndarray
    power_density: np.ndarray
    iteration_snapshot: int
    shape: Optional[tuple] = None

    @property
    def peak_density(self) -> float:
        return float(self.power_density.max())

    def _distance_to_segment(self, start, end) -> np.ndarray:
        start = np.asarray(start, dtype=float)
        axis = np.asarray(end, dtype=float) - start
        length_sq = float(axis @ axis)
        rel = self.grid_points - start
        t = np.clip(rel @ axis / length_sq, 0.0, 1.0) if length_sq > 0 else np.zeros(len(rel))
        return np.linalg.norm(rel - t[:, None] * axis, axis=1)

    def sidelobe_to_peak(self, start, end, radius: float) -> float:
        """Largest density outside a tube around the segment, relative to the peak"""
        outside = self._distance_to_segment(start, end) > radius
        if not np.any(outside):
            return 0.0
        return float(self.power_density[outside].max() / self.peak_density)

    def power_fraction_within(self, start, end, radius: float) -> float:
        inside = self._distance_to_segment(start, end) <= radius
        total = float(self.power_density.sum())
        return float(self.power_density[inside].sum() / total) if total > 0 else 0.0

    def combine(self, other: "FieldMap") -> "FieldMap":
        """Sum of two independent resonators' densities on the same grid"""
        if self.grid_points.shape != other.grid_points.shape or not np.array_equal(self.grid_points, other.grid_points):
            raise ResonanceError("field maps are sampled on different grids")
        return FieldMap(
            grid_points=self.grid_points,
            power_density=self.power_density + other.power_density,
            iteration_snapshot=max(self.iteration_snapshot, other.iteration_snapshot),
            shape=self.shape,
        )


def grid_from_config(grid: FieldMapConfig) -> np.ndarray:
    axes = [
        np.linspace(lo, hi, count) if count > 1 else np.array([lo])
        for lo, hi, count in zip(grid.bounds_min, grid.bounds_max, grid.points)
    ]
    xx, yy, zz = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])


def compute_field_map(
    state: ResonanceState,
    scenario: Scenario,
    grid: Union[FieldMapConfig, np.ndarray],
    pattern: Optional[GainPattern] = None,
    iteration: Optional[int] = None,
    wave_impedance: float = FREE_SPACE_IMPEDANCE,
) -> FieldMap:
    """
    Coherent superposition of the Tx elements' spherical waves

    Each element of power P contributes a field of magnitude
    sqrt(2 eta P G / (4 pi l^2)) and phase psi - k l; the reported density is
    |E|^2 / (2 eta). `iteration` selects a recorded snapshot instead of the
    final amplitudes.
    """
    if isinstance(grid, FieldMapConfig):
        points, shape = grid_from_config(grid), tuple(grid.points)
    else:
        points, shape = np.atleast_2d(np.asarray(grid, dtype=float)), None

    if iteration is None:
        amplitudes, snapshot = state.tx_amplitudes, state.iteration
    elif iteration in state.snapshots:
        amplitudes, snapshot = state.snapshots[iteration], iteration
    else:
        raise ResonanceError(f"no amplitude snapshot recorded for round trip {iteration}")

    pattern = pattern or GainPattern.isotropic()
    geometry = scenario.array(state.array_id)
    positions = geometry.world_positions
    boresight = geometry.boresight
    k = scenario.wavenumber

    density = np.empty(len(points))
    for start in range(0, len(points), FIELD_CHUNK_POINTS):
        chunk = points[start:start + FIELD_CHUNK_POINTS]
        d = chunk[:, None, :] - positions[None, :, :]
        distances = np.sqrt(np.sum(d * d, axis=-1))
        if np.any(distances < MIN_SEPARATION_M):
            raise ResonanceError("field-map grid point coincides with an element position")
        gains = pattern.gain_from_cosine(d @ boresight / distances)
        field_sum = (np.sqrt(2.0 * wave_impedance * gains / (4.0 * np.pi)) / distances * np.exp(-1j * k * distances)) @ amplitudes
        density[start:start + FIELD_CHUNK_POINTS] = power_density(np.abs(field_sum), wave_impedance)

    return FieldMap(grid_points=points, power_density=density, iteration_snapshot=snapshot, shape=shape)
