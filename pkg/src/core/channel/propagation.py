"""
Channel Model
Friis element-to-element coupling with per-element gain patterns

Entry (n, m) of a link couples source element m to destination element n:

    (lambda / (4 pi l)) * sqrt(G_src(t_m) G_dst(t_n)) * exp(-j (k l - phi0))

so |entry|^2 is the Friis power coupling for unit transmit power.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy import linalg

from src.core.errors import ChannelError
from src.core.geometry.scenario import (
    ArrayGeometry,
    ArrayId,
    MIN_SEPARATION_M,
    Scenario,
    SphericalDirection,
    TX_ARRAYS,
)

logger = logging.getLogger(__name__)

FREE_SPACE_IMPEDANCE = 376.730
DEFAULT_MAX_GAIN_DBI = 4.97


@dataclass(frozen=True)
class GainPattern:
    """g_max * cos^q(theta) on the front hemisphere, zero behind the array"""
    g_max: float
    rolloff_exponent: float

    def __post_init__(self):
        if not self.g_max > 0:
            raise ChannelError(f"peak gain must be positive, got {self.g_max}")
        if self.rolloff_exponent < 0:
            raise ChannelError(f"rolloff exponent must be non-negative, got {self.rolloff_exponent}")

    @classmethod
    def from_dbi(cls, g_dbi: float = DEFAULT_MAX_GAIN_DBI, rolloff_exponent: Optional[float] = None) -> "GainPattern":
        """
        Pattern from a peak gain in dBi

        Without an explicit exponent q is chosen so the hemisphere
        directivity 2(q + 1) equals the peak gain (q ~ 0.57 at 4.97 dBi).
        """
        g_max = 10.0 ** (g_dbi / 10.0)
        if rolloff_exponent is None:
            rolloff_exponent = max(g_max / 2.0 - 1.0, 0.0)
        return cls(g_max=g_max, rolloff_exponent=rolloff_exponent)

    @classmethod
    def isotropic(cls) -> "GainPattern":
        return cls(g_max=1.0, rolloff_exponent=0.0)

    def gain_from_cosine(self, cos_theta):
        cos_theta = np.asarray(cos_theta, dtype=float)
        front = cos_theta > 0.0
        return np.where(front, self.g_max * np.clip(cos_theta, 0.0, 1.0) ** self.rolloff_exponent, 0.0)

    def gain(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.where(theta <= np.pi / 2.0, self.gain_from_cosine(np.cos(theta)), 0.0)


def power_density(e_field_amplitude, wave_impedance: float = FREE_SPACE_IMPEDANCE):
    """Time-averaged Poynting magnitude E^2 / (2 eta) in W/m^2; scalars or arrays"""
    if not wave_impedance > 0:
        raise ChannelError(f"wave impedance must be positive, got {wave_impedance}")
    if np.ndim(e_field_amplitude) == 0:
        return float(e_field_amplitude) ** 2 / (2.0 * wave_impedance)
    return np.asarray(e_field_amplitude, dtype=float) ** 2 / (2.0 * wave_impedance)


def element_gain(pattern: GainPattern, direction: SphericalDirection) -> float:
    return float(pattern.gain(direction.elevation_theta))


@dataclass(frozen=True, eq=False)
class ChannelMatrix:
    """Rows index destination (Rx) elements, columns source (Tx) elements"""
    entries: np.ndarray
    distances: np.ndarray
    wavelength: float
    source: str = ArrayId.TX1.value
    destination: str = ArrayId.RX.value

    def __post_init__(self):
        if self.entries.shape != self.distances.shape:
            raise ChannelError(f"entries {self.entries.shape} and distances {self.distances.shape} differ")
        if np.any(self.distances <= 0):
            raise ChannelError("channel distances must be positive")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.entries.shape

    def reversed(self) -> "ChannelMatrix":
        """The reciprocal link; equals the transpose exactly"""
        return ChannelMatrix(
            entries=self.entries.T,
            distances=self.distances.T,
            wavelength=self.wavelength,
            source=self.destination,
            destination=self.source,
        )

    def dominant_mode(self) -> Tuple[float, np.ndarray]:
        """Largest singular value and its unit-norm right singular vector"""
        _, singular_values, vh = linalg.svd(self.entries, full_matrices=False)
        return float(singular_values[0]), vh[0].conj()


def _link_matrix(
    src_positions: np.ndarray,
    src_boresight: np.ndarray,
    dst_positions: np.ndarray,
    dst_boresight: np.ndarray,
    wavelength: float,
    pattern_src: GainPattern,
    pattern_dst: GainPattern,
    phase_offset: float,
) -> Tuple[np.ndarray, np.ndarray]:
    # Component-wise arithmetic keeps a link and its reverse bit-identical
    d = dst_positions[:, None, :] - src_positions[None, :, :]
    dx, dy, dz = d[..., 0], d[..., 1], d[..., 2]
    distances = np.sqrt(dx * dx + dy * dy + dz * dz)
    if np.any(distances < MIN_SEPARATION_M):
        raise ChannelError("a Tx element coincides with an Rx element")

    cos_src = (dx * src_boresight[0] + dy * src_boresight[1] + dz * src_boresight[2]) / distances
    cos_dst = -(dx * dst_boresight[0] + dy * dst_boresight[1] + dz * dst_boresight[2]) / distances
    gains = pattern_src.gain_from_cosine(cos_src) * pattern_dst.gain_from_cosine(cos_dst)

    k = 2.0 * np.pi / wavelength
    entries = wavelength / (4.0 * np.pi * distances) * np.sqrt(gains) * np.exp(-1j * (k * distances - phase_offset))
    return entries, distances


def build_link(
    source: ArrayGeometry,
    destination: ArrayGeometry,
    wavelength: float,
    pattern_src: GainPattern,
    pattern_dst: GainPattern,
    phase_offset: float = 0.0,
) -> ChannelMatrix:
    entries, distances = _link_matrix(
        source.world_positions, source.boresight,
        destination.world_positions, destination.boresight,
        wavelength, pattern_src, pattern_dst, phase_offset,
    )
    return ChannelMatrix(
        entries=entries,
        distances=distances,
        wavelength=wavelength,
        source=source.name,
        destination=destination.name,
    )


def build_channel(
    scenario: Scenario,
    tx: Union[ArrayId, str],
    pattern_tx: GainPattern,
    pattern_rx: GainPattern,
    phase_offset: float = 0.0,
) -> ChannelMatrix:
    """Tx-to-Rx channel of one transmitter (N Rx rows by M Tx columns)"""
    tx_id = ArrayId(tx)
    if tx_id not in TX_ARRAYS:
        raise ChannelError(f"'{tx_id.value}' is not a transmitter array")
    if not scenario.far_field_ok:
        logger.warning(f"Building {tx_id.value} channel outside the single-element far field")

    channel = build_link(
        scenario.array(tx_id), scenario.rx, scenario.wavelength,
        pattern_tx, pattern_rx, phase_offset,
    )
    logger.info(
        f"Channel {tx_id.value}->rx built: {channel.shape[0]}x{channel.shape[1]}, "
        f"range {channel.distances.min():.4f}-{channel.distances.max():.4f} m"
    )
    return channel


def _check_amplitudes(channel: ChannelMatrix, tx_amplitudes: np.ndarray) -> np.ndarray:
    tx_amplitudes = np.asarray(tx_amplitudes, dtype=complex)
    if tx_amplitudes.shape != (channel.shape[1],):
        raise ChannelError(
            f"expected {channel.shape[1]} transmit amplitudes, got shape {tx_amplitudes.shape}"
        )
    if not np.all(np.isfinite(tx_amplitudes)):
        raise ChannelError("transmit amplitudes must be finite")
    return tx_amplitudes


def receive_power(channel: ChannelMatrix, tx_amplitudes: np.ndarray) -> Tuple[np.ndarray, float]:
    """Coherent per-element received power and its total"""
    tx_amplitudes = _check_amplitudes(channel, tx_amplitudes)
    incident = channel.entries @ tx_amplitudes
    per_element = np.abs(incident) ** 2
    return per_element, float(per_element.sum())


def transmission_efficiency(channel: ChannelMatrix, tx_amplitudes: np.ndarray) -> float:
    tx_amplitudes = _check_amplitudes(channel, tx_amplitudes)
    transmitted = float(np.sum(np.abs(tx_amplitudes) ** 2))
    if transmitted <= 0.0:
        raise ChannelError("transmission efficiency undefined for zero transmit power")
    _, received = receive_power(channel, tx_amplitudes)
    return received / transmitted


def friis_coupling(distance: float, wavelength: float, g_tx: float = 1.0, g_rx: float = 1.0) -> float:
    """Scalar Friis power ratio for a single element pair"""
    return wavelength ** 2 * g_tx * g_rx / (16.0 * math.pi ** 2 * distance ** 2)
