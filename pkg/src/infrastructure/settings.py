"""
Configuration models and loaders
Scenario and experiment files are YAML (JSON loads too) validated with pydantic
"""

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.core.errors import ConfigError

logger = logging.getLogger(__name__)

Vector3 = Tuple[float, float, float]

SWEEP_PARAMETERS = (
    "rx_x", "rx_y", "rx_z", "baseline_d", "elevation", "azimuth",
    "distance", "array_size", "noise_power",
)


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ArrayConfig(_Model):
    origin: Vector3 = (0.0, 0.0, 0.0)
    rows: int = Field(40, ge=1, description="Element rows")
    cols: int = Field(40, ge=1, description="Element columns")
    spacing_m: float = Field(0.005, gt=0, description="Element pitch")
    boresight: Vector3 = (0.0, 0.0, 1.0)
    in_plane_axis: Vector3 = (1.0, 0.0, 0.0)


class GainConfig(_Model):
    g_max_dbi: float = Field(4.97, description="Peak element gain")
    rolloff_exponent: Optional[float] = Field(None, ge=0, description="cos^q pattern exponent")


class ScenarioConfig(_Model):
    frequency_hz: float = Field(30.0e9, gt=0)
    wavelength_m: Optional[float] = Field(None, gt=0)
    tx1: ArrayConfig = Field(default_factory=ArrayConfig)
    tx2: ArrayConfig = Field(default_factory=lambda: ArrayConfig(origin=(2.0, 0.0, 0.0)))
    rx: ArrayConfig = Field(
        default_factory=lambda: ArrayConfig(origin=(0.0, 1.0, 3.0), boresight=(0.0, 0.0, -1.0))
    )
    tx_gain: GainConfig = Field(default_factory=GainConfig)
    rx_gain: GainConfig = Field(default_factory=GainConfig)
    phase_offset_rad: float = 0.0


class AmplifierConfig(_Model):
    """
    Per-element Tx amplifier

    `gain_control: unity_loop` replaces the fixed gain by the linear gain that
    exactly offsets the round-trip loss of the link's dominant mode, so the
    loop settles on the unsaturated resonant mode at the initial power level.
    """
    gain_db: float = Field(24.0, description="Linear gain of each Tx element amplifier")
    p_saturation_w: Optional[float] = Field(0.01, gt=0, description="Per-element output cap; null disables")
    gain_control: Literal["fixed", "unity_loop"] = "fixed"

    @model_validator(mode="after")
    def _check_unity_loop(self) -> "AmplifierConfig":
        if self.gain_control == "unity_loop" and self.p_saturation_w is not None:
            raise ValueError("gain_control unity_loop needs p_saturation_w: null")
        return self


class ResonanceConfig(_Model):
    reflection_ratio: float = Field(0.004, gt=0, le=1)
    initial_tx_power_w: float = Field(1.0e-3, gt=0)
    tolerance: float = Field(1.0e-6, gt=0)
    max_iterations: int = Field(1000, ge=1)
    tx_delta_phi_rad: float = 0.0
    rx_delta_phi_rad: float = 0.0


class DoaConfig(_Model):
    subarray_rows: int = Field(8, ge=1)
    subarray_cols: int = Field(8, ge=1)
    snapshots: int = Field(256, ge=1)
    source_count: int = Field(1, ge=1)
    coarse_step_deg: float = Field(0.5, gt=0)
    refine_step_deg: float = Field(0.01, gt=0)
    theta_min_deg: float = Field(0.0, ge=0)
    theta_max_deg: float = Field(80.0, gt=0, le=90)
    echo_tap: Literal["amplified", "incident"] = "incident"

    @model_validator(mode="after")
    def _check_bounds(self) -> "DoaConfig":
        if self.theta_min_deg >= self.theta_max_deg:
            raise ValueError("theta_min_deg must be below theta_max_deg")
        return self


class FieldMapConfig(_Model):
    bounds_min: Vector3 = (-0.5, -0.5, 0.5)
    bounds_max: Vector3 = (2.5, 1.5, 3.5)
    points: Tuple[int, int, int] = (31, 21, 31)

    @field_validator("points")
    @classmethod
    def _positive_counts(cls, value: Tuple[int, int, int]) -> Tuple[int, int, int]:
        if min(value) < 1:
            raise ValueError("grid point counts must be >= 1")
        return value


class PlacementConfig(_Model):
    """Rx position given as range and direction from Tx1"""
    distance_m: float = Field(3.0, gt=0)
    elevation_deg: float = Field(30.0, ge=0, lt=90)
    azimuth_deg: float = 15.0


class SimulationConfig(_Model):
    name: str = "scenario"
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    amplifier: AmplifierConfig = Field(default_factory=AmplifierConfig)
    resonance: ResonanceConfig = Field(default_factory=ResonanceConfig)
    doa: DoaConfig = Field(default_factory=DoaConfig)
    field_map: FieldMapConfig = Field(default_factory=FieldMapConfig)
    placement: Optional[PlacementConfig] = None
    noise_power_w: float = Field(2.0e-5, ge=0, description="Per-element noise (0.02 mW)")

    def spec_hash(self) -> str:
        """SHA-256 of the canonical JSON form"""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class SweepConfig(_Model):
    parameter: Literal[SWEEP_PARAMETERS] = "rx_x"  # type: ignore[valid-type]
    values: List[float] = Field(..., min_length=1)
    series: List[Dict[str, float]] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_physical(self) -> "SweepConfig":
        _check_sweep_values(self.parameter, self.values)
        for overrides in self.series:
            for key, value in overrides.items():
                if key not in SWEEP_PARAMETERS:
                    raise ValueError(f"unknown series parameter '{key}'")
                _check_sweep_values(key, [value])
        return self


class ExperimentSpec(SimulationConfig):
    kind: Literal["rmse", "efficiency", "doa_error"] = "rmse"
    sweep: SweepConfig
    monte_carlo_k: int = Field(100, ge=1)
    master_seed: int = Field(0, ge=0, lt=2 ** 64)
    outputs: List[Literal["results", "trials"]] = Field(default_factory=lambda: ["results", "trials"])


def _check_sweep_values(parameter: str, values: List[float]) -> None:
    for value in values:
        if parameter in ("baseline_d", "distance") and value <= 0:
            raise ValueError(f"{parameter} must be positive, got {value}")
        if parameter == "noise_power" and value < 0:
            raise ValueError(f"noise_power must be non-negative, got {value}")
        if parameter == "elevation" and not 0 <= value < 90:
            raise ValueError(f"elevation must lie in [0, 90) degrees, got {value}")
        if parameter == "array_size" and (value < 1 or value != int(value)):
            raise ValueError(f"array_size must be a positive integer, got {value}")


def _read_mapping(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}")

    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping at top level")
    return data


def _format_validation(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "<root>"
        parts.append(f"{location}: {item['msg']}")
    return "; ".join(parts)


def parse_simulation_config(data: Dict[str, Any]) -> SimulationConfig:
    try:
        return SimulationConfig.model_validate(
            {key: value for key, value in data.items() if key in SimulationConfig.model_fields}
        )
    except ValidationError as e:
        raise ConfigError(f"invalid scenario config: {_format_validation(e)}")


def parse_experiment_spec(data: Dict[str, Any]) -> ExperimentSpec:
    if "sweep" not in data:
        raise ConfigError("experiment spec requires a 'sweep' section")
    try:
        return ExperimentSpec.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid experiment spec: {_format_validation(e)}")


def load_simulation_config(path: Union[str, Path]) -> SimulationConfig:
    """Load a scenario file; experiment-only sections are ignored"""
    config = parse_simulation_config(_read_mapping(path))
    logger.info(f"Loaded scenario config '{config.name}' from {path}")
    return config


def load_experiment_spec(path: Union[str, Path]) -> ExperimentSpec:
    spec = parse_experiment_spec(_read_mapping(path))
    logger.info(f"Loaded experiment spec '{spec.name}' ({spec.kind}) from {path}")
    return spec


@dataclass
class RuntimeSettings:
    """Process-level knobs resolved from flags, environment and defaults"""
    threads: int = 4
    out_dir: str = "results"
    log_level: str = "INFO"
    log_format: str = "text"


def load_runtime_settings(env_file: Optional[str] = None) -> RuntimeSettings:
    load_dotenv(env_file)
    defaults = RuntimeSettings()
    threads = os.environ.get("RBPOS_THREADS")
    try:
        thread_count = int(threads) if threads else min(defaults.threads, os.cpu_count() or 1)
    except ValueError:
        raise ConfigError(f"RBPOS_THREADS must be an integer, got '{threads}'")

    return RuntimeSettings(
        threads=max(1, thread_count),
        out_dir=os.environ.get("RBPOS_OUT_DIR", defaults.out_dir),
        log_level=os.environ.get("RBPOS_LOG_LEVEL", defaults.log_level).upper(),
        log_format=os.environ.get("RBPOS_LOG_FORMAT", defaults.log_format).lower(),
    )
