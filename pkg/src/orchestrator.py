"""
Resonant Beam Positioning Orchestrator
Main orchestration engine that coordinates the positioning pipeline and the
seeded Monte Carlo sweeps built on it
"""

import asyncio
import functools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src import __version__
from src.core.channel.propagation import ChannelMatrix, GainPattern, build_channel
from src.core.doa.music import (
    DoaEstimate,
    MusicSpectrum,
    SearchGrid,
    angular_error,
    build_search_grid,
    estimate_doa,
    music_spectrum,
    sample_covariance,
    subspace_split,
    synthesize_snapshots,
)
from src.core.errors import SimulationError
from src.core.geometry.scenario import (
    TX_ARRAYS,
    ArrayGeometry,
    ArrayId,
    Scenario,
    SphericalDirection,
    build_scenario,
    place_on_sphere,
    unit_vector_to_direction,
)
from src.core.resonance.resonator import (
    AmplifierModel,
    FieldMap,
    ResonanceState,
    compute_field_map,
    run_resonance,
)
from src.core.triangulation.locator import (
    PositionEstimate,
    TriangulationInput,
    rmse,
    trial_errors,
    triangulate,
)
from src.infrastructure.result_exporter import ResultRow, ResultTable, TrialRecord
from src.infrastructure.settings import (
    ExperimentSpec,
    FieldMapConfig,
    PlacementConfig,
    SimulationConfig,
)

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1

# Placements (elevation, azimuth, distance) are measured from this array
PLACEMENT_ANCHOR = ArrayId.TX1


def splitmix64(value: int) -> int:
    """One splitmix64 output step for a 64-bit state"""
    z = (value + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(*parts: int) -> int:
    """Fold integers into one 64-bit seed, e.g. (master, point, trial)"""
    state = 0
    for part in parts:
        state = splitmix64(state ^ (int(part) & MASK64))
    return state


def series_label(overrides: Dict[str, float]) -> str:
    return ",".join(f"{key}={value:g}" for key, value in overrides.items())


def apply_overrides(config: SimulationConfig, overrides: Dict[str, float]) -> SimulationConfig:
    """
    Return a copy of the config with sweep/series overrides applied

    When a placement is configured (or any of elevation, azimuth, distance is
    overridden) the Rx origin is derived from it relative to Tx1.
    """
    scenario = config.scenario
    tx1, tx2, rx = scenario.tx1, scenario.tx2, scenario.rx

    if "array_size" in overrides:
        n = int(overrides["array_size"])
        tx1, tx2, rx = (a.model_copy(update={"rows": n, "cols": n}) for a in (tx1, tx2, rx))

    if "baseline_d" in overrides:
        origin1 = np.array(tx1.origin, dtype=float)
        axis = np.array(tx2.origin, dtype=float) - origin1
        axis = axis / np.linalg.norm(axis)
        new_origin = origin1 + float(overrides["baseline_d"]) * axis
        tx2 = tx2.model_copy(update={"origin": tuple(float(c) for c in new_origin)})

    rx_origin = [float(c) for c in rx.origin]
    for axis_index, key in enumerate(("rx_x", "rx_y", "rx_z")):
        if key in overrides:
            rx_origin[axis_index] = float(overrides[key])

    placement = config.placement
    placement_updates = {
        name: float(overrides[key])
        for key, name in (("elevation", "elevation_deg"), ("azimuth", "azimuth_deg"), ("distance", "distance_m"))
        if key in overrides
    }
    if placement_updates:
        placement = (placement or PlacementConfig()).model_copy(update=placement_updates)
    if placement is not None:
        direction = SphericalDirection.from_degrees(placement.elevation_deg, placement.azimuth_deg)
        rx_origin = [float(c) for c in place_on_sphere(tx1.origin, placement.distance_m, direction)]

    rx = rx.model_copy(update={"origin": tuple(rx_origin)})
    updates: Dict[str, Any] = {
        "scenario": scenario.model_copy(update={"tx1": tx1, "tx2": tx2, "rx": rx}),
        "placement": placement,
    }
    if "noise_power" in overrides:
        updates["noise_power_w"] = float(overrides["noise_power"])
    return config.model_copy(update=updates)


@dataclass
class TxLink:
    """Everything one transmitter needs for repeated DOA trials"""
    array_id: str
    channel: ChannelMatrix
    resonance: ResonanceState
    doa_geometry: Optional[ArrayGeometry] = None
    doa_indices: Optional[np.ndarray] = None
    true_direction: Optional[SphericalDirection] = None
    echo_power: float = float("nan")
    search_grid: Optional[SearchGrid] = None


@dataclass
class PreparedLinks:
    config: SimulationConfig
    scenario: Scenario
    truth: np.ndarray
    links: Dict[str, TxLink]
    tx_pattern: GainPattern

    @property
    def mean_efficiency(self) -> float:
        return float(np.mean([link.resonance.efficiency for link in self.links.values()]))


@dataclass
class TrialResult:
    trial: int
    seed: int
    doa: Dict[str, DoaEstimate] = field(default_factory=dict)
    doa_error_deg: Dict[str, float] = field(default_factory=dict)
    position: Optional[PositionEstimate] = None
    error: Optional[str] = None
    failure: Optional[SimulationError] = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.position is not None


@dataclass
class PipelineResult:
    doa1: DoaEstimate
    doa2: DoaEstimate
    position: PositionEstimate
    truth: np.ndarray
    error_m: float
    doa_error_deg: Dict[str, float]
    links: PreparedLinks


class PositioningOrchestrator:
    """
    Main orchestrator for the positioning pipeline
    Coordinates: Scenario -> Channels -> Resonators -> Snapshots/MUSIC -> Triangulation
    """

    def __init__(self, threads: int = 4):
        self.threads = max(1, int(threads))
        logger.info(f"Positioning Orchestrator initialized ({self.threads} worker threads)")

    # ------------------------------------------------------------------
    # Single pipeline
    # ------------------------------------------------------------------

    def _tagged(self, stage: str, func, *args, **kwargs):
        """Run one pipeline step, tagging foreign exceptions with its stage"""
        try:
            return func(*args, **kwargs)
        except SimulationError:
            raise
        except Exception as e:
            raise SimulationError(f"{type(e).__name__}: {e}", stage=stage) from e

    def prepare_links(
        self,
        config: SimulationConfig,
        with_doa: bool = True,
        snapshot_iterations: Sequence[int] = (),
        arrays: Sequence[ArrayId] = TX_ARRAYS,
    ) -> PreparedLinks:
        """
        Deterministic part of a run: scenario, channels, resonators and the
        DOA subarray set-up. Reused by every trial at a sweep point.
        """
        logger.info("Step 1: Scenario")
        scenario = self._tagged("geometry", build_scenario, config.scenario)
        tx_pattern = GainPattern.from_dbi(config.scenario.tx_gain.g_max_dbi, config.scenario.tx_gain.rolloff_exponent)
        rx_pattern = GainPattern.from_dbi(config.scenario.rx_gain.g_max_dbi, config.scenario.rx_gain.rolloff_exponent)
        truth = np.array(scenario.rx.origin)

        links: Dict[str, TxLink] = {}
        for tx in arrays:
            logger.info(f"Step 2: Channel ({tx.value})")
            channel = self._tagged(
                "channel", build_channel, scenario, tx, tx_pattern, rx_pattern, config.scenario.phase_offset_rad
            )

            logger.info(f"Step 3: Resonance ({tx.value})")
            amp = self._link_amplifier(config, channel)
            resonance = self._step_resonance(config, scenario, channel, amp, snapshot_iterations)
            link = TxLink(array_id=tx.value, channel=channel, resonance=resonance)

            if with_doa:
                self._step_doa_setup(config, scenario, link, amp, truth)
            links[tx.value] = link

        return PreparedLinks(config=config, scenario=scenario, truth=truth, links=links, tx_pattern=tx_pattern)

    def _link_amplifier(self, config: SimulationConfig, channel: ChannelMatrix) -> AmplifierModel:
        settings = config.amplifier
        if settings.gain_control == "unity_loop":
            return self._tagged(
                "resonance", AmplifierModel.unity_loop, channel, config.resonance.reflection_ratio
            )
        return self._tagged("resonance", AmplifierModel.from_db, settings.gain_db, settings.p_saturation_w)

    def _step_resonance(
        self,
        config: SimulationConfig,
        scenario: Scenario,
        channel: ChannelMatrix,
        amp: AmplifierModel,
        snapshot_iterations: Sequence[int],
    ) -> ResonanceState:
        res = config.resonance
        state = self._tagged(
            "resonance", run_resonance,
            scenario, channel, amp, res.reflection_ratio,
            initial_tx_power=res.initial_tx_power_w,
            tolerance=res.tolerance,
            max_iterations=res.max_iterations,
            tx_delta_phi=res.tx_delta_phi_rad,
            rx_delta_phi=res.rx_delta_phi_rad,
            snapshot_iterations=snapshot_iterations,
        )
        if not state.converged:
            logger.warning(f"Resonator {state.array_id} did not reach a self-reproducing mode")
        return state

    def _step_doa_setup(
        self,
        config: SimulationConfig,
        scenario: Scenario,
        link: TxLink,
        amp: AmplifierModel,
        truth: np.ndarray,
    ) -> None:
        doa = config.doa
        geometry = scenario.array(link.array_id)
        rows = min(doa.subarray_rows, geometry.grid.rows)
        cols = min(doa.subarray_cols, geometry.grid.cols)
        sub, indices = self._tagged("doa", geometry.subarray, rows, cols)

        link.doa_geometry = sub
        link.doa_indices = indices
        link.true_direction = self._tagged(
            "geometry", unit_vector_to_direction, sub.world_to_local_direction(truth - sub.origin)
        )
        link.echo_power = link.resonance.echo_power(indices, amp if doa.echo_tap == "amplified" else None)
        link.search_grid = self._tagged(
            "doa", build_search_grid, sub, scenario.wavelength,
            (math.radians(doa.theta_min_deg), math.radians(doa.theta_max_deg)),
            math.radians(doa.coarse_step_deg),
        )
        logger.debug(
            f"{link.array_id} DOA subarray {rows}x{cols}, echo {link.echo_power:.4g} W per element, "
            f"truth ({link.true_direction.elevation_deg:.4f}, {link.true_direction.azimuth_deg:.4f}) deg"
        )

    def _step_snapshots(self, links: PreparedLinks, link: TxLink, noise_power: float, seed: int):
        doa = links.config.doa
        return self._tagged(
            "doa", synthesize_snapshots,
            link.resonance, link.doa_geometry, link.true_direction, link.echo_power, noise_power,
            links.scenario.wavelength, doa.snapshots, seed, doa.source_count,
        )

    def run_trial(self, links: PreparedLinks, noise_power: float, seed: int, trial_index: int = 0) -> TrialResult:
        """Randomised part of a run: snapshots, MUSIC and triangulation"""
        result = TrialResult(trial=trial_index, seed=seed)
        try:
            world_doas = {}
            for tx_index, (tx_id, link) in enumerate(links.links.items()):
                batch = self._step_snapshots(links, link, noise_power, derive_seed(seed, tx_index))
                estimate = self._tagged(
                    "doa", estimate_doa,
                    batch, link.doa_geometry, links.scenario.wavelength,
                    links.config.doa.source_count, links.config.doa, link.search_grid,
                )
                result.doa[tx_id] = estimate
                result.doa_error_deg[tx_id] = angular_error(estimate.direction, link.true_direction)
                world_doas[tx_id] = link.doa_geometry.to_world(estimate.direction)

            tx1, tx2 = (links.links[tx.value] for tx in TX_ARRAYS)
            inp = self._tagged(
                "triangulation", TriangulationInput,
                world_doas[tx1.array_id], world_doas[tx2.array_id],
                tx1.doa_geometry.origin, tx2.doa_geometry.origin,
            )
            result.position = self._tagged("triangulation", triangulate, inp)
        except SimulationError as e:
            result.error = str(e)
            result.failure = e
            logger.debug(f"Trial {trial_index} failed: {e}")
        return result

    def run_pipeline(
        self,
        config: SimulationConfig,
        noise_power: Optional[float] = None,
        seed: int = 0,
    ) -> PipelineResult:
        """
        End-to-end run for one seed

        Pipeline steps:
        1. Scenario
        2. Channels
        3. Resonators
        4. Snapshots + MUSIC at each Tx
        5. Triangulation
        """
        links = self.prepare_links(config)
        noise = config.noise_power_w if noise_power is None else noise_power
        logger.info("Step 4: DOA estimation")
        trial = self.run_trial(links, noise, seed)
        if trial.failure is not None:
            raise trial.failure

        logger.info("Step 5: Triangulation")
        _, norms = trial_errors([trial.position.coordinates], links.truth)
        tx1, tx2 = (tx.value for tx in TX_ARRAYS)
        logger.info(
            f"Position estimate {np.round(trial.position.coordinates, 6).tolist()} "
            f"(error {norms[0] * 1e3:.3f} mm, {trial.position.condition_flag.value})"
        )
        return PipelineResult(
            doa1=trial.doa[tx1],
            doa2=trial.doa[tx2],
            position=trial.position,
            truth=links.truth,
            error_m=float(norms[0]),
            doa_error_deg=dict(trial.doa_error_deg),
            links=links,
        )

    def music_spectra(self, config: SimulationConfig, seed: int = 0) -> Dict[str, MusicSpectrum]:
        """Full pseudospectra at both transmitters for one seed"""
        links = self.prepare_links(config)
        spectra = {}
        for tx_index, (tx_id, link) in enumerate(links.links.items()):
            batch = self._step_snapshots(links, link, config.noise_power_w, derive_seed(seed, tx_index))
            split = self._tagged(
                "doa", subspace_split, sample_covariance(batch), config.doa.source_count
            )
            spectra[tx_id] = self._tagged(
                "doa", music_spectrum,
                link.doa_geometry, split.noise_basis, links.scenario.wavelength,
                refine_step=math.radians(config.doa.refine_step_deg),
                search_grid=link.search_grid,
            )
        return spectra

    def resonate(
        self,
        config: SimulationConfig,
        grid: Optional[FieldMapConfig] = None,
        snapshot_iterations: Sequence[int] = (1,),
    ) -> Tuple[PreparedLinks, Dict[str, FieldMap]]:
        """Run both resonators and map their radiated power (per Tx and combined)"""
        links = self.prepare_links(config, with_doa=False, snapshot_iterations=snapshot_iterations)
        grid = grid or config.field_map
        maps: Dict[str, FieldMap] = {}
        for tx_id, link in links.links.items():
            maps[tx_id] = self._tagged(
                "resonance", compute_field_map, link.resonance, links.scenario, grid, links.tx_pattern
            )
        first, second = (maps[tx.value] for tx in TX_ARRAYS)
        maps["combined"] = first.combine(second)
        return links, maps

    # ------------------------------------------------------------------
    # Sweeps
    # ------------------------------------------------------------------

    def _sweep_points(self, spec: ExperimentSpec) -> List[Tuple[str, float, Dict[str, float]]]:
        points = []
        for overrides in spec.sweep.series or [{}]:
            label = series_label(overrides)
            for value in sorted(spec.sweep.values):
                points.append((label, float(value), {**overrides, spec.sweep.parameter: float(value)}))
        return points

    async def _run_point(
        self,
        pool: ThreadPoolExecutor,
        spec: ExperimentSpec,
        kind: str,
        point_index: int,
        label: str,
        value: float,
        overrides: Dict[str, float],
    ) -> Tuple[ResultRow, List[TrialRecord]]:
        loop = asyncio.get_running_loop()
        try:
            config = apply_overrides(spec, overrides)
            if kind == "efficiency":
                links = await loop.run_in_executor(
                    pool, functools.partial(self.prepare_links, config, with_doa=False, arrays=(PLACEMENT_ANCHOR,))
                )
            else:
                links = await loop.run_in_executor(pool, self.prepare_links, config)
        except SimulationError as e:
            logger.warning(f"Sweep point {label or spec.sweep.parameter}={value:g} failed: {e}")
            return ResultRow(series=label, sweep_value=value, trials=0, failures=0, error=str(e)), []

        if kind == "efficiency":
            return self._efficiency_row(label, value, links), []

        seeds = [derive_seed(spec.master_seed, point_index, k) for k in range(spec.monte_carlo_k)]
        futures = [
            loop.run_in_executor(pool, self.run_trial, links, config.noise_power_w, seed, k)
            for k, seed in enumerate(seeds)
        ]
        trials = sorted(await asyncio.gather(*futures), key=lambda t: t.trial)
        return self._aggregate(label, value, links, trials)

    def _efficiency_row(self, label: str, value: float, links: PreparedLinks) -> ResultRow:
        """Steady-state efficiency of the link the Rx placement is measured from"""
        state = links.links[PLACEMENT_ANCHOR.value].resonance
        row = ResultRow(series=label, sweep_value=value, trials=0, failures=0, mean_efficiency=state.efficiency)
        if not state.converged:
            row.error = (
                f"[resonance] {state.array_id} resonator did not converge after {state.iteration} round trips "
                f"(round-trip gain {state.loop_gain:.4g}); efficiency is not a steady-state value"
            )
            logger.warning(f"Sweep point {label or 'efficiency'} value {value:g}: {row.error}")
        return row

    def _aggregate(
        self,
        label: str,
        value: float,
        links: PreparedLinks,
        trials: List[TrialResult],
    ) -> Tuple[ResultRow, List[TrialRecord]]:
        ok = [t for t in trials if t.ok]
        doa_errors = [np.mean(list(t.doa_error_deg.values())) for t in trials if len(t.doa_error_deg) == len(TX_ARRAYS)]
        row = ResultRow(
            series=label,
            sweep_value=value,
            trials=len(trials),
            failures=len(trials) - len(ok),
            mean_doa_err_deg=float(np.mean(doa_errors)) if doa_errors else float("nan"),
            mean_efficiency=links.mean_efficiency,
        )

        records = []
        nan3 = [float("nan")] * 3
        for t in trials:
            if t.ok:
                errors, norms = trial_errors([t.position.coordinates], links.truth)
                coords, err, norm = t.position.coordinates.tolist(), errors[0].tolist(), float(norms[0])
            else:
                coords, err, norm = nan3, nan3, float("nan")
            records.append(TrialRecord(label, value, t.trial, t.seed, *coords, *err, norm))

        if ok:
            estimates = [t.position.coordinates for t in ok]
            _, norms = trial_errors(estimates, links.truth)
            row.rmse_m = rmse(estimates, links.truth)
            row.err_min = float(norms.min())
            row.err_median = float(np.median(norms))
            row.err_max = float(norms.max())
        else:
            row.error = f"all trials failed: {trials[0].error}" if trials else "no trials"
            logger.warning(f"Sweep point {label} value {value:g}: {row.error}")
        return row, records

    async def run_sweep(self, spec: ExperimentSpec, kind: Optional[str] = None) -> ResultTable:
        kind = kind or spec.kind
        points = self._sweep_points(spec)
        logger.info(f"Sweep '{spec.name}' ({kind}): {len(points)} points x {spec.monte_carlo_k} trials")

        rows: List[ResultRow] = []
        records: List[TrialRecord] = []
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            # Points run one at a time so only one pair of channels is held in memory
            for point_index, (label, value, overrides) in enumerate(points):
                row, trial_records = await self._run_point(pool, spec, kind, point_index, label, value, overrides)
                rows.append(row)
                records.extend(trial_records)
                logger.info(
                    f"Point {point_index + 1}/{len(points)} {label or spec.sweep.parameter}={value:g}: "
                    f"rmse {row.rmse_m:.4g} m, efficiency {row.mean_efficiency:.4g}, failures {row.failures}"
                )

        metadata = {
            "experiment": spec.name,
            "kind": kind,
            "master_seed": spec.master_seed,
            "spec_hash": spec.spec_hash(),
            "code_version": __version__,
        }
        return ResultTable(rows=rows, trials=records, metadata=metadata)

    def sweep_rmse(self, spec: ExperimentSpec) -> ResultTable:
        return asyncio.run(self.run_sweep(spec, "rmse"))

    def sweep_efficiency(self, spec: ExperimentSpec) -> ResultTable:
        return asyncio.run(self.run_sweep(spec, "efficiency"))

    def sweep_doa_error(self, spec: ExperimentSpec) -> ResultTable:
        return asyncio.run(self.run_sweep(spec, "doa_error"))

    def run_experiment(self, spec: ExperimentSpec) -> ResultTable:
        return asyncio.run(self.run_sweep(spec))
