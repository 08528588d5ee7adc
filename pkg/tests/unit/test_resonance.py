"""
Unit tests for the phase-conjugate resonance loop and field maps
"""

import math

import numpy as np
import pytest

from src.core.channel.propagation import GainPattern, build_channel, receive_power
from src.core.errors import ResonanceError
from src.core.geometry.scenario import build_scenario
from src.core.resonance.resonator import (
    AmplifierModel,
    FieldMap,
    compute_field_map,
    conjugate_phase,
    grid_from_config,
    run_resonance,
    rx_reflect,
    tx_amplify,
)
from src.infrastructure.settings import FieldMapConfig, ScenarioConfig

DELTA = 0.004


def _scenario(rows=4, rx_origin=(0.4, 0.3, 1.5), tx2_origin=(1.0, 0.0, 0.0)):
    array = {"rows": rows, "cols": rows, "spacing_m": 0.005}
    return build_scenario(ScenarioConfig(
        tx1={"origin": (0.0, 0.0, 0.0), **array},
        tx2={"origin": tx2_origin, **array},
        rx={"origin": rx_origin, "boresight": (0.0, 0.0, -1.0), **array},
    ))


def _channel(scenario, tx="tx1"):
    pattern = GainPattern.from_dbi(4.97)
    return build_channel(scenario, tx, pattern, pattern)


class TestCircuitModels:
    def test_conjugate_phase(self):
        assert conjugate_phase(0.3) == pytest.approx(-0.3)
        assert conjugate_phase(0.3, delta_phi=0.5) == pytest.approx(0.2)
        assert conjugate_phase(-3.0, delta_phi=1.0) == pytest.approx(4.0 - 2 * math.pi)

    def test_amplifier_clips_at_saturation(self):
        amp = AmplifierModel.from_db(20.0, 0.01)
        assert amp.output_power(1e-5) == pytest.approx(1e-3)
        assert amp.output_power(1.0) == pytest.approx(0.01)
        assert list(amp.saturated([1e-5, 1e-3])) == [False, True]

    def test_linear_amplifier(self):
        amp = AmplifierModel.from_db(20.0, None)
        assert amp.linear
        assert amp.output_power(1.0) == pytest.approx(100.0)
        assert not np.any(amp.saturated([1.0, 10.0]))

    def test_gain_above_cap_warns(self, caplog):
        AmplifierModel.from_db(40.0)
        assert "nominal" in caplog.text

    def test_invalid_amplifier(self):
        with pytest.raises(ResonanceError):
            AmplifierModel(gain_linear=0.0)
        with pytest.raises(ResonanceError):
            AmplifierModel(gain_linear=1.0, p_saturation=-1.0)

    def test_rx_reflect_scales_power_and_conjugates(self):
        incident = np.array([1.0 + 1.0j, 0.5j])
        reflected = rx_reflect(incident, DELTA)
        np.testing.assert_allclose(np.abs(reflected) ** 2, DELTA * np.abs(incident) ** 2)
        np.testing.assert_allclose(np.angle(reflected), -np.angle(incident))

    def test_rx_reflect_ratio_bounds(self):
        with pytest.raises(ResonanceError):
            rx_reflect(np.ones(2), 0.0)
        with pytest.raises(ResonanceError):
            rx_reflect(np.ones(2), 1.5)

    def test_tx_amplify_keeps_phase_when_clipping(self):
        amp = AmplifierModel(gain_linear=1e4, p_saturation=0.01)
        incident = np.array([1e-4 * np.exp(0.7j), 1e-2 * np.exp(-2.0j), 0.0])
        output = tx_amplify(incident, amp)
        assert abs(output[0]) ** 2 == pytest.approx(1e-4)
        assert abs(output[1]) ** 2 == pytest.approx(0.01)
        assert np.angle(output[0]) == pytest.approx(-0.7)
        assert np.angle(output[1]) == pytest.approx(2.0)
        assert output[2] == 0


class TestRunResonance:
    def test_linear_loop_converges_to_dominant_singular_vector(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            rx_origin = (rng.uniform(-0.5, 1.5), rng.uniform(-0.5, 0.5), rng.uniform(0.8, 2.0))
            scenario = _scenario(rows=int(rng.integers(2, 6)), rx_origin=rx_origin)
            channel = _channel(scenario)
            sigma, v = channel.dominant_mode()
            amp = AmplifierModel(gain_linear=1.0 / (DELTA * sigma ** 4), p_saturation=None)

            state = run_resonance(scenario, channel, amp, DELTA, tolerance=1e-8, max_iterations=20000)

            alignment = abs(np.vdot(v, state.tx_amplitudes)) / np.linalg.norm(state.tx_amplitudes)
            assert state.converged
            assert alignment >= 0.999
            assert state.efficiency == pytest.approx(sigma ** 2, rel=1e-4)

    def test_single_element_converges_at_second_round_trip(self):
        scenario = _scenario(rows=1, rx_origin=(0.0, 0.0, 1.0))
        channel = _channel(scenario)
        c = abs(channel.entries[0, 0])
        amp = AmplifierModel(gain_linear=1.0 / (DELTA * c ** 4), p_saturation=None)

        state = run_resonance(scenario, channel, amp, DELTA)

        assert state.converged
        assert state.iteration == 2
        assert len(state.power_history) == 2

    def test_growing_linear_loop_has_non_decreasing_rx_power(self):
        scenario = _scenario(rows=4)
        channel = _channel(scenario)
        c = channel.entries
        a0 = np.full(c.shape[1], math.sqrt(1e-3 / c.shape[1]), dtype=complex)
        r0 = np.linalg.norm(c @ (c.conj().T @ (c @ a0))) ** 2 / np.linalg.norm(c @ a0) ** 2
        amp = AmplifierModel(gain_linear=2.0 / (DELTA * r0), p_saturation=None)

        state = run_resonance(scenario, channel, amp, DELTA, max_iterations=50)

        p_rx = np.array([record.p_rx_total for record in state.power_history])
        assert not state.converged
        assert len(p_rx) == 50
        assert np.all(np.diff(p_rx) >= 0)

    def test_unity_loop_holds_the_initial_power(self):
        scenario = _scenario(rows=4)
        channel = _channel(scenario)
        sigma, _ = channel.dominant_mode()
        amp = AmplifierModel.unity_loop(channel, DELTA)

        state = run_resonance(scenario, channel, amp, DELTA, tolerance=1e-8, max_iterations=20000)

        assert amp.linear
        assert amp.gain_linear == pytest.approx(1.0 / (DELTA * sigma ** 4))
        assert state.converged
        assert state.loop_gain == pytest.approx(1.0, abs=1e-4)
        assert state.efficiency == pytest.approx(sigma ** 2, rel=1e-4)

    def test_unity_loop_rejects_bad_reflection(self):
        with pytest.raises(ResonanceError):
            AmplifierModel.unity_loop(_channel(_scenario(rows=2)), 0.0)

    def test_rx_power_grows_from_the_first_round_trip(self, small_scenario):
        channel = _channel(small_scenario)
        state = run_resonance(small_scenario, channel, AmplifierModel.from_db(90.0, 0.01), DELTA)

        assert state.converged
        assert state.power_history[-1].p_rx_total > state.power_history[0].p_rx_total

    def test_echo_level_after_gain_stage_is_clipped(self, small_scenario):
        channel = _channel(small_scenario)
        amp = AmplifierModel.from_db(90.0, 0.01)
        state = run_resonance(small_scenario, channel, amp, DELTA)

        incident = state.echo_power()
        amplified = state.echo_power(amp=amp)
        assert amplified <= 0.01 * (1 + 1e-9)
        assert amplified == pytest.approx(np.mean(np.minimum(amp.gain_linear * np.abs(state.tx_incident) ** 2, 0.01)))
        assert incident < amplified
        assert state.echo_power(np.arange(4)) == pytest.approx(np.mean(np.abs(state.tx_incident[:4]) ** 2))

    def test_saturated_loop_respects_output_cap(self, small_scenario):
        channel = _channel(small_scenario)
        amp = AmplifierModel.from_db(90.0, 0.01)

        state = run_resonance(small_scenario, channel, amp, DELTA, snapshot_iterations=range(1, 301))

        assert state.converged
        assert state.saturated_elements > 0
        assert state.snapshots
        for amplitudes in state.snapshots.values():
            assert np.max(np.abs(amplitudes) ** 2) <= 0.01 * (1 + 1e-9)
        np.testing.assert_allclose(state.snapshots[1], math.sqrt(1e-3 / 64))

    def test_history_matches_channel_power(self, small_scenario):
        channel = _channel(small_scenario)
        state = run_resonance(small_scenario, channel, AmplifierModel.from_db(90.0, 0.01), DELTA)
        last = state.power_history[-1]
        _, p_rx = receive_power(channel, state.tx_amplitudes)
        assert last.p_rx_total == pytest.approx(p_rx)
        assert last.p_tx_total == pytest.approx(state.p_tx_total)
        assert state.p_rx_total == pytest.approx(p_rx)
        assert [r.iteration for r in state.power_history] == list(range(1, state.iteration + 1))

    def test_nominal_gain_loop_decays(self, small_scenario):
        channel = _channel(small_scenario)
        state = run_resonance(small_scenario, channel, AmplifierModel.from_db(24.0, 0.01), DELTA, max_iterations=500)

        p_tx = [record.p_tx_total for record in state.power_history]
        assert not state.converged
        assert state.loop_gain < 1.0
        assert state.iteration < 500
        assert p_tx[-1] < p_tx[0]

    def test_tx_phase_offset_keeps_power_with_saturation(self, small_scenario):
        channel = _channel(small_scenario)
        amp = AmplifierModel.from_db(90.0, 0.01)
        base = run_resonance(small_scenario, channel, amp, DELTA)
        offset = run_resonance(small_scenario, channel, amp, DELTA, tx_delta_phi=0.3)
        assert offset.efficiency == pytest.approx(base.efficiency, rel=1e-3)

    def test_efficiency_stays_physical(self, small_scenario):
        for tx in ("tx1", "tx2"):
            channel = _channel(small_scenario, tx)
            state = run_resonance(small_scenario, channel, AmplifierModel.from_db(90.0, 0.01), DELTA)
            assert 0.0 < state.efficiency <= 1.0
            assert state.array_id == tx

    def test_invalid_arguments(self, small_scenario):
        channel = _channel(small_scenario)
        amp = AmplifierModel.from_db(20.0)
        with pytest.raises(ResonanceError):
            run_resonance(small_scenario, channel, amp, DELTA, initial_tx_power=0.0)
        with pytest.raises(ResonanceError):
            run_resonance(small_scenario, channel, amp, 0.0)
        with pytest.raises(ResonanceError):
            run_resonance(small_scenario, channel, amp, DELTA, max_iterations=0)

    def test_channel_must_match_scenario(self, small_scenario):
        channel = _channel(_scenario(rows=4))
        with pytest.raises(ResonanceError):
            run_resonance(small_scenario, channel, AmplifierModel.from_db(20.0), DELTA)


class TestFieldMap:
    @pytest.fixture
    def steered(self):
        scenario = _scenario(rows=8, rx_origin=(1.5, 0.0, 2.0), tx2_origin=(3.0, 0.0, 0.0))
        state = run_resonance(
            scenario, _channel(scenario), AmplifierModel.from_db(90.0, 0.01), DELTA, snapshot_iterations=(1,)
        )
        return scenario, state

    def test_grid_from_config(self):
        points = grid_from_config(FieldMapConfig(bounds_min=(0, 0, 1), bounds_max=(1, 2, 1), points=(3, 5, 1)))
        assert points.shape == (15, 3)
        np.testing.assert_allclose(points[:, 2], 1.0)
        assert points[:, 1].max() == pytest.approx(2.0)

    def test_resonance_concentrates_power_on_the_link(self, steered):
        scenario, state = steered
        plane = FieldMapConfig(bounds_min=(-1.0, 0.0, 1.0), bounds_max=(2.5, 0.0, 2.5), points=(36, 1, 16))
        pattern = GainPattern.from_dbi(4.97)
        initial = compute_field_map(state, scenario, plane, pattern, iteration=1)
        final = compute_field_map(state, scenario, plane, pattern)

        start, end = scenario.tx1.origin, scenario.rx.origin
        assert initial.iteration_snapshot == 1
        assert final.iteration_snapshot == state.iteration
        assert final.shape == (36, 1, 16)
        assert final.power_fraction_within(start, end, 0.3) > initial.power_fraction_within(start, end, 0.3)
        assert final.sidelobe_to_peak(start, end, 0.3) < initial.sidelobe_to_peak(start, end, 0.3)

    def test_density_matches_single_element_far_field(self):
        scenario = _scenario(rows=1, rx_origin=(0.0, 0.0, 1.0))
        state = run_resonance(scenario, _channel(scenario), AmplifierModel.from_db(20.0), DELTA, max_iterations=1)
        point = np.array([[0.0, 0.0, 2.0]])
        field_map = compute_field_map(state, scenario, point)
        p_tx = state.p_tx_total
        assert field_map.peak_density == pytest.approx(p_tx / (4 * math.pi * 4.0))

    def test_combined_map_adds_densities(self, steered):
        scenario, state = steered
        points = np.array([[0.5, 0.0, 1.0], [1.0, 0.2, 1.5]])
        one = compute_field_map(state, scenario, points)
        both = one.combine(one)
        np.testing.assert_allclose(both.power_density, 2 * one.power_density)

    def test_combine_needs_same_grid(self):
        a = FieldMap(np.zeros((2, 3)), np.ones(2), 1)
        b = FieldMap(np.ones((2, 3)), np.ones(2), 1)
        with pytest.raises(ResonanceError):
            a.combine(b)

    def test_point_on_element_rejected(self, steered):
        scenario, state = steered
        with pytest.raises(ResonanceError, match="coincides"):
            compute_field_map(state, scenario, scenario.tx1.world_positions[:1])

    def test_unknown_snapshot(self, steered):
        scenario, state = steered
        with pytest.raises(ResonanceError):
            compute_field_map(state, scenario, np.array([[0.0, 0.0, 1.0]]), iteration=99999)
