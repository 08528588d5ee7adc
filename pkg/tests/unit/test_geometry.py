"""
Unit tests for array geometry, frames and the angle convention
"""

import math

import numpy as np
import pytest

from src.core.errors import GeometryError
from src.core.geometry.scenario import (
    ArrayGeometry,
    ArrayId,
    ElementGrid,
    SphericalDirection,
    build_scenario,
    count_far_field_violations,
    direction_to_unit_vector,
    far_field_distance,
    place_on_sphere,
    true_direction,
    unit_vector_to_direction,
    wrap_to_pi,
)
from src.infrastructure.settings import ScenarioConfig


class TestAngles:
    def test_wrap_to_pi_keeps_plus_pi(self):
        assert wrap_to_pi(math.pi) == pytest.approx(math.pi)
        assert wrap_to_pi(-math.pi) == pytest.approx(math.pi)
        assert wrap_to_pi(3 * math.pi) == pytest.approx(math.pi)
        assert wrap_to_pi(-0.5) == pytest.approx(-0.5)

    def test_wrap_to_pi_arrays(self):
        wrapped = wrap_to_pi(np.array([0.0, 2 * math.pi + 0.1, -math.pi - 0.1]))
        np.testing.assert_allclose(wrapped, [0.0, 0.1, math.pi - 0.1], atol=1e-12)

    def test_direction_wraps_azimuth(self):
        direction = SphericalDirection.from_degrees(30.0, 270.0)
        assert direction.azimuth_deg == pytest.approx(-90.0)

    def test_non_finite_direction_rejected(self):
        with pytest.raises(GeometryError):
            SphericalDirection(float("nan"), 0.0)

    def test_unit_vector_round_trip(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            theta = rng.uniform(0.01, math.pi - 0.01)
            phi = rng.uniform(-math.pi + 0.01, math.pi)
            back = unit_vector_to_direction(direction_to_unit_vector(SphericalDirection(theta, phi)))
            assert back.elevation_theta == pytest.approx(theta, abs=1e-12)
            assert back.azimuth_phi == pytest.approx(phi, abs=1e-12)

    def test_zero_vector_has_no_direction(self):
        with pytest.raises(GeometryError):
            unit_vector_to_direction([0.0, 0.0, 0.0])


class TestArrayGeometry:
    def test_grid_is_centred(self):
        grid = ElementGrid(4, 6, 0.005)
        positions = grid.element_positions
        assert positions.shape == (24, 3)
        np.testing.assert_allclose(positions.mean(axis=0), 0.0, atol=1e-15)
        assert positions[1, 0] - positions[0, 0] == pytest.approx(0.005)
        assert positions[6, 1] - positions[0, 1] == pytest.approx(0.005)

    def test_bad_grid(self):
        with pytest.raises(GeometryError):
            ElementGrid(0, 4, 0.005)
        with pytest.raises(GeometryError):
            ElementGrid(4, 4, 0.0)

    def test_rx_frame_faces_down(self):
        rx = ArrayGeometry(ElementGrid(2, 2, 0.005), origin=[0, 1, 3], boresight=[0, 0, -1])
        np.testing.assert_allclose(rx.rotation[:, 1], [0.0, -1.0, 0.0])
        np.testing.assert_allclose(rx.rotation @ rx.rotation.T, np.eye(3), atol=1e-15)
        np.testing.assert_allclose(rx.world_positions[:, 2], 3.0)

    def test_non_orthogonal_axes_rejected(self):
        with pytest.raises(GeometryError):
            ArrayGeometry(ElementGrid(2, 2, 0.005), origin=[0, 0, 0], boresight=[0, 0, 1], in_plane_axis=[0, 0.6, 0.8])
        with pytest.raises(GeometryError):
            ArrayGeometry(ElementGrid(2, 2, 0.005), origin=[0, 0, 0], boresight=[0, 0, 2])

    def test_direction_frames_are_inverse(self):
        geometry = ArrayGeometry(ElementGrid(2, 2, 0.005), origin=[0, 0, 0], boresight=[0, 0, -1])
        v = np.array([0.3, -0.2, 0.9])
        np.testing.assert_allclose(geometry.world_to_local_direction(geometry.local_to_world_direction(v)), v)

    def test_direction_round_trip_on_rotated_arrays(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            boresight = rng.normal(size=3)
            boresight /= np.linalg.norm(boresight)
            axis = np.cross(boresight, rng.normal(size=3))
            axis /= np.linalg.norm(axis)
            geometry = ArrayGeometry(
                ElementGrid(2, 2, 0.005), origin=rng.uniform(-1, 1, 3), boresight=boresight, in_plane_axis=axis
            )
            np.testing.assert_allclose(geometry.local_to_world_direction([0, 0, 1]), boresight, atol=1e-12)

            for _ in range(50):
                local = SphericalDirection(rng.uniform(0.05, math.pi - 0.05), rng.uniform(-math.pi + 0.01, math.pi))
                world = geometry.to_world(local)
                point = geometry.origin + 2.5 * direction_to_unit_vector(world)
                back = unit_vector_to_direction(geometry.world_to_local_direction(point - geometry.origin))
                assert back.elevation_theta == pytest.approx(local.elevation_theta, abs=1e-9)
                assert back.azimuth_phi == pytest.approx(local.azimuth_phi, abs=1e-9)

    def test_even_subarray_shares_origin(self):
        parent = ArrayGeometry(ElementGrid(8, 8, 0.005), origin=[1, 2, 3], name="tx1")
        sub, indices = parent.subarray(4, 4)
        assert indices[0] == 2 * 8 + 2
        assert len(indices) == 16
        np.testing.assert_allclose(sub.origin, parent.origin)
        np.testing.assert_allclose(sub.world_positions, parent.world_positions[indices], atol=1e-15)

    def test_odd_subarray_positions_coincide(self):
        parent = ArrayGeometry(ElementGrid(8, 8, 0.005), origin=[0, 0, 0], boresight=[0, 0, -1])
        sub, indices = parent.subarray(5, 5)
        np.testing.assert_allclose(sub.world_positions, parent.world_positions[indices], atol=1e-15)
        assert not np.allclose(sub.origin, parent.origin)

    def test_oversized_subarray(self):
        parent = ArrayGeometry(ElementGrid(4, 4, 0.005), origin=[0, 0, 0])
        with pytest.raises(GeometryError):
            parent.subarray(8, 8)


class TestScenario:
    def test_defaults(self):
        scenario = build_scenario(ScenarioConfig())
        assert scenario.wavelength == pytest.approx(0.00999308, rel=1e-6)
        assert scenario.baseline_d == pytest.approx(2.0)
        assert scenario.tx1.size == 1600
        assert scenario.far_field_ok
        assert scenario.array("rx") is scenario.rx
        assert scenario.array(ArrayId.TX2) is scenario.tx2

    def test_unknown_array_id(self, small_scenario):
        with pytest.raises(GeometryError):
            small_scenario.array("tx3")

    def test_far_field_distance_uses_element_pitch(self):
        assert far_field_distance(0.005, 0.01) == pytest.approx(0.005)

    def test_inconsistent_wavelength(self):
        with pytest.raises(GeometryError, match="inconsistent"):
            build_scenario(ScenarioConfig(frequency_hz=30e9, wavelength_m=0.02))

    def test_zero_baseline(self, small_config):
        config = small_config.scenario.model_copy(update={"tx2": small_config.scenario.tx1})
        with pytest.raises(GeometryError, match="baseline"):
            build_scenario(config)

    def test_far_field_violation_warns(self, small_config, caplog):
        rx = small_config.scenario.rx.model_copy(update={"origin": (0.0, 0.0, 0.004)})
        scenario = build_scenario(small_config.scenario.model_copy(update={"rx": rx}))
        assert not scenario.far_field_ok
        assert scenario.far_field_violations == count_far_field_violations(
            scenario.tx1, scenario.rx, scenario.wavelength
        ) + count_far_field_violations(scenario.tx2, scenario.rx, scenario.wavelength)
        assert "far-field" in caplog.text

    def test_true_direction_matches_reference_position(self):
        config = ScenarioConfig(rx={"origin": (1.0, 1.0, math.sqrt(6.0)), "boresight": (0.0, 0.0, -1.0)})
        scenario = build_scenario(config)
        rx = scenario.rx.origin
        tx1 = true_direction(scenario, ArrayId.TX1, rx)
        tx2 = true_direction(scenario, ArrayId.TX2, rx)
        assert (tx1.elevation_deg, tx1.azimuth_deg) == (pytest.approx(30.0), pytest.approx(45.0))
        assert (tx2.elevation_deg, tx2.azimuth_deg) == (pytest.approx(30.0), pytest.approx(135.0))

    def test_true_direction_at_origin(self, small_scenario):
        with pytest.raises(GeometryError):
            true_direction(small_scenario, "tx1", small_scenario.tx1.origin)

    def test_place_on_sphere_round_trip(self, small_scenario):
        direction = SphericalDirection.from_degrees(40.0, 15.0)
        point = place_on_sphere(small_scenario.tx1.origin, 4.5, direction)
        assert np.linalg.norm(point - small_scenario.tx1.origin) == pytest.approx(4.5)
        back = true_direction(small_scenario, "tx1", point)
        assert back.elevation_deg == pytest.approx(40.0)
        assert back.azimuth_deg == pytest.approx(15.0)

    def test_place_on_sphere_needs_positive_distance(self):
        with pytest.raises(GeometryError):
            place_on_sphere([0, 0, 0], 0.0, SphericalDirection(0.1, 0.0))
