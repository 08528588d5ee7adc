"""
Shared fixtures: small 8x8 scenarios that resonate in a fraction of a second
"""

import copy

import pytest
import yaml

from src.core.geometry.scenario import build_scenario
from src.infrastructure.settings import parse_experiment_spec, parse_simulation_config

SMALL_ARRAY = {"rows": 8, "cols": 8, "spacing_m": 0.005}

# 8x8 links at ~3 m have sigma_1^2 near 1e-3, so the loop needs ~90 dB to saturate.
# Their incident echo sits far below the noise, so DOA reads the clipped
# amplifier output instead.
SMALL_CONFIG = {
    "name": "small",
    "scenario": {
        "tx1": {"origin": [0.0, 0.0, 0.0], **SMALL_ARRAY},
        "tx2": {"origin": [2.0, 0.0, 0.0], **SMALL_ARRAY},
        "rx": {"origin": [0.5, 1.0, 2.5], "boresight": [0.0, 0.0, -1.0], **SMALL_ARRAY},
    },
    "amplifier": {"gain_db": 90.0, "p_saturation_w": 0.01},
    "resonance": {"max_iterations": 300},
    "doa": {"coarse_step_deg": 2.0, "snapshots": 256, "echo_tap": "amplified"},
    "field_map": {"bounds_min": [-0.5, -0.5, 1.0], "bounds_max": [2.5, 1.5, 3.0], "points": [7, 5, 5]},
    "noise_power_w": 2.0e-5,
}


@pytest.fixture
def small_config_data():
    return copy.deepcopy(SMALL_CONFIG)


@pytest.fixture
def small_config(small_config_data):
    return parse_simulation_config(small_config_data)


@pytest.fixture
def small_scenario(small_config):
    return build_scenario(small_config.scenario)


@pytest.fixture
def small_spec_data(small_config_data):
    return {
        **small_config_data,
        "name": "small_sweep",
        "kind": "rmse",
        "sweep": {"parameter": "rx_x", "values": [1.0, 0.5]},
        "monte_carlo_k": 3,
        "master_seed": 11,
    }


@pytest.fixture
def small_spec(small_spec_data):
    return parse_experiment_spec(small_spec_data)


@pytest.fixture
def write_yaml(tmp_path):
    def write(name, data):
        path = tmp_path / name
        path.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")
        return path

    return write
