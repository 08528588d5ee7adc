#!/usr/bin/env python3
"""
Compare resonator efficiency and positioning error across array sizes
Usage: python scripts/compare_array_sizes.py <scenario.yml> [size ...]
"""

import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.core.errors import SimulationError
from src.infrastructure.settings import load_simulation_config
from src.orchestrator import PositioningOrchestrator, apply_overrides

DEFAULT_SIZES = (10, 20, 40)


def main():
    if len(sys.argv) < 2:
        print("Usage: python scripts/compare_array_sizes.py <scenario.yml> [size ...]")
        sys.exit(1)

    scenario_path = sys.argv[1]
    if not os.path.exists(scenario_path):
        print(f"Error: scenario file not found: {scenario_path}")
        sys.exit(1)

    sizes = [int(s) for s in sys.argv[2:]] or list(DEFAULT_SIZES)
    config = load_simulation_config(scenario_path)
    orchestrator = PositioningOrchestrator(threads=1)

    print("=" * 80)
    print("ARRAY SIZE COMPARISON")
    print("=" * 80)
    print(f"Scenario: {scenario_path}")
    print(f"Rx: {config.scenario.rx.origin}\n")

    results = {}
    for size in sizes:
        print(f"Testing {size}x{size} arrays...")
        print("-" * 80)
        start_time = time.time()
        try:
            result = orchestrator.run_pipeline(apply_overrides(config, {"array_size": size}))
        except SimulationError as e:
            print(f"✗ Failed: {e}\n")
            continue
        elapsed = time.time() - start_time

        efficiency = result.links.mean_efficiency
        results[size] = (efficiency, result.error_m)
        print(f"✓ Completed in {elapsed:.2f}s")
        print(f"  Mean efficiency: {efficiency:.2%}")
        for tx_id, link in result.links.links.items():
            state = link.resonance
            print(f"  {tx_id}: {state.iteration} round trips, converged={state.converged}")
        print(f"  Position error: {result.error_m * 1e3:.3f} mm")
        print()

    print("=" * 80)
    print("SUMMARY")
    print("=" * 80)
    print(f"{'size':>6} {'efficiency':>12} {'error (mm)':>12}")
    for size, (efficiency, error) in results.items():
        print(f"{size:>6} {efficiency:>12.4f} {error * 1e3:>12.3f}")
    print("=" * 80)


if __name__ == "__main__":
    main()
