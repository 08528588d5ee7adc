"""
Command-line interface
rbpos resonate|doa|locate <scenario.yml>, rbpos sweep|rmse <experiment.yml>
"""

import argparse
import logging
import sys
from typing import List, Optional

from src import __version__
from src.core.errors import SimulationError
from src.infrastructure.logging_config import LOG_FORMATS, configure_logging
from src.infrastructure.result_exporter import EXPORT_FORMATS, ResultExporter
from src.infrastructure.settings import (
    RuntimeSettings,
    load_experiment_spec,
    load_runtime_settings,
    load_simulation_config,
)
from src.orchestrator import PositioningOrchestrator

logger = logging.getLogger(__name__)


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Trial seed (locate/doa) or master seed (sweep/rmse)")
    common.add_argument("--out-dir", default=None, help="Artifact root directory (env RBPOS_OUT_DIR)")
    common.add_argument("--threads", type=int, default=None, help="Worker threads (env RBPOS_THREADS)")
    common.add_argument("--trials", type=int, default=None, help="Override the Monte Carlo trial count K")
    common.add_argument("--log-level", default=None, help="Logging level (env RBPOS_LOG_LEVEL)")
    common.add_argument("--log-format", choices=LOG_FORMATS, default=None, help="Log record format")
    common.add_argument("--quiet", action="store_true", help="Only log warnings and errors")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rbpos", description="Resonant beam positioning simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    common = _common_flags()

    for name, target, help_text in (
        ("resonate", "scenario", "Run both resonators; write power histories and field maps"),
        ("doa", "scenario", "Write the MUSIC pseudospectrum at each transmitter"),
        ("locate", "scenario", "Single end-to-end positioning run"),
        ("sweep", "experiment", "Run the experiment kind declared in the experiment file"),
        ("rmse", "experiment", "Run the experiment as an RMSE sweep"),
    ):
        sub = subparsers.add_parser(name, parents=[common], help=help_text)
        sub.add_argument(target, help=f"Path to the {target} YAML/JSON file")
        if target == "experiment":
            sub.add_argument("--format", choices=EXPORT_FORMATS, default="csv", help="Result table format")
        elif name == "resonate":
            sub.add_argument(
                "--export-channel", action="store_true", help="Also write both Tx-to-Rx channel matrices"
            )
    return parser


def _cmd_resonate(args, runtime: RuntimeSettings, orchestrator: PositioningOrchestrator) -> List[str]:
    config = load_simulation_config(args.scenario)
    links, maps = orchestrator.resonate(config)
    exporter = ResultExporter(runtime.out_dir, config.name)
    written = []
    for tx_id, link in links.links.items():
        state = link.resonance
        written.append(exporter.write_power_history(state))
        print(
            f"{tx_id}: {'converged' if state.converged else 'not converged'} after {state.iteration} round trips, "
            f"efficiency {state.efficiency:.6f}, P_T {state.p_tx_total:.6g} W, P_R {state.p_rx_total:.6g} W"
        )
    for label, field_map in maps.items():
        written.extend(exporter.write_field_map(field_map, label))
    if args.export_channel:
        for link in links.links.values():
            written.append(exporter.write_channel(link.channel))
    return [str(path) for path in written]


def _cmd_doa(args, runtime: RuntimeSettings, orchestrator: PositioningOrchestrator) -> List[str]:
    config = load_simulation_config(args.scenario)
    spectra = orchestrator.music_spectra(config, seed=args.seed or 0)
    exporter = ResultExporter(runtime.out_dir, config.name)
    written = []
    for tx_id, spectrum in spectra.items():
        peak = spectrum.peak.direction
        print(f"{tx_id}: peak theta {peak.elevation_deg:.4f} deg, phi {peak.azimuth_deg:.4f} deg")
        written.append(exporter.write_spectrum(spectrum, tx_id))
    return [str(path) for path in written]


def _cmd_locate(args, runtime: RuntimeSettings, orchestrator: PositioningOrchestrator) -> List[str]:
    config = load_simulation_config(args.scenario)
    seed = args.seed or 0
    result = orchestrator.run_pipeline(config, seed=seed)

    x_hat, y_hat, z_hat = (float(c) for c in result.position.coordinates)
    x, y, z = (float(c) for c in result.truth)
    record = {
        "seed": seed,
        "x_hat": x_hat, "y_hat": y_hat, "z_hat": z_hat,
        "x_true": x, "y_true": y, "z_true": z,
        "err_norm": result.error_m,
        "theta1_deg": result.doa1.direction.elevation_deg, "phi1_deg": result.doa1.direction.azimuth_deg,
        "theta2_deg": result.doa2.direction.elevation_deg, "phi2_deg": result.doa2.direction.azimuth_deg,
        "range_r1": result.position.range_r1,
        "condition_flag": result.position.condition_flag.value,
    }
    print(f"position ({x_hat:.6f}, {y_hat:.6f}, {z_hat:.6f}) m, error {result.error_m * 1e3:.3f} mm")

    exporter = ResultExporter(runtime.out_dir, config.name)
    return [str(exporter.write_position(record, fmt)) for fmt in EXPORT_FORMATS]


def _cmd_experiment(args, runtime: RuntimeSettings, orchestrator: PositioningOrchestrator) -> List[str]:
    spec = load_experiment_spec(args.experiment)
    updates = {}
    if args.trials is not None:
        if args.trials < 1:
            raise SimulationError(f"--trials must be >= 1, got {args.trials}", stage="config")
        updates["monte_carlo_k"] = args.trials
    if args.seed is not None:
        updates["master_seed"] = args.seed
    if updates:
        spec = spec.model_copy(update=updates)

    table = orchestrator.sweep_rmse(spec) if args.command == "rmse" else orchestrator.run_experiment(spec)
    print(table.to_frame().to_string(index=False))

    exporter = ResultExporter(runtime.out_dir, spec.name)
    written = exporter.write_table(table, args.format, spec.outputs)
    written.append(exporter.write_spec(spec.model_dump(mode="json")))
    return [str(path) for path in written]


COMMANDS = {
    "resonate": _cmd_resonate,
    "doa": _cmd_doa,
    "locate": _cmd_locate,
    "sweep": _cmd_experiment,
    "rmse": _cmd_experiment,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        env = load_runtime_settings()
        runtime = RuntimeSettings(
            threads=args.threads if args.threads is not None else env.threads,
            out_dir=args.out_dir or env.out_dir,
            log_level="WARNING" if args.quiet else (args.log_level or env.log_level).upper(),
            log_format=args.log_format or env.log_format,
        )
        configure_logging(runtime.log_level, runtime.log_format)
        if runtime.threads < 1:
            raise SimulationError(f"--threads must be >= 1, got {runtime.threads}", stage="config")

        orchestrator = PositioningOrchestrator(threads=runtime.threads)
        written = COMMANDS[args.command](args, runtime, orchestrator)
    except SimulationError as e:
        print(str(e), file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"[config] {e}", file=sys.stderr)
        return 1

    for path in written:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
