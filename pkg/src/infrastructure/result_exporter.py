"""
Result Export
CSV/JSON artifacts for sweeps, trials, resonator histories, field maps and spectra
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import yaml

from src.core.channel.propagation import ChannelMatrix
from src.core.doa.music import MusicSpectrum
from src.core.errors import ExportError
from src.core.resonance.resonator import FieldMap, ResonanceState

logger = logging.getLogger(__name__)

RESULT_COLUMNS = [
    "series", "sweep_value", "trials", "failures", "rmse_m", "err_min",
    "err_median", "err_max", "mean_doa_err_deg", "mean_efficiency", "error",
]
TRIAL_COLUMNS = [
    "series", "sweep_value", "trial", "seed", "x_hat", "y_hat", "z_hat",
    "err_x", "err_y", "err_z", "err_norm",
]
CSV_ONLY_SKIP = ("timestamp",)
EXPORT_FORMATS = ("csv", "json")


class ArtifactType(Enum):
    RESULTS = "results"
    TRIALS = "trials"
    POWER_HISTORY = "power_history"
    FIELD_MAP = "field_map"
    FIELD_GRID = "field_grid"
    SPECTRUM = "spectrum"
    CHANNEL = "channel"
    POSITION = "position"
    SPEC = "spec"


@dataclass
class ResultRow:
    series: str
    sweep_value: float
    trials: int
    failures: int
    rmse_m: float = float("nan")
    err_min: float = float("nan")
    err_median: float = float("nan")
    err_max: float = float("nan")
    mean_doa_err_deg: float = float("nan")
    mean_efficiency: float = float("nan")
    error: str = ""


@dataclass
class TrialRecord:
    series: str
    sweep_value: float
    trial: int
    seed: int
    x_hat: float
    y_hat: float
    z_hat: float
    err_x: float
    err_y: float
    err_z: float
    err_norm: float


def _same(a: Any, b: Any) -> bool:
    if isinstance(a, float) and isinstance(b, float):
        return (math.isnan(a) and math.isnan(b)) or a == b
    return a == b


def _records_equal(left: list, right: list) -> bool:
    if len(left) != len(right):
        return False
    return all(
        _same(getattr(a, f.name), getattr(b, f.name))
        for a, b in zip(left, right)
        for f in fields(a)
    )


@dataclass(eq=False)
class ResultTable:
    rows: List[ResultRow]
    trials: List[TrialRecord] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(row) for row in self.rows], columns=RESULT_COLUMNS)

    def trials_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(t) for t in self.trials], columns=TRIAL_COLUMNS)

    def equals(self, other: "ResultTable", include_metadata: bool = True) -> bool:
        same_rows = _records_equal(self.rows, other.rows) and _records_equal(self.trials, other.trials)
        if not include_metadata:
            return same_rows
        return same_rows and self.metadata == other.metadata


@dataclass
class Artifact:
    artifact_type: ArtifactType
    path: Path


def _guard_write(path: Path, writer) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        writer(path)
    except OSError as e:
        raise ExportError(f"cannot write {path}: {e}")
    logger.debug(f"Wrote {path}")
    return path


def _metadata_header(metadata: Dict[str, Any]) -> str:
    return "".join(
        f"# {key}: {metadata[key]}\n" for key in sorted(metadata) if key not in CSV_ONLY_SKIP
    )


def _json_ready(value: Any) -> Any:
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def export_results(table: ResultTable, fmt: str, path: Union[str, Path]) -> Path:
    """
    Write a ResultTable; CSV carries metadata as leading '# key: value' lines

    Column order is RESULT_COLUMNS. CSV output omits the timestamp so
    identical inputs give byte-identical files.
    """
    if not table.rows:
        raise ExportError("refusing to export an empty result table")
    if fmt not in EXPORT_FORMATS:
        raise ExportError(f"unknown export format '{fmt}'")
    path = Path(path)

    if fmt == "csv":
        def write(target: Path):
            with open(target, "w", encoding="utf-8", newline="") as fh:
                fh.write(_metadata_header(table.metadata))
                table.to_frame().to_csv(fh, index=False, lineterminator="\n")
    else:
        document = {
            "metadata": table.metadata,
            "columns": RESULT_COLUMNS,
            "rows": [{k: _json_ready(v) for k, v in asdict(row).items()} for row in table.rows],
            "trials": [{k: _json_ready(v) for k, v in asdict(t).items()} for t in table.trials],
        }

        def write(target: Path):
            target.write_text(json.dumps(document, indent=2, default=str) + "\n", encoding="utf-8")

    return _guard_write(path, write)


def export_trials(table: ResultTable, path: Union[str, Path]) -> Path:
    path = Path(path)

    def write(target: Path):
        with open(target, "w", encoding="utf-8", newline="") as fh:
            fh.write(_metadata_header(table.metadata))
            table.trials_frame().to_csv(fh, index=False, lineterminator="\n")

    return _guard_write(path, write)


def _read_commented_csv(path: Path, **kwargs) -> Tuple[Dict[str, Any], pd.DataFrame]:
    metadata: Dict[str, Any] = {}
    skip = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("# "):
                break
            key, _, value = line[2:].rstrip("\n").partition(": ")
            metadata[key] = int(value) if key == "master_seed" else value
            skip += 1
    frame = pd.read_csv(
        path, skiprows=skip, keep_default_na=False, na_values=[""], float_precision="round_trip", **kwargs
    )
    return metadata, frame


def _float(value: Any) -> float:
    return float("nan") if value is None else float(value)


def _rows_from_frame(frame: pd.DataFrame) -> List[ResultRow]:
    rows = []
    for record in frame.to_dict(orient="records"):
        error = record["error"]
        rows.append(ResultRow(
            series="" if record["series"] is None or isinstance(record["series"], float) else str(record["series"]),
            sweep_value=_float(record["sweep_value"]),
            trials=int(record["trials"]),
            failures=int(record["failures"]),
            rmse_m=_float(record["rmse_m"]),
            err_min=_float(record["err_min"]),
            err_median=_float(record["err_median"]),
            err_max=_float(record["err_max"]),
            mean_doa_err_deg=_float(record["mean_doa_err_deg"]),
            mean_efficiency=_float(record["mean_efficiency"]),
            error="" if error is None or isinstance(error, float) else str(error),
        ))
    return rows


def _trials_from_records(records: List[Dict[str, Any]]) -> List[TrialRecord]:
    trials = []
    for record in records:
        values = {}
        for f in fields(TrialRecord):
            raw = record[f.name]
            if f.type is int:
                values[f.name] = int(raw)
            elif f.type is str:
                values[f.name] = "" if raw is None or isinstance(raw, float) else str(raw)
            else:
                values[f.name] = float("nan") if raw is None else float(raw)
        trials.append(TrialRecord(**values))
    return trials


def load_results(path: Union[str, Path], trials_path: Optional[Union[str, Path]] = None) -> ResultTable:
    """Parse a results CSV or JSON file back into a ResultTable"""
    path = Path(path)
    try:
        if path.suffix == ".json":
            document = json.loads(path.read_text(encoding="utf-8"))
            frame = pd.DataFrame(document["rows"], columns=RESULT_COLUMNS)
            return ResultTable(
                rows=_rows_from_frame(frame),
                trials=_trials_from_records(document.get("trials", [])),
                metadata=document.get("metadata", {}),
            )

        metadata, frame = _read_commented_csv(path)
        trials: List[TrialRecord] = []
        if trials_path is not None:
            _, trial_frame = _read_commented_csv(Path(trials_path), converters={"seed": int})
            trials = _trials_from_records(trial_frame.to_dict(orient="records"))
        return ResultTable(rows=_rows_from_frame(frame), trials=trials, metadata=metadata)
    except (OSError, KeyError, ValueError) as e:
        raise ExportError(f"cannot load results from {path}: {e}")


def export_power_history(state: ResonanceState, path: Union[str, Path]) -> Path:
    frame = pd.DataFrame(
        [asdict(record) for record in state.power_history],
        columns=["iteration", "p_tx_total", "p_rx_total", "efficiency"],
    )
    return _guard_write(Path(path), lambda target: frame.to_csv(target, index=False, lineterminator="\n"))


def export_field_map(field_map: FieldMap, path: Union[str, Path]) -> Path:
    points = field_map.grid_points
    frame = pd.DataFrame({
        "x": points[:, 0], "y": points[:, 1], "z": points[:, 2],
        "power_density": field_map.power_density,
    })
    return _guard_write(Path(path), lambda target: frame.to_csv(target, index=False, lineterminator="\n"))


def export_field_grid(field_map: FieldMap, path: Union[str, Path]) -> Path:
    """Dense grid file: header with nx ny nz and bounds, then densities in C order"""
    if field_map.shape is None:
        raise ExportError("field map was not sampled on a box grid")
    points = field_map.grid_points
    bounds = " ".join(f"{float(lo)!r} {float(hi)!r}" for lo, hi in zip(points.min(axis=0), points.max(axis=0)))
    header = f"nx ny nz: {' '.join(str(n) for n in field_map.shape)}\nbounds: {bounds}"
    return _guard_write(
        Path(path),
        lambda target: np.savetxt(target, field_map.power_density, header=header, fmt="%.10e"),
    )


def export_spectrum(spectrum: MusicSpectrum, path: Union[str, Path]) -> Path:
    tt, pp = np.meshgrid(np.degrees(spectrum.theta_grid), np.degrees(spectrum.phi_grid), indexing="ij")
    frame = pd.DataFrame({
        "theta_deg": tt.ravel(),
        "phi_deg": pp.ravel(),
        "pseudospectrum_db": spectrum.to_db().ravel(),
    })
    return _guard_write(Path(path), lambda target: frame.to_csv(target, index=False, lineterminator="\n"))


def export_channel(channel: ChannelMatrix, path: Union[str, Path]) -> Path:
    """Row-major magnitude/phase listing with a dimensions header"""
    rows, cols = channel.shape
    rr, cc = np.divmod(np.arange(rows * cols), cols)
    flat = channel.entries.ravel()
    frame = pd.DataFrame({
        "row": rr, "col": cc,
        "magnitude": np.abs(flat), "phase_rad": np.angle(flat),
    })

    def write(target: Path):
        with open(target, "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# rows: {rows}\n# cols: {cols}\n# wavelength: {channel.wavelength!r}\n")
            frame.to_csv(fh, index=False, lineterminator="\n")

    return _guard_write(Path(path), write)


class ResultExporter:
    """Writes one run's artifacts under <out_dir>/<experiment>/<timestamp>/"""

    def __init__(self, out_dir: Union[str, Path], experiment: str, timestamp: Optional[str] = None):
        self.timestamp = timestamp or datetime.now().strftime("%Y%m%dT%H%M%S")
        self.run_dir = Path(out_dir) / experiment / self.timestamp
        self.artifacts: List[Artifact] = []
        logger.info(f"Result exporter writing to {self.run_dir}")

    def _record(self, artifact_type: ArtifactType, path: Path) -> Path:
        self.artifacts.append(Artifact(artifact_type, path))
        return path

    def write_table(self, table: ResultTable, fmt: str = "csv", outputs=("results", "trials")) -> List[Path]:
        table.metadata.setdefault("timestamp", self.timestamp)
        written = []
        if "results" in outputs:
            written.append(self._record(
                ArtifactType.RESULTS, export_results(table, fmt, self.run_dir / f"results.{fmt}")
            ))
        if "trials" in outputs and table.trials and fmt == "csv":
            written.append(self._record(ArtifactType.TRIALS, export_trials(table, self.run_dir / "trials.csv")))
        return written

    def write_spec(self, spec_document: Dict[str, Any]) -> Path:
        def write(target: Path):
            target.write_text(yaml.safe_dump(spec_document, sort_keys=False), encoding="utf-8")

        return self._record(ArtifactType.SPEC, _guard_write(self.run_dir / "spec.yml", write))

    def write_power_history(self, state: ResonanceState) -> Path:
        path = self.run_dir / f"power_history_{state.array_id}.csv"
        return self._record(ArtifactType.POWER_HISTORY, export_power_history(state, path))

    def write_field_map(self, field_map: FieldMap, label: str = "combined") -> List[Path]:
        written = [self._record(
            ArtifactType.FIELD_MAP, export_field_map(field_map, self.run_dir / f"field_map_{label}.csv")
        )]
        if field_map.shape is not None:
            written.append(self._record(
                ArtifactType.FIELD_GRID, export_field_grid(field_map, self.run_dir / f"field_grid_{label}.txt")
            ))
        return written

    def write_spectrum(self, spectrum: MusicSpectrum, label: str) -> Path:
        return self._record(ArtifactType.SPECTRUM, export_spectrum(spectrum, self.run_dir / f"spectrum_{label}.csv"))

    def write_channel(self, channel: ChannelMatrix) -> Path:
        path = self.run_dir / f"channel_{channel.source}_{channel.destination}.csv"
        return self._record(ArtifactType.CHANNEL, export_channel(channel, path))

    def write_position(self, record: Dict[str, Any], fmt: str = "csv") -> Path:
        path = self.run_dir / f"position.{fmt}"
        if fmt == "json":
            document = {k: _json_ready(v) for k, v in record.items()}

            def write(target: Path):
                target.write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")
        else:
            frame = pd.DataFrame([record])

            def write(target: Path):
                frame.to_csv(target, index=False, lineterminator="\n")

        return self._record(ArtifactType.POSITION, _guard_write(path, write))
