"""
Stage-tagged exceptions shared by every simulation component
"""

from typing import Optional


class SimulationError(ValueError):
    """Base error; renders as ``[stage] message``"""

    stage = "simulation"

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(message)
        if stage is not None:
            self.stage = stage
        self.message = message

    def __str__(self) -> str:
        return f"[{self.stage}] {self.message}"


class ConfigError(SimulationError):
    stage = "config"


class GeometryError(SimulationError):
    stage = "geometry"


class ChannelError(SimulationError):
    stage = "channel"


class ResonanceError(SimulationError):
    stage = "resonance"


class DoaError(SimulationError):
    stage = "doa"


class TriangulationError(SimulationError):
    """Raised for rays that cannot form a triangle with the baseline"""

    stage = "triangulation"

    def __init__(self, message: str, condition_flag: str = "near_degenerate"):
        super().__init__(message)
        self.condition_flag = condition_flag


class ExportError(SimulationError):
    stage = "export"
