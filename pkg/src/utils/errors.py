from __future__ import annotations

from typing import Optional


class LandUseError(Exception):
    exit_code = 1


class ConfigError(LandUseError):
    exit_code = 2


class DataError(LandUseError):
    exit_code = 3


class GeometryError(DataError):
    pass


class MiningError(DataError):
    pass


class EmbeddingError(DataError):
    pass


class ClusteringError(DataError):
    pass


class RenderError(DataError):
    pass


class StageError(LandUseError):
    """A pipeline stage failed. Carries the stage name and, for per-city stages, the city."""

    exit_code = 4

    def __init__(self, stage: str, message: str, city: Optional[str] = None) -> None:
        self.stage = stage
        self.city = city
        where = f"{stage}[{city}]" if city else stage
        super().__init__(f"stage {where} failed: {message}")
