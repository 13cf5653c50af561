import os
from dataclasses import dataclass
from dotenv import load_dotenv

from src.utils.errors import ConfigError


@dataclass(frozen=True)
class Config:
    output_dir: str
    code_attribute: str
    jobs: int
    seed: int
    log_level: str


def load_config() -> Config:
    load_dotenv()

    def _int(name: str, default: int) -> int:
        v = os.getenv(name)
        if v is None or not v.strip():
            return default
        try:
            return int(v)
        except ValueError as e:
            raise ConfigError(f"{name} must be an integer, got {v!r}") from e

    return Config(
        output_dir=os.getenv("LANDUSE_OUTPUT_DIR", "output"),
        code_attribute=os.getenv("LANDUSE_CODE_ATTRIBUTE", "code_2018"),
        jobs=max(1, _int("LANDUSE_JOBS", 1)),
        seed=_int("LANDUSE_SEED", 42),
        log_level=os.getenv("LOG_LEVEL", "INFO").upper(),
    )
