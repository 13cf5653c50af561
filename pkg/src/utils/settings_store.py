import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.config.env import load_config
from src.utils.errors import ConfigError


DEFAULT_SWEEP_DISTANCES = [100.0, 125.0, 150.0, 175.0, 200.0]


class InputEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    city: str = Field(min_length=1)
    path: str = Field(min_length=1)


class UmapSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_neighbors: int = Field(default=15, ge=2)
    min_dist: float = Field(default=0.1, gt=0)
    epochs: int = Field(default=500, ge=1)
    learning_rate: float = Field(default=1.0, gt=0)
    spread: float = Field(default=1.0, gt=0)
    negative_sample_rate: int = Field(default=5, ge=0)
    repulsion_strength: float = Field(default=1.0, ge=0)


class RenderSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    width: int = Field(default=800, gt=0)
    height: int = Field(default=800, gt=0)
    margin: int = Field(default=60, ge=0)
    font_size: int = Field(default=11, gt=0)
    leaf_order: Literal["dendrogram", "input"] = "dendrogram"
    thumbnail_size: int = Field(default=160, gt=0)


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    inputs: List[InputEntry] = Field(min_length=1)
    code_attribute: str = "code_2018"
    buffer_distance_m: float = Field(default=100.0, ge=0)
    minsup_relative: float = Field(default=0.10, gt=0, le=1)
    embedding: Literal["pca", "umap"] = "umap"
    umap: UmapSettings = Field(default_factory=UmapSettings)
    k_min: int = Field(default=2, ge=2)
    k_max: int = Field(default=10, ge=2)
    cut_distance: Optional[float] = Field(default=None, ge=0)
    seed: int = 42
    output_dir: str = "output"
    colors: Dict[str, str] = Field(default_factory=dict)
    exclude_codes: List[str] = Field(default_factory=lambda: ["12210", "12220"])
    sweep_distances_m: List[float] = Field(default_factory=lambda: list(DEFAULT_SWEEP_DISTANCES), min_length=1)
    sweep_minsup_relative: float = Field(default=0.05, gt=0, le=1)
    jobs: int = Field(default=1, ge=1)
    render: RenderSettings = Field(default_factory=RenderSettings)

    @model_validator(mode="after")
    def _check_ranges(self) -> "PipelineConfig":
        if self.k_min > self.k_max:
            raise ValueError(f"k_min ({self.k_min}) exceeds k_max ({self.k_max})")
        if any(d < 0 for d in self.sweep_distances_m):
            raise ValueError("sweep distances must be non-negative")
        cities = [e.city for e in self.inputs]
        if len(set(cities)) != len(cities):
            raise ValueError("city names must be unique")
        return self

    def city_paths(self) -> Dict[str, str]:
        return {e.city: e.path for e in self.inputs}

    def k_range_for(self, n_cities: int) -> range:
        return clip_k_range(self.k_min, self.k_max, n_cities)


def clip_k_range(k_min: int, k_max: int, n_cities: int) -> range:
    """k range clipped to [2, n-1]; ConfigError when nothing is left."""
    lo = max(2, k_min)
    hi = min(k_max, n_cities - 1)
    if hi < lo:
        raise ConfigError(f"k range {k_min}..{k_max} is invalid for {n_cities} cities")
    return range(lo, hi + 1)


def _default_settings() -> Dict[str, Any]:
    cfg = load_config()
    return {
        "code_attribute": cfg.code_attribute,
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "jobs": cfg.jobs,
    }


def _read_file(path: Path) -> Dict[str, Any]:
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        obj = json.loads(raw or "{}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    # input paths are relative to the config file
    base = path.resolve().parent
    for entry in obj.get("inputs") or []:
        if isinstance(entry, dict) and isinstance(entry.get("path"), str):
            p = Path(entry["path"])
            if not p.is_absolute():
                entry["path"] = str(base / p)
    return obj


def _merge(*layers: Dict[str, Any]) -> Dict[str, Any]:
    merged: Dict[str, Any] = {}
    for layer in layers:
        for key, value in layer.items():
            if value is None:
                continue
            if isinstance(value, dict) and isinstance(merged.get(key), dict):
                merged[key] = {**merged[key], **value}
            else:
                merged[key] = value
    return merged


def load_pipeline_config(path: Optional[str] = None, patch: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """Build a PipelineConfig from defaults < config file < command-line patch."""
    file_obj = _read_file(Path(path)) if path else {}
    merged = _merge(_default_settings(), file_obj, patch or {})
    try:
        return PipelineConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(f"invalid pipeline config: {e}") from e


def save_pipeline_config(cfg: PipelineConfig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg.model_dump(), indent=2) + "\n", encoding="utf-8")
    return path
