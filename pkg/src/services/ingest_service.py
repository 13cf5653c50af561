from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from shapely.geometry import Polygon
from shapely.validation import explain_validity

from src.helpers.files import write_json
from src.helpers.geometry import Ring, close_ring, distinct_vertices, is_finite_ring, make_polygon, ring_bounds
from src.utils.errors import DataError, GeometryError
from src.utils.logger import get_logger


logger = get_logger(__name__)

DEFAULT_CODE_ATTRIBUTE = "code_2018"


@dataclass(frozen=True)
class LandUseFeature:
    id: str
    code: str
    exterior: Ring
    holes: Tuple[Ring, ...] = ()

    def __post_init__(self) -> None:
        if not self.code or any(ch.isspace() for ch in self.code):
            raise DataError(f"feature {self.id}: land-use code {self.code!r} must be a non-empty token without whitespace")

    @cached_property
    def polygon(self) -> Polygon:
        return make_polygon(self.exterior, self.holes)

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        return ring_bounds(self.exterior)

    def check_rings(self) -> None:
        """Raise GeometryError when any ring has fewer than 3 distinct vertices."""
        for ring in (self.exterior, *self.holes):
            if distinct_vertices(ring) < 3:
                raise GeometryError(f"feature {self.id}: degenerate ring with fewer than 3 distinct vertices")


@dataclass(frozen=True)
class LandUseLayer:
    city_name: str
    features: Tuple[LandUseFeature, ...]
    code_attribute: str = DEFAULT_CODE_ATTRIBUTE

    def __post_init__(self) -> None:
        if not self.features:
            raise DataError(f"layer {self.city_name!r} has no features")

    @cached_property
    def _by_id(self) -> Dict[str, LandUseFeature]:
        return {f.id: f for f in self.features}

    def feature(self, feature_id: str) -> LandUseFeature:
        try:
            return self._by_id[feature_id]
        except KeyError:
            raise GeometryError(f"unknown feature id {feature_id!r} in layer {self.city_name!r}") from None

    @property
    def codes(self) -> List[str]:
        return sorted({f.code for f in self.features})


@dataclass(frozen=True)
class ValidationReport:
    errors: List[Tuple[str, str]] = field(default_factory=list)
    warnings: List[Tuple[str, str]] = field(default_factory=list)
    feature_count: int = 0
    distinct_code_count: int = 0

    @property
    def ok(self) -> bool:
        return not self.errors


def _code_token(raw: Any) -> str:
    if isinstance(raw, float) and raw.is_integer():
        raw = int(raw)
    return str(raw).strip() if raw is not None else ""


def _rings(coords: Any, fid: str) -> Tuple[Ring, Tuple[Ring, ...]]:
    if not isinstance(coords, list) or not coords:
        raise DataError(f"feature {fid}: polygon has no rings")
    try:
        rings = [close_ring(r) for r in coords]
    except (TypeError, ValueError, IndexError) as e:
        raise DataError(f"feature {fid}: malformed coordinates ({e})") from e
    return rings[0], tuple(rings[1:])


def _parse_feature(raw: Dict[str, Any], index: int, code_attribute: str) -> List[LandUseFeature]:
    props = raw.get("properties") or {}
    fid = raw.get("id", props.get("id"))
    fid = str(fid) if fid is not None else str(index)
    if code_attribute not in props:
        raise DataError(f"feature {fid}: missing code attribute {code_attribute!r}")
    code = _code_token(props[code_attribute])
    geom = raw.get("geometry") or {}
    gtype = geom.get("type")
    coords = geom.get("coordinates")
    if gtype == "Polygon":
        exterior, holes = _rings(coords, fid)
        return [LandUseFeature(fid, code, exterior, holes)]
    if gtype == "MultiPolygon":
        if not isinstance(coords, list) or not coords:
            raise DataError(f"feature {fid}: empty MultiPolygon")
        parts = []
        for j, part in enumerate(coords):
            exterior, holes = _rings(part, f"{fid}-{j}")
            parts.append(LandUseFeature(f"{fid}-{j}", code, exterior, holes))
        return parts
    raise DataError(f"feature {fid}: unsupported geometry type {gtype!r} (Polygon/MultiPolygon only)")


def load_feature_collection(path: Path, code_attribute: str = DEFAULT_CODE_ATTRIBUTE, city_name: Optional[str] = None) -> LandUseLayer:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise DataError(f"{path}: expected a GeoJSON FeatureCollection")
    raw_features = doc.get("features")
    if not isinstance(raw_features, list):
        raise DataError(f"{path}: 'features' must be a list")

    features: List[LandUseFeature] = []
    for i, raw in enumerate(raw_features):
        if not isinstance(raw, dict):
            raise DataError(f"{path}: feature #{i} is not an object")
        features.extend(_parse_feature(raw, i, code_attribute))

    layer = LandUseLayer(city_name or path.stem, tuple(features), code_attribute)
    logger.info("Loaded %d polygons (%d source features) for %s", len(features), len(raw_features), layer.city_name)
    return layer


def load_layers(entries: Sequence[Tuple[str, str]], code_attribute: str = DEFAULT_CODE_ATTRIBUTE) -> List[LandUseLayer]:
    layers = []
    for city, path in entries:
        try:
            layers.append(load_feature_collection(Path(path), code_attribute, city))
        except DataError as e:
            raise DataError(f"city {city}: {e}") from e
    return layers


def write_feature_collection(layer: LandUseLayer, path: Path) -> Path:
    features = []
    for f in layer.features:
        rings = [f.exterior, *f.holes]
        features.append({
            "type": "Feature",
            "id": f.id,
            "properties": {layer.code_attribute: f.code},
            "geometry": {"type": "Polygon", "coordinates": [[list(p) for p in r] for r in rings]},
        })
    return write_json(Path(path), {"type": "FeatureCollection", "name": layer.city_name, "features": features})


def validate_layer(layer: LandUseLayer) -> ValidationReport:
    errors: List[Tuple[str, str]] = []
    warnings: List[Tuple[str, str]] = []

    counts = Counter(f.id for f in layer.features)
    for fid, n in counts.items():
        if n > 1:
            errors.append((fid, f"duplicate feature id ({n} occurrences)"))

    for f in layer.features:
        rings = (f.exterior, *f.holes)
        if not all(is_finite_ring(r) for r in rings):
            errors.append((f.id, "non-finite coordinate"))
            continue
        degenerate = [r for r in rings if distinct_vertices(r) < 3 or Polygon(r).area == 0.0]
        if degenerate:
            which = "exterior" if degenerate[0] is f.exterior else "hole"
            errors.append((f.id, f"degenerate {which} ring (zero area)"))
            continue
        if not f.polygon.is_valid:
            reason = explain_validity(f.polygon)
            if "Self-intersection" in reason or "Ring Self-intersection" in reason:
                warnings.append((f.id, f"self-intersecting ring: {reason}"))
            else:
                warnings.append((f.id, f"invalid polygon: {reason}"))

    report = ValidationReport(errors, warnings, len(layer.features), len({f.code for f in layer.features}))
    for fid, msg in warnings:
        logger.warning("%s: feature %s: %s", layer.city_name, fid, msg)
    if errors:
        logger.warning("%s: %d validation errors", layer.city_name, len(errors))
    return report
