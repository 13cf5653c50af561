from __future__ import annotations

import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple

from rtree import index

from src.helpers.files import write_csv, write_text
from src.services.ingest_service import LandUseFeature, LandUseLayer
from src.utils.errors import DataError
from src.utils.logger import get_logger


logger = get_logger(__name__)

DEFAULT_BUFFER_DISTANCE = 100.0

Box = Tuple[float, float, float, float]


@dataclass(frozen=True)
class Transaction:
    source_id: str
    items: Tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.items:
            raise DataError(f"transaction {self.source_id} is empty")
        if any(a >= b for a, b in zip(self.items, self.items[1:])):
            raise DataError(f"transaction {self.source_id} items must be strictly ascending: {self.items}")


@dataclass(frozen=True)
class TransactionSet:
    city_name: str
    buffer_distance: Optional[float]
    transactions: Tuple[Transaction, ...]

    def __len__(self) -> int:
        return len(self.transactions)

    @property
    def universe(self) -> List[str]:
        return sorted({it for t in self.transactions for it in t.items})


class SpatialIndex:
    """R-tree over feature bounding boxes, keyed by position in the backing layer."""

    def __init__(self, layer: LandUseLayer) -> None:
        self.layer = layer
        stream = ((i, f.bounds, None) for i, f in enumerate(layer.features))
        self._tree = index.Index(stream)

    def __len__(self) -> int:
        return len(self.layer.features)

    def query(self, box: Box) -> List[str]:
        """Ids of every feature whose bounding box intersects box, in layer order."""
        positions = sorted(self._tree.intersection(box))
        return [self.layer.features[i].id for i in positions]

    def query_features(self, box: Box) -> List[LandUseFeature]:
        return [self.layer.features[i] for i in sorted(self._tree.intersection(box))]


def build_spatial_index(layer: LandUseLayer) -> SpatialIndex:
    return SpatialIndex(layer)


def polygon_distance(a: LandUseFeature, b: LandUseFeature) -> float:
    """0 when the polygons touch, overlap or nest; else the minimum boundary distance."""
    a.check_rings()
    b.check_rings()
    # fixed operand order keeps the result bit-identical under swapping
    first, second = (a, b) if (a.id, a.code, a.exterior) <= (b.id, b.code, b.exterior) else (b, a)
    return float(first.polygon.distance(second.polygon))


def _inflate(box: Box, d: float) -> Box:
    return box[0] - d, box[1] - d, box[2] + d, box[3] + d


def neighbors_within(spatial_index: SpatialIndex, feature_id: str, d: float) -> Set[str]:
    if d < 0:
        raise DataError(f"buffer distance must be non-negative, got {d}")
    feature = spatial_index.layer.feature(feature_id)
    found: Set[str] = set()
    for other in spatial_index.query_features(_inflate(feature.bounds, d)):
        if other is feature:
            continue
        if polygon_distance(feature, other) <= d:
            found.add(other.id)
    return found


def neighbor_codes(spatial_index: SpatialIndex, feature_id: str, d: float) -> List[str]:
    """Codes of all neighbours with multiplicity (the raw 'all neighbours' column)."""
    layer = spatial_index.layer
    ids = neighbors_within(spatial_index, feature_id, d)
    return [f.code for f in layer.features if f.id in ids]


def extract_transactions(layer: LandUseLayer, d: float = DEFAULT_BUFFER_DISTANCE) -> TransactionSet:
    if d < 0:
        raise DataError(f"buffer distance must be non-negative, got {d}")
    spatial_index = build_spatial_index(layer)
    codes: Dict[str, str] = {f.id: f.code for f in layer.features}
    transactions = []
    for f in layer.features:
        items = {f.code} | {codes[n] for n in neighbors_within(spatial_index, f.id, d)}
        transactions.append(Transaction(f.id, tuple(sorted(items))))
    ts = TransactionSet(layer.city_name, d, tuple(transactions))
    logger.info("%s: %d transactions at %.1f m (median length %s)", layer.city_name, len(ts), d, median_length(ts))
    return ts


def transaction_lengths(ts: TransactionSet) -> List[int]:
    return [len(t.items) for t in ts.transactions]


def median_length(ts: TransactionSet) -> float:
    return float(statistics.median(transaction_lengths(ts)))


def mean_length(ts: TransactionSet) -> float:
    return float(statistics.fmean(transaction_lengths(ts)))


def export_transactions(ts: TransactionSet, path: Path) -> Path:
    return write_text(Path(path), "".join(" ".join(t.items) + "\n" for t in ts.transactions))


def parse_transaction_lines(lines: Sequence[str], city_name: str = "", buffer_distance: Optional[float] = None) -> TransactionSet:
    transactions = []
    for n, line in enumerate(lines, start=1):
        tokens = line.split()
        if not tokens:
            raise DataError(f"{city_name or 'transactions'}: line {n} is empty")
        transactions.append(Transaction(str(n), tuple(sorted(set(tokens)))))
    if not transactions:
        raise DataError(f"{city_name or 'transactions'}: no transactions")
    return TransactionSet(city_name, buffer_distance, tuple(transactions))


def read_transactions(path: Path, city_name: Optional[str] = None, buffer_distance: Optional[float] = None) -> TransactionSet:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read transactions {path}: {e}") from e
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return parse_transaction_lines(lines, city_name or path.stem, buffer_distance)


def export_dichotomous(ts: TransactionSet, path: Path) -> Path:
    universe = ts.universe
    rows = []
    for t in ts.transactions:
        present = set(t.items)
        rows.append([t.source_id, *("1" if it in present else "0" for it in universe)])
    return write_csv(Path(path), ["source_id", *universe], rows)
