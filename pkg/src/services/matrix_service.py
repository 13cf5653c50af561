from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from src.helpers.files import fmt6, read_csv, write_csv
from src.services.mining_service import FrequentItemset
from src.utils.errors import DataError
from src.utils.logger import get_logger


logger = get_logger(__name__)


@dataclass(frozen=True)
class CityFIMatrix:
    city_names: Tuple[str, ...]
    fi_columns: Tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.shape != (len(self.city_names), len(self.fi_columns)):
            raise DataError(f"matrix shape {self.values.shape} does not match {len(self.city_names)} x {len(self.fi_columns)}")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def value(self, city: str, key: str) -> float:
        return float(self.values[self.city_names.index(city), self.fi_columns.index(key)])


def fi_key(itemset: Iterable[str]) -> str:
    tokens = sorted(itemset)
    if not tokens:
        raise DataError("frequent itemset key needs at least one item")
    return " ".join(tokens)


def column_order(key: str) -> Tuple[int, List[str]]:
    tokens = key.split(" ")
    return len(tokens), tokens


def merge_city_fis(results: Mapping[str, Sequence[FrequentItemset]]) -> CityFIMatrix:
    if not results:
        raise DataError("cannot merge itemsets of zero cities")
    per_city: Dict[str, Dict[str, float]] = {}
    for city, fis in results.items():
        row: Dict[str, float] = {}
        for f in fis:
            key = fi_key(f.items)
            if key in row:
                raise DataError(f"city {city}: duplicate itemset {key!r}")
            row[key] = f.relative_support
        per_city[city] = row
    cities = sorted(per_city)
    columns = sorted({k for row in per_city.values() for k in row}, key=column_order)
    col_index = {k: j for j, k in enumerate(columns)}
    values = np.zeros((len(cities), len(columns)), dtype=np.float64)
    for i, city in enumerate(cities):
        for key, rel in per_city[city].items():
            values[i, col_index[key]] = rel
    matrix = CityFIMatrix(tuple(cities), tuple(columns), values)
    logger.info("City-FI matrix: %d cities x %d itemsets", *matrix.shape)
    return matrix


def filter_columns(matrix: CityFIMatrix, min_relative_support: float) -> CityFIMatrix:
    if not (0 <= min_relative_support <= 1):
        raise DataError(f"column threshold must be in [0, 1], got {min_relative_support}")
    if matrix.values.size == 0:
        return matrix
    keep = np.flatnonzero(matrix.values.max(axis=0) >= min_relative_support)
    return CityFIMatrix(matrix.city_names, tuple(matrix.fi_columns[j] for j in keep), matrix.values[:, keep])


def write_matrix(matrix: CityFIMatrix, path: Path) -> Path:
    rows = ([city, *(fmt6(v) for v in matrix.values[i])] for i, city in enumerate(matrix.city_names))
    return write_csv(Path(path), ["city", *matrix.fi_columns], rows)


def read_matrix(path: Path) -> CityFIMatrix:
    header, rows = read_csv(Path(path))
    if not header or header[0] != "city":
        raise DataError(f"{path}: matrix header must start with 'city'")
    try:
        values = np.array([[float(v) for v in row[1:]] for row in rows], dtype=np.float64)
    except ValueError as e:
        raise DataError(f"{path}: non-numeric matrix value") from e
    values = values.reshape(len(rows), len(header) - 1)
    return CityFIMatrix(tuple(row[0] for row in rows), tuple(header[1:]), values)
