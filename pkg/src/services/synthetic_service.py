"""Seeded synthetic inputs: the worked-example layout, two-family city bundles,
random rectangle layers and skewed transaction databases."""
from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.helpers.files import write_json
from src.helpers.geometry import rectangle
from src.services.ingest_service import LandUseFeature, LandUseLayer, write_feature_collection
from src.services.mining_service import TransactionDatabase, build_database
from src.utils.logger import get_logger


logger = get_logger(__name__)

# code pairs laid out as checkerboards; the two families share codes but not adjacencies
FAMILY_PAIRS: Dict[str, Tuple[Tuple[str, str], Tuple[str, str]]] = {
    "a": (("11100", "12100"), ("31000", "32000")),
    "b": (("11100", "31000"), ("12100", "32000")),
}
NOISE_CODES = ("11210", "14100", "21000", "50000")

CELL_SIZE = 50.0
CELL_GAP = 5.0
BUNDLE_BUFFER_DISTANCE = 10.0
BUNDLE_COLS = 12
BUNDLE_NOISE_RATE = 0.02

EXAMPLE_TRANSACTIONS = (
    "B C G",
    "B C W",
    "B C",
    "B C G W",
    "B C",
    "B C W",
    "C G",
)


def example_layer(city_name: str = "example") -> LandUseLayer:
    """Seven polygons on a 10 m lattice whose touching neighbours give EXAMPLE_TRANSACTIONS."""
    shapes = [
        ("1", "C", [(0, 30), (30, 30), (30, 10), (20, 10), (20, 20), (0, 20)]),
        ("2", "W", rectangle(50, 10, 60, 20)),
        ("3", "C", rectangle(10, 10, 20, 20)),
        ("4", "C", rectangle(30, 10, 50, 20)),
        ("5", "B", rectangle(0, 10, 10, 20)),
        ("6", "B", rectangle(0, 0, 60, 10)),
        ("7", "G", rectangle(30, 20, 40, 30)),
    ]
    features = []
    for fid, code, coords in shapes:
        ring = [(float(x), float(y)) for x, y in coords]
        if ring[0] != ring[-1]:
            ring.append(ring[0])
        features.append(LandUseFeature(fid, code, tuple(ring)))
    return LandUseLayer(city_name, tuple(features), "code")


def grid_layer(city_name: str, codes: Sequence[Sequence[str]], cell: float = CELL_SIZE, gap: float = CELL_GAP,
               code_attribute: str = "code_2018") -> LandUseLayer:
    """One square per grid entry; neighbouring squares are gap metres apart."""
    features = []
    pitch = cell + gap
    for r, row in enumerate(codes):
        for c, code in enumerate(row):
            x0, y0 = c * pitch, r * pitch
            features.append(LandUseFeature(f"r{r}c{c}", code, tuple(rectangle(x0, y0, x0 + cell, y0 + cell))))
    return LandUseLayer(city_name, tuple(features), code_attribute)


def family_codes(family: str, rows: int, cols: int, rng: np.random.Generator, noise_rate: float = 0.05) -> List[List[str]]:
    """Checkerboard of the left pair beside the right pair. Each noise code replaces at most
    one cell, so no noise code can reach the neighbourhoods of a frequent share of cells."""
    left, right = FAMILY_PAIRS[family]
    split = cols // 2
    spare = [str(c) for c in rng.permutation(NOISE_CODES)]
    grid = []
    for r in range(rows):
        row = []
        for c in range(cols):
            pair = left if c < split else right
            code = pair[(r + c) % 2]
            if noise_rate > 0 and rng.random() < noise_rate and spare:
                code = spare.pop()
            row.append(code)
        grid.append(row)
    return grid


def city_bundle(seed: int = 42, cities_per_family: int = 3, noise_rate: float = BUNDLE_NOISE_RATE) -> Dict[str, LandUseLayer]:
    """Cities differ in height and noise only; the shared width keeps each family's
    boundary itemsets at one support level."""
    layers: Dict[str, LandUseLayer] = {}
    for f, family in enumerate(sorted(FAMILY_PAIRS)):
        for i in range(1, cities_per_family + 1):
            rng = np.random.default_rng([seed, f, i])
            rows = int(rng.integers(10, 15))
            name = f"family_{family}_{i}"
            layers[name] = grid_layer(name, family_codes(family, rows, BUNDLE_COLS, rng, noise_rate))
    return layers


def family_of(city_name: str) -> str:
    return city_name.split("_")[1]


def write_city_bundle(out_dir: Path, seed: int = 42, cities_per_family: int = 3, noise_rate: float = BUNDLE_NOISE_RATE) -> Path:
    """Write one GeoJSON per city plus a ready-to-run pipeline.json; returns the config path."""
    out_dir = Path(out_dir)
    inputs = []
    for name, layer in city_bundle(seed, cities_per_family, noise_rate).items():
        write_feature_collection(layer, out_dir / "cities" / f"{name}.geojson")
        inputs.append({"city": name, "path": f"cities/{name}.geojson"})
    config = {
        "inputs": inputs,
        "code_attribute": "code_2018",
        "buffer_distance_m": BUNDLE_BUFFER_DISTANCE,
        "minsup_relative": 0.10,
        "embedding": "pca",
        "k_min": 2,
        "k_max": 5,
        "seed": seed,
        "output_dir": "output",
        "sweep_distances_m": [4.0, 6.0, 10.0],
    }
    path = write_json(out_dir / "pipeline.json", config)
    logger.info("Wrote %d synthetic cities to %s", len(inputs), out_dir)
    return path


def random_layer(rng: np.random.Generator, n_features: int = 30, extent: float = 500.0, max_side: float = 80.0,
                 alphabet: Sequence[str] = ("11100", "12100", "21000", "31000", "50000"),
                 city_name: str = "random") -> LandUseLayer:
    """Axis-aligned rectangles at random positions; overlaps allowed."""
    features = []
    for i in range(n_features):
        w, h = rng.uniform(5.0, max_side, size=2)
        x0, y0 = rng.uniform(0.0, extent, size=2)
        code = alphabet[int(rng.integers(0, len(alphabet)))]
        features.append(LandUseFeature(str(i), code, tuple(rectangle(float(x0), float(y0), float(x0 + w), float(y0 + h)))))
    return LandUseLayer(city_name, tuple(features))


def skewed_database(n_transactions: int = 50_000, n_items: int = 100, seed: int = 42,
                    top: float = 0.4, exponent: float = 0.8) -> TransactionDatabase:
    """Independent items with Zipf-like frequencies top / (rank + 1) ** exponent."""
    rng = np.random.default_rng(seed)
    p = top / np.power(np.arange(1, n_items + 1, dtype=np.float64), exponent)
    present = rng.random((n_transactions, n_items)) < p
    # empty rows get the most frequent item
    present[~present.any(axis=1), 0] = True
    names = [f"i{j:03d}" for j in range(n_items)]
    rows = [[names[j] for j in np.flatnonzero(row)] for row in present]
    return build_database(rows)


def random_database(rng: np.random.Generator, max_items: int = 12, max_transactions: int = 60) -> TransactionDatabase:
    n_items = int(rng.integers(1, max_items + 1))
    n_rows = int(rng.integers(1, max_transactions + 1))
    names = [f"x{j:02d}" for j in range(n_items)]
    density = rng.uniform(0.1, 0.7)
    rows = []
    for _ in range(n_rows):
        row = [names[j] for j in range(n_items) if rng.random() < density]
        rows.append(row or [names[int(rng.integers(0, n_items))]])
    return build_database(rows)


def blobs(centers: Sequence[Sequence[float]], per_blob: int, spread: float, seed: int = 0,
          dims: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    c = np.asarray(centers, dtype=np.float64)
    if dims is not None and c.shape[1] < dims:
        c = np.hstack([c, np.zeros((c.shape[0], dims - c.shape[1]))])
    points = np.vstack([center + rng.normal(0.0, spread, size=(per_blob, c.shape[1])) for center in c])
    labels = np.repeat(np.arange(c.shape[0]), per_blob)
    return points, labels
