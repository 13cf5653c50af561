"""2-D city embeddings: a deterministic PCA projection and a seeded UMAP layout.

The UMAP path builds an exact k-nearest-neighbour graph, calibrates a per-point
bandwidth so neighbour memberships sum to log2(k), symmetrises with the fuzzy
union a + b - ab and lays the graph out with single-threaded SGD using
attractive edge samples and repulsive negative samples. Initialisation is a
seeded Gaussian cloud rather than a spectral layout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.optimize import curve_fit
from scipy.spatial.distance import cdist
from sklearn.decomposition import PCA

from src.helpers.files import read_csv, write_csv
from src.services.matrix_service import CityFIMatrix
from src.utils.errors import DataError, EmbeddingError
from src.utils.logger import get_logger


logger = get_logger(__name__)

SMOOTH_K_TOLERANCE = 1e-5
BANDWIDTH_TOLERANCE = 1e-3
BANDWIDTH_ITERATIONS = 64
INIT_SCALE = 10.0
GRAD_CLIP = 4.0


@dataclass(frozen=True)
class Embedding:
    city_names: Tuple[str, ...]
    coords: np.ndarray
    method: str
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if self.coords.shape[0] != len(self.city_names):
            raise EmbeddingError("embedding rows do not match city names")
        if not np.all(np.isfinite(self.coords)):
            raise EmbeddingError("embedding has non-finite coordinates")


@dataclass(frozen=True)
class UmapParams:
    n_neighbors: int = 15
    min_dist: float = 0.1
    epochs: int = 500
    learning_rate: float = 1.0
    seed: int = 42
    spread: float = 1.0
    negative_sample_rate: int = 5
    repulsion_strength: float = 1.0

    def __post_init__(self) -> None:
        if self.n_neighbors < 2:
            raise EmbeddingError("n_neighbors must be at least 2")
        if self.min_dist <= 0 or self.learning_rate <= 0 or self.spread <= 0:
            raise EmbeddingError("min_dist, learning_rate and spread must be positive")
        if self.epochs < 1:
            raise EmbeddingError("epochs must be at least 1")


@dataclass(frozen=True)
class DistanceMatrix:
    labels: Tuple[str, ...]
    values: np.ndarray


def pca_embed(matrix: CityFIMatrix, dims: int = 2) -> Embedding:
    n, f = matrix.values.shape
    if n < 2:
        raise EmbeddingError(f"PCA needs at least 2 rows, got {n}")
    coords = np.zeros((n, dims), dtype=np.float64)
    n_comp = min(dims, n, f)
    if n_comp > 0:
        values = matrix.values.astype(np.float64)
        pca = PCA(n_components=n_comp, svd_solver="full").fit(values)
        # row-wise products and sums, so equal rows project to equal coordinates
        centered = values - pca.mean_
        projected = (centered[:, None, :] * pca.components_[None, :, :]).sum(axis=2)
        for j in range(n_comp):
            loading = pca.components_[j]
            if loading[np.argmax(np.abs(loading))] < 0:
                projected[:, j] = -projected[:, j]
        coords[:, :n_comp] = projected
    logger.info("PCA embedding of %d cities (%d features)", n, f)
    return Embedding(matrix.city_names, coords, "pca", None)


def fit_output_kernel(min_dist: float, spread: float = 1.0) -> Tuple[float, float]:
    """Least-squares (a, b) so that 1 / (1 + a x^(2b)) follows the offset exponential decay."""

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2 * b))

    xv = np.linspace(0, spread * 3, 300)
    yv = np.zeros(xv.shape)
    yv[xv < min_dist] = 1.0
    yv[xv >= min_dist] = np.exp(-(xv[xv >= min_dist] - min_dist) / spread)
    params, _ = curve_fit(curve, xv, yv)
    return float(params[0]), float(params[1])


def _knn(values: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    dist = cdist(values, values, metric="euclidean")
    n = dist.shape[0]
    order = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        row = dist[i].copy()
        row[i] = -1.0
        order[i] = np.argsort(row, kind="stable")[:k]
    knn_dist = np.take_along_axis(dist, order, axis=1)
    knn_dist[:, 0] = 0.0
    return order, knn_dist


def _smooth_knn_dist(knn_dist: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    target = math.log2(k)
    n = knn_dist.shape[0]
    rho = np.zeros(n)
    sigma = np.zeros(n)
    for i in range(n):
        others = knn_dist[i, 1:]
        non_zero = others[others > 0.0]
        rho[i] = non_zero[0] if non_zero.size else 0.0
        lo, hi, mid = 0.0, math.inf, 1.0
        psum = 0.0
        for _ in range(BANDWIDTH_ITERATIONS):
            psum = 0.0
            for d in others:
                gap = d - rho[i]
                psum += math.exp(-(gap / mid)) if gap > 0 else 1.0
            if abs(psum - target) < SMOOTH_K_TOLERANCE:
                break
            if psum > target:
                hi = mid
                mid = (lo + hi) / 2.0
            else:
                lo = mid
                mid = mid * 2 if hi == math.inf else (lo + hi) / 2.0
        if abs(psum - target) > BANDWIDTH_TOLERANCE:
            raise EmbeddingError(
                f"bandwidth search did not converge for point {i} (membership sum {psum:.6f}, target {target:.6f})"
            )
        sigma[i] = mid
    return sigma, rho


def _fuzzy_graph(values: np.ndarray, k: int) -> sparse.coo_matrix:
    n = values.shape[0]
    order, knn_dist = _knn(values, k)
    sigma, rho = _smooth_knn_dist(knn_dist, k)
    rows, cols, vals = [], [], []
    for i in range(n):
        for pos in range(1, k):
            j = int(order[i, pos])
            gap = knn_dist[i, pos] - rho[i]
            rows.append(i)
            cols.append(j)
            vals.append(1.0 if gap <= 0 else math.exp(-gap / sigma[i]))
    p = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    union = p + p.T - p.multiply(p.T)
    union = sparse.csr_matrix(union)
    union.eliminate_zeros()
    union.sort_indices()
    return union.tocoo()


def _epochs_per_sample(weights: np.ndarray, epochs: int) -> np.ndarray:
    result = -1.0 * np.ones(weights.shape[0], dtype=np.float64)
    n_samples = epochs * (weights / weights.max())
    result[n_samples > 0] = float(epochs) / n_samples[n_samples > 0]
    return result


def _random_ints(rng: np.random.Generator, high: int, chunk: int = 4096) -> Iterator[int]:
    while True:
        for v in rng.integers(0, high, size=chunk).tolist():
            yield v


def _clip(v: float) -> float:
    return GRAD_CLIP if v > GRAD_CLIP else (-GRAD_CLIP if v < -GRAD_CLIP else v)


def _optimize_layout(emb: List[List[float]], head: Sequence[int], tail: Sequence[int], eps: Sequence[float],
                     params: UmapParams, a: float, b: float, rng: np.random.Generator) -> None:
    n_vertices = len(emb)
    n_edges = len(head)
    gamma = params.repulsion_strength
    eps_neg = [e / params.negative_sample_rate if params.negative_sample_rate > 0 else math.inf for e in eps]
    next_sample = list(eps)
    next_neg = list(eps_neg)
    draws = _random_ints(rng, n_vertices)
    for epoch in range(params.epochs):
        alpha = params.learning_rate * (1.0 - epoch / params.epochs)
        for e in range(n_edges):
            if eps[e] <= 0 or next_sample[e] > epoch:
                continue
            current = emb[head[e]]
            other = emb[tail[e]]
            dx = current[0] - other[0]
            dy = current[1] - other[1]
            dist_sq = dx * dx + dy * dy
            if dist_sq > 0.0:
                coeff = -2.0 * a * b * dist_sq ** (b - 1.0) / (a * dist_sq ** b + 1.0)
            else:
                coeff = 0.0
            gx = _clip(coeff * dx) * alpha
            gy = _clip(coeff * dy) * alpha
            current[0] += gx
            current[1] += gy
            other[0] -= gx
            other[1] -= gy
            next_sample[e] += eps[e]

            n_neg = int((epoch - next_neg[e]) / eps_neg[e]) if eps_neg[e] != math.inf else 0
            for _ in range(max(0, n_neg)):
                k = next(draws)
                if k == head[e]:
                    continue
                other = emb[k]
                dx = current[0] - other[0]
                dy = current[1] - other[1]
                dist_sq = dx * dx + dy * dy
                if dist_sq > 0.0:
                    coeff = 2.0 * gamma * b / ((0.001 + dist_sq) * (a * dist_sq ** b + 1.0))
                    current[0] += _clip(coeff * dx) * alpha
                    current[1] += _clip(coeff * dy) * alpha
                else:
                    current[0] += GRAD_CLIP * alpha
                    current[1] += GRAD_CLIP * alpha
            next_neg[e] += max(0, n_neg) * eps_neg[e]


def umap_embed(matrix: CityFIMatrix, params: UmapParams) -> Embedding:
    values = matrix.values.astype(np.float64)
    n = values.shape[0]
    if params.n_neighbors >= n:
        raise EmbeddingError(f"n_neighbors ({params.n_neighbors}) must be smaller than the number of cities ({n})")
    graph = _fuzzy_graph(values, params.n_neighbors)
    weights = graph.data.astype(np.float64)
    if weights.size == 0:
        raise EmbeddingError("neighbour graph has no edges")
    weights[weights < weights.max() / float(params.epochs)] = 0.0
    eps = _epochs_per_sample(weights, params.epochs)

    a, b = fit_output_kernel(params.min_dist, params.spread)
    rng = np.random.default_rng(params.seed)
    init = rng.standard_normal((n, 2)) * INIT_SCALE
    emb = init.tolist()
    _optimize_layout(emb, graph.row.tolist(), graph.col.tolist(), eps.tolist(), params, a, b, rng)
    coords = np.asarray(emb, dtype=np.float64)
    logger.info("UMAP embedding of %d cities (%d edges, %d epochs, seed %d)", n, weights.size, params.epochs, params.seed)
    return Embedding(matrix.city_names, coords, "umap", params.seed)


def pairwise_sqeuclidean(e: Embedding) -> DistanceMatrix:
    diff = e.coords[:, None, :] - e.coords[None, :, :]
    values = np.sum(diff * diff, axis=-1)
    np.fill_diagonal(values, 0.0)
    return DistanceMatrix(e.city_names, values)


def write_embedding(e: Embedding, path: Path) -> Path:
    rows = ([city, repr(float(e.coords[i, 0])), repr(float(e.coords[i, 1]))] for i, city in enumerate(e.city_names))
    return write_csv(Path(path), ["city", "x", "y"], rows)


def read_embedding(path: Path) -> Embedding:
    header, rows = read_csv(Path(path))
    if header[:3] != ["city", "x", "y"]:
        raise DataError(f"{path}: embedding header must be city,x,y")
    try:
        coords = np.array([[float(r[1]), float(r[2])] for r in rows], dtype=np.float64).reshape(len(rows), 2)
    except (IndexError, ValueError) as e:
        raise DataError(f"{path}: malformed embedding row") from e
    return Embedding(tuple(r[0] for r in rows), coords, "file", None)


def write_distance_matrix(dist: DistanceMatrix, path: Path) -> Path:
    rows = ([label, *(repr(float(v)) for v in dist.values[i])] for i, label in enumerate(dist.labels))
    return write_csv(Path(path), ["city", *dist.labels], rows)
