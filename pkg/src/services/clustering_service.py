from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata
from sklearn.metrics import calinski_harabasz_score, davies_bouldin_score, silhouette_score

from src.helpers.files import read_csv, read_json, write_csv, write_json
from src.services.embedding_service import Embedding
from src.utils.errors import ClusteringError, DataError
from src.utils.logger import get_logger


logger = get_logger(__name__)


@dataclass(frozen=True)
class Merge:
    left: int
    right: int
    height: float
    size: int


@dataclass(frozen=True)
class Dendrogram:
    """Agglomerative merge record. Leaves are nodes 0..n-1, merge i creates node n+i."""

    leaves: Tuple[str, ...]
    merges: Tuple[Merge, ...]

    @property
    def n(self) -> int:
        return len(self.leaves)

    @property
    def heights(self) -> List[float]:
        return [m.height for m in self.merges]

    def children(self, node: int) -> Optional[Tuple[int, int]]:
        if node < self.n:
            return None
        m = self.merges[node - self.n]
        return m.left, m.right

    def leaf_order(self) -> List[int]:
        """Leaves in recursive left-to-right order from the root."""
        if self.n == 1:
            return [0]
        order: List[int] = []
        stack = [2 * self.n - 2]
        while stack:
            node = stack.pop()
            kids = self.children(node)
            if kids is None:
                order.append(node)
            else:
                stack.append(kids[1])
                stack.append(kids[0])
        return order


@dataclass(frozen=True)
class ClusterAssignment:
    labels: Dict[str, int]
    k: int
    criterion: Dict[str, float]

    def label_array(self, cities: Sequence[str]) -> np.ndarray:
        try:
            return np.array([self.labels[c] for c in cities], dtype=np.int64)
        except KeyError as e:
            raise ClusteringError(f"no cluster assigned to city {e.args[0]!r}") from e

    def members(self) -> Dict[int, List[str]]:
        groups: Dict[int, List[str]] = {}
        for city, label in self.labels.items():
            groups.setdefault(label, []).append(city)
        return {k: sorted(v) for k, v in sorted(groups.items())}


@dataclass(frozen=True)
class KSelectionRow:
    k: int
    silhouette: float
    calinski_harabasz: float
    davies_bouldin: float
    wcss: float
    elbow: float
    mean_rank: float = 0.0


@dataclass(frozen=True)
class KSelectionReport:
    rows: Tuple[KSelectionRow, ...]
    chosen_k: int
    note: str = field(default="")

    def row(self, k: int) -> KSelectionRow:
        for r in self.rows:
            if r.k == k:
                return r
        raise ClusteringError(f"k={k} not in report")


# --- linkage ---------------------------------------------------------------

def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if pts.ndim != 2:
        raise ClusteringError(f"points must be a 2-D array, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ClusteringError("points contain non-finite coordinates")
    return pts


def ward_linkage(points, labels: Optional[Sequence[str]] = None) -> Dendrogram:
    """Ward linkage with ESS-increase heights.

    The Lance-Williams recurrence is seeded with half the squared Euclidean
    distances, so each height is exactly the increase in within-cluster sum of
    squares caused by the merge. Ties go to the smallest (left, right) node pair.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    if n < 2:
        raise ClusteringError(f"Ward linkage needs at least 2 points, got {n}")
    leaves = tuple(labels) if labels is not None else tuple(str(i) for i in range(n))
    if len(leaves) != n:
        raise ClusteringError("label count does not match point count")

    diff = pts[:, None, :] - pts[None, :, :]
    base = 0.5 * np.sum(diff * diff, axis=-1)
    dist: Dict[Tuple[int, int], float] = {}
    for i in range(n):
        for j in range(i + 1, n):
            dist[(i, j)] = float(base[i, j])
    size = {i: 1 for i in range(n)}
    active = list(range(n))
    merges: List[Merge] = []

    for step in range(n - 1):
        best_pair, best_h = None, math.inf
        for pair, h in dist.items():
            if h < best_h or (h == best_h and pair < best_pair):
                best_pair, best_h = pair, h
        u, v = best_pair
        new = n + step
        nu, nv = size[u], size[v]
        active.remove(u)
        active.remove(v)
        for w in active:
            nw = size[w]
            duw = dist.pop((min(u, w), max(u, w)))
            dvw = dist.pop((min(v, w), max(v, w)))
            dist[(w, new)] = ((nu + nw) * duw + (nv + nw) * dvw - nw * best_h) / (nu + nv + nw)
        del dist[(u, v)]
        size[new] = nu + nv
        active.append(new)
        merges.append(Merge(u, v, best_h, nu + nv))

    heights = [m.height for m in merges]
    logger.debug("Ward linkage over %d points, root height %.6f", n, heights[-1])
    return Dendrogram(leaves, tuple(merges))


def _components(dendro: Dendrogram, n_merges: int) -> List[int]:
    parent = list(range(2 * dendro.n - 1))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, m in enumerate(dendro.merges[:n_merges]):
        node = dendro.n + i
        parent[find(m.left)] = node
        parent[find(m.right)] = node
    roots = [find(leaf) for leaf in range(dendro.n)]
    dense: Dict[int, int] = {}
    return [dense.setdefault(r, len(dense)) for r in roots]


def _assignment(dendro: Dendrogram, labels: List[int], criterion: Dict[str, float]) -> ClusterAssignment:
    return ClusterAssignment(
        labels={city: labels[i] for i, city in enumerate(dendro.leaves)},
        k=max(labels) + 1,
        criterion=criterion,
    )


def cut_by_distance(dendro: Dendrogram, d: float) -> ClusterAssignment:
    if d < 0:
        raise ClusteringError(f"cut distance must be non-negative, got {d}")
    applied = sum(1 for h in dendro.heights if h <= d)
    return _assignment(dendro, _components(dendro, applied), {"cut_distance": float(d)})


def cut_by_k(dendro: Dendrogram, k: int) -> ClusterAssignment:
    if not (1 <= k <= dendro.n):
        raise ClusteringError(f"k must be in [1, {dendro.n}], got {k}")
    return _assignment(dendro, _components(dendro, dendro.n - k), {"target_k": int(k)})


def cut_heights_for_k(dendro: Dendrogram, k: int) -> Tuple[float, float]:
    """Height interval (low, high) whose distance cuts give k clusters; high is inf for k=1."""
    if not (1 <= k <= dendro.n):
        raise ClusteringError(f"k must be in [1, {dendro.n}], got {k}")
    heights = dendro.heights
    applied = dendro.n - k
    low = heights[applied - 1] if applied > 0 else 0.0
    high = heights[applied] if applied < len(heights) else math.inf
    return low, high


# --- validity indices --------------------------------------------------------

def _labels_for(points, assignment, cities: Optional[Sequence[str]] = None) -> Tuple[np.ndarray, np.ndarray, int]:
    """Labels aligned with the rows of points; an assignment needs the city name of each row."""
    pts = _as_points(points)
    if isinstance(assignment, ClusterAssignment):
        if cities is None:
            raise ClusteringError("scoring an assignment needs the city name of each point row")
        labels = assignment.label_array(cities)
    else:
        labels = np.asarray(assignment, dtype=np.int64)
    if labels.shape[0] != pts.shape[0]:
        raise ClusteringError("label count does not match point count")
    k = int(np.unique(labels).size)
    return pts, labels, k


def silhouette(points, labels, cities: Optional[Sequence[str]] = None) -> float:
    pts, lab, k = _labels_for(points, labels, cities)
    if k < 2:
        raise ClusteringError(f"silhouette needs at least 2 clusters, got {k}")
    if k == pts.shape[0]:
        return 0.0
    return float(silhouette_score(pts, lab, metric="euclidean"))


def calinski_harabasz(points, labels, cities: Optional[Sequence[str]] = None) -> float:
    pts, lab, k = _labels_for(points, labels, cities)
    n = pts.shape[0]
    if not (2 <= k <= n - 1):
        raise ClusteringError(f"Calinski-Harabasz needs 2 <= k <= {n - 1}, got {k}")
    if wcss(pts, lab) == 0.0:
        return math.inf
    return float(calinski_harabasz_score(pts, lab))


def _centroids(pts: np.ndarray, lab: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    ids = np.unique(lab)
    return ids, np.vstack([pts[lab == c].mean(axis=0) for c in ids])


def davies_bouldin(points, labels, cities: Optional[Sequence[str]] = None) -> float:
    pts, lab, k = _labels_for(points, labels, cities)
    if k < 2:
        raise ClusteringError(f"Davies-Bouldin needs at least 2 clusters, got {k}")
    _, cents = _centroids(pts, lab)
    for i in range(k):
        for j in range(i + 1, k):
            if np.array_equal(cents[i], cents[j]):
                return math.inf
    if k == pts.shape[0]:
        return 0.0
    return float(davies_bouldin_score(pts, lab))


def wcss(points, labels, cities: Optional[Sequence[str]] = None) -> float:
    pts, lab, _ = _labels_for(points, labels, cities)
    ids, cents = _centroids(pts, lab)
    total = 0.0
    for c, centroid in zip(ids, cents):
        delta = pts[lab == c] - centroid
        total += float(np.sum(delta * delta))
    return total


def select_k(points, k_range: Sequence[int] = range(2, 11), labels: Optional[Sequence[str]] = None,
             dendro: Optional[Dendrogram] = None) -> KSelectionReport:
    """Evaluate cut_by_k partitions over k_range and pick the best mean rank across four indices."""
    pts = _as_points(points)
    n = pts.shape[0]
    ks = sorted(set(int(k) for k in k_range))
    if not ks or ks[0] < 2 or ks[-1] > n - 1:
        raise ClusteringError(f"k range must be non-empty and within [2, {n - 1}], got {list(k_range)}")
    if dendro is None:
        dendro = ward_linkage(pts, labels)

    def labels_at(k: int) -> np.ndarray:
        return np.array(_components(dendro, dendro.n - k), dtype=np.int64)

    rows = []
    for k in ks:
        lab = labels_at(k)
        w = wcss(pts, lab)
        elbow = wcss(pts, labels_at(k - 1)) - 2.0 * w + wcss(pts, labels_at(k + 1))
        rows.append(KSelectionRow(k, silhouette(pts, lab), calinski_harabasz(pts, lab), davies_bouldin(pts, lab), w, elbow))

    ranks = np.vstack([
        rankdata([-r.silhouette for r in rows], method="average"),
        rankdata([-r.calinski_harabasz for r in rows], method="average"),
        rankdata([r.davies_bouldin for r in rows], method="average"),
        rankdata([-r.elbow for r in rows], method="average"),
    ]).mean(axis=0)
    best = min(range(len(rows)), key=lambda i: (ranks[i], rows[i].k))
    rows = [KSelectionRow(r.k, r.silhouette, r.calinski_harabasz, r.davies_bouldin, r.wcss, r.elbow, float(ranks[i]))
            for i, r in enumerate(rows)]
    chosen = rows[best].k
    note = (f"k={chosen} has the best mean rank ({ranks[best]:.2f}) over silhouette, Calinski-Harabasz, "
            f"Davies-Bouldin and WCSS elbow; override with a cut distance if needed")
    logger.info("k selection over %d..%d chose k=%d", ks[0], ks[-1], chosen)
    return KSelectionReport(tuple(rows), chosen, note)


def cluster_embedding(e: Embedding, k_range: Sequence[int], cut_distance: Optional[float] = None
                      ) -> Tuple[Dendrogram, KSelectionReport, ClusterAssignment]:
    dendro = ward_linkage(e.coords, e.city_names)
    report = select_k(e.coords, k_range, dendro=dendro)
    if cut_distance is not None:
        assignment = cut_by_distance(dendro, cut_distance)
    else:
        assignment = cut_by_k(dendro, report.chosen_k)
    logger.info("%d cities in %d clusters (%s)", dendro.n, assignment.k, assignment.criterion)
    return dendro, report, assignment


# --- files -------------------------------------------------------------------

def write_dendrogram(dendro: Dendrogram, path: Path) -> Path:
    return write_json(Path(path), {
        "leaves": list(dendro.leaves),
        "merges": [[m.left, m.right, m.height, m.size] for m in dendro.merges],
    })


def read_dendrogram(path: Path) -> Dendrogram:
    raw = read_json(Path(path))
    try:
        merges = tuple(Merge(int(l), int(r), float(h), int(s)) for l, r, h, s in raw["merges"])
        leaves = tuple(str(x) for x in raw["leaves"])
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{path}: malformed dendrogram") from e
    if len(merges) != len(leaves) - 1:
        raise DataError(f"{path}: expected {len(leaves) - 1} merges, got {len(merges)}")
    return Dendrogram(leaves, merges)


def write_assignment(assignment: ClusterAssignment, path: Path) -> Path:
    return write_json(Path(path), {
        "k": assignment.k,
        "criterion": assignment.criterion,
        "labels": dict(sorted(assignment.labels.items())),
    })


def read_assignment(path: Path) -> ClusterAssignment:
    raw = read_json(Path(path))
    try:
        return ClusterAssignment({str(c): int(v) for c, v in raw["labels"].items()}, int(raw["k"]), dict(raw["criterion"]))
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise DataError(f"{path}: malformed assignment") from e


def write_k_selection(report: KSelectionReport, path: Path) -> Path:
    rows = (
        [r.k, repr(r.silhouette), repr(r.calinski_harabasz), repr(r.davies_bouldin), repr(r.wcss),
         1 if r.k == report.chosen_k else 0]
        for r in report.rows
    )
    return write_csv(Path(path), ["k", "silhouette", "calinski_harabasz", "davies_bouldin", "wcss", "chosen"], rows)


def read_k_selection(path: Path) -> Mapping[int, Dict[str, float]]:
    header, rows = read_csv(Path(path))
    return {int(r[0]): {h: float(v) for h, v in zip(header[1:], r[1:])} for r in rows}
