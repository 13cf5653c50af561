#!/usr/bin/env python
"""Ward linkage, cuts, validity indices and k selection"""
import itertools
import math
from pathlib import Path

import numpy as np
import pytest

from src.services.clustering_service import (
    ClusterAssignment,
    calinski_harabasz,
    cut_by_distance,
    cut_by_k,
    cut_heights_for_k,
    davies_bouldin,
    read_assignment,
    read_dendrogram,
    read_k_selection,
    select_k,
    silhouette,
    ward_linkage,
    wcss,
    write_assignment,
    write_dendrogram,
    write_k_selection,
)
from src.services.synthetic_service import blobs
from src.utils.errors import ClusteringError


def _ess(points):
    pts = np.asarray(points, dtype=np.float64)
    return float(np.sum((pts - pts.mean(axis=0)) ** 2))


def _greedy_ward(points):
    """Reference Ward: repeatedly merge the pair whose union raises the total ESS least."""
    clusters = {i: [i] for i in range(len(points))}
    next_id = len(points)
    heights, merged = [], []
    while len(clusters) > 1:
        best = None
        for a, b in itertools.combinations(sorted(clusters), 2):
            inc = _ess(points[clusters[a] + clusters[b]]) - _ess(points[clusters[a]]) - _ess(points[clusters[b]])
            if best is None or inc < best[0]:
                best = (inc, a, b)
        inc, a, b = best
        heights.append(inc)
        merged.append(frozenset(clusters[a] + clusters[b]))
        clusters[next_id] = clusters.pop(a) + clusters.pop(b)
        next_id += 1
    return heights, merged


def _leaf_sets(dendro):
    members = {i: [i] for i in range(dendro.n)}
    out = []
    for i, m in enumerate(dendro.merges):
        members[dendro.n + i] = members[m.left] + members[m.right]
        out.append(frozenset(members[dendro.n + i]))
    return out


FOUR = np.array([0.0, 1.0, 10.0, 11.0])
PAIRS = [0, 0, 1, 1]


def test_ward_three_points():
    d = ward_linkage([0.0, 1.0, 10.0], ["a", "b", "c"])
    assert d.n == 3 and len(d.merges) == 2, "n-1 merges expected"
    first, root = d.merges
    assert (first.left, first.right, first.size) == (0, 1, 2), "closest pair merges first"
    assert abs(first.height - 0.5) < 1e-12, "merging 0 and 1 adds ESS 0.5"
    assert (root.left, root.right, root.size) == (2, 3, 3), "root joins leaf 2 with node 3"
    assert abs(root.height - (_ess([[0.0], [1.0], [10.0]]) - 0.5)) < 1e-12, "root height is the ESS increase"
    assert abs(root.height - 60.1666666667) < 1e-6, "root height should be 60.1667"


def test_ward_matches_greedy_reference():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        n = int(rng.integers(2, 9))
        points = rng.random((n, 2)) * 10
        dendro = ward_linkage(points)
        heights, merged = _greedy_ward(points)
        assert np.allclose(dendro.heights, heights, atol=1e-9), "heights differ from the reference"
        assert _leaf_sets(dendro) == merged, "merge sequence differs from the reference"
        assert all(a <= b + 1e-12 for a, b in zip(dendro.heights, dendro.heights[1:])), "heights must be monotone"
        assert dendro.merges[-1].size == n, "root must contain every leaf"


def test_ward_needs_two_points():
    with pytest.raises(ClusteringError):
        ward_linkage([[1.0, 2.0]])


def test_leaf_order_covers_leaves():
    dendro = ward_linkage(FOUR, ["w", "x", "y", "z"])
    order = dendro.leaf_order()
    assert sorted(order) == [0, 1, 2, 3], "leaf order must be a permutation"
    assert {order[0], order[1]} in ({0, 1}, {2, 3}), "siblings stay adjacent"


def test_cut_by_distance_extremes():
    dendro = ward_linkage([0.0, 1.0, 10.0], ["a", "b", "c"])
    assert cut_by_distance(dendro, 0.0).k == 3, "cut at 0 leaves singletons"
    assert cut_by_distance(dendro, 1000.0).k == 1, "cut above the root gives one cluster"
    mid = cut_by_distance(dendro, 10.0)
    assert mid.k == 2 and mid.labels == {"a": 0, "b": 0, "c": 1}, "cut between merges splits off c"
    assert mid.criterion == {"cut_distance": 10.0}, "criterion records the distance"
    with pytest.raises(ClusteringError):
        cut_by_distance(dendro, -1.0)


def test_cut_by_k_agrees_with_distance_cut():
    rng = np.random.default_rng(8)
    points = rng.normal(size=(12, 2))
    dendro = ward_linkage(points)
    previous = None
    for k in range(1, 13):
        by_k = cut_by_k(dendro, k)
        assert by_k.k == k, f"cut_by_k({k}) gave {by_k.k} clusters"
        low, high = cut_heights_for_k(dendro, k)
        mid = low + 1.0 if math.isinf(high) else (low + high) / 2
        assert cut_by_distance(dendro, mid).labels == by_k.labels, f"k={k}: distance cut disagrees"
        if previous is not None:
            for a, b in itertools.combinations(by_k.labels, 2):
                if by_k.labels[a] == by_k.labels[b]:
                    assert previous.labels[a] == previous.labels[b], "finer cut must nest inside the coarser one"
        previous = by_k
    totals = [wcss(points, cut_by_k(dendro, k), dendro.leaves) for k in range(1, 13)]
    assert all(a >= b - 1e-12 for a, b in zip(totals, totals[1:])), "WCSS must not increase with k"
    with pytest.raises(ClusteringError):
        cut_by_k(dendro, 0)


def test_validity_indices_on_pairs():
    assert abs(silhouette(FOUR, PAIRS) - 0.899749) < 1e-6, "silhouette of the pair split"
    assert abs(calinski_harabasz(FOUR, PAIRS) - 200.0) < 1e-9, "Calinski-Harabasz of the pair split"
    assert abs(davies_bouldin(FOUR, PAIRS) - 0.1) < 1e-12, "Davies-Bouldin of the pair split"
    assert abs(wcss(FOUR, PAIRS) - 1.0) < 1e-12, "WCSS of the pair split"


def test_validity_indices_accept_assignments():
    names = ["a", "b", "c", "d"]
    dendro = ward_linkage(FOUR, names)
    assignment = cut_by_k(dendro, 2)
    assert abs(silhouette(FOUR, assignment, names) - silhouette(FOUR, PAIRS)) < 1e-12, "assignment and labels disagree"
    order = [2, 0, 3, 1]
    points = [FOUR[i] for i in order]
    cities = [names[i] for i in order]
    for index in (silhouette, calinski_harabasz, davies_bouldin, wcss):
        expected = index(FOUR, PAIRS)
        assert abs(index(points, assignment, cities) - expected) < 1e-9, f"{index.__name__} ignores the city order"
    with pytest.raises(ClusteringError):
        silhouette(FOUR, assignment)
    with pytest.raises(ClusteringError):
        wcss(FOUR, assignment, ["a", "b", "c", "x"])


def test_validity_index_sentinels():
    assert calinski_harabasz([0.0, 0.0, 5.0, 5.0], PAIRS) == math.inf, "zero within-cluster spread gives inf"
    assert davies_bouldin([-1.0, 1.0, -2.0, 2.0], PAIRS) == math.inf, "coincident centroids give inf"
    assert silhouette([0.0, 1.0, 2.0], [0, 1, 2]) == 0.0, "all-singleton silhouette is 0"
    with pytest.raises(ClusteringError):
        silhouette(FOUR, [0, 0, 0, 0])
    with pytest.raises(ClusteringError):
        calinski_harabasz(FOUR, [0, 1, 2, 3])


def test_validity_index_invariances():
    rng = np.random.default_rng(12)
    points, labels = blobs([[0, 0], [6, 1], [2, 7]], per_blob=10, spread=1.0, seed=3)
    moved = points * 3.5 + np.array([100.0, -40.0])
    assert abs(silhouette(points, labels) - silhouette(moved, labels)) < 1e-9, "silhouette changed under similarity"
    assert abs(calinski_harabasz(points, labels) - calinski_harabasz(moved, labels)) < 1e-6, "CH changed under similarity"
    assert abs(davies_bouldin(points, labels) - davies_bouldin(moved, labels)) < 1e-9, "DBI changed under similarity"
    s = silhouette(points, labels)
    assert -1.0 <= s <= 1.0, "silhouette out of range"
    perm = rng.permutation(len(labels))
    assert abs(silhouette(points[perm], labels[perm]) - s) < 1e-12, "silhouette depends on row order"


def test_select_k_finds_three_blobs():
    points, _ = blobs([[0, 0], [20, 0], [10, 17]], per_blob=20, spread=0.8, seed=1)
    report = select_k(points, range(2, 7))
    assert report.chosen_k == 3, f"expected k=3, got {report.chosen_k}"
    assert [r.k for r in report.rows] == [2, 3, 4, 5, 6], "one row per k"
    for r in report.rows:
        assert all(math.isfinite(v) for v in (r.silhouette, r.calinski_harabasz, r.davies_bouldin, r.wcss, r.elbow)), \
            f"non-finite index at k={r.k}"
    assert report.row(3).mean_rank == min(r.mean_rank for r in report.rows), "chosen k has the best mean rank"
    assert "k=3" in report.note, "note names the chosen k"


def test_select_k_single_candidate():
    points, _ = blobs([[0, 0], [20, 0], [10, 17]], per_blob=5, spread=0.8, seed=1)
    assert select_k(points, range(2, 3)).chosen_k == 2, "only candidate must be chosen"
    with pytest.raises(ClusteringError):
        select_k(points, range(2, 40))


def test_dendrogram_and_assignment_files(tmp_path):
    dendro = ward_linkage([0.0, 1.0, 10.0], ["a", "b", "c"])
    again = read_dendrogram(write_dendrogram(dendro, tmp_path / "dendrogram.json"))
    assert again == dendro, "dendrogram changed after re-read"

    assignment = cut_by_k(dendro, 2)
    back = read_assignment(write_assignment(assignment, tmp_path / "clusters.json"))
    assert back.labels == assignment.labels and back.k == 2, "assignment changed after re-read"
    assert isinstance(back, ClusterAssignment), "re-read type"


def test_k_selection_csv(tmp_path):
    points, _ = blobs([[0, 0], [20, 0], [10, 17]], per_blob=8, spread=0.8, seed=4)
    report = select_k(points, range(2, 5))
    path = write_k_selection(report, tmp_path / "k_selection.csv")
    assert path.read_text(encoding="utf-8").splitlines()[0] == "k,silhouette,calinski_harabasz,davies_bouldin,wcss,chosen", \
        "header differs"
    table = read_k_selection(path)
    assert sorted(table) == [2, 3, 4], "one row per k"
    assert [k for k, row in table.items() if row["chosen"] == 1.0] == [report.chosen_k], "exactly one chosen row"
    assert table[3]["silhouette"] == report.row(3).silhouette, "values must survive exactly"


if __name__ == "__main__":
    import inspect
    import tempfile

    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            with tempfile.TemporaryDirectory() as d:
                fn(**({"tmp_path": Path(d)} if "tmp_path" in inspect.signature(fn).parameters else {}))
            print(f"✓ {name}")
    print("All tests passed!")
