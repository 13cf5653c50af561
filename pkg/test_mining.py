#!/usr/bin/env python
"""Frequent itemset miner against the worked example and the levelwise oracle"""
import itertools
import time
from pathlib import Path

import numpy as np
import pytest

from src.services.mining_service import (
    FrequentItemset,
    MiningParams,
    build_database,
    interpretive_itemsets,
    mine_frequent_itemsets,
    mine_frequent_itemsets_oracle,
    read_itemsets,
    relative_support,
    restrict_database,
    run_benchmark,
    support,
    write_itemsets,
)
from src.services.neighborhood_service import extract_transactions
from src.services.synthetic_service import EXAMPLE_TRANSACTIONS, random_database, skewed_database, example_layer
from src.utils.errors import MiningError

EXPECTED_ITEMSETS = [
    (("B",), 6), (("C",), 7), (("G",), 3), (("W",), 3),
    (("B", "C"), 6), (("B", "W"), 3), (("C", "G"), 3), (("C", "W"), 3),
    (("B", "C", "W"), 3),
]


def _example_db():
    return build_database(EXAMPLE_TRANSACTIONS)


def test_build_database():
    db = _example_db()
    assert db.universe.items == ("B", "C", "G", "W"), "universe should be the sorted tokens"
    assert db.n == 7, "7 transactions expected"
    single = build_database(["X"])
    assert single.universe.items == ("X",) and single.n == 1, "single transaction database differs"
    assert build_database(["A B", "A B"]).n == 2, "duplicate transactions count separately"
    assert build_database(extract_transactions(example_layer(), 1.0)).transactions == db.transactions, \
        "TransactionSet and text lines should build the same database"
    with pytest.raises(MiningError):
        build_database([])


def test_support_and_relative_support():
    db = _example_db()
    assert support(db, ["C"]) == 7, "sup({C}) should be 7"
    assert support(db, ["B", "C", "W"]) == 3, "sup({B C W}) should be 3"
    assert support(db, []) == 7, "empty itemset is in every transaction"
    assert support(db, ["Z"]) == 0, "unknown items have support 0"
    assert relative_support(db, ["C"]) == 1.0, "rel({C}) should be 1.0"
    assert relative_support(db, ["G"]) == pytest.approx(3 / 7, abs=1e-12), "rel({G}) should be 3/7"
    assert relative_support(db, []) == 1.0, "rel(empty) should be 1.0"


def test_minsup_absolute_rounding():
    assert MiningParams(0.10).minsup_absolute(100) == 10, "10% of 100 is 10"
    assert MiningParams(0.10).minsup_absolute(7) == 1, "ceil(0.7) is 1"
    assert MiningParams(0.25).minsup_absolute(10) == 3, "ceil(2.5) is 3"
    assert MiningParams.absolute(3, 7).minsup_absolute(7) == 3, "absolute 3 of 7 round-trips"
    with pytest.raises(MiningError):
        MiningParams(0.0)
    with pytest.raises(MiningError):
        MiningParams(1.5)
    with pytest.raises(MiningError):
        MiningParams.absolute(0, 7)


def test_worked_example_itemsets():
    db = _example_db()
    t0 = time.perf_counter()
    fis = mine_frequent_itemsets(db, MiningParams.absolute(3, 7))
    elapsed = time.perf_counter() - t0
    assert [(f.items, f.support) for f in fis] == EXPECTED_ITEMSETS, f"itemset mismatch: {fis}"
    assert all(f.relative_support == f.support / 7 for f in fis), "relative support must be support / n"
    assert elapsed < 1.0, f"Table 2 mining took {elapsed:.3f}s"
    oracle = mine_frequent_itemsets_oracle(db, MiningParams.absolute(3, 7))
    assert oracle == fis, "oracle should agree on Table 2"


def test_full_threshold_gives_intersection_subsets():
    db = build_database(["A B C", "A B", "A B D"])
    fis = mine_frequent_itemsets(db, MiningParams(1.0))
    assert [f.items for f in fis] == [("A",), ("B",), ("A", "B")], "only subsets of the intersection at 100%"
    assert mine_frequent_itemsets(_example_db(), MiningParams(1.0))[0].items == ("C",), "only C is in every transaction"


def test_nothing_frequent():
    db = build_database(["A", "B", "C", "D"])
    params = MiningParams(0.5)
    assert mine_frequent_itemsets(db, params) == [], "no item reaches 2 of 4"
    assert mine_frequent_itemsets_oracle(db, params) == [], "oracle should also be empty"


def test_threshold_boundary_is_inclusive():
    db = build_database(["A B", "A", "A", "C"])
    fis = mine_frequent_itemsets(db, MiningParams(0.25))
    keys = {f.items for f in fis}
    assert ("C",) in keys and ("A", "B") in keys, "sup/n == minsup must be emitted"


def test_oracle_equivalence_random_databases():
    rng = np.random.default_rng(12345)
    t0 = time.perf_counter()
    for trial in range(200):
        db = random_database(rng, max_items=12, max_transactions=60)
        params = MiningParams(float(rng.uniform(0.05, 0.5)))
        fast = mine_frequent_itemsets(db, params)
        slow = mine_frequent_itemsets_oracle(db, params)
        assert fast == slow, f"trial {trial}: miner and oracle differ at minsup {params.minsup_relative:.3f}"
    assert time.perf_counter() - t0 < 30.0, "oracle equivalence suite is too slow"


def test_anti_monotone_and_exact():
    rng = np.random.default_rng(99)
    db = random_database(rng, max_items=10, max_transactions=50)
    fis = mine_frequent_itemsets(db, MiningParams(0.1))
    by_items = {f.items: f.support for f in fis}
    for f in fis:
        assert support(db, f.items) == f.support, f"{f.items}: support not exact"
        for size in range(1, len(f.items)):
            for sub in itertools.combinations(f.items, size):
                assert sub in by_items, f"{sub} missing although {f.items} is frequent"
                assert by_items[sub] >= f.support, f"{sub} has lower support than {f.items}"


def test_output_order_and_determinism(tmp_path):
    rng = np.random.default_rng(5)
    db = random_database(rng, max_items=12, max_transactions=60)
    first = mine_frequent_itemsets(db, MiningParams(0.1))
    second = mine_frequent_itemsets(db, MiningParams(0.1))
    assert first == second, "mining must be deterministic"
    assert first == sorted(first, key=lambda f: (len(f.items), f.items)), "output must be canonically ordered"
    a = write_itemsets(first, tmp_path / "a.csv").read_bytes()
    b = write_itemsets(second, tmp_path / "b.csv").read_bytes()
    assert a == b, "itemset CSVs should be byte-identical"


def test_oracle_guard():
    rows = [" ".join(f"i{j}" for j in range(21))]
    with pytest.raises(MiningError):
        mine_frequent_itemsets_oracle(build_database(rows), MiningParams(0.5))


def test_restrict_database_keeps_most_frequent():
    db = skewed_database(n_transactions=2000, n_items=30, seed=1)
    sub = restrict_database(db, 20)
    assert len(sub.universe) == 20 and sub.n == db.n, "restriction keeps every transaction and 20 items"
    assert "i000" in sub.universe.items, "the most frequent item must survive"


def test_itemset_csv(tmp_path):
    fis = mine_frequent_itemsets(_example_db(), MiningParams.absolute(3, 7))
    path = write_itemsets(fis, tmp_path / "fis.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "itemset,support,relative_support", "header differs"
    assert lines[1] == "B,6,0.857143", "relative support printed with 6 decimals"
    assert lines[-1] == "B C W,3,0.428571", "last row should be {B C W}"
    again = read_itemsets(path)
    assert [(f.items, f.support) for f in again] == [(f.items, f.support) for f in fis], "re-read differs"


def test_interpretive_itemsets():
    fis = [
        FrequentItemset(("11100",), 10, 0.5),
        FrequentItemset(("11100", "12210"), 8, 0.4),
        FrequentItemset(("11100", "12100"), 6, 0.3),
        FrequentItemset(("11100", "12100", "12220"), 4, 0.2),
        FrequentItemset(("12210", "12220"), 4, 0.2),
    ]
    kept = [f.items for f in interpretive_itemsets(fis)]
    assert kept == [("11100", "12100"), ("11100", "12100", "12220")], f"unexpected interpretive set {kept}"


def test_benchmark_speed():
    db = skewed_database(n_transactions=50_000, n_items=100, seed=42)
    result = run_benchmark(db, 0.01)
    assert result["itemsets"] > 0, "benchmark mined nothing"
    assert result["miner_seconds"] < 5.0, f"miner took {result['miner_seconds']:.2f}s"
    assert result["speedup"] >= 10.0, f"speedup over the oracle only {result['speedup']:.1f}x"


if __name__ == "__main__":
    import inspect
    import tempfile

    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            with tempfile.TemporaryDirectory() as d:
                fn(**({"tmp_path": Path(d)} if "tmp_path" in inspect.signature(fn).parameters else {}))
            print(f"✓ {name}")
    print("All tests passed!")
