"""Frequent itemset mining over neighbourhood transactions.

The main miner follows negFIN: frequent items are ranked by descending support,
the transactions form a prefix tree whose nodes are identified by the bitmap of
every item on their root path, and itemsets are enumerated per base item (its
least frequent member). Each enumerated itemset keeps a NegNodeset: the nodes
of the base item that hold the parent itemset but lack the newest item, so
sup(P + x) = sup(P) - sum(counts over NegNodeset(P + x)).
"""
from __future__ import annotations

import itertools
import math
import time
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.helpers.files import fmt6, read_csv, write_csv
from src.services.neighborhood_service import TransactionSet
from src.utils.errors import DataError, MiningError
from src.utils.logger import get_logger


logger = get_logger(__name__)

ORACLE_MAX_ITEMS = 20
DEFAULT_EXCLUDE_CODES = ("12210", "12220")


@dataclass(frozen=True)
class ItemUniverse:
    items: Tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.items)) != len(self.items):
            raise MiningError("item tokens must be unique")

    @cached_property
    def index(self) -> Dict[str, int]:
        return {tok: i for i, tok in enumerate(self.items)}

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class TransactionDatabase:
    universe: ItemUniverse
    transactions: Tuple[FrozenSet[int], ...]

    @property
    def n(self) -> int:
        return len(self.transactions)


@dataclass(frozen=True)
class FrequentItemset:
    items: Tuple[str, ...]
    support: int
    relative_support: float

    @property
    def key(self) -> str:
        return " ".join(self.items)


@dataclass(frozen=True)
class MiningParams:
    minsup_relative: float

    def __post_init__(self) -> None:
        if not (0 < self.minsup_relative <= 1):
            raise MiningError(f"minsup_relative must be in (0, 1], got {self.minsup_relative}")

    @classmethod
    def absolute(cls, count: int, n: int) -> "MiningParams":
        if count < 1 or n < 1 or count > n:
            raise MiningError(f"absolute minsup {count} is invalid for {n} transactions")
        return cls(count / n)

    def minsup_absolute(self, n: int) -> int:
        """Smallest count c with c / n >= minsup_relative."""
        c = max(1, math.ceil(self.minsup_relative * n))
        while c > 1 and (c - 1) / n >= self.minsup_relative:
            c -= 1
        while c / n < self.minsup_relative:
            c += 1
        return c


TransactionSource = Union[TransactionSet, Iterable[str], Iterable[Sequence[str]]]


def build_database(source: TransactionSource) -> TransactionDatabase:
    if isinstance(source, TransactionSet):
        rows = [t.items for t in source.transactions]
    else:
        rows = [line.split() if isinstance(line, str) else list(line) for line in source]
    if not rows:
        raise MiningError("cannot build a database from zero transactions")
    if any(not r for r in rows):
        raise MiningError("transactions must not be empty")
    universe = ItemUniverse(tuple(sorted({tok for r in rows for tok in r})))
    idx = universe.index
    return TransactionDatabase(universe, tuple(frozenset(idx[tok] for tok in r) for r in rows))


def _indices(db: TransactionDatabase, x: Iterable[str]) -> Optional[FrozenSet[int]]:
    idx = db.universe.index
    out = []
    for tok in x:
        if tok not in idx:
            return None
        out.append(idx[tok])
    return frozenset(out)


def support(db: TransactionDatabase, x: Iterable[str]) -> int:
    wanted = _indices(db, x)
    if wanted is None:
        return 0
    return sum(1 for t in db.transactions if wanted <= t)


def relative_support(db: TransactionDatabase, x: Iterable[str]) -> float:
    return support(db, x) / db.n


def _canonical(db: TransactionDatabase, found: Iterable[Tuple[Iterable[int], int]]) -> List[FrequentItemset]:
    items = db.universe.items
    out = []
    for idxs, sup in found:
        toks = tuple(sorted(items[i] for i in idxs))
        out.append(FrequentItemset(toks, int(sup), sup / db.n))
    out.sort(key=lambda f: (len(f.items), f.items))
    return out


class _NodesetTable:
    """Per-rank node counts and root-path bitmaps of the bitmap-coded prefix tree.

    A node of rank r is a distinct root path ending in r, i.e. a distinct value
    of a transaction's rank bitmap masked to ranks <= r, over the transactions
    holding r. Its count is the number of such transactions.
    """

    def __init__(self, db: TransactionDatabase, order: List[int]) -> None:
        n_ranks = len(order)
        self.words = max(1, (n_ranks + 63) // 64)
        rank_of = np.full(len(db.universe), -1, dtype=np.int64)
        rank_of[np.asarray(order, dtype=np.int64)] = np.arange(n_ranks)

        lengths = np.fromiter((len(t) for t in db.transactions), dtype=np.int64, count=db.n)
        flat = np.fromiter((i for t in db.transactions for i in t), dtype=np.int64, count=int(lengths.sum()))
        rows = np.repeat(np.arange(db.n), lengths)
        ranks = rank_of[flat]
        keep = ranks >= 0
        rows, ranks = rows[keep], ranks[keep]
        masks = np.zeros((db.n, self.words), dtype=np.uint64)
        np.bitwise_or.at(masks, (rows, ranks // 64), np.left_shift(np.uint64(1), (ranks % 64).astype(np.uint64)))

        self.counts: List[np.ndarray] = []
        self.bits: List[np.ndarray] = []
        for r in range(n_ranks):
            w, s = divmod(r, 64)
            prefix = masks[((masks[:, w] >> np.uint64(s)) & np.uint64(1)).astype(bool)]
            low = np.uint64((1 << (s + 1)) - 1) if s < 63 else np.uint64((1 << 64) - 1)
            prefix[:, w] &= low
            prefix[:, w + 1:] = 0
            if self.words == 1:
                uniq, counts = np.unique(prefix[:, 0], return_counts=True)
                nodes = uniq.reshape(-1, 1)
            else:
                nodes, counts = np.unique(prefix, axis=0, return_counts=True)
            self.bits.append(nodes)
            self.counts.append(counts.astype(np.int64))
        self.node_total = sum(len(c) for c in self.counts)

    def has(self, base: int, nodes: np.ndarray, item_rank: int) -> np.ndarray:
        w, s = divmod(item_rank, 64)
        return (self.bits[base][nodes, w] & np.uint64(1 << s)) != 0


def mine_frequent_itemsets(db: TransactionDatabase, params: MiningParams) -> List[FrequentItemset]:
    minsup = params.minsup_absolute(db.n)
    counts = Counter(i for t in db.transactions for i in t)
    items = db.universe.items
    order = sorted((i for i, c in counts.items() if c >= minsup), key=lambda i: (-counts[i], items[i]))
    if not order:
        return []
    table = _NodesetTable(db, order)
    found: List[Tuple[Tuple[int, ...], int]] = []

    def emit(ranks: Tuple[int, ...], sup: int, promoted: List[int]) -> None:
        for size in range(len(promoted) + 1):
            for extra in itertools.combinations(promoted, size):
                found.append((tuple(order[r] for r in ranks + extra), sup))

    def expand(base: int, prefix: Tuple[int, ...], children: List[Tuple[int, np.ndarray, int]], promoted: List[int]) -> None:
        node_counts = table.counts[base]
        for pos, (x, _, sup_x) in enumerate(children):
            grown = prefix + (x,)
            next_children: List[Tuple[int, np.ndarray, int]] = []
            equivalent: List[int] = []
            for y, neg_y, _ in children[pos + 1:]:
                # NegNodeset(P+x+y) = nodes of NegNodeset(P+y) that do carry x
                neg_xy = neg_y[table.has(base, neg_y, x)]
                sup_xy = sup_x - int(node_counts[neg_xy].sum())
                if sup_xy == sup_x:
                    equivalent.append(y)
                elif sup_xy >= minsup:
                    next_children.append((y, neg_xy, sup_xy))
            emit(grown, sup_x, promoted + equivalent)
            if next_children:
                expand(base, grown, next_children, promoted + equivalent)

    for base in range(len(order)):
        node_counts = table.counts[base]
        all_nodes = np.arange(len(node_counts))
        sup_base = int(node_counts.sum())
        children: List[Tuple[int, np.ndarray, int]] = []
        equivalent: List[int] = []
        for x in range(base):
            neg = all_nodes[~table.has(base, all_nodes, x)]
            sup_x = sup_base - int(node_counts[neg].sum())
            if sup_x == sup_base:
                equivalent.append(x)
            elif sup_x >= minsup:
                children.append((x, neg, sup_x))
        emit((base,), sup_base, equivalent)
        expand(base, (base,), children, equivalent)

    result = _canonical(db, found)
    logger.debug("negFIN: %d tree nodes, %d itemsets at minsup %d/%d", table.node_total, len(result), minsup, db.n)
    return result


def mine_frequent_itemsets_oracle(db: TransactionDatabase, params: MiningParams) -> List[FrequentItemset]:
    """Levelwise candidate generation with exact containment counting."""
    if len(db.universe) > ORACLE_MAX_ITEMS:
        raise MiningError(f"oracle accepts at most {ORACLE_MAX_ITEMS} items, universe has {len(db.universe)}")
    minsup = params.minsup_absolute(db.n)
    transactions = db.transactions
    level: List[Tuple[int, ...]] = [(i,) for i in range(len(db.universe))]
    found: List[Tuple[Tuple[int, ...], int]] = []
    while level:
        frequent = []
        for cand in level:
            wanted = frozenset(cand)
            sup = sum(1 for t in transactions if wanted <= t)
            if sup >= minsup:
                frequent.append(cand)
                found.append((cand, sup))
        known = set(frequent)
        frequent.sort()
        level = []
        for i, a in enumerate(frequent):
            for b in frequent[i + 1:]:
                if a[:-1] != b[:-1]:
                    break
                cand = a + (b[-1],)
                if all(sub in known for sub in itertools.combinations(cand, len(cand) - 1)):
                    level.append(cand)
    return _canonical(db, found)


def restrict_database(db: TransactionDatabase, max_items: int = ORACLE_MAX_ITEMS) -> TransactionDatabase:
    """Keep the max_items most frequent items (ties by token); empty transactions are kept."""
    counts = Counter(i for t in db.transactions for i in t)
    keep = sorted(range(len(db.universe)), key=lambda i: (-counts[i], db.universe.items[i]))[:max_items]
    tokens = sorted(db.universe.items[i] for i in keep)
    universe = ItemUniverse(tuple(tokens))
    remap = {db.universe.index[tok]: j for j, tok in enumerate(tokens)}
    rows = tuple(frozenset(remap[i] for i in t if i in remap) for t in db.transactions)
    return TransactionDatabase(universe, rows)


def interpretive_itemsets(fis: Sequence[FrequentItemset], exclude_codes: Iterable[str] = DEFAULT_EXCLUDE_CODES, min_length: int = 2) -> List[FrequentItemset]:
    """Itemsets with at least min_length codes outside exclude_codes."""
    excluded = set(exclude_codes)
    return [f for f in fis if sum(1 for it in f.items if it not in excluded) >= min_length]


def write_itemsets(fis: Sequence[FrequentItemset], path: Path) -> Path:
    return write_csv(Path(path), ["itemset", "support", "relative_support"],
                     ([f.key, f.support, fmt6(f.relative_support)] for f in fis))


def read_itemsets(path: Path) -> List[FrequentItemset]:
    header, rows = read_csv(Path(path))
    if header != ["itemset", "support", "relative_support"]:
        raise DataError(f"{path}: unexpected itemset header {header}")
    out = []
    for row in rows:
        try:
            out.append(FrequentItemset(tuple(sorted(row[0].split())), int(row[1]), float(row[2])))
        except (IndexError, ValueError) as e:
            raise DataError(f"{path}: malformed itemset row {row}") from e
    return out


def run_benchmark(db: TransactionDatabase, minsup_relative: float = 0.01) -> Dict[str, float]:
    """Time the main miner on db and both miners on its largest oracle-admissible sub-instance."""
    params = MiningParams(minsup_relative)
    t0 = time.perf_counter()
    full = mine_frequent_itemsets(db, params)
    miner_full = time.perf_counter() - t0

    sub = restrict_database(db)
    t0 = time.perf_counter()
    sub_fast = mine_frequent_itemsets(sub, params)
    miner_sub = time.perf_counter() - t0
    t0 = time.perf_counter()
    sub_oracle = mine_frequent_itemsets_oracle(sub, params)
    oracle_sub = time.perf_counter() - t0
    if sub_fast != sub_oracle:
        raise MiningError("miner and oracle disagree on the benchmark sub-instance")

    result = {
        "transactions": float(db.n),
        "items": float(len(db.universe)),
        "itemsets": float(len(full)),
        "miner_seconds": miner_full,
        "sub_itemsets": float(len(sub_fast)),
        "sub_miner_seconds": miner_sub,
        "sub_oracle_seconds": oracle_sub,
        "speedup": oracle_sub / miner_sub if miner_sub > 0 else math.inf,
    }
    logger.info("Benchmark: %d itemsets in %.3fs; sub-instance speedup %.1fx", len(full), miner_full, result["speedup"])
    return result
