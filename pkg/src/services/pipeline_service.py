"""Four-phase workflow: transactions, frequent itemsets, city matrix, embedding and clustering.

Every stage reads the files of the stage before it and writes its own, so a
full run and a run of the individual stages produce the same bytes.
"""
from __future__ import annotations

import asyncio
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, TypeVar

from src.helpers.files import read_csv, sha256_file, write_csv, write_json, write_text
from src.services.clustering_service import (
    cluster_embedding,
    cut_by_distance,
    cut_by_k,
    cut_heights_for_k,
    read_assignment,
    read_dendrogram,
    write_assignment,
    write_dendrogram,
    write_k_selection,
)
from src.services.embedding_service import (
    UmapParams,
    pairwise_sqeuclidean,
    pca_embed,
    read_embedding,
    umap_embed,
    write_distance_matrix,
    write_embedding,
)
from src.services.ingest_service import load_feature_collection, validate_layer
from src.services.matrix_service import CityFIMatrix, fi_key, merge_city_fis, read_matrix, write_matrix
from src.services.mining_service import (
    FrequentItemset,
    MiningParams,
    build_database,
    interpretive_itemsets,
    mine_frequent_itemsets,
    read_itemsets,
    write_itemsets,
)
from src.services.neighborhood_service import (
    export_dichotomous,
    export_transactions,
    extract_transactions,
    mean_length,
    median_length,
    read_transactions,
)
from src.services.report_service import (
    ColorMap,
    RenderConfig,
    render_city_thumbnail,
    render_dendrogram,
    render_fi_profile,
    render_heatmap,
    render_scatter,
)
from src.utils.errors import ConfigError, DataError, LandUseError, StageError
from src.utils.logger import get_logger
from src.utils.settings_store import PipelineConfig, clip_k_range


logger = get_logger(__name__)

T = TypeVar("T")

STAGES = ("extract", "mine", "matrix", "embed", "cluster", "report")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    stage: str
    sha256: str


@dataclass
class RunManifest:
    entries: List[ManifestEntry] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    def add(self, out_dir: Path, path: Path, stage: str) -> None:
        rel = Path(path).relative_to(out_dir).as_posix()
        self.entries.append(ManifestEntry(rel, stage, sha256_file(path)))

    def extend(self, other: "RunManifest") -> None:
        self.entries.extend(other.entries)
        self.notes.extend(other.notes)

    def sorted_entries(self) -> List[ManifestEntry]:
        return sorted(self.entries, key=lambda e: e.path)

    def as_json(self) -> List[Dict[str, str]]:
        return [{"path": e.path, "stage": e.stage, "sha256": e.sha256} for e in self.sorted_entries()]

    def hashes(self) -> Dict[str, str]:
        return {e.path: e.sha256 for e in self.entries}


@dataclass(frozen=True)
class SweepRow:
    buffer_distance_m: float
    transaction_count: int
    median_transaction_length: float
    mean_transaction_length: float
    fi_count: int


@dataclass(frozen=True)
class SweepResult:
    city_name: str
    minsup_relative: float
    rows: Tuple[SweepRow, ...]


@dataclass(frozen=True)
class VerifyCheck:
    name: str
    ok: bool
    detail: str


# --- layout --------------------------------------------------------------------

def transactions_path(out: Path, city: str) -> Path:
    return out / "transactions" / f"{city}.txt"


def dichotomous_path(out: Path, city: str) -> Path:
    return out / "transactions" / f"{city}.dichotomous.csv"


def itemsets_path(out: Path, city: str) -> Path:
    return out / "itemsets" / f"{city}.csv"


def svg_path(out: Path, name: str, kind: Optional[str] = None) -> Path:
    return out / "svg" / (f"{name}.{kind}.svg" if kind else f"{name}.svg")


def output_dir(cfg: PipelineConfig) -> Path:
    return Path(cfg.output_dir)


# --- stage plumbing ------------------------------------------------------------

@contextmanager
def _stage(name: str, city: Optional[str] = None) -> Iterator[None]:
    try:
        yield
    except (ConfigError, StageError):
        raise
    except (LandUseError, OSError, ValueError) as e:
        logger.exception("Stage %s failed%s", name, f" for {city}" if city else "")
        raise StageError(name, str(e), city) from e


def _require(path: Path) -> Path:
    if not path.exists():
        raise DataError(f"missing prerequisite file {path}")
    return path


async def _fan_out_async(stage: str, keys: Sequence[str], fn: Callable[[str], T], jobs: int) -> Dict[str, T]:
    sem = asyncio.Semaphore(max(1, jobs))

    async def one(key: str) -> Tuple[str, T]:
        async with sem:
            with _stage(stage, key):
                return key, await asyncio.to_thread(fn, key)

    results = await asyncio.gather(*(one(k) for k in keys))
    return dict(sorted(results, key=lambda r: r[0]))


def _fan_out(stage: str, keys: Sequence[str], fn: Callable[[str], T], jobs: int) -> Dict[str, T]:
    """Run fn per key on at most `jobs` worker threads; results ordered by key."""
    return asyncio.run(_fan_out_async(stage, keys, fn, jobs))


def _cities(cfg: PipelineConfig) -> List[str]:
    return sorted(cfg.city_paths())


# --- stages --------------------------------------------------------------------

def stage_extract(cfg: PipelineConfig) -> RunManifest:
    out = output_dir(cfg)
    paths = cfg.city_paths()

    def work(city: str) -> Tuple[Path, Path]:
        layer = load_feature_collection(Path(paths[city]), cfg.code_attribute, city)
        report = validate_layer(layer)
        for fid, msg in report.warnings:
            logger.warning("%s feature %s: %s", city, fid, msg)
        if not report.ok:
            fid, msg = report.errors[0]
            raise DataError(f"feature {fid}: {msg} ({len(report.errors)} validation errors)")
        ts = extract_transactions(layer, cfg.buffer_distance_m)
        return (export_transactions(ts, transactions_path(out, city)),
                export_dichotomous(ts, dichotomous_path(out, city)))

    manifest = RunManifest()
    for city, files in _fan_out("extract", _cities(cfg), work, cfg.jobs).items():
        for p in files:
            manifest.add(out, p, "extract")
    return manifest


def stage_mine(cfg: PipelineConfig) -> RunManifest:
    out = output_dir(cfg)
    params = MiningParams(cfg.minsup_relative)

    def work(city: str) -> Path:
        ts = read_transactions(_require(transactions_path(out, city)), city)
        fis = mine_frequent_itemsets(build_database(ts), params)
        logger.info("%s: %d frequent itemsets at minsup %.2f", city, len(fis), cfg.minsup_relative)
        return write_itemsets(fis, itemsets_path(out, city))

    manifest = RunManifest()
    for city, p in _fan_out("mine", _cities(cfg), work, cfg.jobs).items():
        manifest.add(out, p, "mine")
    return manifest


def city_itemsets(out: Path, city: str) -> List[FrequentItemset]:
    """A city's itemsets with relative support recomputed from its transaction count,
    since the itemset CSV prints only 6 decimals."""
    fis = read_itemsets(_require(itemsets_path(out, city)))
    n = len(read_transactions(_require(transactions_path(out, city)), city))
    if n == 0:
        raise DataError(f"{city}: no transactions behind {len(fis)} itemsets")
    return [FrequentItemset(f.items, f.support, f.support / n) for f in fis]


def city_matrix(cfg: PipelineConfig) -> CityFIMatrix:
    out = output_dir(cfg)
    return merge_city_fis({city: city_itemsets(out, city) for city in _cities(cfg)})


def stage_matrix(cfg: PipelineConfig) -> RunManifest:
    out = output_dir(cfg)
    manifest = RunManifest()
    with _stage("matrix"):
        matrix = city_matrix(cfg)
        manifest.add(out, write_matrix(matrix, out / "matrix.csv"), "matrix")
    return manifest


def stage_embed(cfg: PipelineConfig) -> RunManifest:
    out = output_dir(cfg)
    manifest = RunManifest()
    with _stage("embed"):
        printed = read_matrix(_require(out / "matrix.csv"))
        matrix = city_matrix(cfg)
        if printed.city_names != matrix.city_names or printed.fi_columns != matrix.fi_columns:
            raise DataError(f"{out / 'matrix.csv'} does not match the itemsets; rerun the matrix stage")
        if cfg.embedding == "pca":
            emb = pca_embed(matrix)
        else:
            emb = umap_embed(matrix, UmapParams(seed=cfg.seed, **cfg.umap.model_dump()))
        manifest.add(out, write_embedding(emb, out / "embedding.csv"), "embed")
        manifest.add(out, write_distance_matrix(pairwise_sqeuclidean(emb), out / "distances.csv"), "embed")
    return manifest


def stage_cluster(cfg: PipelineConfig) -> RunManifest:
    out = output_dir(cfg)
    return cluster_files(out / "embedding.csv", out, cfg.k_min, cfg.k_max, cfg.cut_distance)


def cluster_files(embedding_csv: Path, out: Path, k_min: int, k_max: int,
                  cut_distance: Optional[float] = None) -> RunManifest:
    """Cluster an embedding CSV on its own; no geometry or config inputs needed."""
    out = Path(out)
    manifest = RunManifest()
    with _stage("cluster"):
        emb = read_embedding(_require(Path(embedding_csv)))
        k_range = clip_k_range(k_min, k_max, len(emb.city_names))
        dendro, report, assignment = cluster_embedding(emb, k_range, cut_distance)
        manifest.add(out, write_dendrogram(dendro, out / "dendrogram.json"), "cluster")
        manifest.add(out, write_k_selection(report, out / "k_selection.csv"), "cluster")
        manifest.add(out, write_assignment(assignment, out / "assignment.json"), "cluster")
        logger.info("k selection: %s", report.note)
    return manifest


def _render_config(cfg: PipelineConfig) -> RenderConfig:
    r = cfg.render
    return RenderConfig(width=r.width, height=r.height, margin=r.margin, font_size=r.font_size,
                        leaf_order=r.leaf_order, thumbnail_size=r.thumbnail_size)


def stage_report(cfg: PipelineConfig) -> RunManifest:
    out = output_dir(cfg)
    manifest = RunManifest()
    rcfg = _render_config(cfg)
    colors = ColorMap.with_overrides(cfg.colors)
    with _stage("report"):
        emb = read_embedding(_require(out / "embedding.csv"))
        dendro = read_dendrogram(_require(out / "dendrogram.json"))
        assignment = read_assignment(_require(out / "assignment.json"))
        dist = pairwise_sqeuclidean(emb)

        if rcfg.leaf_order == "dendrogram":
            order = [dendro.leaves[i] for i in dendro.leaf_order()]
        else:
            order = list(emb.city_names)
        manifest.add(out, write_text(svg_path(out, "heatmap"), render_heatmap(dist, order, rcfg, colors)), "report")

        cut = cfg.cut_distance
        if cut is None:
            low, high = cut_heights_for_k(dendro, assignment.k)
            cut = (low + high) / 2.0
        manifest.add(out, write_text(svg_path(out, "dendrogram"), render_dendrogram(dendro, cut, rcfg)), "report")

        thumbnails: Dict[str, str] = {}
        paths = cfg.city_paths()
        for city in emb.city_names:
            if city in paths and Path(paths[city]).exists():
                layer = load_feature_collection(Path(paths[city]), cfg.code_attribute, city)
                thumbnails[city] = render_city_thumbnail(layer, colors, rcfg.thumbnail_size)
                manifest.add(out, write_text(svg_path(out, city, "thumbnail"), thumbnails[city]), "report")
            fi_file = itemsets_path(out, city)
            if fi_file.exists():
                fis = interpretive_itemsets(read_itemsets(fi_file), cfg.exclude_codes)
                manifest.add(out, write_text(svg_path(out, city, "fi_profile"), render_fi_profile(city, fis, cfg=rcfg)),
                             "report")
        scatter = render_scatter(emb, assignment, thumbnails or None, rcfg)
        manifest.add(out, write_text(svg_path(out, "scatter"), scatter), "report")
    return manifest


STAGE_FUNCTIONS: Dict[str, Callable[[PipelineConfig], RunManifest]] = {
    "extract": stage_extract,
    "mine": stage_mine,
    "matrix": stage_matrix,
    "embed": stage_embed,
    "cluster": stage_cluster,
    "report": stage_report,
}


def write_manifest(manifest: RunManifest, out: Path) -> Path:
    return write_json(out / "manifest.json", manifest.as_json())


def run_pipeline(cfg: PipelineConfig) -> RunManifest:
    out = output_dir(cfg)
    manifest = RunManifest()
    n_cities = len(cfg.inputs)
    for name in STAGES:
        if name == "matrix" and n_cities < 2:
            note = "clustering needs at least 2 cities; stopped after the frequent itemsets"
            logger.warning(note)
            manifest.notes.append(note)
            break
        manifest.extend(STAGE_FUNCTIONS[name](cfg))
        logger.info("Stage %s done", name)
    write_manifest(manifest, out)
    logger.info("Pipeline finished: %d outputs in %s", len(manifest.entries), out)
    return manifest


def run_buffer_sweep(cfg: PipelineConfig, distances: Optional[Sequence[float]] = None,
                     city: Optional[str] = None) -> SweepResult:
    paths = cfg.city_paths()
    if city is None:
        if len(paths) != 1:
            raise ConfigError(f"the sweep runs on one city; choose one of {', '.join(sorted(paths))}")
        city = next(iter(paths))
    if city not in paths:
        raise ConfigError(f"unknown city {city!r}")
    distances = list(distances if distances is not None else cfg.sweep_distances_m)
    if not distances:
        raise ConfigError("the sweep needs at least one distance")
    if any(d < 0 for d in distances):
        raise ConfigError("sweep distances must be non-negative")

    with _stage("sweep", city):
        layer = load_feature_collection(Path(paths[city]), cfg.code_attribute, city)
    params = MiningParams(cfg.sweep_minsup_relative)

    def work(key: str) -> SweepRow:
        d = float(key)
        ts = extract_transactions(layer, d)
        fis = mine_frequent_itemsets(build_database(ts), params)
        return SweepRow(d, len(ts), median_length(ts), mean_length(ts), len(fis))

    keys = [repr(float(d)) for d in distances]
    rows = _fan_out("sweep", keys, work, cfg.jobs)
    result = SweepResult(city, cfg.sweep_minsup_relative, tuple(rows[k] for k in keys))
    write_sweep(result, output_dir(cfg) / f"sweep_{city}.csv")
    return result


def write_sweep(result: SweepResult, path: Path) -> Path:
    header = ["buffer_distance_m", "transaction_count", "median_transaction_length",
              "mean_transaction_length", "fi_count"]
    rows = ([repr(r.buffer_distance_m), r.transaction_count, repr(r.median_transaction_length),
             repr(r.mean_transaction_length), r.fi_count] for r in result.rows)
    return write_csv(path, header, rows)


def verify_outputs(cfg: PipelineConfig, target_k: int = 7) -> List[VerifyCheck]:
    """Structural checks over a finished run; exact values are not reproducible without the source data."""
    out = output_dir(cfg)
    checks: List[VerifyCheck] = []
    union = set()
    cities = _cities(cfg)
    for city in cities:
        fi_file = itemsets_path(out, city)
        if not fi_file.exists():
            checks.append(VerifyCheck(f"itemsets[{city}]", False, f"missing {fi_file}"))
            continue
        fis = read_itemsets(fi_file)
        union.update(fi_key(f.items) for f in fis)
        checks.append(VerifyCheck(f"itemsets[{city}]", len(fis) > 0, f"{len(fis)} frequent itemsets"))

    matrix_file = out / "matrix.csv"
    if matrix_file.exists():
        matrix = read_matrix(matrix_file)
        expected = (len(cities), len(union))
        checks.append(VerifyCheck("matrix_shape", matrix.shape == expected,
                                  f"{matrix.shape[0]}x{matrix.shape[1]}, expected {expected[0]}x{expected[1]}"))
    elif len(cities) >= 2:
        checks.append(VerifyCheck("matrix_shape", False, f"missing {matrix_file}"))

    dendro_file = out / "dendrogram.json"
    if dendro_file.exists() and len(cities) >= target_k:
        dendro = read_dendrogram(dendro_file)
        low, high = cut_heights_for_k(dendro, target_k)
        by_k = cut_by_k(dendro, target_k)
        by_height = cut_by_distance(dendro, (low + high) / 2.0) if high > low else by_k
        sizes = [len(v) for v in by_k.members().values()]
        ok = by_k.k == target_k and by_height.k == target_k and all(s > 0 for s in sizes)
        checks.append(VerifyCheck(f"cut_{target_k}", ok, f"group sizes {sizes} between heights {low:.6g} and {high:.6g}"))

    for c in checks:
        (logger.info if c.ok else logger.warning)("verify %s: %s (%s)", c.name, "ok" if c.ok else "FAILED", c.detail)
    return checks


def mine_file(transactions_file: Path, out_csv: Optional[Path], minsup_relative: Optional[float] = None,
              minsup_absolute: Optional[int] = None) -> Tuple[List, Optional[Path]]:
    """Mine an externally produced transactions file (one space-separated transaction per line)."""
    with _stage("mine", Path(transactions_file).stem):
        ts = read_transactions(_require(Path(transactions_file)))
        db = build_database(ts)
        if minsup_absolute is not None:
            params = MiningParams.absolute(minsup_absolute, db.n)
        else:
            params = MiningParams(minsup_relative if minsup_relative is not None else 0.10)
        fis = mine_frequent_itemsets(db, params)
        written = write_itemsets(fis, Path(out_csv)) if out_csv is not None else None
    return fis, written
