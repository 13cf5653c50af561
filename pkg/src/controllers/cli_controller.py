import argparse
import json
from pathlib import Path
from typing import Any, Dict

from src.config.env import load_config
from src.services.mining_service import run_benchmark
from src.services.pipeline_service import (
    STAGE_FUNCTIONS,
    cluster_files,
    mine_file,
    run_buffer_sweep,
    run_pipeline,
    verify_outputs,
)
from src.services.synthetic_service import skewed_database, write_city_bundle
from src.utils.errors import ConfigError, DataError
from src.utils.logger import get_logger
from src.utils.settings_store import PipelineConfig, load_pipeline_config


logger = get_logger(__name__)

PATCH_KEYS = ("seed", "buffer_distance_m", "minsup_relative", "embedding", "cut_distance",
              "k_min", "k_max", "jobs", "output_dir")


def _patch(args: argparse.Namespace) -> Dict[str, Any]:
    return {k: getattr(args, k, None) for k in PATCH_KEYS}


def _config(args: argparse.Namespace) -> PipelineConfig:
    if not args.config:
        raise ConfigError(f"'{args.command}' needs --config")
    return load_pipeline_config(args.config, _patch(args))


def _run_stage(name: str, args: argparse.Namespace) -> int:
    cfg = _config(args)
    manifest = STAGE_FUNCTIONS[name](cfg)
    for entry in manifest.sorted_entries():
        print(f"{entry.sha256[:12]}  {entry.path}")
    return 0


def extract_cmd(args: argparse.Namespace) -> int:
    return _run_stage("extract", args)


def mine_cmd(args: argparse.Namespace) -> int:
    if args.transactions:
        fis, written = mine_file(Path(args.transactions), Path(args.out) if args.out else None,
                                 args.minsup_relative, args.minsup_abs)
        if written is None:
            print("itemset,support,relative_support")
            for f in fis:
                print(f"{f.key},{f.support},{f.relative_support:.6f}")
        else:
            print(f"{len(fis)} itemsets -> {written}")
        return 0
    if args.minsup_abs is not None:
        raise ConfigError("--minsup-abs applies to --transactions; configured cities use a relative --minsup")
    return _run_stage("mine", args)


def matrix_cmd(args: argparse.Namespace) -> int:
    return _run_stage("matrix", args)


def embed_cmd(args: argparse.Namespace) -> int:
    return _run_stage("embed", args)


def cluster_cmd(args: argparse.Namespace) -> int:
    if args.embedding_csv:
        out = Path(args.output_dir or load_config().output_dir)
        manifest = cluster_files(Path(args.embedding_csv), out, args.k_min or 2, args.k_max or 10, args.cut_distance)
        for entry in manifest.sorted_entries():
            print(f"{entry.sha256[:12]}  {entry.path}")
        return 0
    return _run_stage("cluster", args)


def report_cmd(args: argparse.Namespace) -> int:
    return _run_stage("report", args)


def pipeline_cmd(args: argparse.Namespace) -> int:
    cfg = _config(args)
    manifest = run_pipeline(cfg)
    for note in manifest.notes:
        print(f"note: {note}")
    print(f"{len(manifest.entries)} outputs, manifest at {Path(cfg.output_dir) / 'manifest.json'}")
    return 0


def sweep_cmd(args: argparse.Namespace) -> int:
    cfg = _config(args)
    distances = None
    if args.distances:
        try:
            distances = [float(d) for d in args.distances.split(",") if d.strip()]
        except ValueError as e:
            raise ConfigError(f"--distances must be comma-separated numbers: {args.distances}") from e
    result = run_buffer_sweep(cfg, distances, args.city)
    print("buffer_distance_m,transaction_count,median_transaction_length,mean_transaction_length,fi_count")
    for r in result.rows:
        print(f"{r.buffer_distance_m:g},{r.transaction_count},{r.median_transaction_length:g},"
              f"{r.mean_transaction_length:.4f},{r.fi_count}")
    return 0


def synth_cmd(args: argparse.Namespace) -> int:
    env = load_config()
    out = Path(args.output_dir or env.output_dir)
    seed = args.seed if args.seed is not None else env.seed
    path = write_city_bundle(out, seed, args.cities_per_family)
    print(f"synthetic bundle written; run: landuse pipeline --config {path}")
    return 0


def bench_cmd(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else load_config().seed
    db = skewed_database(args.n_transactions, args.n_items, seed)
    result = run_benchmark(db, args.minsup_relative or 0.01)
    print(json.dumps(result, indent=2))
    return 0


def verify_cmd(args: argparse.Namespace) -> int:
    checks = verify_outputs(_config(args))
    for c in checks:
        print(f"{'ok' if c.ok else 'FAILED':6} {c.name}: {c.detail}")
    if not all(c.ok for c in checks):
        raise DataError(f"{sum(not c.ok for c in checks)} structural checks failed")
    return 0
