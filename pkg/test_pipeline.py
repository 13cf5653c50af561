#!/usr/bin/env python
"""End-to-end pipeline, stage composition, sweep and command-line surface"""
import itertools
import json
import time
from pathlib import Path

import numpy as np
import pytest

from cli import main
from src.services.clustering_service import read_assignment, read_k_selection
from src.services.embedding_service import Embedding, read_embedding, write_embedding
from src.services.mining_service import read_itemsets
from src.services.neighborhood_service import read_transactions
from src.services.pipeline_service import (
    STAGES,
    STAGE_FUNCTIONS,
    RunManifest,
    city_matrix,
    run_buffer_sweep,
    run_pipeline,
    verify_outputs,
)
from src.services.synthetic_service import NOISE_CODES, family_codes, family_of, write_city_bundle
from src.utils.errors import StageError
from src.utils.settings_store import load_pipeline_config

ROOT = Path(__file__).resolve().parent
EXPECTED_ITEMSETS = {
    "C": 7, "B": 6, "B C": 6, "G": 3, "C G": 3, "W": 3, "B W": 3, "C W": 3, "B C W": 3,
}


def _bundle(tmp_path, out_name="out"):
    config = write_city_bundle(tmp_path / "bundle", seed=42)
    return config, load_pipeline_config(str(config), {"output_dir": str(tmp_path / out_name)})


def _single_city_config(tmp_path, out_name="single"):
    config, _ = _bundle(tmp_path)
    raw = json.loads(config.read_text(encoding="utf-8"))
    raw["inputs"] = raw["inputs"][:1]
    raw["output_dir"] = str(tmp_path / out_name)
    path = tmp_path / "bundle" / "single.json"
    path.write_text(json.dumps(raw), encoding="utf-8")
    return path, load_pipeline_config(str(path))


def test_synthetic_bundle_end_to_end(tmp_path):
    _, cfg = _bundle(tmp_path)
    start = time.perf_counter()
    manifest = run_pipeline(cfg)
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0, f"pipeline took {elapsed:.1f}s"

    paths = [e.path for e in manifest.entries]
    assert sum(p.startswith("transactions/") and p.endswith(".txt") for p in paths) == 6, "6 transaction files"
    assert sum(p.startswith("itemsets/") for p in paths) == 6, "6 itemset CSVs"
    for name in ("matrix.csv", "embedding.csv", "dendrogram.json"):
        assert paths.count(name) == 1, f"exactly one {name}"
    assert sum(p.startswith("svg/") for p in paths) >= 3, "at least 3 SVG figures"

    out = Path(cfg.output_dir)
    listed = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert [e["path"] for e in listed] == sorted(paths), "manifest lists every output sorted by path"
    assert set(listed[0]) == {"path", "stage", "sha256"}, "manifest entry schema"

    table = read_k_selection(out / "k_selection.csv")
    chosen = [k for k, row in table.items() if row["chosen"] == 1.0]
    assert chosen == [2], f"expected k=2, got {chosen}"
    assert table[2]["silhouette"] > 0.5, "families should be well separated"

    groups = read_assignment(out / "assignment.json").members()
    families = sorted(sorted({family_of(c) for c in members}) for members in groups.values())
    assert families == [["a"], ["b"]], f"clusters must follow the families: {groups}"


def test_bundle_families_are_compact_in_embedding(tmp_path):
    _, cfg = _bundle(tmp_path)
    for stage in ("extract", "mine", "matrix", "embed"):
        STAGE_FUNCTIONS[stage](cfg)
    e = read_embedding(Path(cfg.output_dir) / "embedding.csv")
    within, between = [], []
    for i, j in itertools.combinations(range(len(e.city_names)), 2):
        d = float(np.linalg.norm(e.coords[i] - e.coords[j]))
        same = family_of(e.city_names[i]) == family_of(e.city_names[j])
        (within if same else between).append(d)
    assert max(within) < 0.5 * min(between), f"family spread {max(within):.4f} vs gap {min(between):.4f}"


def test_matrix_keeps_full_precision(tmp_path):
    _, cfg = _bundle(tmp_path)
    for stage in ("extract", "mine", "matrix"):
        STAGE_FUNCTIONS[stage](cfg)
    out = Path(cfg.output_dir)
    matrix = city_matrix(cfg)
    for i, city in enumerate(matrix.city_names):
        n = len(read_transactions(out / "transactions" / f"{city}.txt", city))
        for f in read_itemsets(out / "itemsets" / f"{city}.csv"):
            assert matrix.value(city, f.key) == f.support / n, f"{city} {f.key}: support was rounded"

    matrix_csv = out / "matrix.csv"
    header, _, rest = matrix_csv.read_text(encoding="utf-8").partition("\n")
    matrix_csv.write_text(header + ",extra\n" + rest, encoding="utf-8")
    with pytest.raises(StageError):
        STAGE_FUNCTIONS["embed"](cfg)


def test_bundle_noise_codes_stay_rare():
    rng = np.random.default_rng(0)
    grid = family_codes("a", 14, 12, rng, noise_rate=1.0)
    cells = [code for row in grid for code in row]
    assert all(cells.count(code) <= 1 for code in NOISE_CODES), "each noise code replaces at most one cell"
    assert sum(code in NOISE_CODES for code in cells) == len(NOISE_CODES), "all noise codes used once at full rate"


def test_pipeline_is_deterministic(tmp_path):
    _, first = _bundle(tmp_path, "run1")
    second = load_pipeline_config(str(tmp_path / "bundle" / "pipeline.json"), {"output_dir": str(tmp_path / "run2")})
    a = run_pipeline(first).hashes()
    b = run_pipeline(second).hashes()
    assert a == b, "same config and seed must give identical output hashes"
    assert any(p.endswith(".svg") for p in a), "SVG bytes are part of the comparison"


def test_pipeline_equals_stage_composition(tmp_path):
    config, whole = _bundle(tmp_path, "whole")
    staged = load_pipeline_config(str(config), {"output_dir": str(tmp_path / "staged")})
    expected = run_pipeline(whole).hashes()
    composed = RunManifest()
    for name in STAGES:
        composed.extend(STAGE_FUNCTIONS[name](staged))
    assert composed.hashes() == expected, "running the stages one by one must match the pipeline"


def test_umap_pipeline_is_seeded(tmp_path):
    config, _ = _bundle(tmp_path)
    patch = {"embedding": "umap", "umap": {"n_neighbors": 3, "epochs": 100}}
    a = load_pipeline_config(str(config), {**patch, "output_dir": str(tmp_path / "u1")})
    b = load_pipeline_config(str(config), {**patch, "output_dir": str(tmp_path / "u2")})
    ha, hb = run_pipeline(a).hashes(), run_pipeline(b).hashes()
    assert ha["embedding.csv"] == hb["embedding.csv"], "UMAP layout must repeat under one seed"


def test_single_city_stops_after_itemsets(tmp_path):
    _, cfg = _single_city_config(tmp_path)
    manifest = run_pipeline(cfg)
    assert manifest.notes and "at least 2 cities" in manifest.notes[0], "run explains why it stopped"
    paths = [e.path for e in manifest.entries]
    assert any(p.startswith("itemsets/") for p in paths), "itemsets are still written"
    assert "matrix.csv" not in paths, "no matrix for one city"
    assert (Path(cfg.output_dir) / "manifest.json").exists(), "manifest is written anyway"


def test_buffer_sweep(tmp_path):
    _, cfg = _single_city_config(tmp_path, "sweep")
    result = run_buffer_sweep(cfg, [0.0, 4.0, 6.0, 10.0, 60.0])
    assert [r.buffer_distance_m for r in result.rows] == [0.0, 4.0, 6.0, 10.0, 60.0], "one row per distance"
    medians = [r.median_transaction_length for r in result.rows]
    assert all(a <= b for a, b in zip(medians, medians[1:])), f"medians must not decrease: {medians}"
    assert result.rows[0].median_transaction_length == 1.0, "5 m gaps mean no neighbours at distance 0"
    assert result.rows[2].mean_transaction_length > result.rows[1].mean_transaction_length, "6 m reaches the next cell"
    assert len({r.transaction_count for r in result.rows}) == 1, "one transaction per polygon at every distance"
    sweep_csv = Path(cfg.output_dir) / f"sweep_{result.city_name}.csv"
    assert sweep_csv.read_text(encoding="utf-8").startswith("buffer_distance_m,"), "sweep CSV written"


def test_verify_after_run(tmp_path):
    _, cfg = _bundle(tmp_path)
    run_pipeline(cfg)
    checks = verify_outputs(cfg, target_k=3)
    assert checks and all(c.ok for c in checks), f"structural checks failed: {checks}"
    assert any(c.name == "matrix_shape" for c in checks), "matrix shape is checked"


def test_cli_mine_example(tmp_path):
    out = tmp_path / "itemsets.csv"
    code = main(["mine", "--transactions", str(ROOT / "data" / "example_transactions.txt"),
                 "--minsup-abs", "3", "--out", str(out), "--quiet"])
    assert code == 0, "mine should succeed"
    got = {f.key: f.support for f in read_itemsets(out)}
    assert got == EXPECTED_ITEMSETS, f"itemset mismatch: {got}"


def test_cli_cluster_embedding_alone(tmp_path):
    rng = np.random.default_rng(0)
    coords = np.vstack([rng.normal(0, 0.1, (3, 2)), rng.normal(5, 0.1, (3, 2))])
    e = Embedding(tuple(f"city{i}" for i in range(6)), coords, "file")
    csv = write_embedding(e, tmp_path / "only" / "embedding.csv")
    out = tmp_path / "clusters"
    code = main(["cluster", "--embedding-csv", str(csv), "--output", str(out), "--k-max", "4", "--quiet"])
    assert code == 0, "cluster should run from an embedding file alone"
    assignment = read_assignment(out / "assignment.json")
    assert assignment.k == 2, "two tight groups"
    assert (out / "dendrogram.json").exists() and (out / "k_selection.csv").exists(), "cluster outputs written"


def test_cli_pipeline_and_stages(tmp_path):
    config, _ = _bundle(tmp_path)
    out = tmp_path / "cli"
    assert main(["pipeline", "--config", str(config), "--output", str(out), "--quiet"]) == 0, "pipeline should succeed"
    assert (out / "svg" / "heatmap.svg").exists(), "heatmap written"
    assert main(["report", "--config", str(config), "--output", str(out), "--quiet"]) == 0, "report reruns alone"
    assert main(["verify", "--config", str(config), "--output", str(out), "--quiet"]) == 0, "verify should pass after a run"


def test_cli_exit_codes(tmp_path):
    config, _ = _bundle(tmp_path)
    assert main(["extract", "--quiet"]) == 2, "missing --config is a config error"
    assert main(["mine", "--config", str(config), "--minsup", "1.5", "--quiet"]) == 2, "minsup above 1 is rejected"
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    assert main(["pipeline", "--config", str(bad), "--quiet"]) == 2, "malformed config is a config error"
    assert main(["cluster", "--embedding-csv", str(tmp_path / "missing.csv"), "--output", str(tmp_path / "x"),
                 "--quiet"]) == 4, "missing prerequisite fails the stage"
    assert main(["verify", "--config", str(config), "--output", str(tmp_path / "empty"), "--quiet"]) == 3, \
        "verify over a missing run is a data error"


if __name__ == "__main__":
    import inspect
    import tempfile

    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            with tempfile.TemporaryDirectory() as d:
                fn(**({"tmp_path": Path(d)} if "tmp_path" in inspect.signature(fn).parameters else {}))
            print(f"✓ {name}")
    print("All tests passed!")
