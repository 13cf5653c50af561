import argparse

from src.controllers import cli_controller


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline JSON config (input paths relative to it)")
    common.add_argument("--seed", type=int)
    common.add_argument("--buffer-distance", type=float, dest="buffer_distance_m", metavar="METERS")
    common.add_argument("--minsup", type=float, dest="minsup_relative", metavar="FRACTION")
    common.add_argument("--embedding", choices=["pca", "umap"])
    common.add_argument("--cut-distance", type=float, dest="cut_distance")
    common.add_argument("--k-min", type=int, dest="k_min")
    common.add_argument("--k-max", type=int, dest="k_max")
    common.add_argument("--jobs", type=int)
    common.add_argument("--output", dest="output_dir", help="output directory (default: $LANDUSE_OUTPUT_DIR)")
    noise = common.add_mutually_exclusive_group()
    noise.add_argument("--verbose", action="store_true", help="log at DEBUG")
    noise.add_argument("--quiet", action="store_true", help="log warnings and errors only")
    return common


def create_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(prog="landuse", description="Land-use neighbourhood patterns and city clustering")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, handler, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(handler=handler)
        return p

    add("extract", cli_controller.extract_cmd, "polygons -> neighbourhood transactions per city")

    p = add("mine", cli_controller.mine_cmd, "transactions -> frequent itemsets per city")
    p.add_argument("--transactions", help="mine this transactions file instead of the configured cities")
    p.add_argument("--minsup-abs", type=int, dest="minsup_abs", metavar="COUNT", help="absolute minimum support")
    p.add_argument("--out", help="itemset CSV to write with --transactions (default: print to stdout)")

    add("matrix", cli_controller.matrix_cmd, "frequent itemsets -> city-FI matrix")
    add("embed", cli_controller.embed_cmd, "city-FI matrix -> 2-D embedding")

    p = add("cluster", cli_controller.cluster_cmd, "embedding -> Ward dendrogram, k selection, assignment")
    p.add_argument("--embedding-csv", dest="embedding_csv", help="cluster this embedding CSV without a config")

    add("report", cli_controller.report_cmd, "render heatmap, dendrogram, thumbnails and scatter SVGs")
    add("pipeline", cli_controller.pipeline_cmd, "run every stage and write manifest.json")

    p = add("sweep", cli_controller.sweep_cmd, "buffer-distance sensitivity for one city")
    p.add_argument("--distances", help="comma-separated buffer distances in metres")
    p.add_argument("--city", help="city to sweep when the config lists several")

    p = add("synth", cli_controller.synth_cmd, "write the seeded two-family synthetic city bundle")
    p.add_argument("--cities-per-family", type=int, default=3, dest="cities_per_family")

    p = add("bench", cli_controller.bench_cmd, "time the miner against the brute-force oracle")
    p.add_argument("--transactions", type=int, default=50_000, dest="n_transactions")
    p.add_argument("--items", type=int, default=100, dest="n_items")

    add("verify", cli_controller.verify_cmd, "structural checks over a finished run")
    return parser
