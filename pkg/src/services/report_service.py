from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from src.helpers.svg import SvgDocument, check_color, interpolate, num, ring_path
from src.services.clustering_service import ClusterAssignment, Dendrogram, cut_by_distance
from src.services.embedding_service import DistanceMatrix, Embedding
from src.services.ingest_service import LandUseLayer
from src.services.mining_service import FrequentItemset
from src.utils.errors import RenderError
from src.utils.logger import get_logger


logger = get_logger(__name__)

UNMATCHED_COLOR = "#bdbdbd"
INK = "#333333"

# legend groups by leading digits: artificial surfaces red, agriculture yellow, forest green, water blue
DEFAULT_CODE_COLORS: Tuple[Tuple[str, str], ...] = (
    ("1", "#e34a33"),
    ("11", "#b30000"),
    ("12", "#fc8d59"),
    ("13", "#d7301f"),
    ("14", "#fdbb84"),
    ("2", "#fee391"),
    ("21", "#fec44f"),
    ("3", "#41ab5d"),
    ("31", "#006d2c"),
    ("32", "#a1d99b"),
    ("4", "#9e9ac8"),
    ("5", "#4292c6"),
)

CLUSTER_PALETTE: Tuple[str, ...] = (
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
    "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f",
)


@dataclass(frozen=True)
class ColorMap:
    entries: Tuple[Tuple[str, str], ...] = DEFAULT_CODE_COLORS
    unmatched: str = UNMATCHED_COLOR
    ramp_low: str = "#081d58"
    ramp_high: str = "#ffffd9"

    def __post_init__(self) -> None:
        prefixes = [p for p, _ in self.entries]
        if len(set(prefixes)) != len(prefixes):
            raise RenderError("color map prefixes must be unique")
        if any(not p for p in prefixes):
            raise RenderError("color map prefixes must be non-empty")
        for _, color in self.entries:
            check_color(color)
        for color in (self.unmatched, self.ramp_low, self.ramp_high):
            check_color(color)

    @classmethod
    def with_overrides(cls, overrides: Mapping[str, str]) -> "ColorMap":
        merged = dict(DEFAULT_CODE_COLORS)
        merged.update(overrides)
        return cls(entries=tuple(sorted(merged.items())))

    def fill_for(self, code: str) -> str:
        best, best_len = self.unmatched, -1
        for prefix, color in self.entries:
            if code.startswith(prefix) and len(prefix) > best_len:
                best, best_len = color, len(prefix)
        return best.lower()

    def ramp(self, s: float) -> str:
        return interpolate(self.ramp_low, self.ramp_high, s)


@dataclass(frozen=True)
class RenderConfig:
    width: int = 800
    height: int = 800
    margin: int = 60
    font_size: int = 11
    leaf_order: str = "dendrogram"
    thumbnail_size: int = 160
    palette: Tuple[str, ...] = field(default=CLUSTER_PALETTE)

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0 or self.thumbnail_size <= 0 or self.font_size <= 0:
            raise RenderError("render dimensions must be positive")
        if self.margin < 0 or 2 * self.margin >= min(self.width, self.height):
            raise RenderError(f"margin {self.margin} does not fit a {self.width}x{self.height} canvas")
        if self.leaf_order not in ("dendrogram", "input"):
            raise RenderError(f"unknown leaf order {self.leaf_order!r}")

    def cluster_color(self, label: int) -> str:
        return self.palette[label % len(self.palette)]


def render_heatmap(dist: DistanceMatrix, order: Optional[Sequence[str]] = None, cfg: RenderConfig = RenderConfig(),
                   colors: ColorMap = ColorMap()) -> str:
    """Similarity heatmap with s = 1 - d/max(d); brighter cells are more similar."""
    labels = list(dist.labels)
    order = list(order) if order is not None else labels
    if sorted(order) != sorted(labels) or len(set(order)) != len(order):
        raise RenderError("heatmap order must be a permutation of the distance labels")
    n = len(order)
    pos = {label: i for i, label in enumerate(labels)}
    dmax = float(dist.values.max()) if n else 0.0

    doc = SvgDocument(cfg.width, cfg.height, "City similarity")
    side = min(cfg.width, cfg.height) - 2 * cfg.margin
    cell = side / max(n, 1)
    x0, y0 = cfg.margin, cfg.margin
    doc.group_start(id="cells")
    for r, row_label in enumerate(order):
        for c, col_label in enumerate(order):
            d = float(dist.values[pos[row_label], pos[col_label]])
            s = 1.0 - d / dmax if dmax > 0 else 1.0
            doc.rect(x0 + c * cell, y0 + r * cell, cell, cell, colors.ramp(s),
                     title=f"{row_label} / {col_label}: {s:.4f}", data_row=r, data_col=c)
    doc.group_end()
    doc.group_start(id="labels")
    for i, label in enumerate(order):
        doc.text(x0 - 4, y0 + (i + 0.5) * cell + cfg.font_size / 3, label, cfg.font_size, anchor="end")
        x = x0 + (i + 0.5) * cell
        doc.text(x, y0 - 4, label, cfg.font_size, anchor="start",
                 transform=f"rotate(-60 {num(x)} {num(y0 - 4)})")
    doc.group_end()
    return doc.render()


def _dendro_geometry(dendro: Dendrogram, cfg: RenderConfig) -> Tuple[Dict[int, float], Dict[int, float], float]:
    order = dendro.leaf_order()
    n = dendro.n
    plot_w = cfg.width - 2 * cfg.margin
    plot_h = cfg.height - 2 * cfg.margin
    step = plot_w / n
    xs: Dict[int, float] = {leaf: cfg.margin + (i + 0.5) * step for i, leaf in enumerate(order)}
    root = max(dendro.heights) if dendro.merges else 0.0
    bottom = cfg.height - cfg.margin

    def y_of(h: float) -> float:
        return bottom - (h / root) * plot_h if root > 0 else bottom

    ys: Dict[int, float] = {leaf: bottom for leaf in range(n)}
    for i, m in enumerate(dendro.merges):
        node = n + i
        xs[node] = (xs[m.left] + xs[m.right]) / 2.0
        ys[node] = y_of(m.height)
    return xs, ys, root


def render_dendrogram(dendro: Dendrogram, cut: Optional[float] = None, cfg: RenderConfig = RenderConfig()) -> str:
    xs, ys, root = _dendro_geometry(dendro, cfg)
    n = dendro.n
    leaf_cluster: Optional[List[int]] = None
    if cut is not None:
        assignment = cut_by_distance(dendro, cut)
        leaf_cluster = [assignment.labels[city] for city in dendro.leaves]

    # a merge at or below the cut keeps its subtree inside one cluster
    first_leaf: Dict[int, int] = {leaf: leaf for leaf in range(n)}
    for i, m in enumerate(dendro.merges):
        first_leaf[n + i] = first_leaf[m.left]

    doc = SvgDocument(cfg.width, cfg.height, "Dendrogram")
    doc.group_start(id="merges")
    for i, m in enumerate(dendro.merges):
        node = n + i
        color = INK
        if leaf_cluster is not None and m.height <= cut:
            color = cfg.cluster_color(leaf_cluster[first_leaf[node]])
        top = ys[node]
        d = (f"M{num(xs[m.left])} {num(ys[m.left])} V{num(top)} "
             f"H{num(xs[m.right])} V{num(ys[m.right])}")
        doc.path(d, stroke=color, stroke_width="1.5", class_="merge", data_node=node, data_height=repr(m.height))
    doc.group_end()

    if cut is not None:
        plot_h = cfg.height - 2 * cfg.margin
        bottom = cfg.height - cfg.margin
        y = bottom - min(cut / root, 1.0) * plot_h if root > 0 else cfg.margin
        doc.line(cfg.margin, y, cfg.width - cfg.margin, y, "#999999", 1.0, stroke_dasharray="4 3", class_="cut")

    doc.group_start(id="leaves")
    for leaf, city in enumerate(dendro.leaves):
        color = cfg.cluster_color(leaf_cluster[leaf]) if leaf_cluster is not None else INK
        x, y = xs[leaf], ys[leaf]
        doc.circle(x, y, 3, color, class_="leaf")
        doc.text(x, y + cfg.font_size + 4, city, cfg.font_size, anchor="end", fill=color,
                 transform=f"rotate(-60 {num(x)} {num(y + cfg.font_size + 4)})")
    doc.group_end()

    doc.group_start(id="axis")
    bottom = cfg.height - cfg.margin
    doc.line(cfg.margin / 2, bottom, cfg.margin / 2, cfg.margin, INK)
    doc.text(cfg.margin / 2 - 2, cfg.margin - 4, f"{root:.3g}", cfg.font_size, anchor="start")
    doc.text(cfg.margin / 2 - 2, bottom + cfg.font_size, "0", cfg.font_size, anchor="start")
    doc.group_end()
    return doc.render()


def render_city_thumbnail(layer: LandUseLayer, colors: ColorMap = ColorMap(), size: int = 160) -> str:
    """All polygons fitted into a size x size viewport, north up."""
    if size <= 0:
        raise RenderError(f"thumbnail size must be positive, got {size}")
    minx = min(f.bounds[0] for f in layer.features)
    miny = min(f.bounds[1] for f in layer.features)
    maxx = max(f.bounds[2] for f in layer.features)
    maxy = max(f.bounds[3] for f in layer.features)
    extent = max(maxx - minx, maxy - miny)
    scale = size / extent if extent > 0 else 1.0
    ox = (size - (maxx - minx) * scale) / 2.0
    oy = (size - (maxy - miny) * scale) / 2.0

    def project(ring):
        return [(ox + (x - minx) * scale, oy + (maxy - y) * scale) for x, y in ring]

    doc = SvgDocument(size, size, layer.city_name)
    for f in layer.features:
        d = ring_path([project(f.exterior), *(project(h) for h in f.holes)])
        doc.path(d, fill=colors.fill_for(f.code), stroke="#ffffff", stroke_width="0.2", fill_rule="evenodd",
                 data_id=f.id, data_code=f.code)
    return doc.render()


def render_scatter(e: Embedding, assignment: ClusterAssignment, thumbnails: Optional[Mapping[str, str]] = None,
                   cfg: RenderConfig = RenderConfig()) -> str:
    missing = [c for c in e.city_names if c not in assignment.labels]
    if missing:
        raise RenderError(f"no cluster assigned to {', '.join(missing)}")
    xs = [float(v) for v in e.coords[:, 0]]
    ys = [float(v) for v in e.coords[:, 1]]
    plot_w = cfg.width - 2 * cfg.margin
    plot_h = cfg.height - 2 * cfg.margin

    def axis(values: List[float], span: float, flip: bool) -> List[float]:
        lo, hi = min(values), max(values)
        if hi == lo:
            return [cfg.margin + span / 2.0] * len(values)
        t = [(v - lo) / (hi - lo) for v in values]
        return [cfg.margin + span * ((1.0 - u) if flip else u) for u in t]

    px = axis(xs, plot_w, False)
    py = axis(ys, plot_h, True)
    thumb = cfg.thumbnail_size / 2.0

    doc = SvgDocument(cfg.width, cfg.height, "City embedding")
    if thumbnails:
        doc.group_start(id="thumbnails")
        for i, city in enumerate(e.city_names):
            if city in thumbnails:
                doc.image(px[i] - thumb / 2, py[i] - thumb / 2, thumb, thumb, thumbnails[city], data_city=city)
        doc.group_end()
    doc.group_start(id="points")
    for i, city in enumerate(e.city_names):
        doc.circle(px[i], py[i], 5, cfg.cluster_color(assignment.labels[city]), title=city, class_="point")
        doc.text(px[i] + 7, py[i] - 7, city, cfg.font_size)
    doc.group_end()
    return doc.render()


def render_fi_profile(city: str, itemsets: Sequence[FrequentItemset], top: int = 20,
                      cfg: RenderConfig = RenderConfig()) -> str:
    """Horizontal bars of the most supported itemsets of one city."""
    ranked = sorted(itemsets, key=lambda f: (-f.relative_support, len(f.items), f.items))[:top]
    row_h = cfg.font_size + 8
    label_w = cfg.width * 0.45
    bar_w = cfg.width - label_w - 2 * cfg.margin
    height = 2 * cfg.margin + row_h * max(len(ranked), 1)
    doc = SvgDocument(cfg.width, height, f"{city} frequent itemsets")
    doc.text(cfg.margin, cfg.margin - 10, f"{city}: top {len(ranked)} itemsets by relative support", cfg.font_size + 1)
    x0 = cfg.margin + label_w
    for i, f in enumerate(ranked):
        y = cfg.margin + i * row_h
        doc.text(x0 - 6, y + row_h * 0.7, "{" + ", ".join(f.items) + "}", cfg.font_size, anchor="end")
        doc.rect(x0, y + 2, bar_w * f.relative_support, row_h - 4, CLUSTER_PALETTE[0], class_="bar")
        doc.text(x0 + bar_w * f.relative_support + 4, y + row_h * 0.7, f"{f.relative_support:.1%}", cfg.font_size)
    return doc.render()
