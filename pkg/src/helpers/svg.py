import base64
import re
from typing import Dict, Iterable, Optional, Sequence, Tuple
from xml.sax.saxutils import escape, quoteattr

from src.utils.errors import RenderError


HEX_COLOR = re.compile(r"^#[0-9a-fA-F]{6}$")


def num(v: float) -> str:
    """Fixed two-decimal formatting keeps output byte-stable."""
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def check_color(color: str) -> str:
    if not isinstance(color, str) or not HEX_COLOR.match(color):
        raise RenderError(f"invalid color {color!r}, expected #rrggbb")
    return color.lower()


def hex_to_rgb(color: str) -> Tuple[int, int, int]:
    c = check_color(color)
    return int(c[1:3], 16), int(c[3:5], 16), int(c[5:7], 16)


def interpolate(low: str, high: str, t: float) -> str:
    """Linear ramp from low (t=0) to high (t=1), channels rounded half up."""
    t = min(1.0, max(0.0, t))
    lo, hi = hex_to_rgb(low), hex_to_rgb(high)
    channels = (int(a + (b - a) * t + 0.5) for a, b in zip(lo, hi))
    return "#" + "".join(f"{c:02x}" for c in channels)


def _attrs(attrs: Optional[Dict[str, object]]) -> str:
    if not attrs:
        return ""
    return "".join(f" {k.rstrip('_').replace('_', '-')}={quoteattr(str(v))}" for k, v in attrs.items() if v is not None)


class SvgDocument:
    def __init__(self, width: float, height: float, title: Optional[str] = None):
        if width <= 0 or height <= 0:
            raise RenderError(f"SVG dimensions must be positive, got {width}x{height}")
        self.width = width
        self.height = height
        self.parts = [
            '<?xml version="1.0" encoding="UTF-8" standalone="no"?>\n',
            f'<svg version="1.1" width="{num(width)}" height="{num(height)}" viewBox="0 0 {num(width)} {num(height)}" '
            'xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink">\n',
        ]
        if title:
            self.parts.append(f"<title>{escape(title)}</title>\n")

    def group_start(self, **attrs) -> None:
        self.parts.append(f"<g{_attrs(attrs)}>\n")

    def group_end(self) -> None:
        self.parts.append("</g>\n")

    def rect(self, x: float, y: float, w: float, h: float, fill: str, title: Optional[str] = None, **attrs) -> None:
        head = f'<rect x="{num(x)}" y="{num(y)}" width="{num(w)}" height="{num(h)}" fill="{fill}"{_attrs(attrs)}'
        if title:
            self.parts.append(f"{head}><title>{escape(title)}</title></rect>\n")
        else:
            self.parts.append(f"{head}/>\n")

    def line(self, x1: float, y1: float, x2: float, y2: float, stroke: str, width: float = 1.0, **attrs) -> None:
        self.parts.append(
            f'<line x1="{num(x1)}" y1="{num(y1)}" x2="{num(x2)}" y2="{num(y2)}" stroke="{stroke}" '
            f'stroke-width="{num(width)}"{_attrs(attrs)}/>\n'
        )

    def path(self, d: str, fill: str = "none", stroke: Optional[str] = None, **attrs) -> None:
        stroke_attr = f' stroke="{stroke}"' if stroke else ""
        self.parts.append(f'<path d="{d}" fill="{fill}"{stroke_attr}{_attrs(attrs)}/>\n')

    def circle(self, cx: float, cy: float, r: float, fill: str, title: Optional[str] = None, **attrs) -> None:
        head = f'<circle cx="{num(cx)}" cy="{num(cy)}" r="{num(r)}" fill="{fill}"{_attrs(attrs)}'
        if title:
            self.parts.append(f"{head}><title>{escape(title)}</title></circle>\n")
        else:
            self.parts.append(f"{head}/>\n")

    def text(self, x: float, y: float, content: str, size: float, anchor: str = "start", fill: str = "#000000",
             **attrs) -> None:
        self.parts.append(
            f'<text x="{num(x)}" y="{num(y)}" font-family="sans-serif" font-size="{num(size)}" '
            f'text-anchor="{anchor}" fill="{fill}"{_attrs(attrs)}>{escape(content)}</text>\n'
        )

    def image(self, x: float, y: float, w: float, h: float, svg_text: str, **attrs) -> None:
        """Embed another SVG document as a data URI image."""
        data = base64.b64encode(svg_text.encode("utf-8")).decode("ascii")
        self.parts.append(
            f'<image x="{num(x)}" y="{num(y)}" width="{num(w)}" height="{num(h)}" '
            f'xlink:href="data:image/svg+xml;base64,{data}"{_attrs(attrs)}/>\n'
        )

    def render(self) -> str:
        return "".join(self.parts) + "</svg>\n"


def ring_path(rings: Iterable[Sequence[Tuple[float, float]]]) -> str:
    """Path data for one polygon; rings after the first are holes (even-odd fill)."""
    chunks = []
    for ring in rings:
        pts = list(ring)
        if len(pts) > 1 and pts[0] == pts[-1]:
            pts = pts[:-1]
        if not pts:
            continue
        head, *rest = pts
        chunks.append(f"M{num(head[0])} {num(head[1])}" + "".join(f" L{num(x)} {num(y)}" for x, y in rest) + " Z")
    return " ".join(chunks)
