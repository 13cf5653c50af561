import math
from typing import List, Sequence, Tuple

from shapely.geometry import Polygon

Coord = Tuple[float, float]
Ring = Tuple[Coord, ...]


def close_ring(coords: Sequence[Sequence[float]]) -> Ring:
    """Return the ring as float tuples with the first vertex repeated at the end."""
    ring = [(float(c[0]), float(c[1])) for c in coords]
    if ring and ring[0] != ring[-1]:
        ring.append(ring[0])
    return tuple(ring)


def distinct_vertices(ring: Ring) -> int:
    return len(set(ring))


def is_finite_ring(ring: Ring) -> bool:
    return all(math.isfinite(x) and math.isfinite(y) for x, y in ring)


def make_polygon(exterior: Ring, holes: Sequence[Ring] = ()) -> Polygon:
    return Polygon(exterior, [list(h) for h in holes])


def ring_bounds(ring: Ring) -> Tuple[float, float, float, float]:
    xs = [p[0] for p in ring]
    ys = [p[1] for p in ring]
    return min(xs), min(ys), max(xs), max(ys)


def rectangle(x0: float, y0: float, x1: float, y1: float) -> List[Coord]:
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]
