"""Geometry of a P1 level-set field on a triangulation.

The zero set comes from marching triangles: a strict sign change on an edge
interpolates one crossing, a vertex sitting exactly at zero joins as-is, and
only triangles contributing exactly two points yield a segment. The math and
the operation order match the optimizer's own extraction, so segments from a
snapshot file agree bit for bit with what the solver would report in memory.
"""

import numpy as np

_EDGES = ((0, 1), (1, 2), (2, 0))


def zero_segments(points, triangles, values) -> np.ndarray:
    """Zero-level segments as an (n, 2, 2) array in triangle order.

    Endpoints within a segment are ordered lexicographically by (x, y).
    """
    vals = np.asarray(values)[triangles]
    pts = np.asarray(points)[triangles]
    nt = len(triangles)
    cand = np.zeros((nt, 6, 2))
    valid = np.zeros((nt, 6), dtype=bool)
    for k, (i, j) in enumerate(_EDGES):
        a = vals[:, i]
        b = vals[:, j]
        cross = a * b < 0.0
        t = np.zeros(nt)
        t[cross] = a[cross] / (a[cross] - b[cross])
        cand[:, k] = pts[:, i] + t[:, None] * (pts[:, j] - pts[:, i])
        valid[:, k] = cross
    for v in range(3):
        cand[:, 3 + v] = pts[:, v]
        valid[:, 3 + v] = vals[:, v] == 0.0
    keep = valid.sum(axis=1) == 2
    order = np.argsort(~valid[keep], axis=1, kind="stable")[:, :2]
    segs = np.take_along_axis(cand[keep], order[:, :, None], axis=1)
    p = segs[:, 0]
    q = segs[:, 1]
    swap = (p[:, 0] > q[:, 0]) | ((p[:, 0] == q[:, 0]) & (p[:, 1] > q[:, 1]))
    segs[swap] = segs[swap][:, ::-1]
    return segs


def subzero_polygons(points, triangles, values) -> list:
    """Polygons covering the region where the field is nonpositive.

    Each triangle is clipped against its linear interpolant, so the union of
    the returned polygons is exactly the subzero region of the P1 field. May
    emit degenerate (fewer than three vertex) polygons for triangles that
    touch zero at a single point; callers that fill should drop those.
    """
    points = np.asarray(points)
    values = np.asarray(values)
    polys = []
    for tri in triangles:
        v = values[tri]
        if np.all(v > 0.0):
            continue
        p = points[tri]
        if np.all(v <= 0.0):
            polys.append(p.copy())
            continue
        clipped = []
        for i in range(3):
            j = (i + 1) % 3
            a = v[i]
            b = v[j]
            if a <= 0.0:
                clipped.append(p[i])
            if (a < 0.0 < b) or (b < 0.0 < a):
                t = a / (a - b)
                clipped.append(p[i] + t * (p[j] - p[i]))
        polys.append(np.asarray(clipped))
    return polys


def boundary_edges(triangles) -> np.ndarray:
    """Edges used by exactly one triangle, as a sorted (k, 2) index array."""
    counts = {}
    for tri in triangles:
        a, b, c = (int(x) for x in tri)
        for lo, hi in ((a, b), (b, c), (a, c)):
            key = (lo, hi) if lo < hi else (hi, lo)
            counts[key] = counts.get(key, 0) + 1
    outer = sorted(edge for edge, n in counts.items() if n == 1)
    return np.asarray(outer, dtype=int).reshape(-1, 2)
