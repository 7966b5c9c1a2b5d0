"""Structured triangulations of axis-aligned rectangles.

Every rectangle ``(x0, y0, x1, y1)`` is split into ``nx * ny`` cells and each
cell into two counter-clockwise triangles along its lower-left to upper-right
diagonal. Boundary facets are stored in counter-clockwise traversal order, so
the outward normal of a facet ``(a, b)`` is the tangent rotated by -90 degrees.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError

__all__ = [
    "RectMesh",
    "build_rect_mesh",
    "mesh_diameter",
    "tag_boundary",
    "connected_components",
]


@dataclass(frozen=True)
class RectMesh:
    """Immutable triangle mesh of a rectangle.

    Attributes
    ----------
    bounds : tuple of float
        ``(x0, y0, x1, y1)`` of the meshed rectangle.
    vertices : ndarray, shape (nv, 2)
    triangles : ndarray, shape (nt, 3)
        Vertex indices, counter-clockwise.
    boundary_facets : ndarray, shape (nb, 2)
        Vertex index pairs ordered along the counter-clockwise boundary walk.
    facet_tags : ndarray, shape (nb,)
        Integer tag per boundary facet, 0 meaning untagged.
    """

    bounds: tuple
    nx: int
    ny: int
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_facets: np.ndarray
    facet_tags: np.ndarray = field(compare=False)

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    @property
    def area(self):
        x0, y0, x1, y1 = self.bounds
        return (x1 - x0) * (y1 - y0)

    @cached_property
    def areas(self):
        """Triangle areas, positive for the counter-clockwise orientation."""
        p = self.vertices[self.triangles]
        u = p[:, 1] - p[:, 0]
        v = p[:, 2] - p[:, 0]
        return 0.5 * (u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])

    @cached_property
    def centroids(self):
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def facet_normals(self):
        """Unit outward normals per boundary facet."""
        a = self.vertices[self.boundary_facets[:, 0]]
        b = self.vertices[self.boundary_facets[:, 1]]
        t = b - a
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @cached_property
    def facet_lengths(self):
        a = self.vertices[self.boundary_facets[:, 0]]
        b = self.vertices[self.boundary_facets[:, 1]]
        return np.linalg.norm(b - a, axis=1)

    @cached_property
    def facet_midpoints(self):
        a = self.vertices[self.boundary_facets[:, 0]]
        b = self.vertices[self.boundary_facets[:, 1]]
        return 0.5 * (a + b)

    def facets_with_tag(self, tag):
        """Indices of boundary facets carrying ``tag`` (int or iterable)."""
        tags = np.atleast_1d(np.asarray(tag, dtype=np.int32))
        return np.nonzero(np.isin(self.facet_tags, tags))[0]

    def with_tags(self, facet_tags):
        return RectMesh(
            self.bounds,
            self.nx,
            self.ny,
            self.vertices,
            self.triangles,
            self.boundary_facets,
            np.asarray(facet_tags, dtype=np.int32),
        )


def build_rect_mesh(bounds, nx, ny, tag_rules=None):
    """Triangulate the rectangle ``bounds`` with an ``nx`` by ``ny`` grid.

    Parameters
    ----------
    bounds : (x0, y0, x1, y1)
    nx, ny : int
        Cells per direction, both at least 1.
    tag_rules : list of (int, callable), optional
        Boundary tag rules forwarded to :func:`tag_boundary`.
    """
    if not (isinstance(nx, (int, np.integer)) and isinstance(ny, (int, np.integer))):
        raise ConfigError(f"cell counts must be integers, got nx={nx!r} ny={ny!r}")
    if nx < 1 or ny < 1:
        raise ConfigError(f"cell counts must be >= 1, got nx={nx} ny={ny}")
    x0, y0, x1, y1 = map(float, bounds)
    if not (x1 > x0 and y1 > y0):
        raise ConfigError(f"bounds must satisfy x1 > x0 and y1 > y0, got {bounds}")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    gx, gy = np.meshgrid(xs, ys)  # row-major in y
    vertices = np.column_stack([gx.ravel(), gy.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
    ii, jj = ii.ravel(), jj.ravel()
    a = vid(ii, jj)
    b = vid(ii + 1, jj)
    c = vid(ii + 1, jj + 1)
    d = vid(ii, jj + 1)
    lower = np.column_stack([a, b, c])
    upper = np.column_stack([a, c, d])
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int32)
    triangles[0::2] = lower
    triangles[1::2] = upper

    # Counter-clockwise boundary walk: bottom, right, top, left.
    bottom = [(vid(i, 0), vid(i + 1, 0)) for i in range(nx)]
    right = [(vid(nx, j), vid(nx, j + 1)) for j in range(ny)]
    top = [(vid(i + 1, ny), vid(i, ny)) for i in range(nx - 1, -1, -1)]
    left = [(vid(0, j + 1), vid(0, j)) for j in range(ny - 1, -1, -1)]
    facets = np.array(bottom + right + top + left, dtype=np.int32)

    mesh = RectMesh(
        (x0, y0, x1, y1),
        int(nx),
        int(ny),
        vertices,
        triangles,
        facets,
        np.zeros(len(facets), dtype=np.int32),
    )
    if tag_rules:
        mesh = mesh.with_tags(tag_boundary(mesh, tag_rules))
    return mesh


def mesh_diameter(mesh):
    """Nominal mesh size 4|D| / (N_T * sqrt(3)).

    Equilateral idealization: the value every interface-width and
    stabilization constant in this package is calibrated against.
    """
    return 4.0 * mesh.area / (mesh.num_triangles * np.sqrt(3.0))


def tag_boundary(mesh, rules):
    """Assign integer tags to boundary facets by midpoint predicates.

    ``rules`` is an ordered list of ``(tag, predicate)`` where ``predicate``
    maps an ``(n, 2)`` array of facet midpoints to a boolean mask. The first
    matching rule wins; facets matching no rule get tag 0.
    """
    mids = mesh.facet_midpoints
    tags = np.zeros(len(mids), dtype=np.int32)
    unset = np.ones(len(mids), dtype=bool)
    for tag, predicate in rules:
        if tag == 0:
            raise ConfigError("tag 0 is reserved for untagged facets")
        hit = np.asarray(predicate(mids), dtype=bool) & unset
        tags[hit] = tag
        unset &= ~hit
    return tags


def _triangle_neighbors(mesh):
    """(nt, 3) array of edge-neighbor triangle indices, -1 on the boundary."""
    nt = mesh.num_triangles
    tri = mesh.triangles
    edges = np.concatenate(
        [tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]], axis=0
    )
    edges.sort(axis=1)
    owner = np.tile(np.arange(nt), 3)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    edges, owner = edges[order], owner[order]
    neighbors = np.full((nt, 3), -1, dtype=np.int64)
    same = np.all(edges[1:] == edges[:-1], axis=1)
    first, second = owner[:-1][same], owner[1:][same]
    counts = np.zeros(nt, dtype=np.int64)
    for x, y in zip(first, second):
        neighbors[x, counts[x]] = y
        counts[x] += 1
        neighbors[y, counts[y]] = x
        counts[y] += 1
    return neighbors


def connected_components(mesh, tri_mask):
    """Label edge-connected components of the masked triangles.

    Returns an ``(nt,)`` int array: component id per masked triangle
    (0, 1, ... in order of discovery), -1 outside the mask.
    """
    tri_mask = np.asarray(tri_mask, dtype=bool)
    neighbors = _triangle_neighbors(mesh)
    labels = np.full(mesh.num_triangles, -1, dtype=np.int64)
    current = 0
    for seed in np.nonzero(tri_mask)[0]:
        if labels[seed] != -1:
            continue
        stack = [seed]
        labels[seed] = current
        while stack:
            t = stack.pop()
            for n in neighbors[t]:
                if n >= 0 and tri_mask[n] and labels[n] == -1:
                    labels[n] = current
                    stack.append(n)
        current += 1
    return labels
