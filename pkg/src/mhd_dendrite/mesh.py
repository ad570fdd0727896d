"""Conforming triangulations of rectangles with boundary identification.

Meshes are structured criss-cross triangulations (four triangles per
grid cell, meeting at the cell center), which keeps generation
deterministic while matching the element counts of the reference mesh
sequence.  All four sides carry the single implicit "wall" boundary.
Meshes are immutable after construction and safe to share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

_AREA_RTOL = 1e-12
GEOM_TOL = 0.05  # generated h may exceed the target by at most this fraction


@dataclass(frozen=True)
class Rectangle:
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0

    @property
    def area(self):
        return self.width * self.height


class Mesh:
    """Triangulation with derived edge connectivity.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise
    domain : Rectangle or None (None skips the coverage check)
    edges : (ne, 2) int array, each row sorted
    tri_edges : (nt, 3) int array, global edge index of local edges
        ((0,1), (1,2), (2,0))
    boundary_edges : indices into `edges` of edges on exactly one triangle
    boundary_tri, boundary_local : owning triangle and local edge index
        for each boundary edge
    h : maximum edge length
    """

    def __init__(self, vertices, triangles, domain=None):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise ValueError("vertices must be an (nv, 2) array")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise ValueError("triangles must be an (nt, 3) array")

        areas = _signed_areas(vertices, triangles)
        if np.any(areas <= 0.0):
            bad = int(np.argmin(areas))
            raise ValueError(f"triangle {bad} has non-positive signed area {areas[bad]:.3e}")
        if domain is not None:
            total = float(areas.sum())
            if not math.isclose(total, domain.area, rel_tol=_AREA_RTOL, abs_tol=0.0):
                raise ValueError(
                    f"triangle areas sum to {total!r} but the domain area is {domain.area!r}"
                )

        # unique edges and the local-edge -> global-edge map
        raw = triangles[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2)
        raw_sorted = np.sort(raw, axis=1)
        edges, inverse, counts = np.unique(
            raw_sorted, axis=0, return_inverse=True, return_counts=True
        )
        if np.any(counts > 2):
            raise ValueError("mesh is non-conforming: an edge is shared by > 2 triangles")
        tri_edges = inverse.reshape(-1, 3)

        boundary = np.flatnonzero(counts == 1)
        first_pos = np.full(len(edges), -1, dtype=np.int64)
        # later occurrences overwrite, harmless: boundary edges occur once
        first_pos[inverse[::-1]] = np.arange(len(inverse) - 1, -1, -1)

        self.vertices = vertices
        self.triangles = triangles
        self.domain = domain
        self.tri_areas = areas
        self.edges = edges
        self.tri_edges = tri_edges
        self.boundary_edges = boundary
        self.boundary_tri = first_pos[boundary] // 3
        self.boundary_local = first_pos[boundary] % 3
        lengths = np.linalg.norm(vertices[edges[:, 1]] - vertices[edges[:, 0]], axis=1)
        self.edge_lengths = lengths
        self.h = float(lengths.max())
        for arr in (self.vertices, self.triangles, self.tri_areas, self.edges,
                    self.tri_edges, self.boundary_edges, self.edge_lengths):
            arr.setflags(write=False)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    def boundary_vertex_mask(self):
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.edges[self.boundary_edges].ravel()] = True
        return mask


def _signed_areas(vertices, triangles):
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


class MeshStats(NamedTuple):
    h: float
    n_elements: int
    n_boundary_edges: int


def generate_rect_mesh(domain: Rectangle, h_target: float) -> Mesh:
    """Triangulate `domain` so the maximum element diameter is <= h_target.

    Produces the minimal two-triangle mesh when h_target admits it,
    otherwise a criss-cross pattern with ceil(extent / h_target) cells
    per direction.  Deterministic for fixed inputs.
    """
    if not h_target > 0.0:
        raise ValueError(f"h_target must be positive, got {h_target!r}")
    if not (domain.width > 0.0 and domain.height > 0.0):
        raise ValueError(f"degenerate or inverted rectangle {domain}")

    diag = math.hypot(domain.width, domain.height)
    if h_target * (1.0 + GEOM_TOL) >= diag:
        verts = np.array([
            [domain.x0, domain.y0], [domain.x1, domain.y0],
            [domain.x1, domain.y1], [domain.x0, domain.y1],
        ])
        tris = np.array([[0, 1, 2], [0, 2, 3]])
        return Mesh(verts, tris, domain)

    nx = max(1, math.ceil(domain.width / h_target - 1e-12))
    ny = max(1, math.ceil(domain.height / h_target - 1e-12))
    xs = np.linspace(domain.x0, domain.x1, nx + 1)
    ys = np.linspace(domain.y0, domain.y1, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel()])

    cx = 0.5 * (xs[:-1] + xs[1:])
    cy = 0.5 * (ys[:-1] + ys[1:])
    gcx, gcy = np.meshgrid(cx, cy, indexing="ij")
    centers = np.column_stack([gcx.ravel(), gcy.ravel()])
    verts = np.vstack([grid, centers])

    def node(i, j):
        return i * (ny + 1) + j

    n_grid = (nx + 1) * (ny + 1)
    tris = []
    for i in range(nx):
        for j in range(ny):
            bl, br = node(i, j), node(i + 1, j)
            tl, tr = node(i, j + 1), node(i + 1, j + 1)
            c = n_grid + i * ny + j
            tris.extend([[bl, br, c], [br, tr, c], [tr, tl, c], [tl, bl, c]])
    return Mesh(verts, np.array(tris), domain)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: split every triangle into 4 congruent children."""
    nv = mesh.n_vertices
    mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    verts = np.vstack([mesh.vertices, mids])

    m = nv + mesh.tri_edges  # (nt, 3): midpoints of local edges (0,1), (1,2), (2,0)
    t = mesh.triangles
    children = np.empty((mesh.n_triangles * 4, 3), dtype=np.int64)
    children[0::4] = np.column_stack([t[:, 0], m[:, 0], m[:, 2]])
    children[1::4] = np.column_stack([t[:, 1], m[:, 1], m[:, 0]])
    children[2::4] = np.column_stack([t[:, 2], m[:, 2], m[:, 1]])
    children[3::4] = m
    return Mesh(verts, children, mesh.domain)


def mesh_statistics(mesh: Mesh) -> MeshStats:
    return MeshStats(h=mesh.h, n_elements=mesh.n_triangles,
                     n_boundary_edges=len(mesh.boundary_edges))


def save_mesh(mesh: Mesh, path) -> None:
    """Plain-text export: `nv nt` header, vertex lines, triangle lines."""
    with open(path, "w") as f:
        f.write(f"{mesh.n_vertices} {mesh.n_triangles}\n")
        for x, y in mesh.vertices:
            f.write(f"{x:.17g} {y:.17g}\n")
        for i, j, k in mesh.triangles:
            f.write(f"{i} {j} {k}\n")


def load_mesh(path) -> Mesh:
    with open(path) as f:
        nv, nt = map(int, f.readline().split())
        verts = np.array([[float(v) for v in f.readline().split()] for _ in range(nv)])
        tris = np.array([[int(v) for v in f.readline().split()] for _ in range(nt)])
    domain = Rectangle(
        float(verts[:, 0].min()), float(verts[:, 1].min()),
        float(verts[:, 0].max()), float(verts[:, 1].max()),
    )
    areas = _signed_areas(verts, tris)
    if not math.isclose(float(np.abs(areas).sum()), domain.area, rel_tol=_AREA_RTOL):
        domain = None
    return Mesh(verts, tris, domain)
