"""Global Lagrange spaces, DOF maps, interpolation and discrete norms.

Scalar DOFs are numbered vertices first, then edge nodes (ordered along
each global edge from its lower-indexed vertex), then cell-interior
nodes.  Vector spaces interleave components: dof = n_components * node
+ component.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elements import EDGE_VERTICES, QuadratureRule, quadrature, reference_element, shape_eval

FAMILIES = {"P1": 1, "P2": 2, "P3": 3}
CONSTRAINTS = ("none", "zero-boundary", "zero-mean")

_EINSUM_PATHS: dict = {}


def einsum(expr, *ops):
    """np.einsum with the contraction path cached per (expr, shapes)."""
    key = (expr, tuple(op.shape for op in ops))
    path = _EINSUM_PATHS.get(key)
    if path is None:
        path = np.einsum_path(expr, *ops, optimize="optimal")[0]
        _EINSUM_PATHS[key] = path
    return np.einsum(expr, *ops, optimize=path)


@dataclass(eq=False)
class FunctionSpace:
    mesh: object
    family: str
    n_components: int
    constraint: str
    order: int
    dof_map: np.ndarray        # (nt, n_local) scalar node indices
    node_coords: np.ndarray    # (n_nodes, 2)
    n_nodes: int
    boundary_nodes: np.ndarray

    def __post_init__(self):
        self._tables = {}

    @property
    def n_dofs(self):
        return self.n_components * self.n_nodes

    @property
    def element(self):
        return reference_element(self.order)

    @property
    def boundary_dofs(self):
        nodes = self.boundary_nodes
        if self.n_components == 1:
            return nodes
        return (self.n_components * nodes[:, None]
                + np.arange(self.n_components)[None, :]).ravel()

    def vector_dof_map(self):
        """(nt, n_components * n_local) interleaved global DOF indices."""
        nc = self.n_components
        dm = self.dof_map
        return (nc * dm[:, :, None] + np.arange(nc)[None, None, :]).reshape(len(dm), -1)

    def tables(self, quad_degree: int) -> "BasisTables":
        if quad_degree not in self._tables:
            self._tables[quad_degree] = tabulate_basis(self, quadrature(quad_degree))
        return self._tables[quad_degree]


def build_space(mesh, family: str, n_components: int = 1, constraint: str = "none") -> FunctionSpace:
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {sorted(FAMILIES)}")
    if constraint not in CONSTRAINTS:
        raise ValueError(f"unknown constraint {constraint!r}")
    if n_components not in (1, 2):
        raise ValueError("n_components must be 1 or 2")
    order = FAMILIES[family]
    elem = reference_element(order)

    nv, ne, nt = mesh.n_vertices, mesh.n_edges, mesh.n_triangles
    per_edge = order - 1
    per_cell = (order - 1) * (order - 2) // 2
    n_nodes = nv + ne * per_edge + nt * per_cell

    dof_map = np.empty((nt, elem.n_basis), dtype=np.int64)
    dof_map[:, :3] = mesh.triangles
    col = 3
    for le, (a, b) in enumerate(EDGE_VERTICES):
        ga, gb = mesh.triangles[:, a], mesh.triangles[:, b]
        geid = mesh.tri_edges[:, le]
        flipped = ga > gb
        for k in range(1, order):
            slot = np.where(flipped, order - k - 1, k - 1)
            dof_map[:, col] = nv + geid * per_edge + slot
            col += 1
    if per_cell:
        dof_map[:, col] = nv + ne * per_edge + np.arange(nt)
        col += 1
    assert col == elem.n_basis

    coords = np.empty((n_nodes, 2))
    coords[:nv] = mesh.vertices
    if per_edge:
        va = mesh.vertices[mesh.edges[:, 0]]
        vb = mesh.vertices[mesh.edges[:, 1]]
        for slot in range(per_edge):
            frac = (slot + 1) / order
            coords[nv + slot::per_edge][:ne] = va + frac * (vb - va)
    if per_cell:
        coords[nv + ne * per_edge:] = mesh.vertices[mesh.triangles].mean(axis=1)

    bmask = np.zeros(n_nodes, dtype=bool)
    bmask[:nv] = mesh.boundary_vertex_mask()
    if per_edge:
        for be in mesh.boundary_edges:
            bmask[nv + be * per_edge: nv + (be + 1) * per_edge] = True

    return FunctionSpace(
        mesh=mesh, family=family, n_components=n_components, constraint=constraint,
        order=order, dof_map=dof_map, node_coords=coords, n_nodes=n_nodes,
        boundary_nodes=np.flatnonzero(bmask),
    )


@dataclass(eq=False)
class FEFunction:
    space: FunctionSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.n_dofs,):
            raise ValueError(
                f"coefficient vector has length {self.coeffs.size}, expected {self.space.n_dofs}"
            )

    def copy(self):
        return FEFunction(self.space, self.coeffs.copy())

    def component(self, c):
        """Scalar node coefficients of component c."""
        return self.coeffs[c:: self.space.n_components]

    def eval(self, points):
        """Evaluate at arbitrary physical points (brute-force element search)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        mesh = self.space.mesh
        p0 = mesh.vertices[mesh.triangles[:, 0]]
        p1 = mesh.vertices[mesh.triangles[:, 1]]
        p2 = mesh.vertices[mesh.triangles[:, 2]]
        det = 2.0 * mesh.tri_areas
        nc = self.space.n_components
        out = np.empty((len(pts), nc))
        for i, p in enumerate(pts):
            d = p - p0
            xi = ((p2[:, 1] - p0[:, 1]) * d[:, 0] - (p2[:, 0] - p0[:, 0]) * d[:, 1]) / det
            eta = (-(p1[:, 1] - p0[:, 1]) * d[:, 0] + (p1[:, 0] - p0[:, 0]) * d[:, 1]) / det
            ok = (xi >= -1e-12) & (eta >= -1e-12) & (xi + eta <= 1.0 + 1e-12)
            if not ok.any():
                raise ValueError(f"point {tuple(p)} lies outside the mesh")
            t = int(np.flatnonzero(ok)[0])
            xc, ec = max(xi[t], 0.0), max(eta[t], 0.0)
            if xc + ec > 1.0:
                xc, ec = xc / (xc + ec), ec / (xc + ec)
            vals, _ = shape_eval(self.space.element, [xc, ec])
            for c in range(nc):
                out[i, c] = vals @ self.component(c)[self.space.dof_map[t]]
        return out[:, 0] if nc == 1 else out


def interpolate(space: FunctionSpace, fieldfn, t: float = 0.0) -> FEFunction:
    """Nodal interpolant of fieldfn(x, y, t) (vector fields return 2 arrays)."""
    x, y = space.node_coords[:, 0], space.node_coords[:, 1]
    vals = fieldfn(x, y, t)
    if space.n_components == 1:
        coeffs = np.broadcast_to(np.asarray(vals, dtype=float), (space.n_nodes,)).copy()
    else:
        u, v = vals
        coeffs = np.empty(2 * space.n_nodes)
        coeffs[0::2] = np.broadcast_to(np.asarray(u, dtype=float), (space.n_nodes,))
        coeffs[1::2] = np.broadcast_to(np.asarray(v, dtype=float), (space.n_nodes,))
    fef = FEFunction(space, coeffs)
    if space.constraint == "zero-boundary":
        fef.coeffs[space.boundary_dofs] = 0.0
    return fef


@dataclass(eq=False)
class BasisTables:
    """Per-quadrature-point basis data shared by assembly and norms."""

    space: FunctionSpace
    rule: QuadratureRule
    vals: np.ndarray          # (nb, nq)
    grads: np.ndarray         # (nt, nb, 2, nq) physical gradients
    detj: np.ndarray          # (nt,)
    points: np.ndarray        # (nt, nq, 2) physical quadrature points

    @property
    def weights(self):
        """(nt, nq) quadrature weights including the Jacobian factor."""
        return self.rule.weights[None, :] * self.detj[:, None]


def tabulate_basis(space: FunctionSpace, rule: QuadratureRule) -> BasisTables:
    mesh = space.mesh
    vals, ref_grads = shape_eval(space.element, rule.points)

    p0 = mesh.vertices[mesh.triangles[:, 0]]
    p1 = mesh.vertices[mesh.triangles[:, 1]]
    p2 = mesh.vertices[mesh.triangles[:, 2]]
    jac = np.empty((mesh.n_triangles, 2, 2))
    jac[:, :, 0] = p1 - p0
    jac[:, :, 1] = p2 - p0
    detj = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inv_jt = np.empty_like(jac)
    inv_jt[:, 0, 0] = jac[:, 1, 1]
    inv_jt[:, 0, 1] = -jac[:, 1, 0]
    inv_jt[:, 1, 0] = -jac[:, 0, 1]
    inv_jt[:, 1, 1] = jac[:, 0, 0]
    inv_jt /= detj[:, None, None]

    grads = einsum("tdr,nrq->tndq", inv_jt, ref_grads)
    points = p0[:, None, :] + einsum("tdr,qr->tqd", jac, rule.points)
    return BasisTables(space=space, rule=rule, vals=vals, grads=grads, detj=detj, points=points)


def eval_scalar(tables: BasisTables, coeffs):
    """Scalar nodal coefficients -> values (nt, nq)."""
    local = coeffs[tables.space.dof_map]
    return einsum("tn,nq->tq", local, tables.vals)


def eval_scalar_grad(tables: BasisTables, coeffs):
    """Scalar nodal coefficients -> gradients (nt, nq, 2)."""
    local = coeffs[tables.space.dof_map]
    return einsum("tn,tndq->tqd", local, tables.grads)


def eval_vector(tables: BasisTables, coeffs):
    """Interleaved vector coefficients -> values (nt, nq, 2)."""
    out = np.empty(tables.points.shape)
    for c in range(2):
        out[:, :, c] = eval_scalar(tables, coeffs[c::2])
    return out


def eval_vector_grad(tables: BasisTables, coeffs):
    """Interleaved vector coefficients -> Jacobians (nt, nq, 2, 2), [i, j] = d u_i / d x_j."""
    out = np.empty(tables.points.shape[:2] + (2, 2))
    for c in range(2):
        out[:, :, c, :] = eval_scalar_grad(tables, coeffs[c::2])
    return out


def _exact_values(exact, pts, t, n_components):
    x, y = pts[..., 0], pts[..., 1]
    if callable(exact):
        vals = exact(x, y, t)
    else:
        vals = exact
    if n_components == 1:
        return np.broadcast_to(np.asarray(vals, dtype=float), x.shape)
    if np.isscalar(vals) or (isinstance(vals, np.ndarray) and vals.ndim == 0):
        vals = (vals, vals)
    u, v = vals
    return np.stack([np.broadcast_to(np.asarray(u, dtype=float), x.shape),
                     np.broadcast_to(np.asarray(v, dtype=float), x.shape)], axis=-1)


def l2_error(fef: FEFunction, exact, t: float = 0.0, quad_degree: int | None = None) -> float:
    """L2(Omega) distance between fef and a closed-form field (0 for exact match)."""
    space = fef.space
    if quad_degree is None:
        quad_degree = min(2 * space.order + 2, 10)
    tab = space.tables(quad_degree)
    w = tab.weights
    if space.n_components == 1:
        diff = eval_scalar(tab, fef.coeffs) - _exact_values(exact, tab.points, t, 1)
        return float(np.sqrt(np.sum(w * diff**2)))
    diff = eval_vector(tab, fef.coeffs) - _exact_values(exact, tab.points, t, 2)
    return float(np.sqrt(np.sum(w * np.sum(diff**2, axis=-1))))


def integral(fef: FEFunction, quad_degree: int | None = None) -> float:
    """Integral of a scalar FEFunction over the domain."""
    space = fef.space
    if space.n_components != 1:
        raise ValueError("integral is defined for scalar functions")
    if quad_degree is None:
        quad_degree = min(2 * space.order, 10)
    tab = space.tables(quad_degree)
    return float(np.sum(tab.weights * eval_scalar(tab, fef.coeffs)))


def apply_zero_mean(fef: FEFunction) -> FEFunction:
    """Subtract the mean so the result integrates to zero."""
    area = float(np.sum(fef.space.tables(2 * fef.space.order).weights))
    mean = integral(fef) / area
    return FEFunction(fef.space, fef.coeffs - mean)


def save_function(fef: FEFunction, path) -> None:
    """Plain-text export: `n_dofs family n_components` header, one coefficient per line."""
    with open(path, "w") as f:
        f.write(f"{fef.space.n_dofs} {fef.space.family} {fef.space.n_components}\n")
        for c in fef.coeffs:
            f.write(f"{c:.17g}\n")


def load_function(space: FunctionSpace, path) -> FEFunction:
    with open(path) as f:
        n_dofs, family, n_components = f.readline().split()
        if int(n_dofs) != space.n_dofs or family != space.family \
                or int(n_components) != space.n_components:
            raise ValueError(
                f"file header ({n_dofs} {family} {n_components}) does not match the space "
                f"({space.n_dofs} {space.family} {space.n_components})"
            )
        coeffs = np.array([float(f.readline()) for _ in range(space.n_dofs)])
    return FEFunction(space, coeffs)
