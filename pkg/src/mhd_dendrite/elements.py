"""Reference-triangle Lagrange bases (P1, P2, P3) and triangle quadrature.

The reference triangle has vertices (0,0), (1,0), (0,1).  Local node
ordering is vertices first, then the nodes interior to each local edge
(walking from the edge's first vertex), then cell-interior nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_QUAD_DEGREE = 10

# Local edges of the reference triangle, counterclockwise.
EDGE_VERTICES = ((0, 1), (1, 2), (2, 0))

_REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

_GEOM_TOL = 1e-12


def _monomial_exponents(order):
    return [(a, t - a) for t in range(order + 1) for a in range(t, -1, -1)]


def _lagrange_nodes(order):
    nodes = [v for v in _REF_VERTICES]
    for a, b in EDGE_VERTICES:
        va, vb = _REF_VERTICES[a], _REF_VERTICES[b]
        for k in range(1, order):
            nodes.append(va + (k / order) * (vb - va))
    if order >= 3:
        nodes.append(np.array([1.0 / 3.0, 1.0 / 3.0]))
    return np.array(nodes)


@dataclass(frozen=True, eq=False)
class ReferenceElement:
    """Lagrange basis of total degree `order` on the reference triangle."""

    order: int
    nodes: np.ndarray        # (n_basis, 2) reference coordinates
    n_basis: int
    exponents: np.ndarray    # (n_basis, 2) monomial exponents
    coeff: np.ndarray        # (n_basis, n_basis), basis_j = sum_m coeff[m, j] x^a_m y^b_m

    @property
    def nodes_barycentric(self):
        x, y = self.nodes[:, 0], self.nodes[:, 1]
        return np.column_stack([1.0 - x - y, x, y])


_ELEMENT_CACHE: dict[int, ReferenceElement] = {}


def reference_element(order: int) -> ReferenceElement:
    if order not in (1, 2, 3):
        raise ValueError(f"unsupported element order {order}; expected 1, 2 or 3")
    if order not in _ELEMENT_CACHE:
        nodes = _lagrange_nodes(order)
        exps = np.array(_monomial_exponents(order))
        vand = nodes[:, 0][:, None] ** exps[:, 0] * nodes[:, 1][:, None] ** exps[:, 1]
        coeff = np.linalg.inv(vand)
        _ELEMENT_CACHE[order] = ReferenceElement(
            order=order, nodes=nodes, n_basis=len(nodes), exponents=exps, coeff=coeff
        )
    return _ELEMENT_CACHE[order]


def _check_inside(points):
    x, y = points[..., 0], points[..., 1]
    bad = (x < -_GEOM_TOL) | (y < -_GEOM_TOL) | (x + y > 1.0 + _GEOM_TOL)
    if np.any(bad):
        p = points[bad][0] if points.ndim > 1 else points
        raise ValueError(f"point {tuple(np.atleast_1d(p))} lies outside the reference triangle")


def shape_eval(elem: ReferenceElement, point):
    """Evaluate basis values and reference-space gradients.

    `point` is a single (x, y) pair or an (n, 2) array.  Returns
    (values, gradients) shaped (n_basis,), (n_basis, 2) for a single
    point and (n_basis, n), (n_basis, 2, n) for a batch.
    """
    pts = np.asarray(point, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    _check_inside(pts)

    a = elem.exponents[:, 0]
    b = elem.exponents[:, 1]
    x = pts[:, 0][:, None]
    y = pts[:, 1][:, None]
    mono = x**a * y**b                                       # (n, nm)
    dmx = np.where(a > 0, a * x ** np.maximum(a - 1, 0) * y**b, 0.0)
    dmy = np.where(b > 0, b * x**a * y ** np.maximum(b - 1, 0), 0.0)

    values = (mono @ elem.coeff).T                           # (n_basis, n)
    grads = np.stack([(dmx @ elem.coeff).T, (dmy @ elem.coeff).T], axis=1)
    if single:
        return values[:, 0], grads[:, :, 0]
    return values, grads


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Positive-weight rule on the reference triangle (weights sum to 1/2)."""

    points: np.ndarray       # (nq, 2) reference coordinates
    weights: np.ndarray      # (nq,)
    exact_degree: int

    @property
    def points_barycentric(self):
        x, y = self.points[:, 0], self.points[:, 1]
        return np.column_stack([1.0 - x - y, x, y])

    @property
    def n_points(self):
        return len(self.weights)


_QUAD_CACHE: dict[int, QuadratureRule] = {}


def quadrature(exact_degree: int) -> QuadratureRule:
    """Collapsed Gauss-Jacobi x Gauss-Legendre rule exact to `exact_degree`.

    The n x n product rule (n = floor(degree/2) + 1) integrates all
    monomials of total degree <= 2n - 1 exactly and has strictly
    positive weights for every degree.
    """
    if not isinstance(exact_degree, (int, np.integer)) or not 1 <= exact_degree <= MAX_QUAD_DEGREE:
        raise ValueError(f"unsupported quadrature degree {exact_degree!r}; expected 1..{MAX_QUAD_DEGREE}")
    exact_degree = int(exact_degree)
    if exact_degree not in _QUAD_CACHE:
        n = exact_degree // 2 + 1
        tj, wj = roots_jacobi(n, 1.0, 0.0)   # weight (1 - t) on [-1, 1]
        tl, wl = roots_legendre(n)
        xs = (tj + 1.0) / 2.0
        ws = wj / 4.0                        # integrates (1 - x) f(x) on [0, 1]
        ss = (tl + 1.0) / 2.0
        vs = wl / 2.0
        x = np.repeat(xs, n)
        y = (1.0 - np.repeat(xs, n)) * np.tile(ss, n)
        w = np.repeat(ws, n) * np.tile(vs, n)
        _QUAD_CACHE[exact_degree] = QuadratureRule(
            points=np.column_stack([x, y]), weights=w, exact_degree=2 * n - 1
        )
    return _QUAD_CACHE[exact_degree]
