"""Assembly of the coupled block system: mass blocks, nonlinear operator
blocks, load terms and right-hand sides, plus the standalone bilinear
forms used by the property tests.

Element loops are vectorized over all triangles per quadrature point;
scatter into global sparse matrices goes through a single COO pass with
a fixed ordering, so residuals and Jacobians are reproducible
bit-for-bit on a fixed mesh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.special import roots_legendre

from . import constitutive
from .constitutive import ModelParameters
from .elements import EDGE_VERTICES, _REF_VERTICES, shape_eval
from .spaces import (
    BasisTables,
    einsum,
    FEFunction,
    FunctionSpace,
    eval_scalar,
    eval_scalar_grad,
    eval_vector,
    eval_vector_grad,
)


class NonFiniteStateError(RuntimeError):
    """A state vector passed to assembly contains NaN or Inf."""


# ---------------------------------------------------------------------------
# local element kernels (dense, vectorized over triangles)

def _k_mass(tab_r: BasisTables, tab_c: BasisTables, coeff=None):
    w = tab_r.weights if coeff is None else tab_r.weights * coeff
    return einsum("tq,iq,jq->tij", w, tab_r.vals, tab_c.vals)


def _k_stiffness(tab: BasisTables, coeff=None):
    w = tab.weights if coeff is None else tab.weights * coeff
    return einsum("tq,tidq,tjdq->tij", w, tab.grads, tab.grads)


def _k_stiffness_mat(tab: BasisTables, amat):
    """Entries int (A grad phi_j) . grad phi_i with pointwise 2x2 A."""
    return einsum("tq,tqdr,tjrq,tidq->tij", tab.weights, amat,
                     tab.grads, tab.grads)


def _k_convection(tab: BasisTables, wind):
    """Entries int (wind . grad phi_j) phi_i with pointwise 2-vector wind."""
    return einsum("tq,tqd,tjdq,iq->tij", tab.weights, wind,
                     tab.grads, tab.vals)


def _k_gradrow_valcol(tab: BasisTables, gfield):
    """Entries int (g . grad phi_i) phi_j with pointwise 2-vector g."""
    return einsum("tq,tqd,tidq,jq->tij", tab.weights, gfield,
                     tab.grads, tab.vals)


def _k_vec_mass_mat(tab: BasisTables, amat):
    """Vector-space entries int (A phi_j e_b) . (phi_i e_a), interleaved."""
    nt, nb = tab.grads.shape[0], tab.vals.shape[0]
    out = einsum("tq,tqab,iq,jq->tiajb", tab.weights, amat,
                    tab.vals, tab.vals)
    return out.reshape(nt, 2 * nb, 2 * nb)


def _expand_components(local):
    """Scalar-basis block (nt, nb, nb) -> interleaved diagonal (nt, 2nb, 2nb)."""
    nt, nb, _ = local.shape
    out = np.zeros((nt, 2 * nb, 2 * nb))
    out[:, 0::2, 0::2] = local
    out[:, 1::2, 1::2] = local
    return out


def _k_divergence(tab_u: BasisTables, tab_p: BasisTables):
    """Entries -int q_k d_b phi_j, shaped (nt, nb_p, 2 nb_u)."""
    nt, nbu = tab_u.grads.shape[0], tab_u.vals.shape[0]
    out = einsum("tq,kq,tjbq->tkjb", tab_u.weights, tab_p.vals,
                    tab_u.grads)
    return -out.reshape(nt, tab_p.vals.shape[0], 2 * nbu)


def _k_vecrow_scalcol(tab_u: BasisTables, tab_s: BasisTables, gfield):
    """Entries int g_a phi_i z_j, shaped (nt, 2 nb_u, nb_s)."""
    nt, nbu = tab_u.grads.shape[0], tab_u.vals.shape[0]
    out = einsum("tq,tqa,iq,jq->tiaj", tab_u.weights, gfield,
                    tab_u.vals, tab_s.vals)
    return out.reshape(nt, 2 * nbu, tab_s.vals.shape[0])


def _k_scalrow_veccol(tab_s: BasisTables, tab_u: BasisTables, gfield):
    """Entries int g_b phi_i z_j, shaped (nt, nb_s, 2 nb_u)."""
    nt, nbu = tab_u.grads.shape[0], tab_u.vals.shape[0]
    out = einsum("tq,tqb,iq,jq->tjib", tab_u.weights, gfield,
                    tab_u.vals, tab_s.vals)
    return out.reshape(nt, tab_s.vals.shape[0], 2 * nbu)


def _load_scalar(tab: BasisTables, f):
    local = einsum("tq,jq->tj", tab.weights * f, tab.vals)
    return np.bincount(tab.space.dof_map.ravel(), weights=local.ravel(),
                       minlength=tab.space.n_nodes)


def _load_vector(tab: BasisTables, f):
    local = einsum("tqa,jq->tja", tab.weights[:, :, None] * f, tab.vals)
    dofs = tab.space.vector_dof_map().reshape(len(local), -1, 2)
    return np.bincount(dofs.ravel(), weights=local.ravel(),
                       minlength=tab.space.n_dofs)


def _load_grad(tab: BasisTables, q):
    local = einsum("tq,tqd,tjdq->tj", tab.weights, q, tab.grads)
    return np.bincount(tab.space.dof_map.ravel(), weights=local.ravel(),
                       minlength=tab.space.n_nodes)


def _scatter(local, rows, cols, shape):
    nt, nr, nc = local.shape
    r = np.repeat(rows[:, :, None], nc, axis=2).ravel()
    c = np.repeat(cols[:, None, :], nr, axis=1).ravel()
    mat = sparse.coo_matrix((local.ravel(), (r, c)), shape=shape).tocsr()
    mat.eliminate_zeros()
    return mat


def _dofs(space: FunctionSpace):
    return space.vector_dof_map() if space.n_components == 2 else space.dof_map


# ---------------------------------------------------------------------------
# standalone forms

def assemble_mass(space: FunctionSpace, density: float = 1.0,
                  quad_degree: int | None = None):
    """Mass matrix, SPD on unconstrained DOFs; `density` scales it."""
    tab = space.tables(quad_degree or min(2 * space.order + 1, 10))
    local = _k_mass(tab, tab)
    if space.n_components == 2:
        local = _expand_components(local)
    dofs = _dofs(space)
    return _scatter(density * local, dofs, dofs, (space.n_dofs, space.n_dofs))


def assemble_stiffness_viscous(space_u: FunctionSpace, mu: float,
                               quad_degree: int | None = None):
    """mu int grad u : grad v on a vector space."""
    if space_u.n_components != 2:
        raise ValueError("viscous stiffness needs a 2-component velocity space")
    tab = space_u.tables(quad_degree or min(2 * space_u.order + 1, 10))
    local = _expand_components(mu * _k_stiffness(tab))
    dofs = _dofs(space_u)
    return _scatter(local, dofs, dofs, (space_u.n_dofs, space_u.n_dofs))


def check_inf_sup_pairing(space_u: FunctionSpace, space_p: FunctionSpace):
    if space_u.order != space_p.order + 1 or space_p.order < 1:
        raise ValueError(
            f"pairing P{space_u.order}-P{space_p.order} is not inf-sup stable; "
            "use a Taylor-Hood pair (P2-P1 or P3-P2)"
        )


def assemble_divergence(space_u: FunctionSpace, space_p: FunctionSpace,
                        quad_degree: int | None = None):
    """Matrix C with C[q, u] = -int q div u, for a Taylor-Hood pair."""
    if space_u.mesh is not space_p.mesh:
        raise ValueError("velocity and pressure spaces live on different meshes")
    check_inf_sup_pairing(space_u, space_p)
    deg = quad_degree or min(2 * space_u.order + 1, 10)
    tab_u = space_u.tables(deg)
    tab_p = space_p.tables(deg)
    local = _k_divergence(tab_u, tab_p)
    return _scatter(local, space_p.dof_map, space_u.vector_dof_map(),
                    (space_p.n_dofs, space_u.n_dofs))


def assemble_convection(space: FunctionSpace, wind: FEFunction,
                        density: float = 1.0, quad_degree: int | None = None):
    """Convection matrix N with N[w, v] = density * int (wind . grad v) w."""
    if wind.space.mesh is not space.mesh:
        raise ValueError("wind and target space live on different meshes")
    if wind.space.n_components != 2:
        raise ValueError("wind must be a velocity (2-component) function")
    deg = quad_degree or min(2 * space.order + 1, 10)
    tab = space.tables(deg)
    wind_q = eval_vector(wind.space.tables(deg), wind.coeffs)
    local = _k_convection(tab, wind_q)
    if space.n_components == 2:
        local = _expand_components(local)
    dofs = _dofs(space)
    return _scatter(density * local, dofs, dofs, (space.n_dofs, space.n_dofs))


def assemble_anisotropic_stiffness(space_psi: FunctionSpace, psi_state: FEFunction,
                                   params: ModelParameters,
                                   quad_degree: int | None = None):
    """K with K[phi, z] = int (A_g(grad psi_h) grad z) . grad phi."""
    deg = quad_degree or min(2 * space_psi.order + 2, 10)
    tab = space_psi.tables(deg)
    grad_psi = eval_scalar_grad(psi_state.space.tables(deg), psi_state.coeffs)
    amat = constitutive.anisotropy_matrix(grad_psi, params)
    local = _k_stiffness_mat(tab, amat)
    return _scatter(local, space_psi.dof_map, space_psi.dof_map,
                    (space_psi.n_dofs, space_psi.n_dofs))


def export_matrix(matrix, path):
    """Coordinate text format, one `i j value` line per stored entry."""
    coo = sparse.csr_matrix(matrix).tocoo()
    with open(path, "w") as f:
        for i, j, v in zip(coo.row, coo.col, coo.data):
            f.write(f"{i} {j} {v:.17g}\n")


# ---------------------------------------------------------------------------
# coupled system

@dataclass(frozen=True)
class SystemLayout:
    """Offsets of the velocity / pressure / phase / concentration blocks
    and the trailing zero-mean multiplier."""

    n_u: int
    n_p: int
    n_s: int

    @property
    def u(self):
        return slice(0, self.n_u)

    @property
    def p(self):
        return slice(self.n_u, self.n_u + self.n_p)

    @property
    def psi(self):
        return slice(self.n_u + self.n_p, self.n_u + self.n_p + self.n_s)

    @property
    def c(self):
        return slice(self.n_u + self.n_p + self.n_s, self.n_u + self.n_p + 2 * self.n_s)

    @property
    def mult(self):
        return self.n_u + self.n_p + 2 * self.n_s

    @property
    def total(self):
        return self.n_u + self.n_p + 2 * self.n_s + 1

    def block_of(self, index: int) -> str:
        for name in ("u", "p", "psi", "c"):
            s = getattr(self, name)
            if s.start <= index < s.stop:
                return name
        return "mult"


@dataclass(eq=False)
class AssembledSystem:
    matrix: sparse.csr_matrix
    layout: SystemLayout
    residual: np.ndarray | None = None


@dataclass(eq=False)
class _BoundaryTables:
    points: np.ndarray    # (nbe, nq, 2) physical points
    normals: np.ndarray   # (nbe, 2) outward unit normals
    weights: np.ndarray   # (nbe, nq) includes edge length
    vals: np.ndarray      # (nbe, nb, nq) scalar basis traces
    dofs: np.ndarray      # (nbe, nb) scalar dof indices of the owning triangle


def _tabulate_boundary(space: FunctionSpace, n_quad: int):
    mesh = space.mesh
    s, w = roots_legendre(n_quad)
    s = (s + 1.0) / 2.0
    w = w / 2.0

    tris = mesh.boundary_tri
    locs = mesh.boundary_local
    ref_pts = {}
    ref_vals = {}
    for le, (a, b) in enumerate(EDGE_VERTICES):
        pts = _REF_VERTICES[a][None, :] + s[:, None] * (_REF_VERTICES[b] - _REF_VERTICES[a])[None, :]
        ref_pts[le] = pts
        ref_vals[le], _ = shape_eval(space.element, pts)

    nbe = len(tris)
    nb = space.element.n_basis
    points = np.empty((nbe, n_quad, 2))
    normals = np.empty((nbe, 2))
    weights = np.empty((nbe, n_quad))
    vals = np.empty((nbe, nb, n_quad))
    for i, (t, le) in enumerate(zip(tris, locs)):
        a, b = EDGE_VERTICES[le]
        va = mesh.vertices[mesh.triangles[t, a]]
        vb = mesh.vertices[mesh.triangles[t, b]]
        tang = vb - va
        length = float(np.hypot(*tang))
        points[i] = va[None, :] + s[:, None] * tang[None, :]
        normals[i] = np.array([tang[1], -tang[0]]) / length
        weights[i] = w * length
        vals[i] = ref_vals[le]
    dofs = space.dof_map[tris]
    return _BoundaryTables(points=points, normals=normals, weights=weights,
                           vals=vals, dofs=dofs)


@dataclass(eq=False)
class SystemOptions:
    quad_degree: int | None = None
    jacobian_mode: str = "frozen"   # "frozen" or "full" A_g linearization

    def __post_init__(self):
        if self.jacobian_mode not in ("frozen", "full"):
            raise ValueError(f"unknown jacobian_mode {self.jacobian_mode!r}")


class CoupledSystem:
    """Residual and Jacobian of the semi-discrete coupled system.

    The state layout is (velocity, pressure, phase-field, concentration,
    zero-mean multiplier); boundary velocity DOFs are constrained to
    zero through identity rows.
    """

    def __init__(self, space_u: FunctionSpace, space_p: FunctionSpace,
                 space_s: FunctionSpace, params: ModelParameters,
                 sources, options: SystemOptions | None = None):
        if space_u.mesh is not space_p.mesh or space_u.mesh is not space_s.mesh:
            raise ValueError("all spaces must share one mesh")
        check_inf_sup_pairing(space_u, space_p)
        if space_u.constraint != "zero-boundary":
            raise ValueError("velocity space must carry the zero-boundary constraint")

        self.space_u = space_u
        self.space_p = space_p
        self.space_s = space_s
        self.params = params
        self.sources = sources
        self.options = options or SystemOptions()
        self.mesh = space_u.mesh
        self.layout = SystemLayout(n_u=space_u.n_dofs, n_p=space_p.n_dofs,
                                   n_s=space_s.n_dofs)

        deg = self.options.quad_degree or min(2 * space_u.order + 2, 10)
        self.quad_degree = deg
        self.tab_u = space_u.tables(deg)
        self.tab_p = space_p.tables(deg)
        self.tab_s = space_s.tables(deg)

        self.mass_u = assemble_mass(space_u, density=params.rho0, quad_degree=deg)
        self.mass_s = assemble_mass(space_s, quad_degree=deg)
        self.stiff_visc = assemble_stiffness_viscous(space_u, params.mu, quad_degree=deg)
        self.div = assemble_divergence(space_u, space_p, quad_degree=deg)
        self.div_t = self.div.T.tocsr()
        self.p_integral = _load_scalar(self.tab_p, np.ones(self.tab_p.weights.shape))

        self.dirichlet = space_u.boundary_dofs  # global ids (velocity block starts at 0)
        self._keep = np.ones(self.layout.total)
        self._keep[self.dirichlet] = 0.0

        self._udofs = space_u.vector_dof_map()
        self._bt = None
        if getattr(sources, "boundary", None) is not None:
            self._bt = _tabulate_boundary(space_s, n_quad=max(2 * space_s.order, 4))

        bmat = np.asarray(params.B)
        self._kb = np.outer(bmat, bmat) - np.dot(bmat, bmat) * np.eye(2)

    # -- state access -------------------------------------------------------

    def split(self, Y):
        lo = self.layout
        return Y[lo.u], Y[lo.p], Y[lo.psi], Y[lo.c], Y[lo.mult]

    def quad_fields(self, Y):
        u, _, psi, c, _ = self.split(Y)
        return {
            "u": eval_vector(self.tab_u, u),
            "grad_u": eval_vector_grad(self.tab_u, u),
            "psi": eval_scalar(self.tab_s, psi),
            "grad_psi": eval_scalar_grad(self.tab_s, psi),
            "c": eval_scalar(self.tab_s, c),
            "grad_c": eval_scalar_grad(self.tab_s, c),
        }

    def _source_loads(self, t, source_factors=None):
        pts = self.tab_u.points
        F_u, F_psi, F_c = self.sources.volume(pts[..., 0], pts[..., 1], t)
        if source_factors is not None:
            F_u = F_u * source_factors[0][:, :, None]
            F_psi = F_psi * source_factors[1]
            F_c = F_c * source_factors[2]
        r_u = _load_vector(self.tab_u, F_u)
        r_psi = _load_scalar(self.tab_s, F_psi)
        r_c = _load_scalar(self.tab_s, F_c)
        if self._bt is not None:
            bt = self._bt
            fpsi, fc = self.sources.boundary(bt.points[..., 0], bt.points[..., 1], t,
                                             bt.normals[:, None, :])
            r_psi += np.bincount(
                bt.dofs.ravel(),
                weights=np.einsum("eq,enq->en", bt.weights * fpsi, bt.vals).ravel(),
                minlength=self.space_s.n_nodes)
            r_c += np.bincount(
                bt.dofs.ravel(),
                weights=np.einsum("eq,enq->en", bt.weights * fc, bt.vals).ravel(),
                minlength=self.space_s.n_nodes)
        return r_u, r_psi, r_c

    # -- residual -----------------------------------------------------------

    def residual(self, Y, Ydot, t, source_factors=None):
        """Residual of the discrete weak form at state Y with rate Ydot."""
        Y = np.asarray(Y, dtype=float)
        Ydot = np.asarray(Ydot, dtype=float)
        if not np.isfinite(Y).all() or not np.isfinite(Ydot).all():
            raise NonFiniteStateError("state or rate vector contains NaN/Inf")

        lo = self.layout
        p = self.params
        u, pc, psi, c, mult = self.split(Y)
        udot, _, psidot, cdot, _ = self.split(Ydot)
        f = self.quad_fields(Y)
        co = constitutive.coefficients(f["psi"], f["c"], p)

        r = np.zeros(lo.total)

        # momentum rows
        r_u = self.mass_u @ udot + self.stiff_visc @ u + self.div_t @ pc
        if p.convection:
            conv = einsum("tqij,tqj->tqi", f["grad_u"], f["u"])
            r_u += _load_vector(self.tab_u, p.rho0 * conv)
        lor = co.b[..., None] * constitutive.lorentz_direction(f["u"], p)
        r_u -= _load_vector(self.tab_u, co.A1 + lor)
        r[lo.u] = r_u

        # continuity rows: -(div u, q), with the zero-mean multiplier column
        r[lo.p] = self.div @ u + mult * self.p_integral

        # phase-field rows
        ag = constitutive.anisotropy_matrix(f["grad_psi"], p)
        flux_psi = einsum("tqij,tqj->tqi", ag, f["grad_psi"])
        r_psi = self.mass_s @ psidot + _load_grad(self.tab_s, flux_psi)
        r_psi += _load_scalar(self.tab_s, co.A2)
        if p.convection:
            r_psi += _load_scalar(
                self.tab_s, einsum("tqd,tqd->tq", f["u"], f["grad_psi"]))
        r[lo.psi] = r_psi

        # concentration rows
        flux_c = co.D[..., None] * f["grad_c"] + co.A3[..., None] * f["grad_psi"]
        r_c = self.mass_s @ cdot + _load_grad(self.tab_s, flux_c)
        if p.convection:
            r_c += _load_scalar(
                self.tab_s, einsum("tqd,tqd->tq", f["u"], f["grad_c"]))
        r[lo.c] = r_c

        s_u, s_psi, s_c = self._source_loads(t, source_factors)
        r[lo.u] -= s_u
        r[lo.psi] -= s_psi
        r[lo.c] -= s_c

        # zero-mean pressure row
        r[lo.mult] = self.p_integral @ pc

        r[self.dirichlet] = Y[self.dirichlet]
        return r

    # -- jacobian -----------------------------------------------------------

    def jacobian(self, Y, t, shift) -> AssembledSystem:
        """shift * M + d(A(Y) Y + L(Y)) / dY with Dirichlet rows replaced."""
        Y = np.asarray(Y, dtype=float)
        if not np.isfinite(Y).all():
            raise NonFiniteStateError("state vector contains NaN/Inf")
        if not shift > 0.0:
            raise ValueError(f"shift must be positive, got {shift!r}")

        lo = self.layout
        p = self.params
        f = self.quad_fields(Y)
        co = constitutive.coefficients(f["psi"], f["c"], p)
        der = constitutive.coefficient_derivatives(f["psi"], f["c"], p)

        udofs = self._udofs
        sdofs = self.space_s.dof_map
        pdofs = self.space_p.dof_map
        rows, cols, data = [], [], []

        def add(local, rdofs, cdofs, roff, coff):
            nt, nr, nc = local.shape
            rows.append(np.repeat(rdofs[:, :, None] + roff, nc, axis=2).ravel())
            cols.append(np.repeat(cdofs[:, None, :] + coff, nr, axis=1).ravel())
            data.append(local.ravel())

        # velocity-velocity: convection (both slots) and Lorentz
        amat = -co.b[..., None, None] * self._kb[None, None, :, :]
        if p.convection:
            amat = amat + p.rho0 * f["grad_u"]
            conv = _expand_components(p.rho0 * _k_convection(self.tab_u, f["u"]))
            add(conv, udofs, udofs, 0, 0)
        add(_k_vec_mass_mat(self.tab_u, amat), udofs, udofs, 0, 0)

        # velocity-phase and velocity-concentration couplings
        g_upsi = -(der.dA1_dpsi
                   + der.db_dpsi[..., None] * constitutive.lorentz_direction(f["u"], p))
        add(_k_vecrow_scalcol(self.tab_u, self.tab_s, g_upsi),
            udofs, sdofs, 0, lo.psi.start)
        add(_k_vecrow_scalcol(self.tab_u, self.tab_s, -der.dA1_dc),
            udofs, sdofs, 0, lo.c.start)

        # phase rows
        if self.options.jacobian_mode == "full":
            ag = constitutive.anisotropy_matrix_gradient(f["grad_psi"], p)
        else:
            ag = constitutive.anisotropy_matrix(f["grad_psi"], p)
        loc = _k_stiffness_mat(self.tab_s, ag) + _k_mass(self.tab_s, self.tab_s, der.dA2_dpsi)
        if p.convection:
            loc += _k_convection(self.tab_s, f["u"])
            add(_k_scalrow_veccol(self.tab_s, self.tab_u, f["grad_psi"]),
                sdofs, udofs, lo.psi.start, 0)
        add(loc, sdofs, sdofs, lo.psi.start, lo.psi.start)
        add(_k_mass(self.tab_s, self.tab_s, der.dA2_dc),
            sdofs, sdofs, lo.psi.start, lo.c.start)

        # concentration rows
        g_cpsi = (der.dD_dpsi[..., None] * f["grad_c"]
                  + der.dA3_dpsi[..., None] * f["grad_psi"])
        loc = _k_stiffness(self.tab_s, co.A3) + _k_gradrow_valcol(self.tab_s, g_cpsi)
        add(loc, sdofs, sdofs, lo.c.start, lo.psi.start)
        loc = (_k_stiffness(self.tab_s, co.D)
               + _k_gradrow_valcol(self.tab_s, der.dA3_dc[..., None] * f["grad_psi"]))
        if p.convection:
            loc += _k_convection(self.tab_s, f["u"])
            add(_k_scalrow_veccol(self.tab_s, self.tab_u, f["grad_c"]),
                sdofs, udofs, lo.c.start, 0)
        add(loc, sdofs, sdofs, lo.c.start, lo.c.start)

        base = sparse.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(lo.total, lo.total),
        ).tocsr()

        # constant blocks, mass shift, constraint rows/columns
        n = lo.total
        def embed(mat, roff, coff):
            coo = mat.tocoo()
            return sparse.coo_matrix((coo.data, (coo.row + roff, coo.col + coff)),
                                     shape=(n, n))

        pieces = [
            base,
            embed(self.stiff_visc + shift * self.mass_u, 0, 0),
            embed(self.div_t, 0, lo.p.start),
            embed(self.div, lo.p.start, 0),
            embed(shift * self.mass_s, lo.psi.start, lo.psi.start),
            embed(shift * self.mass_s, lo.c.start, lo.c.start),
        ]
        wp = self.p_integral
        pidx = np.arange(lo.p.start, lo.p.stop)
        pieces.append(sparse.coo_matrix(
            (wp, (pidx, np.full(lo.n_p, lo.mult))), shape=(n, n)))
        pieces.append(sparse.coo_matrix(
            (wp, (np.full(lo.n_p, lo.mult), pidx)), shape=(n, n)))

        mat = sum(pieces[1:], pieces[0]).tocsr()
        mat = sparse.diags(self._keep) @ mat + sparse.diags(1.0 - self._keep)
        mat = mat.tocsr()
        mat.eliminate_zeros()
        return AssembledSystem(matrix=mat, layout=lo)

    # -- helpers for studies and tests --------------------------------------

    def fe_functions(self, Y):
        """Views of the state as FEFunctions (u, p, psi, c)."""
        u, pc, psi, c, _ = self.split(np.asarray(Y, dtype=float))
        return (FEFunction(self.space_u, u.copy()), FEFunction(self.space_p, pc.copy()),
                FEFunction(self.space_s, psi.copy()), FEFunction(self.space_s, c.copy()))
