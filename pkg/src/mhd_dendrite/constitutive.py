"""Model coefficients: anisotropy, diffusivity, conductivity, couplings.

Closure functions the model leaves open are fixed here with smooth,
endpoint-consistent defaults: a quartic double well g, the quintic
smoothing polynomial pbar, phase-interpolated diffusivity D and
conductivity b, a1(psi) = psi and f(psi) = 0.  The lambda coefficient
pairs are affine in concentration.  All of them can be overridden on
ModelParameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

GAMMA_REGULARITY_LIMIT_K4 = 1.0 / 15.0  # for k = 4, eta + eta'' > 0 iff gamma < 1/15


def g_well(psi):
    """Double well psi^2 (1 - psi)^2 and its first two derivatives."""
    return (psi**2 * (1.0 - psi) ** 2,
            2.0 * psi * (1.0 - psi) * (1.0 - 2.0 * psi),
            2.0 - 12.0 * psi + 12.0 * psi**2)


def p_bar(psi):
    """Quintic smoothing psi^3 (6 psi^2 - 15 psi + 10) and derivatives."""
    return (psi**3 * (6.0 * psi**2 - 15.0 * psi + 10.0),
            30.0 * psi**2 * (1.0 - psi) ** 2,
            60.0 * psi * (1.0 - psi) * (1.0 - 2.0 * psi))


def a1_linear(psi):
    """Buoyancy shape function a1(psi) = psi."""
    return np.asarray(psi, dtype=float), np.ones_like(np.asarray(psi, dtype=float))


def f_zero(psi):
    """Default body-force closure f(psi) = 0 (value and derivative, both 2-vectors)."""
    z = np.zeros(np.shape(psi) + (2,))
    return z, z.copy()


@dataclass
class ModelParameters:
    """Physical and model constants.

    Defaults follow the Ni-Cu data set where the sources pin them
    (arithmetic means for rho0 and mu) and order-one verification values
    for the coefficients the sources leave open.  melting_temp,
    latent_heat, kinetic_coeff, surface_energy and molar_volume are
    carried for documentation only; no implemented equation uses them.
    """

    rho0: float = 7915.0            # kg/m^3, mean of Ni and Cu densities
    mu: float = 2.3535e-6           # Pa s, mean of Ni and Cu viscosities
    M_psi: float = 1.0              # phase-field mobility
    delta: float = 1.0              # interface thickness scale
    eps0: float = 1.0               # anisotropy scale
    gamma: float = 0.04             # anisotropy amplitude
    k: int = 4                      # branching mode number
    B: tuple[float, float] = (1.0 / np.sqrt(2.0), 1.0 / np.sqrt(2.0))
    D_S: float = 1e-13              # m^2/s solid diffusivity
    D_L: float = 1e-9               # m^2/s liquid diffusivity
    sigma_A: float = 14.3e6         # S/m conductivity, solvent
    sigma_B: float = 59.6e6         # S/m conductivity, solute
    beta_c: float = 1.0             # solutal expansion coupling
    zeta: float = 1.0               # body-force coupling
    alpha0: float = 1.0             # concentration-flux coupling
    G: tuple[float, float] = (0.0, -1.0)
    lam1: tuple[float, float] = (1.0, 1.0)   # lambda_1(c) = lam1[0] + lam1[1] * c
    lam2: tuple[float, float] = (1.0, 1.0)
    eps_grad: float = 1e-12         # |grad psi| below this uses the theta = 0 branch
    convection: bool = True

    # documentation-only Ni/Cu table entries
    melting_temp: tuple[float, float] = (1728.0, 1358.0)
    latent_heat: tuple[float, float] = (2350e6, 1758e6)
    kinetic_coeff: tuple[float, float] = (3.3e-3, 3.9e-3)
    surface_energy: tuple[float, float] = (0.37, 0.29)
    molar_volume: tuple[float, float] = (7.46e-6, 7.46e-6)

    # overridable closures
    g: Callable = field(default=g_well, repr=False)
    pbar: Callable = field(default=p_bar, repr=False)
    a1: Callable = field(default=a1_linear, repr=False)
    f: Callable = field(default=f_zero, repr=False)

    def __post_init__(self):
        for name in ("rho0", "mu", "M_psi", "delta", "eps0", "D_S", "D_L"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.gamma < 0.0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma!r}")
        if int(self.k) != self.k or self.k < 2:
            raise ValueError(f"k must be an integer >= 2, got {self.k!r}")
        self.k = int(self.k)
        self.B = (float(self.B[0]), float(self.B[1]))
        self.G = (float(self.G[0]), float(self.G[1]))

    def with_overrides(self, **kwargs) -> "ModelParameters":
        return replace(self, **kwargs)

    def lam1_of(self, c):
        return self.lam1[0] + self.lam1[1] * c, self.lam1[1]

    def lam2_of(self, c):
        return self.lam2[0] + self.lam2[1] * c, self.lam2[1]

    def diffusivity(self, psi):
        """D(psi) = D_S + pbar(psi) (D_L - D_S) and its psi-derivative."""
        p, dp, _ = self.pbar(psi)
        return self.D_S + p * (self.D_L - self.D_S), dp * (self.D_L - self.D_S)

    def conductivity(self, psi):
        """b(psi) = sigma_A + psi (sigma_B - sigma_A) and its psi-derivative."""
        psi = np.asarray(psi, dtype=float)
        return (self.sigma_A + psi * (self.sigma_B - self.sigma_A),
                np.full_like(psi, self.sigma_B - self.sigma_A))


def eta(theta, params: ModelParameters):
    """Anisotropy function eps0 (1 + gamma cos(k theta)) with two derivatives."""
    theta = np.asarray(theta, dtype=float)
    e0, g, k = params.eps0, params.gamma, params.k
    return (e0 * (1.0 + g * np.cos(k * theta)),
            -e0 * g * k * np.sin(k * theta),
            -e0 * g * k * k * np.cos(k * theta))


def angle_of_gradient(grad_psi, params: ModelParameters):
    """Angle between the x-axis and grad psi; 0 where |grad psi| <= eps_grad."""
    g = np.asarray(grad_psi, dtype=float)
    gx, gy = g[..., 0], g[..., 1]
    small = np.hypot(gx, gy) <= params.eps_grad
    theta = np.arctan2(gy, np.where(small, 1.0, gx))
    return np.where(small, 0.0, theta)


def anisotropy_matrix(grad_psi, params: ModelParameters):
    """2x2 matrix M_psi [[eta^2, -eta eta'], [eta eta', eta^2]] at grad psi."""
    theta = angle_of_gradient(grad_psi, params)
    e, de, _ = eta(theta, params)
    out = np.empty(np.shape(theta) + (2, 2))
    out[..., 0, 0] = out[..., 1, 1] = e * e
    out[..., 0, 1] = -e * de
    out[..., 1, 0] = e * de
    return params.M_psi * out


def anisotropy_matrix_gradient(grad_psi, params: ModelParameters):
    """Linearization d(A_g(w) w)/dw as a 2x2 matrix field.

    Equals A_g + (dA_g/dtheta w) outer grad_w theta; the second term is
    dropped on the regularized branch where theta is held at 0.
    """
    g = np.asarray(grad_psi, dtype=float)
    gx, gy = g[..., 0], g[..., 1]
    q = gx * gx + gy * gy
    small = q <= params.eps_grad**2
    theta = np.where(small, 0.0, np.arctan2(gy, np.where(small, 1.0, gx)))
    e, de, dde = eta(theta, params)

    dA = np.empty(np.shape(theta) + (2, 2))
    dA[..., 0, 0] = dA[..., 1, 1] = 2.0 * e * de
    dA[..., 0, 1] = -(de * de + e * dde)
    dA[..., 1, 0] = de * de + e * dde
    dAw = np.einsum("...ij,...j->...i", dA, g)
    qs = np.where(small, 1.0, q)
    gth = np.where(np.asarray(small)[..., None],
                   0.0, np.stack([-gy / qs, gx / qs], axis=-1))

    out = np.empty(np.shape(theta) + (2, 2))
    out[..., 0, 0] = out[..., 1, 1] = e * e
    out[..., 0, 1] = -e * de
    out[..., 1, 0] = e * de
    out += np.einsum("...i,...j->...ij", dAw, gth)
    return params.M_psi * out


@dataclass(frozen=True)
class AnisotropyState:
    """Pointwise anisotropy data for one gradient."""

    theta: float
    eta: float
    eta_prime: float
    A_g: np.ndarray


def anisotropy_state(grad_psi, params: ModelParameters) -> AnisotropyState:
    theta = float(angle_of_gradient(np.asarray(grad_psi, dtype=float), params))
    e, de, _ = eta(theta, params)
    return AnisotropyState(theta=theta, eta=float(e), eta_prime=float(de),
                           A_g=anisotropy_matrix(grad_psi, params))


def anisotropy_regularity_margin(params: ModelParameters, n_grid: int = 10_000) -> float:
    """min over a theta grid of eta + eta''; positive means admissible."""
    theta = np.linspace(0.0, 2.0 * np.pi, n_grid, endpoint=False)
    e, _, dde = eta(theta, params)
    return float(np.min(e + dde))


class Coefficients(NamedTuple):
    D: np.ndarray
    b: np.ndarray
    A1: np.ndarray   # (..., 2)
    A2: np.ndarray
    A3: np.ndarray


def coefficients(psi, c, params: ModelParameters) -> Coefficients:
    """Pointwise D, b and the coupling operators A1 (vector), A2, A3."""
    psi = np.asarray(psi, dtype=float)
    c = np.asarray(c, dtype=float)
    _, dg, _ = params.g(psi)
    _, dp, _ = params.pbar(psi)
    D, _ = params.diffusivity(psi)
    b, _ = params.conductivity(psi)
    l1, dl1 = params.lam1_of(c)
    l2, dl2 = params.lam2_of(c)
    a1v, _ = params.a1(psi)
    fv, _ = params.f(psi)

    A1 = (params.beta_c * a1v * c)[..., None] * np.asarray(params.G) + params.zeta * fv
    A2 = params.M_psi * (l1 / params.delta**2 * dg + l2 / params.delta * dp)
    A3 = params.alpha0 * D * c * (1.0 - c) * (dl1 / params.delta * dg - dl2 * dp)
    return Coefficients(D=D, b=b, A1=A1, A2=A2, A3=A3)


class CoefficientDerivatives(NamedTuple):
    dA1_dpsi: np.ndarray   # (..., 2)
    dA1_dc: np.ndarray     # (..., 2)
    dA2_dpsi: np.ndarray
    dA2_dc: np.ndarray
    dA3_dpsi: np.ndarray
    dA3_dc: np.ndarray
    dD_dpsi: np.ndarray
    db_dpsi: np.ndarray


def coefficient_derivatives(psi, c, params: ModelParameters) -> CoefficientDerivatives:
    """Partial derivatives of the couplings, used by the Newton Jacobian."""
    psi = np.asarray(psi, dtype=float)
    c = np.asarray(c, dtype=float)
    _, dg, ddg = params.g(psi)
    _, dp, ddp = params.pbar(psi)
    D, dD = params.diffusivity(psi)
    _, db = params.conductivity(psi)
    l1, dl1 = params.lam1_of(c)
    l2, dl2 = params.lam2_of(c)
    a1v, da1 = params.a1(psi)
    _, dfv = params.f(psi)

    G = np.asarray(params.G)
    dA1_dpsi = (params.beta_c * da1 * c)[..., None] * G + params.zeta * dfv
    dA1_dc = (params.beta_c * a1v)[..., None] * G * np.ones(np.shape(c) + (1,))
    dA2_dpsi = params.M_psi * (l1 / params.delta**2 * ddg + l2 / params.delta * ddp)
    dA2_dc = params.M_psi * (dl1 / params.delta**2 * dg + dl2 / params.delta * dp)
    bracket = dl1 / params.delta * dg - dl2 * dp
    dbracket_dpsi = dl1 / params.delta * ddg - dl2 * ddp
    dA3_dpsi = params.alpha0 * c * (1.0 - c) * (dD * bracket + D * dbracket_dpsi)
    dA3_dc = params.alpha0 * D * (1.0 - 2.0 * c) * bracket  # affine lambdas: lambda'' = 0
    return CoefficientDerivatives(
        dA1_dpsi=dA1_dpsi, dA1_dc=dA1_dc, dA2_dpsi=dA2_dpsi, dA2_dc=dA2_dc,
        dA3_dpsi=dA3_dpsi, dA3_dc=dA3_dc, dD_dpsi=dD, db_dpsi=db,
    )


def lorentz_direction(u, params: ModelParameters):
    """(u x B) x B restricted to the plane: (u . B) B - |B|^2 u."""
    u = np.asarray(u, dtype=float)
    B = np.asarray(params.B)
    ub = np.einsum("...i,i->...", u, B)
    return ub[..., None] * B - np.dot(B, B) * u


def lorentz(u, psi, params: ModelParameters):
    """Magnetic braking term b(psi) ((u x B) x B)."""
    b, _ = params.conductivity(psi)
    return np.asarray(b)[..., None] * lorentz_direction(u, params)
