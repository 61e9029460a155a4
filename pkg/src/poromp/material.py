"""Finite-strain kinematics, porosity evolution and the constitutive model.

Plane strain throughout: the in-plane deformation gradient is 2x2 with unit
out-of-plane stretch, so the volumetric log strain equals ln(det F) and the
deviator keeps a nonzero 33 component that the invariants account for.

The stored energy is ``K/(2 n(ev)) ev^2 + (3/2) G eq^2`` with the porosity
``n(ev) = 1 - (1 - n0) exp(-ev)`` folded into the volumetric term, which keeps
the pore space open (n > 0) for any admissible state and gives an initial
tangent bulk stiffness of K/n0.  Stress and tangent below are its exact first
and second derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonInvertibleF, PorosityViolation

I2 = np.eye(2)


@dataclass(frozen=True)
class MaterialParams:
    """Hydro-mechanical parameters of the two-phase medium."""

    K: float              # bulk parameter, Pa
    G: float              # shear modulus, Pa
    n0: float             # initial porosity
    c1: float             # Kozeny-Carman constant, m/s
    rho_s0: float = 2000.0  # solid phase density, kg/m^3
    rho_f0: float = 1000.0  # fluid phase density, kg/m^3
    g: float = 9.81         # gravity magnitude, m/s^2
    body_force: tuple[float, float] = (0.0, 0.0)  # per unit mass

    def __post_init__(self):
        if self.K <= 0 or self.G <= 0:
            raise ValueError("K and G must be positive")
        if not (0.0 < self.n0 < 1.0):
            raise ValueError("n0 must lie in (0, 1)")
        if self.c1 < 0:
            raise ValueError("c1 must be non-negative")
        if self.g <= 0:
            raise ValueError("g must be positive")

    @property
    def kappa0(self) -> float:
        """Hydraulic conductivity at the initial porosity."""
        return kozeny_carman(self.n0, self.c1)

    @classmethod
    def from_conductivity(cls, K: float, G: float, n0: float, kappa0: float,
                          **kwargs) -> "MaterialParams":
        """Build params from the conductivity at n0 instead of the constant."""
        c1 = kappa0 * (1.0 - n0) ** 2 / n0 ** 3
        return cls(K=K, G=G, n0=n0, c1=c1, **kwargs)

    @classmethod
    def from_tangent_modulus(cls, K_over_n0: float, G: float, n0: float,
                             kappa0: float, **kwargs) -> "MaterialParams":
        """Build params when the initial tangent modulus K/n0 is prescribed."""
        return cls.from_conductivity(K=K_over_n0 * n0, G=G, n0=n0,
                                     kappa0=kappa0, **kwargs)


def porosity(J, n0: float):
    """Current fluid volume fraction ``1 - (1 - n0)/J``; must stay in (0, 1)."""
    J = np.asarray(J, dtype=float)
    if np.any(J <= (1.0 - n0)):
        raise PorosityViolation(
            f"J <= 1 - n0 = {1.0 - n0:.6g} (min J = {float(np.min(J)):.6g})"
        )
    return 1.0 - (1.0 - n0) / J


def kozeny_carman(n, c1: float):
    """Hydraulic conductivity ``c1 n^3 / (1 - n)^2`` (m/s)."""
    n = np.asarray(n, dtype=float)
    if np.any(n <= 0.0) or np.any(n >= 1.0):
        raise ValueError("porosity outside (0, 1)")
    return c1 * n ** 3 / (1.0 - n) ** 2


def kozeny_carman_derivative(n, c1: float):
    """d(kappa)/dn, used in the consistent coupling block."""
    n = np.asarray(n, dtype=float)
    return c1 * n ** 2 * (3.0 - n) / (1.0 - n) ** 3


def eig2_sym(b: np.ndarray):
    """Eigen-decomposition of symmetric 2x2 batches.

    Returns (lam1, lam2, E1, E2) with lam1 >= lam2 and spectral projectors
    E1 + E2 = I.  Near-degenerate pairs fall back to the identity split.
    """
    a = b[..., 0, 0]
    d = b[..., 1, 1]
    c = b[..., 0, 1]
    mean = 0.5 * (a + d)
    delta = np.sqrt(np.maximum(0.25 * (a - d) ** 2 + c ** 2, 0.0))
    lam1 = mean + delta
    lam2 = mean - delta

    # eigenvector for lam1: pick the numerically larger residual column
    v1 = np.stack([c, lam1 - a], axis=-1)
    v2 = np.stack([lam1 - d, c], axis=-1)
    use2 = np.sum(v1 * v1, axis=-1) < np.sum(v2 * v2, axis=-1)
    v = np.where(use2[..., None], v2, v1)
    norm = np.sqrt(np.sum(v * v, axis=-1))
    degen = norm < 1e-14 * np.maximum(np.abs(lam1), 1.0)
    safe = np.where(degen, 1.0, norm)
    v = v / safe[..., None]
    v = np.where(degen[..., None], np.array([1.0, 0.0]), v)
    E1 = v[..., :, None] * v[..., None, :]
    E1 = np.where(degen[..., None, None], 0.5 * I2, E1)
    E2 = I2 - E1
    return lam1, lam2, E1, E2


def log_strain(F: np.ndarray) -> np.ndarray:
    """In-plane logarithmic strain ``(1/2) ln(F F^T)`` via eigendecomposition."""
    F = np.asarray(F, dtype=float)
    det = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    if np.any(det <= 0.0):
        raise NonInvertibleF(f"det F must be positive (min {float(np.min(det)):.3g})")
    b = F @ np.swapaxes(F, -1, -2)
    lam1, lam2, E1, E2 = eig2_sym(b)
    f1 = 0.5 * np.log(lam1)
    f2 = 0.5 * np.log(lam2)
    return f1[..., None, None] * E1 + f2[..., None, None] * E2


def strain_invariants(eps: np.ndarray):
    """Volumetric strain, deviatoric magnitude and the deviator.

    Accepts 2x2 (implied zero out-of-plane component) or 3x3 tensors; the
    deviator is returned as 3x3 because its out-of-plane entry is generally
    nonzero in plane strain.
    """
    eps = np.asarray(eps, dtype=float)
    if eps.shape[-1] == 2:
        full = np.zeros(eps.shape[:-2] + (3, 3))
        full[..., :2, :2] = eps
        eps = full
    eps_v = np.trace(eps, axis1=-2, axis2=-1)
    dev = eps - (eps_v / 3.0)[..., None, None] * np.eye(3)
    eps_q = np.sqrt(2.0 / 3.0 * np.sum(dev * dev, axis=(-2, -1)))
    return eps_v, eps_q, dev


def _porosity_of_strain(eps_v, n0: float):
    n = 1.0 - (1.0 - n0) * np.exp(-np.asarray(eps_v, dtype=float))
    if np.any(n <= 0.0) or np.any(n >= 1.0):
        raise PorosityViolation("volumetric strain drives porosity out of (0, 1)")
    return n


def hencky_energy(eps2d: np.ndarray, params: MaterialParams):
    """Stored energy density for the porosity-sensitive Hencky model."""
    eps_v, eps_q, _ = strain_invariants(eps2d)
    n = _porosity_of_strain(eps_v, params.n0)
    return params.K / (2.0 * n) * eps_v ** 2 + 1.5 * params.G * eps_q ** 2


def _volumetric_stress_terms(eps_v, params: MaterialParams):
    """First and second derivative of the volumetric energy wrt eps_v."""
    K = params.K
    n = _porosity_of_strain(eps_v, params.n0)
    one_m_n = 1.0 - n  # equals dn/deps_v
    tau_v = K * eps_v / n - 0.5 * K * eps_v ** 2 * one_m_n / n ** 2
    d_tau_v = (
        K / n
        - 2.0 * K * eps_v * one_m_n / n ** 2
        + 0.5 * K * eps_v ** 2 * one_m_n / n ** 2
        + K * eps_v ** 2 * one_m_n ** 2 / n ** 3
    )
    return n, tau_v, d_tau_v


def hencky_stress(eps2d: np.ndarray, params: MaterialParams):
    """Effective Kirchhoff stress and consistent tangent (in-plane blocks).

    The deviatoric response is ``2 G e`` for any volumetric state; the
    volumetric response is the exact derivative of the porosity-weighted
    volumetric energy, so the tangent at zero strain is K/n0 + deviatoric
    projector terms.
    """
    eps2d = np.asarray(eps2d, dtype=float)
    eps_v = np.trace(eps2d, axis1=-2, axis2=-1)  # out-of-plane strain is zero
    _, tau_v, d_tau_v = _volumetric_stress_terms(eps_v, params)
    dev2d = eps2d - (eps_v / 3.0)[..., None, None] * I2
    tau = tau_v[..., None, None] * I2 + 2.0 * params.G * dev2d

    delta = I2
    dd = delta[:, :, None, None] * delta[None, None, :, :]
    sym = 0.5 * (
        np.einsum("ik,jl->ijkl", delta, delta)
        + np.einsum("il,jk->ijkl", delta, delta)
    )
    dev_proj = sym - dd / 3.0
    tangent = (
        d_tau_v[..., None, None, None, None] * dd
        + 2.0 * params.G * dev_proj
    )
    return tau, tangent


def darcy_flux(grad_p, kappa, rho_f: float, body_force, g: float):
    """Relative mass flux ``-(kappa/g) (grad p - rho_f b)``."""
    grad_p = np.asarray(grad_p, dtype=float)
    body_force = np.asarray(body_force, dtype=float)
    coef = np.asarray(kappa, dtype=float) / g
    if coef.ndim:
        coef = coef[..., None]
    return -coef * (grad_p - rho_f * body_force)


def mixture_density(n, params: MaterialParams):
    """Current density ``rho_s0 (1 - n) + rho_f0 n`` of the saturated medium."""
    n = np.asarray(n, dtype=float)
    return params.rho_s0 * (1.0 - n) + params.rho_f0 * n


class ElasticNoYield:
    """Default constitutive correction: no yield surface, trial state accepted.

    A plastic model would return a corrected elastic strain and updated
    internal variables from the trial pair.
    """

    def correct(self, eps_trial: np.ndarray, internal):
        return eps_trial, internal


@dataclass
class MaterialPoints:
    """Struct-of-arrays particle cloud; one row per material point.

    ``volume`` tracks the current mixed volume (J times the initial volume);
    ``lp`` holds the current per-axis domain half-lengths (kept for the hat
    basis too, where it only describes the particle's physical box for surface
    integration).  ``b_e`` is the elastic left Cauchy-Green tensor so that a
    return mapping can modify it independently of the total F.
    """

    position: np.ndarray       # (N, 2)
    volume0: np.ndarray        # (N,)
    volume: np.ndarray         # (N,)
    lp0: np.ndarray            # (N, 2)
    lp: np.ndarray             # (N, 2)
    F: np.ndarray              # (N, 2, 2)
    J: np.ndarray              # (N,)
    b_e: np.ndarray            # (N, 2, 2)
    displacement: np.ndarray   # (N, 2)
    pressure: np.ndarray       # (N,)
    effective_stress: np.ndarray  # (N, 2, 2) Cauchy
    eps_v_plastic: np.ndarray  # (N,) zero for the elastic default
    internal_vars: object = None

    @property
    def n(self) -> int:
        return self.position.shape[0]

    @classmethod
    def from_positions(cls, positions, volumes, lps) -> "MaterialPoints":
        positions = np.atleast_2d(np.asarray(positions, dtype=float)).copy()
        n = positions.shape[0]
        volumes = np.broadcast_to(np.asarray(volumes, dtype=float), (n,)).copy()
        lps = np.broadcast_to(np.asarray(lps, dtype=float), (n, 2)).copy()
        eye = np.broadcast_to(I2, (n, 2, 2)).copy()
        return cls(
            position=positions,
            volume0=volumes,
            volume=volumes.copy(),
            lp0=lps,
            lp=lps.copy(),
            F=eye,
            J=np.ones(n),
            b_e=eye.copy(),
            displacement=np.zeros((n, 2)),
            pressure=np.zeros(n),
            effective_stress=np.zeros((n, 2, 2)),
            eps_v_plastic=np.zeros(n),
        )

    def copy(self) -> "MaterialPoints":
        return MaterialPoints(
            position=self.position.copy(),
            volume0=self.volume0.copy(),
            volume=self.volume.copy(),
            lp0=self.lp0.copy(),
            lp=self.lp.copy(),
            F=self.F.copy(),
            J=self.J.copy(),
            b_e=self.b_e.copy(),
            displacement=self.displacement.copy(),
            pressure=self.pressure.copy(),
            effective_stress=self.effective_stress.copy(),
            eps_v_plastic=self.eps_v_plastic.copy(),
            internal_vars=self.internal_vars,
        )
