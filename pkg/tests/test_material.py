import numpy as np
import pytest

from poromp.errors import NonInvertibleF, PorosityViolation
from poromp.material import (
    ElasticNoYield,
    MaterialParams,
    MaterialPoints,
    darcy_flux,
    hencky_energy,
    hencky_stress,
    kozeny_carman,
    log_strain,
    mixture_density,
    porosity,
    strain_invariants,
)


def params(K=5e5, G=6e5, n0=0.5, c1=2e-7):
    return MaterialParams(K=K, G=G, n0=n0, c1=c1)


class TestPorosity:
    def test_reference_configuration(self):
        assert porosity(1.0, 0.5) == pytest.approx(0.5)

    def test_doubled_volume(self):
        assert porosity(2.0, 0.5) == pytest.approx(0.75)

    def test_closure_raises(self):
        with pytest.raises(PorosityViolation):
            porosity(0.5, 0.5)

    def test_stays_in_open_interval(self):
        rng = np.random.default_rng(0)
        J = rng.uniform(0.51, 5.0, size=200)
        n = porosity(J, 0.5)
        assert np.all((n > 0.0) & (n < 1.0))


class TestConductivity:
    def test_vanishing_pores(self):
        assert kozeny_carman(1e-6, 1.0) < 1e-17

    def test_half_porosity(self):
        assert kozeny_carman(0.5, 1.0) == pytest.approx(0.5)

    def test_monotone(self):
        assert kozeny_carman(0.6, 1.0) > kozeny_carman(0.5, 1.0)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            kozeny_carman(1.0, 1.0)


class TestLogStrain:
    def test_identity(self):
        assert np.allclose(log_strain(np.eye(2)), 0.0)

    def test_principal_stretch(self):
        lam = 1.7
        eps = log_strain(np.diag([lam, 1.0]))
        assert np.allclose(eps, np.diag([np.log(lam), 0.0]))

    def test_round_trip_reconstructs_left_cauchy_green(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            F = np.eye(2) + 0.4 * rng.standard_normal((2, 2))
            if np.linalg.det(F) <= 0.05:
                continue
            eps = log_strain(F)
            w, v = np.linalg.eigh(eps)
            b_back = v @ np.diag(np.exp(2 * w)) @ v.T
            assert np.allclose(b_back, F @ F.T, atol=1e-10)

    def test_non_invertible_raises(self):
        with pytest.raises(NonInvertibleF):
            log_strain(np.diag([1.0, -0.2]))


class TestInvariants:
    def test_pure_volumetric(self):
        c = 0.9
        eps_v, eps_q, _ = strain_invariants((c / 3.0) * np.eye(3))
        assert eps_v == pytest.approx(c)
        assert eps_q == pytest.approx(0.0, abs=1e-15)

    def test_plane_deviator(self):
        a = 0.3
        eps_v, eps_q, dev = strain_invariants(np.diag([a, -a, 0.0]))
        assert eps_v == pytest.approx(0.0, abs=1e-15)
        assert eps_q == pytest.approx(2.0 * a / np.sqrt(3.0))
        assert np.allclose(dev, np.diag([a, -a, 0.0]))

    def test_zero(self):
        eps_v, eps_q, dev = strain_invariants(np.zeros((2, 2)))
        assert eps_v == 0.0 and eps_q == 0.0 and np.allclose(dev, 0.0)


def fd_stress(eps2d, prm, step=1e-7):
    """Central finite differences of the stored energy.

    A symmetric perturbation with both off-diagonal slots at step/2 measures
    the symmetrized stress entry directly.
    """
    tau = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            d = np.zeros((2, 2))
            d[i, j] += 0.5 * step
            d[j, i] += 0.5 * step
            ep = hencky_energy(eps2d + d, prm)
            em = hencky_energy(eps2d - d, prm)
            tau[i, j] = (ep - em) / (2 * step)
    return tau


def fd_tangent(eps2d, prm, step=1e-6):
    tan = np.zeros((2, 2, 2, 2))
    for k in range(2):
        for l in range(2):
            d = np.zeros((2, 2))
            d[k, l] += 0.5 * step
            d[l, k] += 0.5 * step
            tp, _ = hencky_stress(eps2d + d, prm)
            tm, _ = hencky_stress(eps2d - d, prm)
            tan[:, :, k, l] = (tp - tm) / (2 * step)
    return tan


class TestStress:
    def test_unstressed_reference(self):
        tau, _ = hencky_stress(np.zeros((2, 2)), params())
        assert np.allclose(tau, 0.0)

    def test_pure_shear_is_two_g_times_deviator(self):
        prm = params()
        e = np.array([[0.0, 0.01], [0.01, 0.0]])
        tau, _ = hencky_stress(e, prm)
        assert np.allclose(tau, 2 * prm.G * e, rtol=1e-12)

    def test_initial_tangent_bulk_modulus(self):
        # in-plane isotropic strain (s/2) I has eps_v = s and deviator (s/6) I,
        # so d(trace tau)/ds at zero must be 2 K/n0 + 2 G/3
        prm = params()
        step = 1e-8
        tp, _ = hencky_stress(np.eye(2) * step / 2, prm)
        tm, _ = hencky_stress(-np.eye(2) * step / 2, prm)
        dtrace = (np.trace(tp) - np.trace(tm)) / (2 * step)
        assert dtrace == pytest.approx(2 * prm.K / prm.n0 + 2 * prm.G / 3.0, rel=1e-6)

    def test_stress_matches_energy_derivative(self):
        prm = params()
        rng = np.random.default_rng(4)
        for _ in range(30):
            s = 0.05 * rng.standard_normal((2, 2))
            eps = 0.5 * (s + s.T)
            tau, _ = hencky_stress(eps, prm)
            assert np.allclose(tau, fd_stress(eps, prm), rtol=1e-5, atol=1e-5 * prm.G)

    def test_tangent_matches_stress_derivative_and_is_symmetric(self):
        prm = params()
        rng = np.random.default_rng(8)
        for _ in range(100):
            s = 0.05 * rng.standard_normal((2, 2))
            eps = 0.5 * (s + s.T)
            _, tan = hencky_stress(eps, prm)
            assert np.allclose(tan, np.einsum("ijkl->klij", tan), atol=1e-6 * prm.G)
            fd = fd_tangent(eps, prm)
            assert np.allclose(tan, fd, rtol=2e-5, atol=2e-5 * prm.G)

    def test_porosity_guard(self):
        prm = params()
        with pytest.raises(PorosityViolation):
            hencky_stress(np.diag([-0.5, -0.5]), prm)  # eps_v = -1, J < 1 - n0


class TestFluxAndDensity:
    def test_no_driving_force(self):
        assert np.allclose(darcy_flux((0, 0), 1.0, 1000.0, (0, 0), 9.81), 0.0)

    def test_hydrostatic_equilibrium(self):
        b = np.array([0.0, -9.81])
        grad_p = 1000.0 * b
        assert np.allclose(darcy_flux(grad_p, 2.0, 1000.0, b, 9.81), 0.0)

    def test_unit_gradient(self):
        q = darcy_flux((1.0, 0.0), 9.81, 1000.0, (0, 0), 9.81)
        assert np.allclose(q, (-1.0, 0.0))

    @pytest.mark.parametrize("n,expected", [(1e-9, 2000.0), (1 - 1e-9, 1000.0), (0.5, 1500.0)])
    def test_mixture_density(self, n, expected):
        prm = params()
        assert mixture_density(n, prm) == pytest.approx(expected, rel=1e-6)


class TestTerzaghiSplit:
    def test_total_stress_recomposition(self):
        prm = params()
        rng = np.random.default_rng(12)
        s = 0.03 * rng.standard_normal((2, 2))
        eps = 0.5 * (s + s.T)
        tau, _ = hencky_stress(eps, prm)
        J = np.exp(np.trace(eps))
        sigma_eff = tau / J
        p = 12345.0
        total = sigma_eff - p * np.eye(2)
        assert np.allclose(total + p * np.eye(2), sigma_eff)


class TestCloud:
    def test_seed_state(self):
        cloud = MaterialPoints.from_positions([(0.5, 0.5), (1.5, 0.5)], 0.25, (0.1, 0.1))
        assert cloud.n == 2
        assert np.allclose(cloud.J, 1.0)
        assert np.allclose(cloud.volume, cloud.volume0)
        assert np.allclose(cloud.F, np.eye(2))

    def test_elastic_model_returns_trial(self):
        model = ElasticNoYield()
        eps = np.zeros((3, 2, 2))
        out, internal = model.correct(eps, None)
        assert out is eps and internal is None

    def test_tangent_modulus_constructor(self):
        prm = MaterialParams.from_tangent_modulus(1e6, 6e5, 0.5, 1e-7)
        assert prm.K == pytest.approx(5e5)
        assert prm.kappa0 == pytest.approx(1e-7)
