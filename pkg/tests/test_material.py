import numpy as np
import pytest

from phasefrac.material import (
    MaterialParams,
    degradation,
    hybrid_stress,
    isotropic_energy,
    lame_from_E_nu,
    macaulay,
    spectral_split,
    strain_from_displacement,
    tensile_energy,
    update_history,
)

from oracles import char_poly_eigvals_2d, char_poly_eigvals_3d


def random_symmetric(rng, dim, n):
    A = rng.normal(size=(n, dim, dim))
    return 0.5 * (A + np.swapaxes(A, -1, -2))


class TestLame:
    def test_stiff_plate_parameters(self):
        lam, mu = lame_from_E_nu(200.0, 0.2)
        assert lam == pytest.approx(55.5556, abs=1e-4)
        assert mu == pytest.approx(83.3333, abs=1e-4)

    def test_bar_parameters(self):
        lam, mu = lame_from_E_nu(20.8, 0.3)
        assert lam == pytest.approx(12.0)
        assert mu == pytest.approx(8.0)

    def test_zero_poisson(self):
        lam, mu = lame_from_E_nu(10.0, 0.0)
        assert lam == 0.0
        assert mu == pytest.approx(5.0)

    @pytest.mark.parametrize("nu", [-1.0, 0.5, 0.7])
    def test_poisson_range_enforced(self, nu):
        with pytest.raises(ValueError):
            lame_from_E_nu(1.0, nu)


class TestMaterialParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            MaterialParams(Gc=-1.0, l0=0.1, lam=1.0, mu=1.0)
        with pytest.raises(ValueError):
            MaterialParams(Gc=1.0, l0=0.0, lam=1.0, mu=1.0)
        with pytest.raises(ValueError):
            MaterialParams(Gc=1.0, l0=0.1, lam=1.0, mu=-1.0)
        with pytest.raises(ValueError):
            MaterialParams(Gc=1.0, l0=0.1, lam=-5.0, mu=1.0)  # lam + 2mu < 0


class TestDegradation:
    def test_pristine(self):
        g, dg = degradation(0.0, 0.0)
        assert g == 1.0 and dg == -2.0

    def test_fully_broken(self):
        g, dg = degradation(1.0, 1e-10)
        assert g == pytest.approx(1e-10)
        assert dg == 0.0

    def test_half(self):
        g, dg = degradation(0.5, 0.0)
        assert g == pytest.approx(0.25)
        assert dg == pytest.approx(-1.0)


class TestMacaulay:
    @pytest.mark.parametrize(
        "x,plus,minus", [(3.0, 3.0, 0.0), (-2.0, 0.0, -2.0), (0.0, 0.0, 0.0)]
    )
    def test_values(self, x, plus, minus):
        p, m = macaulay(x)
        assert p == plus and m == minus

    def test_sum_identity_on_random_values(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=10000)
        p, m = macaulay(x)
        assert np.array_equal(p + m, x)
        assert np.all(p >= 0) and np.all(m <= 0)


class TestStrain:
    def test_uniaxial(self):
        # u = (x, 0) on the reference triangle
        grads = np.array([[(-1.0, -1.0), (1.0, 0.0), (0.0, 1.0)]])
        disp = np.array([[(0.0, 0.0), (1.0, 0.0), (0.0, 0.0)]])
        eps = strain_from_displacement(disp, grads)
        assert np.allclose(eps[0], [[1.0, 0.0], [0.0, 0.0]])

    def test_rigid_rotation_strain_free(self):
        grads = np.array([[(-1.0, -1.0), (1.0, 0.0), (0.0, 1.0)]])
        pts = np.array([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)])
        disp = np.stack([-pts[:, 1], pts[:, 0]], axis=1)[None]
        eps = strain_from_displacement(disp, grads)
        assert np.allclose(eps, 0.0, atol=1e-15)

    def test_pure_shear(self):
        grads = np.array([[(-1.0, -1.0), (1.0, 0.0), (0.0, 1.0)]])
        pts = np.array([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)])
        disp = np.stack([pts[:, 1], pts[:, 0]], axis=1)[None]
        eps = strain_from_displacement(disp, grads)
        assert np.allclose(eps[0], [[0.0, 1.0], [1.0, 0.0]])


class TestIsotropicEnergy:
    def test_identity_strain(self):
        assert isotropic_energy(np.eye(2), 1.0, 1.0) == pytest.approx(4.0)

    def test_zero(self):
        assert isotropic_energy(np.zeros((3, 3)), 2.0, 3.0) == 0.0

    def test_traceless_shear(self):
        eps = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert isotropic_energy(eps, 5.0, 1.0) == pytest.approx(2.0)


class TestSpectralSplit:
    def test_tension_compression_mix(self):
        eps = np.diag([1.0, -1.0])
        ep, em, tp, tm = spectral_split(eps, 0.0, 1.0)
        assert np.allclose(tp, np.diag([1.0, 0.0]))
        assert np.allclose(tm, np.diag([0.0, -1.0]))
        assert ep == pytest.approx(1.0)
        assert em == pytest.approx(1.0)

    def test_pure_compression_drives_nothing(self):
        ep, em, _, _ = spectral_split(-np.eye(2), 1.0, 1.0)
        assert ep == 0.0
        assert em > 0.0

    @pytest.mark.parametrize("dim", [2, 3])
    def test_split_consistency_random(self, dim):
        rng = np.random.default_rng(dim)
        eps = random_symmetric(rng, dim, 10000)
        ep, em, tp, tm = spectral_split(eps, 1.2, 0.8)
        assert np.max(np.abs(tp + tm - eps)) < 1e-12
        assert np.all(ep >= 0.0)
        assert np.all(em >= 0.0)
        # tensile part vanishes for negative-semidefinite strains
        neg = -np.einsum("nij,nkj->nik", eps, eps)  # -A A^T is semi-negative
        epn, _, _, _ = spectral_split(neg, 1.2, 0.8)
        assert np.max(epn) < 1e-12

    @pytest.mark.parametrize("dim", [2, 3])
    def test_energy_partition_is_exact(self, dim):
        # <t>+^2 + <t>-^2 = t^2 and the projectors are orthogonal, so the
        # two split energies always add up to the undecomposed density
        rng = np.random.default_rng(20 + dim)
        eps = random_symmetric(rng, dim, 500)
        ep, em, _, _ = spectral_split(eps, 2.0, 0.7)
        total = isotropic_energy(eps, 2.0, 0.7)
        assert np.allclose(ep + em, total, rtol=1e-10, atol=1e-12)

    def test_eigenvalues_match_characteristic_polynomial_oracle(self):
        rng = np.random.default_rng(77)
        for dim, oracle in ((2, char_poly_eigvals_2d), (3, char_poly_eigvals_3d)):
            for _ in range(50):
                eps = random_symmetric(rng, dim, 1)[0]
                ep, em, tp, tm = spectral_split(eps, 0.0, 1.0)
                w = oracle(eps)
                wp = np.where(w > 0, w, 0.0)
                wm = np.where(w < 0, w, 0.0)
                assert ep == pytest.approx(np.sum(wp**2), abs=1e-9)
                assert em == pytest.approx(np.sum(wm**2), abs=1e-9)

    def test_repeated_eigenvalues(self):
        ep, em, tp, tm = spectral_split(2.0 * np.eye(2), 1.0, 1.0)
        assert np.allclose(tp, 2.0 * np.eye(2))
        assert np.allclose(tm, 0.0)
        ep3, em3, tp3, tm3 = spectral_split(-0.5 * np.eye(3), 1.0, 1.0)
        assert np.allclose(tm3, -0.5 * np.eye(3))
        assert ep3 == 0.0

    def test_tensile_energy_matches_full_split(self):
        rng = np.random.default_rng(5)
        for dim in (2, 3):
            eps = random_symmetric(rng, dim, 200)
            ep, _, _, _ = spectral_split(eps, 1.5, 0.9)
            assert np.allclose(tensile_energy(eps, 1.5, 0.9), ep, rtol=1e-12)


class TestHistory:
    def test_running_maximum(self):
        assert update_history(np.array([2.0]), np.array([1.0])) == pytest.approx([2.0])
        assert update_history(np.array([2.0]), np.array([3.0])) == pytest.approx([3.0])
        assert np.allclose(
            update_history(np.array([0.0, 5.0]), np.array([1.0, 4.0])), [1.0, 5.0]
        )

    def test_monotone_under_sequences(self):
        rng = np.random.default_rng(4)
        H = np.zeros(50)
        for _ in range(20):
            prev = H.copy()
            H = update_history(H, rng.uniform(-1, 2, size=50))
            assert np.all(H >= prev)


class TestHybridStress:
    PAR = MaterialParams(Gc=1.0, l0=0.1, lam=1.0, mu=1.0, eps_residual=0.0)

    def test_pristine_uniaxial(self):
        sigma, _ = hybrid_stress(np.diag([1.0, 0.0]), 0.0, self.PAR)
        assert np.allclose(sigma, np.diag([3.0, 1.0]))

    def test_fully_broken(self):
        sigma, _ = hybrid_stress(np.diag([1.0, 0.5]), 1.0, self.PAR)
        assert np.allclose(sigma, 0.0)

    def test_multiplicative_degradation(self):
        rng = np.random.default_rng(9)
        eps = random_symmetric(rng, 2, 1)[0]
        s0, _ = hybrid_stress(eps, 0.0, self.PAR)
        s_half, _ = hybrid_stress(eps, 0.5, self.PAR)
        assert np.allclose(s_half, 0.25 * s0, rtol=1e-14)

    def test_energy_identity_traceless(self):
        par = MaterialParams(Gc=1.0, l0=0.1, lam=1e-30, mu=1.0, eps_residual=0.0)
        eps = np.array([[0.3, 0.7], [0.7, -0.3]])
        sigma, _ = hybrid_stress(eps, 0.0, par)
        assert np.tensordot(sigma, eps) == pytest.approx(
            2.0 * isotropic_energy(eps, 0.0, 1.0), rel=1e-12
        )

    @pytest.mark.parametrize("dim", [2, 3])
    def test_tangent_matches_finite_differences(self, dim):
        # central differences of sigma along random symmetric directions at
        # fixed d must reproduce the isotropic tangent built from the
        # effective moduli pair
        rng = np.random.default_rng(30 + dim)
        par = MaterialParams(Gc=1.0, l0=0.1, lam=2.3, mu=1.7, eps_residual=1e-10)
        h = 1e-6
        for _ in range(20):
            eps = random_symmetric(rng, dim, 1)[0]
            direction = random_symmetric(rng, dim, 1)[0]
            d = rng.uniform(0, 1)
            _, (lam_eff, mu_eff) = hybrid_stress(eps, d, par)
            sp, _ = hybrid_stress(eps + h * direction, d, par)
            sm, _ = hybrid_stress(eps - h * direction, d, par)
            fd = (sp - sm) / (2.0 * h)
            expected = lam_eff * np.trace(direction) * np.eye(dim) + 2.0 * mu_eff * direction
            scale = max(1.0, float(np.abs(expected).max()))
            assert np.max(np.abs(fd - expected)) / scale < 1e-5
