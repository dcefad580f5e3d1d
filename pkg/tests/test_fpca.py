import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from groupfts.curves import AgeGrid
from groupfts.data import simulate_curves
from groupfts.errors import ConfigError, DataError
from groupfts.fpca import (
    compute_scores,
    decompose,
    eigen_decompose,
    reconstruct,
    select_ncomp,
    select_ncomp_cpv,
    select_ncomp_hk,
)
from groupfts.lrcov import BandwidthWarning, KernelSpec

from conftest import make_fts, random_psd

eig = arrays(float, st.integers(1, 12), elements=st.floats(0, 100, allow_nan=False)).map(
    lambda a: np.sort(a)[::-1]
)


def gram(phi, w):
    return phi.T @ (w[:, None] * phi)


class TestEigenDecompose:
    def test_identity_uniform(self):
        g = AgeGrid(np.arange(6.0))
        lam, phi = eigen_decompose(np.eye(6), np.ones(6))
        np.testing.assert_allclose(lam, 1.0)
        np.testing.assert_allclose(gram(phi, np.ones(6)), np.eye(6), atol=1e-10)
        lam, phi = eigen_decompose(np.eye(6), g)
        np.testing.assert_allclose(gram(phi, g.quadrature_weights), np.eye(6), atol=1e-10)

    def test_rank_one(self, rng):
        g = AgeGrid(np.linspace(0, 3, 7))
        w = g.quadrature_weights
        v = rng.standard_normal(7)
        v /= np.sqrt(np.sum(w * v * v))
        lam, phi = eigen_decompose(np.outer(v, v), g)
        assert lam[0] == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_array_equal(lam[1:], 0.0)
        assert np.allclose(phi[:, 0], v, atol=1e-10) or np.allclose(phi[:, 0], -v, atol=1e-10)

    def test_against_dense_solver(self, rng):
        c = random_psd(rng, 6)
        lam, _ = eigen_decompose(c, np.ones(6))
        np.testing.assert_allclose(lam, np.sort(np.linalg.eigvals(c).real)[::-1], atol=1e-8)

    def test_weighted_operator_eigenpairs(self, rng):
        g = AgeGrid(np.array([0.0, 0.5, 2.0, 2.5, 4.0]))
        c = random_psd(rng, 5)
        lam, phi = eigen_decompose(c, g)
        op = c * g.quadrature_weights[None, :]
        np.testing.assert_allclose(op @ phi, phi * lam, atol=1e-9)

    def test_sign_convention(self, rng):
        g = AgeGrid(np.arange(8.0))
        _, phi = eigen_decompose(random_psd(rng, 8), g)
        assert np.all(g.quadrature_weights @ phi >= -1e-12)

    def test_asymmetric_rejected(self):
        with pytest.raises(DataError):
            eigen_decompose(np.array([[1.0, 0.5], [0.0, 1.0]]), np.ones(2))

    def test_max_components(self, rng):
        lam, phi = eigen_decompose(random_psd(rng, 5), np.ones(5), 2)
        assert lam.shape == (2,) and phi.shape == (5, 2)


class TestScores:
    def test_scaled_eigenfunction(self, rng):
        g = AgeGrid(np.arange(6.0))
        _, phi = eigen_decompose(random_psd(rng, 6), g)
        x = np.tile(3 * phi[:, 0], (4, 1))
        s = compute_scores(x, phi, g)
        np.testing.assert_allclose(s[:, 0], 3.0, atol=1e-10)
        np.testing.assert_allclose(s[:, 1:], 0.0, atol=1e-10)

    def test_zero_data(self, rng):
        g = AgeGrid(np.arange(4.0))
        _, phi = eigen_decompose(random_psd(rng, 4), g)
        np.testing.assert_array_equal(compute_scores(np.zeros((3, 4)), phi, g), 0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            compute_scores(np.zeros((3, 4)), np.zeros((5, 2)), np.ones(4))


class TestSelection:
    def test_cpv_cases(self):
        assert select_ncomp_cpv([9, 0.5, 0.5], 0.85) == 1
        assert select_ncomp_cpv([1.0], 0.3) == 1
        assert select_ncomp_cpv([5, 4, 1], 0.95) == 3
        assert select_ncomp_cpv([0, 0, 0], 0.85) == 1

    def test_hk_cases(self):
        assert select_ncomp_hk([10, 4, 1], 100) == 2
        assert select_ncomp_hk([2.5, 2.5, 2.5], 50) == 3
        assert select_ncomp_hk([100, 1], 16) == 1
        assert select_ncomp_hk([5, 4, 1], 16) == 2
        assert select_ncomp_hk([3, 3, 0], 50) == 2

    def test_combined_cases(self):
        # 9/0.5 = 18 exceeds the ratio bound 5, so both rules give 1
        assert select_ncomp([9, 0.5, 0.5], 100, 0.85) == 1
        assert select_ncomp([1, 0, 0], 100) == 1
        assert select_ncomp([5, 4, 1], 16, 0.95) == 3

    def test_delta_bounds(self):
        for d in (0.0, 1.5, -0.1):
            with pytest.raises(ConfigError):
                select_ncomp_cpv([1.0], d)

    @given(lam=eig, d1=st.floats(0.01, 1.0), d2=st.floats(0.01, 1.0))
    def test_cpv_monotone_in_delta(self, lam, d1, d2):
        lo, hi = sorted((d1, d2))
        assert select_ncomp_cpv(lam, lo) <= select_ncomp_cpv(lam, hi)

    @given(lam=eig, n=st.integers(2, 500), d=st.floats(0.01, 1.0))
    def test_combined_dominates(self, lam, n, d):
        j = select_ncomp(lam, n, d)
        npos = int(np.sum(lam > 0))
        assert j >= 1
        assert j == max(1, min(max(select_ncomp_cpv(lam, d), select_ncomp_hk(lam, n)), npos))
        if npos:
            assert j >= min(select_ncomp_cpv(lam, d), npos) and j >= select_ncomp_hk(lam, n)


class TestDecompose:
    @given(seed=st.integers(0, 10**6), mode=st.sampled_from(["static", "dynamic"]))
    def test_invariants(self, seed, mode):
        rng = np.random.default_rng(seed)
        f = make_fts(rng.standard_normal((15, 7)).cumsum(axis=0), ages=np.array([0, 1, 2, 4, 6, 9, 12.0]))
        d = decompose(f, mode, ncomp=7)
        assert np.all(np.diff(d.eigenvalues) <= 1e-12) and np.all(d.eigenvalues >= 0)
        np.testing.assert_allclose(gram(d.eigenfunctions, f.grid.quadrature_weights), np.eye(7), atol=1e-8)
        np.testing.assert_allclose(d.scores.mean(axis=0), 0.0, atol=1e-8)
        np.testing.assert_allclose(reconstruct(d, d.scores), f.values, atol=1e-8)

    def test_dynamic_small_bandwidth_equals_static(self, rng):
        f = make_fts(rng.standard_normal((20, 6)))
        s = decompose(f, "static")
        d = decompose(f, "dynamic", KernelSpec("bartlett"), 0.5)
        np.testing.assert_allclose(d.eigenvalues, s.eigenvalues, atol=1e-10)
        np.testing.assert_allclose(d.eigenfunctions, s.eigenfunctions, atol=1e-10)

    def test_constant_in_time(self):
        curve = np.array([1.0, 2.0, 4.0, 3.0])
        with pytest.warns(BandwidthWarning):
            d = decompose(make_fts(np.tile(curve, (10, 1))), "dynamic")
        np.testing.assert_array_equal(d.mean, curve)
        assert d.ncomp == 1 and np.all(d.spectrum == 0)

    def test_static_score_variance_matches_eigenvalue(self):
        f, _, _ = simulate_curves(300, 25, 2, phi=0.0, snr=5.0, rng=4)
        d = decompose(f, "static", ncomp=3)
        np.testing.assert_allclose(d.scores.var(axis=0), d.eigenvalues, rtol=0.05)

    def test_dynamic_first_component_dominates(self):
        wins = 0
        for s in range(50):
            f, _, _ = simulate_curves(60, 30, 1, 0.7, 5.0, rng=s)
            wins += decompose(f, "dynamic").explained()[0] >= decompose(f, "static").explained()[0]
        assert wins >= 45

    def test_noiseless_factor_recovery(self):
        f, factors, _ = simulate_curves(40, 20, 2, snr=np.inf, rng=1)
        d = decompose(f, "static", ncomp="cpv", delta=1.0)
        assert d.ncomp == 2
        assert d.explained().sum() == pytest.approx(1.0, abs=1e-10)

    def test_to_dict(self, rng):
        d = decompose(make_fts(rng.standard_normal((8, 3))), "dynamic", bandwidth=2.0)
        out = d.to_dict()
        assert out["mode"] == "dynamic" and out["bandwidth"] == 2.0 and out["kernel"] == "bartlett"
        assert len(out["eigenfunctions"]) == d.ncomp and len(out["eigenfunctions"][0]) == 3

    def test_too_short(self, rng):
        with pytest.raises(DataError):
            decompose(make_fts(rng.standard_normal((3, 3))))

    def test_bad_policy(self, rng):
        with pytest.raises(ConfigError):
            decompose(make_fts(rng.standard_normal((8, 3))), ncomp="most")
        with pytest.raises(ConfigError):
            decompose(make_fts(rng.standard_normal((8, 3))), ncomp=0)


class TestReconstruct:
    def test_zero_scores_give_mean(self, rng):
        d = decompose(make_fts(rng.standard_normal((8, 4))), "static", ncomp=2)
        np.testing.assert_array_equal(reconstruct(d, np.zeros((3, 2))), np.tile(d.mean, (3, 1)))

    def test_unit_score(self, rng):
        d = decompose(make_fts(rng.standard_normal((8, 4))), "static", ncomp=1)
        np.testing.assert_allclose(reconstruct(d, [[1.0]])[0], d.mean + d.eigenfunctions[:, 0])

    def test_too_many_columns(self, rng):
        d = decompose(make_fts(rng.standard_normal((8, 4))), "static", ncomp=1)
        with pytest.raises(DataError):
            reconstruct(d, np.zeros((2, 2)))
