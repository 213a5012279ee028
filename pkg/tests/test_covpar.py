import numpy as np
import pytest
from scipy import sparse

from glmkrig.basis import auto_basis, temporal_basis, tensor_basis
from glmkrig.covpar import (
    CoefPrior,
    CovparError,
    ar1_precision,
    build_K,
    build_prior_matrix,
    build_Q_dist,
    build_Q_leroux,
    build_Q_spacetime,
    spherical_taper,
)
from glmkrig.linalg import NotPositiveDefiniteError, SPDFactor


def line_basis(n, spacing=1.0):
    """n collinear functions at the given spacing (single resolution)."""
    from glmkrig.basis import BasisSet, ResolutionInfo

    c = np.column_stack([np.arange(n) * spacing, np.zeros(n)])
    return BasisSet(
        centroids=c,
        apertures=np.full(n, 1.5 * spacing),
        resolutions=np.ones(n, dtype=int),
        res_info=(ResolutionInfo(index=1, n_side_x=n, n_side_y=1,
                                 aperture=1.5 * spacing, mindist=spacing,
                                 offset=0),),
        regular=True,
    )


class TestTaper:
    def test_zero_distance(self):
        assert spherical_taper(0.0, 2.0) == pytest.approx(1.0)

    def test_compact_support(self):
        assert spherical_taper(2.0, 2.0) == 0.0
        assert spherical_taper(5.0, 2.0) == 0.0

    def test_half_beta_value(self):
        assert spherical_taper(1.0, 2.0) == pytest.approx(0.25 * 1.25)

    def test_beta_must_be_positive(self):
        with pytest.raises(CovparError):
            spherical_taper(1.0, 0.0)


class TestBuildK:
    def test_diagonal_is_sigma2(self):
        basis = auto_basis((0, 0, 1, 1), 2)
        prior = CoefPrior(variant="K_tapered", sigma2=np.array([2.0, 0.5]),
                          tau=np.array([0.3, 0.1]))
        K = build_K(basis, prior).toarray()
        expect = np.repeat([2.0, 0.5], [9, 36])
        assert np.allclose(np.diag(K), expect)

    def test_exact_zeros_beyond_taper(self):
        basis = auto_basis((0, 0, 1, 1), 1)
        prior = CoefPrior(variant="K_tapered", sigma2=np.array([1.0]),
                          tau=np.array([10.0]), taper_multiplier=1.0)
        K = build_K(basis, prior).toarray()
        c = basis.centroids
        d = np.sqrt(((c[:, None] - c[None]) ** 2).sum(-1))
        assert np.all(K[d >= basis.res_info[0].mindist] == 0.0)

    def test_line_entry_hand_value(self):
        # 3 centroids at spacing 1, sigma2=2, tau=1, beta=2.5
        basis = line_basis(3)
        prior = CoefPrior(variant="K_tapered", sigma2=np.array([2.0]),
                          tau=np.array([1.0]), taper_multiplier=2.5)
        K = build_K(basis, prior).toarray()
        taper = (1 - 1 / 2.5) ** 2 * (1 + 1 / 5.0)
        assert K[0, 1] == pytest.approx(2.0 * np.exp(-1.0) * taper)
        assert K[0, 1] == pytest.approx(0.3179, abs=2e-4)

    def test_untapered_limit(self):
        basis = auto_basis((0, 0, 1, 1), 1)
        prior = CoefPrior(variant="K_tapered", sigma2=np.array([1.3]),
                          tau=np.array([0.4]), taper_multiplier=1e6)
        K = build_K(basis, prior).toarray()
        c = basis.centroids
        d = np.sqrt(((c[:, None] - c[None]) ** 2).sum(-1))
        assert np.allclose(K, 1.3 * np.exp(-d / 0.4), rtol=1e-5)

    def test_nonpositive_parameters_rejected(self):
        basis = auto_basis((0, 0, 1, 1), 1)
        with pytest.raises(CovparError):
            build_K(basis, CoefPrior(variant="K_tapered",
                                     sigma2=np.array([-1.0]),
                                     tau=np.array([1.0])))


class TestLeroux:
    def test_two_by_two_lattice(self):
        from glmkrig.basis import BasisSet, ResolutionInfo

        c = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        basis = BasisSet(
            centroids=c, apertures=np.full(4, 1.5),
            resolutions=np.ones(4, dtype=int),
            res_info=(ResolutionInfo(1, 2, 2, 1.5, 1.0, 0),), regular=True,
        )
        prior = CoefPrior(variant="Q_leroux", kappa=np.array([1.0]),
                          rho=np.array([0.5]))
        Q = build_Q_leroux(basis, prior).toarray()
        assert np.allclose(np.diag(Q), 2.0)  # every node has two neighbours
        off = Q[~np.eye(4, dtype=bool)]
        assert sorted(np.unique(off)) == [-0.5, 0.0]
        assert (off == -0.5).sum() == 8  # four undirected edges

    def test_rho_zero_gives_kappa_identity(self):
        basis = auto_basis((0, 0, 1, 1), 2)
        prior = CoefPrior(variant="Q_leroux", kappa=np.array([3.0, 0.5]),
                          rho=np.array([0.0, 0.0]))
        Q = build_Q_leroux(basis, prior).toarray()
        assert np.allclose(Q, np.diag(np.repeat([3.0, 0.5], [9, 36])))

    def test_irregular_basis_directed_to_dist(self):
        from glmkrig.basis import basis_from_rows

        rows = [(0.0, 0.0, 1.5, 1), (1.0, 0.3, 1.5, 1), (2.2, 0.0, 1.5, 1)]
        basis = basis_from_rows(rows)  # marked irregular
        prior = CoefPrior(variant="Q_leroux", kappa=np.array([1.0]),
                          rho=np.array([0.1]))
        with pytest.raises(CovparError, match="Q_dist"):
            build_Q_leroux(basis, prior)

    def test_positive_definite_for_random_draws(self):
        rng = np.random.default_rng(0)
        basis = auto_basis((0, 0, 1, 1), 1)
        for _ in range(200):
            prior = CoefPrior(variant="Q_leroux",
                              kappa=np.array([rng.uniform(1e-3, 10)]),
                              rho=np.array([rng.uniform(0, 10)]))
            SPDFactor(build_Q_leroux(basis, prior).tocsc())  # raises if not PD


class TestQDist:
    def test_single_function(self):
        basis = line_basis(1)
        prior = CoefPrior(variant="Q_dist", kappa=np.array([2.5]),
                          rho=np.array([0.4]), tau=np.array([1.0]))
        Q = build_Q_dist(basis, prior).toarray()
        assert np.allclose(Q, [[2.5]])

    def test_row_sums_equal_kappa(self):
        basis = auto_basis((0, 0, 1, 1), 2)
        prior = CoefPrior(variant="Q_dist", kappa=np.array([1.5, 0.3]),
                          rho=np.array([0.7, 0.2]), tau=np.array([0.5, 0.1]))
        Q = build_Q_dist(basis, prior)
        sums = np.asarray(Q.sum(axis=1)).ravel()
        assert np.allclose(sums, np.repeat([1.5, 0.3], [9, 36]), atol=1e-12)

    def test_line_offdiagonal_hand_value(self):
        basis = line_basis(3)
        prior = CoefPrior(variant="Q_dist", kappa=np.array([1.0]),
                          rho=np.array([0.4]), tau=np.array([1.0]),
                          taper_multiplier=2.5)
        Q = build_Q_dist(basis, prior).toarray()
        taper = (1 - 1 / 2.5) ** 2 * (1 + 1 / 5.0)
        assert Q[0, 1] == pytest.approx(-0.4 * np.exp(-1) * taper)
        assert Q[0, 1] == pytest.approx(-0.0636, abs=2e-4)
        # diagonal against a dense brute-force row-sum oracle
        dense_off = Q.copy()
        np.fill_diagonal(dense_off, 0.0)
        assert np.allclose(np.diag(Q), 1.0 - dense_off.sum(axis=1))

    def test_positive_definite_for_random_draws(self):
        rng = np.random.default_rng(1)
        basis = auto_basis((0, 0, 1, 1), 1)
        for _ in range(200):
            prior = CoefPrior(variant="Q_dist",
                              kappa=np.array([rng.uniform(1e-3, 5)]),
                              rho=np.array([rng.uniform(0, 5)]),
                              tau=np.array([rng.uniform(0.05, 2)]))
            SPDFactor(build_Q_dist(basis, prior).tocsc())


class TestSpaceTime:
    def test_scalar_temporal_factor(self):
        Q_s = build_Q_leroux(auto_basis((0, 0, 1, 1), 1),
                             CoefPrior(variant="Q_leroux",
                                       kappa=np.array([1.0]),
                                       rho=np.array([0.3])))
        Q = build_Q_spacetime(ar1_precision(1, 0.5), Q_s)
        assert np.allclose(Q.toarray(), Q_s.toarray())

    def test_matches_dense_kronecker(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            a = rng.standard_normal((rng.integers(2, 8), 3))
            A = a @ a.T + 3 * np.eye(a.shape[0])
            b = rng.standard_normal((rng.integers(2, 8), 3))
            B = b @ b.T + 2 * np.eye(b.shape[0])
            Q = build_Q_spacetime(sparse.csr_matrix(A), sparse.csr_matrix(B))
            assert np.allclose(Q.toarray(), np.kron(A, B), atol=1e-14)

    def test_rho_zero_gives_block_diagonal(self):
        Q_t = ar1_precision(3, 0.0)
        assert np.allclose(Q_t.toarray(), np.eye(3))

    def test_ar1_unit_marginal_variance(self):
        for rho in (0.0, 0.4, -0.7, 0.95):
            Q = ar1_precision(6, rho).toarray()
            marg = np.diag(np.linalg.inv(Q))
            assert np.allclose(marg, 1.0, atol=1e-12)

    def test_ar1_domain(self):
        with pytest.raises(CovparError):
            ar1_precision(4, 1.0)

    def test_tensor_prior_requires_precision(self):
        sb = auto_basis((0, 0, 1, 1), 1)
        basis = tensor_basis(sb, temporal_basis(5, 3))
        prior = CoefPrior(variant="K_tapered", sigma2=np.array([1.0]),
                          tau=np.array([0.3]))
        with pytest.raises(CovparError):
            build_prior_matrix(basis, prior)

    def test_tensor_prior_kronecker_ordering(self):
        sb = auto_basis((0, 0, 1, 1), 1)
        basis = tensor_basis(sb, temporal_basis(5, 3))
        prior = CoefPrior(variant="Q_leroux", kappa=np.array([1.2]),
                          rho=np.array([0.4]), rho_t=0.6)
        Q, is_prec = build_prior_matrix(basis, prior)
        assert is_prec
        Q_s = build_Q_leroux(sb, prior).toarray()
        Q_t = ar1_precision(3, 0.6).toarray()
        assert np.allclose(Q.toarray(), np.kron(Q_t, Q_s), atol=1e-14)


class TestSymmetryProperties:
    @pytest.mark.parametrize("variant", ["K_tapered", "Q_leroux", "Q_dist"])
    def test_symmetric_and_sparsity_limited(self, variant):
        basis = auto_basis((0, 0, 1, 1), 2)
        kw = dict(taper_multiplier=3.0)
        if variant == "K_tapered":
            prior = CoefPrior(variant=variant, sigma2=np.array([1.0, 0.4]),
                              tau=np.array([0.5, 0.2]), **kw)
            M = build_K(basis, prior)
        elif variant == "Q_leroux":
            prior = CoefPrior(variant=variant, kappa=np.array([1.0, 2.0]),
                              rho=np.array([0.5, 0.1]), **kw)
            M = build_Q_leroux(basis, prior)
        else:
            prior = CoefPrior(variant=variant, kappa=np.array([1.0, 2.0]),
                              rho=np.array([0.5, 0.1]),
                              tau=np.array([0.5, 0.2]), **kw)
            M = build_Q_dist(basis, prior)
        D = M.toarray()
        assert np.allclose(D, D.T, atol=1e-14)
        # no entries between resolutions
        assert np.all(D[:9, 9:] == 0)
        if variant != "K_tapered":
            # strict diagonal dominance with positive diagonal
            off = np.abs(D).sum(axis=1) - np.abs(np.diag(D))
            assert np.all(np.diag(D) > off - 1e-12)
