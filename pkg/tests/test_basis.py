import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glmkrig.basis import (
    BasisError,
    auto_basis,
    basis_from_rows,
    basis_to_rows,
    eval_basis,
    temporal_basis,
    tensor_basis,
)


class TestAutoBasis:
    def test_single_resolution_count(self):
        assert auto_basis((0, 0, 1, 1), 1).n_functions == 9

    def test_two_resolution_counts(self):
        basis = auto_basis((0, 0, 1, 1), 2)
        assert basis.res_info[1].n_side_x == 6
        assert basis.n_functions == 45

    def test_zero_resolutions_rejected(self):
        with pytest.raises(BasisError):
            auto_basis((0, 0, 1, 1), 0)

    def test_apertures_equal_within_resolution(self):
        basis = auto_basis((0, 0, 2, 1), 3)
        for info in basis.res_info:
            sl = basis.res_slice(info.index)
            assert np.all(basis.apertures[sl] == info.aperture)
            assert info.mindist > 0

    def test_aperture_is_one_and_a_half_spacings(self):
        basis = auto_basis((0, 0, 1, 1), 1)
        assert basis.res_info[0].aperture == pytest.approx(1.5 / 3)


class TestEvalBasis:
    def test_value_at_centroid_is_one(self):
        basis = auto_basis((0, 0, 1, 1), 1)
        S = eval_basis(basis, basis.centroids[:1]).toarray()
        assert S[0, 0] == pytest.approx(1.0)

    def test_zero_outside_aperture(self):
        basis = auto_basis((0, 0, 1, 1), 1)
        c = basis.centroids[0]
        a = basis.apertures[0]
        S = eval_basis(basis, [[c[0] + a, c[1]]]).toarray()
        assert S[0, 0] == 0.0

    def test_half_aperture_value(self):
        basis = auto_basis((0, 0, 1, 1), 1)
        c = basis.centroids[0]
        a = basis.apertures[0]
        S = eval_basis(basis, [[c[0] + 0.5 * a, c[1]]]).toarray()
        assert S[0, 0] == pytest.approx((1 - 0.25) ** 2)  # 0.5625

    def test_sparsity_matches_distance_test(self):
        rng = np.random.default_rng(1)
        basis = auto_basis((0, 0, 1, 1), 2)
        pts = rng.uniform(0, 1, size=(40, 2))
        S = eval_basis(basis, pts).toarray()
        d = np.sqrt(((pts[:, None, :] - basis.centroids[None]) ** 2).sum(-1))
        assert np.array_equal(S != 0, d < basis.apertures[None, :])

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5))
    def test_translation_equivariance(self, dx, dy):
        basis = auto_basis((0, 0, 1, 1), 1)
        shifted = auto_basis((dx, dy, 1 + dx, 1 + dy), 1)
        rng = np.random.default_rng(0)
        pts = rng.uniform(0, 1, size=(10, 2))
        S0 = eval_basis(basis, pts).toarray()
        S1 = eval_basis(shifted, pts + [dx, dy]).toarray()
        assert np.allclose(S0, S1, atol=1e-12)


class TestTensorBasis:
    def test_function_count_is_product(self):
        sb = auto_basis((0, 0, 1, 1), 1)
        tb = temporal_basis(10, 5)
        assert tensor_basis(sb, tb).n_functions == 45

    def test_zero_spatial_factor_zeroes_all_times(self):
        sb = auto_basis((0, 0, 1, 1), 1)
        tb = temporal_basis(4, 2)
        basis = tensor_basis(sb, tb)
        far = [[10.0, 10.0, 1.0]]
        with pytest.raises(BasisError):
            eval_basis(basis, [[0.5, 0.5]])  # needs (x, y, t)
        assert eval_basis(basis, far).nnz == 0

    def test_values_are_elementwise_products(self):
        sb = auto_basis((0, 0, 1, 1), 2)
        tb = temporal_basis(6, 3)
        basis = tensor_basis(sb, tb)
        rng = np.random.default_rng(3)
        pts = np.column_stack([rng.uniform(0, 1, (20, 2)),
                               rng.uniform(0, 5, 20)])
        S = eval_basis(basis, pts).toarray()
        S_s = eval_basis(sb, pts[:, :2]).toarray()
        T_t = tb.eval(pts[:, 2])
        r_s = sb.n_functions
        for lt in range(tb.n_functions):
            for ls in range(r_s):
                expect = S_s[:, ls] * T_t[:, lt]
                assert np.allclose(S[:, lt * r_s + ls], expect, atol=1e-14)

    def test_box_temporal_kind(self):
        tb = temporal_basis(4, 4, kind="box")
        vals = tb.eval(np.arange(4.0))
        assert np.allclose(vals, np.eye(4))


class TestRoundTrip:
    def test_rows_round_trip(self):
        basis = auto_basis((0, 0, 2, 3), 2)
        rows = basis_to_rows(basis)
        back = basis_from_rows(rows)
        assert back.n_functions == basis.n_functions
        assert np.allclose(back.centroids, basis.centroids)
        assert np.allclose(back.apertures, basis.apertures)
        assert np.array_equal(back.resolutions, basis.resolutions)

    def test_bad_rows_rejected(self):
        with pytest.raises(BasisError):
            basis_from_rows([[0.0, 0.0, 1.0, 2.0]])  # resolution must start at 1
