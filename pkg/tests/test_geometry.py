import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glmkrig.geometry import (
    BAUIndexSet,
    GeometryError,
    Point,
    Rect,
    build_bau_grid,
    build_incidence,
    map_supports,
)


def paper_label_to_index(label, nx=3, ny=4):
    """Map a 1-based row-major-from-top cell label to grid index."""
    row_top = (label - 1) // nx
    col = (label - 1) % nx
    iy = ny - 1 - row_top
    return iy * nx + col


class TestBuildGrid:
    def test_regular_tiling_counts_and_area(self):
        grid = build_bau_grid((0, 0, 1, 1), 10, 10, 1)
        assert grid.n_total == 100
        assert grid.cell_area == pytest.approx(0.01)

    def test_space_fastest_ordering(self):
        grid = build_bau_grid((0, 0, 1, 1), 2, 2, 3)
        assert grid.n_total == 12
        # index 5 = t*(nx*ny) + iy*nx + ix with t=1, iy=0, ix=1: spatial
        # cell 1 at time bin 1 (0-based), i.e. the second time step
        t, rem = divmod(5, grid.n_spatial)
        assert (t, rem) == (1, 1)

    def test_degenerate_bbox_rejected(self):
        with pytest.raises(GeometryError):
            build_bau_grid((0, 0, 0, 1), 4, 4)

    def test_nonpositive_counts_rejected(self):
        with pytest.raises(GeometryError):
            build_bau_grid((0, 0, 1, 1), 0, 4)

    def test_cells_tile_bbox_exactly(self):
        grid = build_bau_grid((2, -1, 5, 3), 6, 8)
        total = sum(
            (b[2] - b[0]) * (b[3] - b[1])
            for b in (grid.cell_bounds(i) for i in range(grid.n_spatial))
        )
        assert total == pytest.approx(3 * 4)

    def test_positive_field_validation(self):
        grid = build_bau_grid((0, 0, 1, 1), 2, 2)
        with pytest.raises(GeometryError):
            grid.with_fields(rel_weights=np.array([1.0, 1.0, 0.0, 1.0]))


class TestMapSupports:
    def test_figure_configuration(self):
        # 3x4 grid of unit cells with labels counted row-major from the top
        grid = build_bau_grid((0, 0, 3, 4), 3, 4)
        geoms = [
            Rect(0.25, 2.25, 0.9, 3.25),   # spans labels 1 and 4
            Point(2.75, 2.75),             # inside label 6
            Rect(0.15, 0.15, 1.85, 0.9),   # spans labels 10 and 11
        ]
        sup = map_supports(grid, geoms)
        expect = [
            {paper_label_to_index(1), paper_label_to_index(4)},
            {paper_label_to_index(6)},
            {paper_label_to_index(10), paper_label_to_index(11)},
        ]
        assert [set(c) for c in sup.bau_index_sets] == expect

    def test_point_on_shared_edge_maps_to_both(self):
        grid = build_bau_grid((0, 0, 2, 1), 2, 1)
        sup = map_supports(grid, [Point(1.0, 0.5)])
        assert set(sup.bau_index_sets[0]) == {0, 1}

    def test_point_on_corner_maps_to_all_four(self):
        grid = build_bau_grid((0, 0, 2, 2), 2, 2)
        sup = map_supports(grid, [Point(1.0, 1.0)])
        assert set(sup.bau_index_sets[0]) == {0, 1, 2, 3}

    def test_rectangle_covering_grid_maps_to_all(self):
        grid = build_bau_grid((0, 0, 1, 1), 4, 5)
        sup = map_supports(grid, [Rect(-1, -1, 2, 2)])
        assert list(sup.bau_index_sets[0]) == list(range(20))

    def test_boundary_touching_rectangle_counts(self):
        grid = build_bau_grid((0, 0, 2, 1), 2, 1)
        # right edge exactly on the shared cell boundary
        sup = map_supports(grid, [Rect(0.2, 0.2, 1.0, 0.8)])
        assert set(sup.bau_index_sets[0]) == {0, 1}

    def test_disjoint_support_rejected_with_name(self):
        grid = build_bau_grid((0, 0, 1, 1), 2, 2)
        with pytest.raises(GeometryError, match="support 1"):
            map_supports(grid, [Point(0.5, 0.5), Point(5.0, 5.0)])

    def test_explicit_index_sets(self):
        grid = build_bau_grid((0, 0, 1, 1), 2, 2)
        sup = map_supports(grid, [BAUIndexSet(indices=(3, 1))])
        assert list(sup.bau_index_sets[0]) == [1, 3]
        with pytest.raises(GeometryError):
            map_supports(grid, [BAUIndexSet(indices=(9,))])

    def test_spatiotemporal_offsets(self):
        grid = build_bau_grid((0, 0, 1, 1), 2, 2, time_bins=3)
        sup = map_supports(grid, [Point(0.25, 0.25, t=2)])
        assert list(sup.bau_index_sets[0]) == [8]
        with pytest.raises(GeometryError):
            map_supports(grid, [Point(0.25, 0.25, t=3)])
        with pytest.raises(GeometryError):
            map_supports(grid, [Point(0.25, 0.25)])  # t required


class TestIncidence:
    def test_figure_normalised_row(self):
        grid = build_bau_grid((0, 0, 3, 4), 3, 4)
        sup = map_supports(grid, [Rect(0.25, 2.25, 0.9, 3.25)])
        inc = build_incidence(grid, sup, normalise=True)
        row = inc.matrix.toarray()[0]
        idx = [paper_label_to_index(1), paper_label_to_index(4)]
        assert row[idx[0]] == pytest.approx(0.5)
        assert row[idx[1]] == pytest.approx(0.5)
        assert row.sum() == pytest.approx(1.0)

    def test_force_unit_sum_rows_are_ones(self):
        grid = build_bau_grid((0, 0, 3, 4), 3, 4)
        sup = map_supports(grid, [Rect(0.15, 0.15, 1.85, 0.9)])
        inc = build_incidence(grid, sup, normalise=True, force_unit_sum=True)
        row = inc.matrix.toarray()[0]
        assert sorted(row[row != 0]) == [1.0, 1.0]
        assert not inc.normalised

    def test_area_weights_normalise_to_area_fraction(self):
        grid = build_bau_grid((0, 0, 1, 1), 2, 1)
        areas = np.array([grid.cell_area, grid.cell_area])
        grid = grid.with_fields(rel_weights=areas)
        sup = map_supports(grid, [Rect(0.0, 0.0, 1.0, 1.0)])
        inc = build_incidence(grid, sup, normalise=True)
        row = inc.matrix.toarray()[0]
        # w_ij = |A_i| / |B_j| for equal cells = 0.5 each
        assert np.allclose(row, [0.5, 0.5])

    def test_mass_preservation_of_averaging(self):
        rng = np.random.default_rng(0)
        grid = build_bau_grid((0, 0, 1, 1), 5, 5,
                              rel_weights=rng.uniform(0.5, 2.0, 25))
        geoms = [Rect(0.1, 0.1, 0.6, 0.6), Point(0.9, 0.9),
                 Rect(0.0, 0.0, 1.0, 1.0)]
        sup = map_supports(grid, geoms)
        inc = build_incidence(grid, sup, normalise=True)
        assert np.allclose(inc.matrix @ np.ones(25), 1.0, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_brute_force_oracle_random_grids(self, seed):
        rng = np.random.default_rng(seed)
        nx, ny = int(rng.integers(2, 6)), int(rng.integers(2, 6))
        grid = build_bau_grid((0, 0, 1, 1), nx, ny,
                              rel_weights=rng.uniform(0.2, 3.0, nx * ny))
        geoms = []
        for _ in range(int(rng.integers(1, 5))):
            if rng.random() < 0.5:
                geoms.append(Point(*rng.uniform(0.01, 0.99, 2)))
            else:
                x0, y0 = rng.uniform(0, 0.7, 2)
                geoms.append(Rect(x0, y0, x0 + rng.uniform(0.05, 0.3),
                                  y0 + rng.uniform(0.05, 0.3)))
        sup = map_supports(grid, geoms)
        normalise = bool(rng.random() < 0.5)
        force = bool(rng.random() < 0.3)
        inc = build_incidence(grid, sup, normalise=normalise, force_unit_sum=force)
        dense = np.zeros((len(geoms), grid.n_total))
        for j, c in enumerate(sup.bau_index_sets):
            idx = np.asarray(c)
            if force:
                dense[j, idx] = 1.0
            else:
                w = grid.rel_weights[idx]
                dense[j, idx] = w / w.sum() if normalise else w
        assert np.array_equal(inc.matrix.toarray(), dense)
        # row support equals the stored index set
        for j, c in enumerate(sup.bau_index_sets):
            assert set(np.nonzero(inc.matrix.toarray()[j])[0]) == set(c)
