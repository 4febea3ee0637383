"""Tests for datasets, grid neighborhoods, weight matrices, and spatial kNN."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from ssmrcd.spatial import (
    Dataset,
    NeighborhoodStructure,
    adjacency_weights,
    grid_neighborhoods,
    inverse_distance_weights,
    spatial_knn,
    validate_weight_matrix,
)


def lattice(m, lo=0.0, hi=20.0):
    g = np.linspace(lo, hi, m)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


class TestDataset:
    def test_properties(self):
        ds = Dataset(ids=("a", "b", "c"), coords=np.zeros((3, 2)), X=np.ones((3, 4)))
        assert ds.n == 3 and ds.p == 4

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError, match="unique"):
            Dataset(ids=("a", "a"), coords=np.zeros((2, 2)), X=np.ones((2, 1)))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            Dataset(ids=("a", "b"), coords=np.zeros((3, 2)), X=np.ones((2, 1)))

    def test_non_finite_rejected(self):
        X = np.ones((2, 1))
        X[0, 0] = np.nan
        with pytest.raises(ValueError, match="finite"):
            Dataset(ids=("a", "b"), coords=np.zeros((2, 2)), X=X)


class TestGridNeighborhoods:
    def test_lattice_partition(self):
        # 41 points per axis over a 5-way split: per-axis cell sizes 9,8,8,8,8
        ns = grid_neighborhoods(lattice(41), 5, 5)
        assert ns.n_neighborhoods == 25
        assert sorted(set(ns.sizes.tolist())) == [64, 72, 81]
        assert ns.sizes.sum() == 41 * 41

    def test_every_point_assigned_once(self):
        rng = np.random.default_rng(0)
        coords = rng.uniform(0, 10, size=(200, 2))
        ns = grid_neighborhoods(coords, 4, 3)
        counts = np.zeros(200, dtype=int)
        for m in ns.members:
            counts[m] += 1
        assert np.all(counts == 1)
        assert np.all(ns.assignment[np.concatenate(ns.members)] >= 0)

    def test_interior_border_goes_to_lower_cell(self):
        coords = np.array(
            [[0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [1.5, 0.0], [2.0, 0.0], [0.2, 0.0], [1.2, 0.0], [1.8, 0.0]]
        )
        ns = grid_neighborhoods(coords, 2, 1)
        a = ns.assignment
        # x = 1.0 sits exactly on the interior border: joins the lower cell
        assert a[2] == a[0] == a[1]
        # the global minimum edge still belongs to the first cell
        assert a[0] == a[5]
        assert a[4] == a[3] == a[6] == a[7]
        assert a[2] != a[4]

    def test_centers_are_member_means(self):
        rng = np.random.default_rng(1)
        coords = rng.uniform(-5, 5, size=(120, 2))
        ns = grid_neighborhoods(coords, 3, 3)
        for i, m in enumerate(ns.members):
            assert_allclose(ns.centers[i], coords[m].mean(axis=0), rtol=1e-12)

    def test_small_cell_merged_to_nearest(self):
        # lone point in the top-right cell of a 2x2 split
        base = np.array([[0.1, 0.1], [0.2, 0.3], [0.3, 0.1], [0.1, 0.9], [0.2, 0.8], [0.9, 0.1], [0.8, 0.2]])
        coords = np.vstack([base, [[0.9, 0.95]]])
        ns = grid_neighborhoods(coords, 2, 2, min_size=2)
        assert ns.n_neighborhoods == 3
        lone = ns.assignment[7]
        # geometric centers: top-left (0.25,0.75) and bottom-right (0.75,0.25)
        # are equidistant from top-right; the lower cell id wins the argmin
        assert ns.assignment[3] == ns.assignment[4] == lone
        assert all(len(m) >= 2 for m in ns.members)

    def test_merge_iterates_until_stable(self):
        # both right-hand cells hold one point each; they merge leftwards
        coords = np.array([[0.0, 0.0], [0.1, 0.0], [0.2, 0.0], [1.0, 0.0], [2.0, 0.0]])
        ns = grid_neighborhoods(coords, 3, 1, min_size=3)
        assert ns.n_neighborhoods == 1
        assert len(ns.members[0]) == 5

    def test_unreachable_min_size(self):
        with pytest.raises(ValueError):
            grid_neighborhoods(np.zeros((3, 2)) + np.arange(3)[:, None], 2, 2, min_size=4)

    def test_bounds_override(self):
        coords = np.array([[2.0, 2.0], [3.0, 3.0], [8.0, 8.0], [7.0, 7.0]])
        ns = grid_neighborhoods(coords, 2, 2, bounds=(0.0, 10.0, 0.0, 10.0))
        assert ns.n_neighborhoods == 2
        assert ns.assignment[0] == ns.assignment[1] != ns.assignment[2]

    def test_degenerate_box_rejected(self):
        with pytest.raises(ValueError, match="degenerate"):
            grid_neighborhoods(np.ones((5, 2)), 2, 2)

    def test_structure_validation(self):
        with pytest.raises(ValueError):
            NeighborhoodStructure(
                assignment=np.array([0, 0, 1]),
                members=(np.array([0, 1]),),  # index 2 missing
                centers=np.zeros((1, 2)),
            )


class TestWeightMatrices:
    def test_validate_accepts_good_matrix(self):
        W = np.array([[0.0, 0.4, 0.6], [0.5, 0.0, 0.5], [0.9, 0.1, 0.0]])
        assert validate_weight_matrix(W) is not None

    def test_validate_rejects_bad_matrices(self):
        with pytest.raises(ValueError, match="nonnegative"):
            validate_weight_matrix(np.array([[0.0, -1.0], [1.0, 0.0]]))
        with pytest.raises(ValueError, match="diagonal"):
            validate_weight_matrix(np.array([[0.5, 0.5], [1.0, 0.0]]))
        with pytest.raises(ValueError, match="sum"):
            validate_weight_matrix(np.array([[0.0, 0.9], [1.0, 0.0]]))

    def test_single_neighborhood_zero_matrix_allowed(self):
        assert_allclose(validate_weight_matrix(np.zeros((1, 1))), np.zeros((1, 1)))

    def test_inverse_distance_collinear_oracle(self):
        centers = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
        W = inverse_distance_weights(centers)
        expected = np.array([[0.0, 0.75, 0.25], [2 / 3, 0.0, 1 / 3], [0.4, 0.6, 0.0]])
        assert_allclose(W, expected, rtol=1e-12)

    def test_inverse_distance_equidistant(self):
        centers = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
        W = inverse_distance_weights(centers)
        assert_allclose(W[W > 0], 0.5)

    def test_inverse_distance_rejects_coincident_centers(self):
        with pytest.raises(ValueError, match="coincident"):
            inverse_distance_weights(np.array([[0.0, 0.0], [0.0, 0.0]]))

    def test_adjacency_full_grid(self):
        ns = grid_neighborhoods(lattice(9, 0.0, 8.0), 3, 3)
        W = adjacency_weights(ns)
        degrees = (W > 0).sum(axis=1)
        # 3x3 grid: corners touch 2, edges 3, the middle 4
        assert sorted(degrees.tolist()) == [2, 2, 2, 2, 3, 3, 3, 3, 4]
        assert_allclose(W.sum(axis=1), 1.0)

    def test_adjacency_merged_cells_keep_borders(self):
        # column x in [2,3) holds a single point, merged into the left cell;
        # the merged neighborhood must still border the right cell
        coords = np.array(
            [[0.1, 0.5], [0.5, 0.4], [0.9, 0.6], [2.5, 0.5], [4.1, 0.5], [4.5, 0.4], [4.9, 0.6]]
        )
        ns = grid_neighborhoods(coords, 3, 1, bounds=(0.0, 6.0, 0.0, 1.0), min_size=2)
        assert ns.n_neighborhoods == 2
        W = adjacency_weights(ns)
        assert_allclose(W, np.array([[0.0, 1.0], [1.0, 0.0]]))

    def test_adjacency_disconnected_raises(self):
        # middle cell empty: the flanking neighborhoods share no border
        coords = np.array([[0.1, 0.5], [0.5, 0.5], [4.5, 0.5], [4.9, 0.5]])
        ns = grid_neighborhoods(coords, 3, 1, bounds=(0.0, 6.0, 0.0, 1.0))
        with pytest.raises(ValueError, match="border"):
            adjacency_weights(ns)


class TestSpatialKnn:
    def test_matches_naive_loops(self):
        rng = np.random.default_rng(9)
        coords = rng.uniform(size=(40, 2))
        k = 5
        got = spatial_knn(coords, k)
        for i in range(40):
            d = np.hypot(*(coords - coords[i]).T)
            d[i] = np.inf
            expect = np.argsort(d, kind="stable")[:k]
            assert list(got[i]) == list(expect)

    def test_tie_break_by_index(self):
        coords = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
        got = spatial_knn(coords, 2)
        assert list(got[0]) == [1, 2]

    def test_excludes_self(self):
        coords = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
        got = spatial_knn(coords, 1)
        assert got[0, 0] == 1 and got[1, 0] == 0

    def test_k_bounds(self):
        coords = np.zeros((3, 2))
        with pytest.raises(ValueError):
            spatial_knn(coords, 0)
        with pytest.raises(ValueError):
            spatial_knn(coords, 3)
