import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hptune.design import grid_design, latin_hypercube, maximin_fill, random_design
from hptune.errors import DomainError
from hptune.space import TABLE2


def bucket_counts(points):
    """Per dimension, how many points land in each of the n strata."""
    n = points.shape[0]
    idx = np.minimum(np.floor(points * n).astype(int), n - 1)
    return [np.bincount(idx[:, j], minlength=n) for j in range(points.shape[1])]


class TestLatinHypercube:
    def test_single_point(self):
        design = latin_hypercube(5, 1, seed=3)
        assert design.points.shape == (1, 5)

    def test_quarters(self):
        pts = latin_hypercube(2, 4, seed=11).points
        for counts in bucket_counts(pts):
            assert counts.tolist() == [1, 1, 1, 1]

    def test_table2_design(self):
        design = latin_hypercube(TABLE2, 24, seed=0)
        assert design.points.shape == (24, 8)
        for counts in bucket_counts(design.points):
            assert np.all(counts == 1)

    def test_reproducible(self):
        a = latin_hypercube(3, 10, seed=5).points
        b = latin_hypercube(3, 10, seed=5).points
        assert np.array_equal(a, b)

    def test_maximin_choice_beats_single_draw_typically(self):
        from scipy.spatial.distance import pdist
        best = pdist(latin_hypercube(2, 12, seed=1).points).min()
        rng = np.random.default_rng(1)
        strata = np.column_stack([rng.permutation(12) for _ in range(2)])
        first = pdist((strata + rng.random((12, 2))) / 12).min()
        assert best >= first

    def test_rejects_empty(self):
        with pytest.raises(DomainError):
            latin_hypercube(2, 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(1, 6), st.integers(0, 2**31))
def test_lhs_stratified_always(n, d, seed):
    pts = latin_hypercube(d, n, seed).points
    assert np.all((pts >= 0) & (pts <= 1))
    for counts in bucket_counts(pts):
        assert np.all(counts == 1)


class TestRandomDesign:
    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            random_design(2, 0)

    def test_distinct_values(self):
        pts = random_design(2, 16, seed=2).points
        for j in range(2):
            assert len(np.unique(pts[:, j])) == 16

    def test_determinism(self):
        assert np.array_equal(random_design(3, 7, 9).points, random_design(3, 7, 9).points)


class TestGridDesign:
    def test_four_by_four(self):
        pts = grid_design(2, (4, 4)).points
        assert pts.shape == (16, 2)
        for j in range(2):
            assert sorted(np.unique(pts[:, j])) == pytest.approx([0.125, 0.375, 0.625, 0.875])

    def test_center_point(self):
        pts = grid_design(3, (1, 1, 1)).points
        assert pts.tolist() == [[0.5, 0.5, 0.5]]

    def test_product_count(self):
        assert grid_design(2, (2, 3)).n == 6

    def test_cap(self):
        with pytest.raises(DomainError):
            grid_design(8, [4] * 8, cap=1000)
        with pytest.raises(DomainError):
            grid_design(2, (0, 3))


def test_maximin_fill_picks_far_points():
    pool = np.array([[0.1, 0.1], [0.9, 0.9], [0.5, 0.5]])
    picked = maximin_fill(np.array([[0.0, 0.0]]), pool, 1)
    assert picked.tolist() == [[0.9, 0.9]]
