import itertools
import math
from functools import reduce

import numpy as np
import pytest

from maxcorr.config import IntegerSearchConfig
from maxcorr.dataset import Dataset
from maxcorr.errors import DegenerateCompositeError, EnumerationLimitError
from maxcorr.model import expand, regress_y_on_x
from maxcorr.resonance import _lattice_blocks, enumeration_size, integer_search, nearest_integer_report
from maxcorr.solver import Normalization, maximize
from maxcorr.stats import WeightPair, pearson

from .conftest import random_dataset


def canonical_side(values: range, n: int) -> list:
    """Nonzero integer vectors with a positive leading entry and gcd 1."""
    found = []
    for v in itertools.product(values, repeat=n):
        if any(v) and next(c for c in v if c) > 0 and reduce(math.gcd, v) == 1:
            found.append(v)
    return found


def brute_force(ds: Dataset, bound: int) -> dict:
    """Canonical pairs and their correlations, by plain nested loops."""
    x = np.column_stack([ds.column(n).values for n in ds.x_names])
    y = np.column_stack([ds.column(n).values for n in ds.y_names])
    values = range(-bound, bound + 1)
    found = {}
    for a in canonical_side(values, x.shape[1]):
        for b in canonical_side(values, y.shape[1]):
            found[(a, b)] = pearson(x @ np.array(a), y @ np.array(b))
    return found


def direction(v: tuple) -> tuple:
    u = np.array(v, dtype=float)
    return tuple(np.round(u / np.linalg.norm(u), 12))


class TestIntegerSearch:
    def test_matches_nested_loops(self):
        ds = random_dataset(2, n_rows=20, n_x=2, n_y=1)
        expected = brute_force(ds, 2)
        report = integer_search(ds, IntegerSearchConfig(bound=2, top_k=1000))
        assert report.evaluated == len(expected)
        assert {hit.reduced for hit in report.hits} == set(expected)
        for hit in report.hits:
            assert hit.correlation == pytest.approx(expected[hit.reduced], abs=1e-12)

    def test_matches_nested_loops_with_wider_y_side(self):
        ds = random_dataset(3, n_rows=20, n_x=1, n_y=3)
        expected = brute_force(ds, 1)
        report = integer_search(ds, IntegerSearchConfig(bound=1, top_k=1000))
        assert {hit.reduced for hit in report.hits} == set(expected)
        for hit in report.hits:
            assert hit.correlation == pytest.approx(expected[hit.reduced], abs=1e-12)

    def test_finds_exact_relation(self, resonant):
        report = integer_search(resonant, IntegerSearchConfig(bound=3, top_k=5))
        assert report.enumeration_size == 7 ** 5
        best = report.hits[0]
        assert best.a == (3, -2, 0)
        assert best.b == (1, 0)
        assert best.correlation >= 0.999

    def test_one_side_multiples_are_not_reported(self, resonant):
        report = integer_search(resonant, IntegerSearchConfig(bound=3, top_k=5))
        for hit in report.hits:
            assert reduce(math.gcd, hit.a) == 1
            assert reduce(math.gcd, hit.b) == 1
        assert [h.b for h in report.hits if h.a == (3, -2, 0)] == [(1, 0)]

    def test_single_pair(self, bivariate):
        report = integer_search(bivariate, IntegerSearchConfig(bound=1, top_k=10))
        r = pearson([0, 1, 2, 3], [0, 1, 1, 2])
        assert [(h.a, h.b) for h in report.hits] == [((1,), (1,))]
        assert report.hits[0].correlation == pytest.approx(r)

    def test_negative_relation_keeps_its_sign(self):
        ds = Dataset.from_arrays({"x": [0.0, 1.0, 2.0, 3.0]}, {"y": [2.0, 1.0, 1.0, 0.0]})
        report = integer_search(ds, IntegerSearchConfig(bound=2, top_k=10))
        assert [(h.a, h.b) for h in report.hits] == [((1,), (1,))]
        assert report.hits[0].correlation < 0

    def test_hits_are_ordered(self):
        report = integer_search(random_dataset(5, n_x=2, n_y=2), IntegerSearchConfig(bound=2, top_k=20))
        strengths = [abs(h.correlation) for h in report.hits]
        assert strengths == sorted(strengths, reverse=True)
        assert len(report.hits) == 20

    def test_no_multiples_or_sign_flips(self):
        report = integer_search(random_dataset(6, n_x=2, n_y=2), IntegerSearchConfig(bound=2, top_k=200))
        # Scaling or negating one side maps onto the same pair of directions up to sign.
        keys = set()
        for hit in report.hits:
            keys.add((direction(hit.a), direction(hit.b)))
            assert next(v for v in hit.a if v) > 0
            assert next(v for v in hit.b if v) > 0
        assert len(keys) == len(report.hits)

    def test_ties_favour_smallest_coefficients(self):
        rng = np.random.default_rng(4)
        t = rng.standard_normal(30)
        ds = Dataset.from_arrays({"x1": t, "x2": t.copy()}, {"y": t + 0.5 * rng.standard_normal(30)})
        report = integer_search(ds, IntegerSearchConfig(bound=2, top_k=3))
        assert [h.a for h in report.hits] == [(0, 1), (1, 0), (1, 1)]
        assert report.hits[0].correlation == pytest.approx(report.hits[1].correlation, abs=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_never_beats_continuous_optimum(self, seed):
        ds = random_dataset(seed, n_rows=30, n_x=2, n_y=2)
        best = integer_search(ds, IntegerSearchConfig(bound=2, top_k=1)).hits[0]
        continuous = maximize(ds, [], Normalization.fix_coefficient(0))
        assert abs(best.correlation) <= continuous.correlation + 1e-9

    def test_ceiling(self, make_dataset):
        with pytest.raises(EnumerationLimitError, match="ceiling"):
            integer_search(make_dataset(1), IntegerSearchConfig(bound=10, ceiling=1000))

    def test_enumeration_size(self):
        assert enumeration_size(5, 3) == 16807

    def test_lattice_is_streamed(self):
        # 3**15 lattice points; only the first block is built.
        first = next(_lattice_blocks(15, 1, 1000))
        assert 0 < len(first) <= 1000
        assert first.shape[1] == 15

    def test_streamed_blocks_cover_the_lattice(self):
        blocks = list(_lattice_blocks(3, 2, 7))
        streamed = [tuple(v) for block in blocks for v in block]
        assert streamed == canonical_side(range(-2, 3), 3)

    def test_degenerate_combinations_skipped(self):
        ds = Dataset.from_arrays(
            {"x1": [1.0, 2.0, 3.0, 4.0], "x2": [4.0, 3.0, 2.0, 1.0]}, {"y": [1.0, 3.0, 2.0, 5.0]}
        )
        report = integer_search(ds, IntegerSearchConfig(bound=1, top_k=100))
        assert report.degenerate > 0
        assert all(h.a != (1, 1) for h in report.hits)


class TestNearestInteger:
    def test_near_integer_candidate(self):
        report = nearest_integer_report(WeightPair([2.001, -0.999], [1.0], ("x1", "x2"), ("y1",)), 0.01)
        assert report.candidate
        assert report.nearest == (2, -1, 1)
        assert report.divisor == pytest.approx(0.999)

    def test_far_from_integer(self):
        report = nearest_integer_report(WeightPair([1.37], [1.0]), 0.01)
        assert not report.candidate
        assert report.nearest == (1, 1)
        assert max(report.distances) == pytest.approx(0.37)

    def test_all_zero(self):
        with pytest.raises(DegenerateCompositeError):
            nearest_integer_report(WeightPair([0.0], [0.0]), 0.01)

    def test_continuous_fit_recovers_relation(self, resonant):
        result = maximize(resonant, [], Normalization.fix_coefficient(3))
        assert result.correlation == pytest.approx(1.0, abs=1e-8)
        model = expand(regress_y_on_x(resonant, result.weights), result.weights)
        report = nearest_integer_report(model.as_weight_pair(), 0.01, zero_tolerance=0.01)
        assert report.candidate
        assert report.nearest == (3, -2, 0, 1, 0)
