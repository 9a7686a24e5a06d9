import time

import numpy as np
import pytest

from maxcorr.config import ConstraintSpec, NormalizationSpec, SolverConfig
from maxcorr.dataset import Dataset, Side, rescale_column
from maxcorr.errors import ConfigError, ConstraintError, DegenerateCompositeError
from maxcorr.oracle import cca_first_pair
from maxcorr.solver import (
    FitResult,
    FitStatus,
    LinearConstraint,
    Normalization,
    Polyhedron,
    build_constraints,
    build_normalization,
    maximize,
    normalized_weights,
    rescale_result,
    solve_for_target,
    spg_ascent,
)
from maxcorr.stats import (
    CorrelationObjective,
    WeightPair,
    correlation_of_weights,
    pearson,
    side_matrices,
    weight_labels,
)

from .conftest import random_dataset


def ge(ds: Dataset, coeffs: dict, rhs: float = 0.0) -> LinearConstraint:
    return build_constraints([ConstraintSpec(coeffs=coeffs, relation=">=", rhs=rhs)], weight_labels(ds))[0]


def grid_maximum(ds: Dataset, b_filter=None, a_half: bool = True) -> float:
    """Brute force over unit-circle weight angles on a 2+2 problem."""
    x, y = ds.matrix(Side.X), ds.matrix(Side.Y)
    theta = np.linspace(-np.pi / 2, np.pi / 2, 721) if a_half else np.linspace(-np.pi, np.pi, 721)
    phi = np.linspace(-np.pi, np.pi, 721)
    A = np.vstack([np.cos(theta), np.sin(theta)])
    B = np.vstack([np.cos(phi), np.sin(phi)])
    if b_filter is not None:
        B = B[:, b_filter(B)]
    X = x @ A
    Y = y @ B
    X = (X - X.mean(axis=0)) / X.std(axis=0)
    Y = (Y - Y.mean(axis=0)) / Y.std(axis=0)
    return float(np.max(X.T @ Y / len(x)))


def ordered_outcomes(seed: int = 5, n_rows: int = 40) -> Dataset:
    """y2 tracks the inputs and y1 is noise, so b.y1 >= b.y2 binds at the maximum."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_rows, 2))
    y2 = x[:, 0] + x[:, 1] + 1.5 * rng.standard_normal(n_rows)
    y1 = rng.standard_normal(n_rows)
    return Dataset.from_arrays({"x1": x[:, 0], "x2": x[:, 1]}, {"y1": y1, "y2": y2})


class TestBuilders:
    def test_unreferenced_weights_get_zero(self, make_dataset):
        ds = make_dataset(0)
        c = ge(ds, {"b.y1": 1, "b.y2": -1})
        np.testing.assert_array_equal(c.coeffs, [0, 0, 0, 1, -1, 0])

    def test_unknown_label(self, make_dataset):
        ds = make_dataset(0)
        with pytest.raises(ConstraintError, match="b.y9"):
            ge(ds, {"b.y9": 1})

    def test_all_zero_constraint_rejected(self):
        with pytest.raises(ConstraintError):
            LinearConstraint(np.zeros(3), ">=", 0.0)

    def test_default_normalization_fixes_first_weight(self, make_dataset):
        norm = build_normalization(None, weight_labels(make_dataset(0)))
        assert norm.index == 0 and norm.value == 1.0

    def test_normalization_by_label(self, make_dataset):
        labels = weight_labels(make_dataset(0))
        norm = build_normalization(NormalizationSpec(coefficient="b.y2", value=2.0), labels)
        assert norm.index == 4 and norm.value == 2.0
        assert norm.side_of(3) is Side.Y

    def test_zero_normalization_rejected(self):
        with pytest.raises(ConstraintError):
            Normalization.fix_coefficient(0, 0.0)


class TestPolyhedron:
    def test_projection_onto_halfspace(self):
        poly = Polyhedron(np.array([[1.0, 0.0]]), np.array([1.0]), np.array([[0.0, 1.0]]), np.array([0.0]), 1e-10)
        np.testing.assert_allclose(poly.project(np.array([3.0, -2.0])), [1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(poly.project(np.array([3.0, 2.0])), [1.0, 2.0], atol=1e-12)

    def test_infeasible_system_detected(self):
        poly = Polyhedron(
            np.array([[1.0, 0.0]]),
            np.array([1.0]),
            np.array([[0.0, 1.0], [0.0, -1.0]]),
            np.array([1.0, 1.0]),
            1e-8,
        )
        assert poly.find_feasible() is None


class TestMaximize:
    def test_single_pair_positive(self, bivariate):
        res = maximize(bivariate, [], Normalization.fix_coefficient(0))
        assert res.status is FitStatus.OPTIMAL
        assert res.correlation == pytest.approx(np.sqrt(0.9), abs=1e-10)
        assert res.weights.a[0] == pytest.approx(1.0)
        assert res.weights.b[0] > 0

    def test_single_pair_sign_carried_by_b(self):
        ds = Dataset.from_arrays({"x": [0.0, 1.0, 2.0, 3.0]}, {"y": [2.0, 1.0, 1.0, 0.0]})
        res = maximize(ds, [], Normalization.fix_coefficient(0))
        assert res.correlation == pytest.approx(abs(pearson([0, 1, 2, 3], [2, 1, 1, 0])), abs=1e-10)
        assert res.weights.b[0] < 0

    @pytest.mark.parametrize("seed", range(100))
    def test_matches_canonical_correlation(self, seed):
        ds = random_dataset(seed)
        res = maximize(ds, [], Normalization.fix_coefficient(0), SolverConfig(rng_seed=seed))
        assert res.status is FitStatus.OPTIMAL
        assert abs(res.correlation - cca_first_pair(ds).rho) <= 1e-6
        assert res.weights.a[0] == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("seed", [17, 30, 31, 36, 66, 67])
    def test_fix_coefficient_chart_reaches_maximum(self, seed):
        ds = random_dataset(seed)
        res = maximize(ds, [], Normalization.fix_coefficient(0))
        assert res.status is FitStatus.OPTIMAL
        assert res.correlation == pytest.approx(cca_first_pair(ds).rho, abs=1e-6)
        assert res.weights.a[0] == pytest.approx(1.0, abs=1e-12)
        assert res.starts_agreeing == len(res.starts)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_grid_with_ordered_weights(self, seed):
        ds = random_dataset(seed, n_rows=30, n_x=2, n_y=2)
        res = maximize(ds, [ge(ds, {"b.y1": 1, "b.y2": -1})], Normalization.fix_coefficient(0))
        grid = grid_maximum(ds, b_filter=lambda B: B[0] >= B[1])
        assert abs(res.correlation - grid) <= 2e-3
        assert res.weights.b[0] >= res.weights.b[1] - 1e-8

    @pytest.mark.parametrize("seed", range(50))
    def test_constraints_never_raise_correlation(self, seed):
        ds = random_dataset(seed, n_rows=30, n_x=2, n_y=3)
        norm = Normalization.fix_coefficient(0)
        cfg = SolverConfig(n_starts=3, rng_seed=seed)
        chain = [ge(ds, {"b.y1": 1, "b.y2": -1}), ge(ds, {"b.y2": 1, "b.y3": -1})]
        free = maximize(ds, [], norm, cfg)
        constrained = maximize(ds, chain, norm, cfg)
        assert constrained.correlation <= free.correlation + 1e-9
        for c in chain:
            assert c.violation(constrained.weights.vector) <= 1e-8
        assert constrained.weights.a[0] == pytest.approx(1.0, abs=1e-8)

    @pytest.mark.parametrize("seed", range(20))
    def test_starts_agree_under_linear_equalities(self, seed):
        ds = random_dataset(seed, n_rows=40, n_x=3, n_y=3)
        tie = build_constraints(
            [ConstraintSpec(coeffs={"b.y1": 1, "b.y2": -1}, relation="=", rhs=0)], weight_labels(ds)
        )
        res = maximize(ds, tie, Normalization.fix_coefficient(0), SolverConfig(n_starts=20, rng_seed=seed))
        converged = [s for s in res.starts if s.status == "optimal"]
        assert converged
        assert all(abs(s.correlation - res.correlation) <= 1e-6 for s in converged)
        # Tying b.y1 to b.y2 is plain CCA against the summed column.
        y = ds.matrix(Side.Y)
        merged = Dataset.from_arrays(
            {n: ds.column(n).values for n in ds.x_names}, {"y12": y[:, 0] + y[:, 1], "y3": y[:, 2]}
        )
        assert res.correlation == pytest.approx(cca_first_pair(merged).rho, abs=1e-6)

    @pytest.mark.parametrize("seed", range(10))
    def test_starts_agree_under_linear_inequalities(self, seed):
        ds = random_dataset(seed, n_rows=40, n_x=3, n_y=3)
        chain = [ge(ds, {"b.y1": 1, "b.y2": -1}), ge(ds, {"b.y2": 1, "b.y3": -1}), ge(ds, {"a.x2": 1})]
        res = maximize(ds, chain, Normalization.fix_coefficient(0), SolverConfig(n_starts=20, rng_seed=seed))
        assert res.status is FitStatus.OPTIMAL
        converged = [s for s in res.starts if s.status == "optimal"]
        assert all(abs(s.correlation - res.correlation) <= 1e-6 for s in converged)
        for c in chain:
            assert c.violation(res.weights.vector) <= 1e-8
        assert res.correlation <= cca_first_pair(ds).rho + 1e-9

    def test_contradictory_constraints_are_infeasible(self, make_dataset):
        ds = make_dataset(0)
        res = maximize(
            ds,
            [ge(ds, {"b.y1": 1, "b.y2": -1}, 1.0), ge(ds, {"b.y2": 1, "b.y1": -1}, 1.0)],
            Normalization.fix_coefficient(0),
        )
        assert res.status is FitStatus.INFEASIBLE
        assert res.weights is None

    def test_constraint_contradicting_normalization(self, make_dataset):
        ds = make_dataset(0)
        res = maximize(ds, [ge(ds, {"a.x1": -1}, 0.5)], Normalization.fix_coefficient(0))
        assert res.status is FitStatus.INFEASIBLE

    def test_homogeneous_constraint_excluding_normalization(self, make_dataset):
        ds = make_dataset(0)
        res = maximize(ds, [ge(ds, {"a.x1": -1})], Normalization.fix_coefficient(0))
        assert res.status is FitStatus.INFEASIBLE
        assert res.weights is None

    def test_negative_normalization_value(self, make_dataset):
        ds = make_dataset(9)
        res = maximize(ds, [ge(ds, {"b.y1": 1, "b.y2": -1})], Normalization.fix_coefficient(1, -2.0))
        assert res.status is FitStatus.OPTIMAL
        assert res.weights.a[1] == pytest.approx(-2.0, abs=1e-12)
        assert res.weights.b[0] >= res.weights.b[1] - 1e-8

    def test_violating_weights_are_not_optimal(self, bivariate, monkeypatch):
        monkeypatch.setattr("maxcorr.solver._Problem.original_violation", lambda self, weights: 1e-3)
        res = maximize(bivariate, [], Normalization.fix_coefficient(0))
        assert res.status is FitStatus.NUMERICAL_FAILURE
        assert res.max_violation == 1e-3

    def test_result_bookkeeping(self, make_dataset, solver_cfg):
        ds = make_dataset(12)
        res = maximize(ds, [ge(ds, {"a.x2": 1}, 0.0)], Normalization.fix_coefficient(0), solver_cfg)
        assert not res.weights.is_zero
        assert res.correlation == pytest.approx(correlation_of_weights(ds, res.weights), abs=1e-12)
        assert len(res.starts) == solver_cfg.n_starts
        assert 1 <= res.starts_agreeing <= solver_cfg.n_starts
        assert res.max_violation <= 1e-8
        if res.status is FitStatus.OPTIMAL:
            assert res.projected_gradient_norm <= solver_cfg.gradient_tolerance

    def test_same_seed_same_result(self, make_dataset, solver_cfg):
        ds = make_dataset(21)
        chain = [ge(ds, {"b.y1": 1, "b.y2": -1})]
        first = maximize(ds, chain, Normalization.fix_coefficient(0), solver_cfg)
        second = maximize(ds, chain, Normalization.fix_coefficient(0), solver_cfg)
        assert first.weights.vector.tobytes() == second.weights.vector.tobytes()
        assert first.to_dict() == second.to_dict()

    def test_sign_flip_negates_weight(self, make_dataset):
        from maxcorr.dataset import sign_flip

        ds = make_dataset(4)
        norm = Normalization.fix_coefficient(0)
        base = maximize(ds, [], norm)
        flipped = maximize(sign_flip(ds, "x2"), [], norm)
        assert flipped.correlation == pytest.approx(base.correlation, abs=1e-8)
        assert flipped.weights.a[1] == pytest.approx(-base.weights.a[1], rel=1e-5)

    def test_every_start_degenerate(self):
        ds = Dataset.from_arrays({"x1": [1.0, 2.0, 3.0, 4.0]}, {"y1": [1.0, 3.0, 2.0, 5.0]})
        # b.y1 pinned to zero leaves a constant Y composite.
        pin = build_constraints(
            [ConstraintSpec(coeffs={"b.y1": 1}, relation="=", rhs=0)], weight_labels(ds)
        )
        with pytest.raises(DegenerateCompositeError):
            maximize(ds, pin, Normalization.fix_coefficient(0), SolverConfig(n_starts=2))


class TestScaleInvariance:
    @pytest.fixture
    def ds(self):
        return random_dataset(31, n_rows=40, n_x=3, n_y=3)

    @pytest.mark.parametrize("factor", [0.01, 7.0, 1000.0])
    @pytest.mark.parametrize("column", ["x1", "x2", "x3", "y1", "y2", "y3"])
    def test_units_change_rescales_only_that_weight(self, ds, column, factor):
        labels = weight_labels(ds)
        norm = Normalization.fix_coefficient(1 if column == "x1" else 0)
        before = maximize(ds, [], norm)
        after = maximize(rescale_column(ds, column, factor), [], norm)

        position = labels.index(("a." if column.startswith("x") else "b.") + column)
        expected = before.weights.vector.copy()
        expected[position] /= factor
        np.testing.assert_allclose(after.weights.vector, expected, rtol=1e-6, atol=1e-10 * np.abs(expected).max())
        assert abs(after.correlation - before.correlation) <= 1e-8

    def test_normalization_choice_only_rescales(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((60, 3))
        y = rng.standard_normal((60, 2))
        y[:, 0] += x @ np.array([1.0, 2.0, 1.0])
        ds = Dataset.from_arrays({f"x{i}": x[:, i] for i in range(3)}, {f"y{j}": y[:, j] for j in range(2)})
        fixed = maximize(ds, [], Normalization.fix_coefficient(0))
        summed = maximize(ds, [], Normalization.sum_to_one(Side.X))
        assert summed.correlation == pytest.approx(fixed.correlation, abs=1e-10)
        assert np.sum(summed.weights.a) == pytest.approx(1.0)
        for u, v in ((fixed.weights.a, summed.weights.a), (fixed.weights.b, summed.weights.b)):
            cosine = u @ v / (np.linalg.norm(u) * np.linalg.norm(v))
            assert cosine >= 1 - 1e-8


class TestTarget:
    @pytest.fixture
    def setup(self):
        ds = ordered_outcomes()
        norm = build_normalization(NormalizationSpec(coefficient="b.y2"), weight_labels(ds))
        order = [ge(ds, {"b.y1": 1, "b.y2": -1})]
        cfg = SolverConfig(n_starts=4, rng_seed=3)
        best = maximize(ds, order, norm, cfg)
        return ds, norm, order, cfg, best

    def test_order_binds_at_maximum(self, setup):
        ds, norm, order, cfg, best = setup
        assert best.status is FitStatus.OPTIMAL
        assert best.correlation < 0.95
        assert best.weights.b[0] == pytest.approx(best.weights.b[1], abs=1e-6)

    def test_target_at_maximum_returns_maximizer(self, setup):
        ds, norm, order, cfg, best = setup
        res = solve_for_target(ds, order, norm, best.correlation, cfg)
        assert res.status is FitStatus.OPTIMAL
        assert res.correlation == pytest.approx(best.correlation, abs=1e-6)

    def test_relaxed_target_is_reached_and_weights_separate(self, setup):
        ds, norm, order, cfg, best = setup
        target = best.correlation - 0.01
        res = solve_for_target(ds, order, norm, target, cfg)
        assert res.status is FitStatus.OPTIMAL
        assert abs(res.correlation - target) <= 1e-6
        assert res.maximum == pytest.approx(best.correlation)
        assert res.weights.b[1] == pytest.approx(1.0, abs=1e-8)
        assert order[0].violation(res.weights.vector) <= 1e-8
        assert res.weights.b[0] > res.weights.b[1] + 1e-6

    def test_unreachable_target(self, setup):
        ds, norm, order, cfg, best = setup
        res = solve_for_target(ds, order, norm, best.correlation + 0.05, cfg)
        assert res.status is FitStatus.INFEASIBLE
        assert res.maximum == pytest.approx(best.correlation)

    def test_target_out_of_range(self, setup):
        ds, norm, order, cfg, best = setup
        with pytest.raises(ConfigError):
            solve_for_target(ds, order, norm, 1.0, cfg)


class TestRescale:
    def make(self, a, b):
        return FitResult(weights=WeightPair(a, b), correlation=0.7, status=FitStatus.OPTIMAL)

    def test_fix_y_coefficient(self):
        res = rescale_result(self.make([1.0], [5.742, 2.0, 2.0]), Normalization.fix_coefficient(2))
        np.testing.assert_allclose(res.weights.b, [2.871, 1.0, 1.0])
        np.testing.assert_allclose(res.weights.a, [1.0])
        assert res.correlation == 0.7

    def test_sum_to_one(self):
        res = rescale_result(self.make([2.0, 2.0], [1.0]), Normalization.sum_to_one("x"))
        np.testing.assert_allclose(res.weights.a, [0.5, 0.5])

    def test_correlation_unchanged(self, make_dataset):
        ds = make_dataset(6)
        fit = maximize(ds, [], Normalization.fix_coefficient(0))
        res = rescale_result(fit, Normalization.fix_coefficient(4, -2.0))
        assert res.weights.b[1] == pytest.approx(-2.0)
        assert correlation_of_weights(ds, res.weights) == pytest.approx(fit.correlation, abs=1e-12)

    def test_zero_coefficient(self):
        with pytest.raises(ConstraintError):
            rescale_result(self.make([1.0, 0.0], [1.0]), Normalization.fix_coefficient(1))

    def test_vanishing_normalized_quantity(self):
        w = WeightPair([1e-12, 1.0], [1.0])
        assert normalized_weights(w, Normalization.fix_coefficient(0)).a[1] == pytest.approx(1e12)
        with pytest.raises(ConstraintError):
            normalized_weights(w, Normalization.fix_coefficient(0), floor=1e-9)


class TestAscent:
    def test_projection_failure_reports_iteration(self, make_dataset):
        ds = make_dataset(3)
        objective = CorrelationObjective(*side_matrices(ds))
        calls = []

        def project(v):
            calls.append(v)
            return np.asarray(v) if len(calls) == 1 else None

        run = spg_ascent(objective.value_and_gradient, np.ones(objective.size), project, SolverConfig())
        assert run.status is FitStatus.NUMERICAL_FAILURE
        assert run.iterations == 1
        np.testing.assert_array_equal(run.w, np.ones(objective.size))

    def test_renormalize_keeps_value(self, make_dataset):
        ds = make_dataset(5)
        objective = CorrelationObjective(*side_matrices(ds))
        seen = []

        def renormalize(w):
            seen.append(w)
            return w / np.linalg.norm(w)

        run = spg_ascent(
            objective.value_and_gradient, np.ones(objective.size), np.asarray, SolverConfig(), renormalize=renormalize
        )
        assert run.status is FitStatus.OPTIMAL
        assert seen
        assert np.linalg.norm(run.w) == pytest.approx(1.0)
        assert run.value == pytest.approx(cca_first_pair(ds).rho, abs=1e-8)


class TestAcceptance:
    def test_hundred_default_fits_within_budget(self):
        started = time.perf_counter()
        for seed in range(100):
            ds = random_dataset(seed)
            res = maximize(ds, [], Normalization.fix_coefficient(0))
            assert res.status is FitStatus.OPTIMAL
            assert abs(res.correlation - cca_first_pair(ds).rho) <= 1e-6
        assert time.perf_counter() - started < 30.0
