"""
Constrained maximization of the composite correlation.

The weights are optimized in standardized coordinates (every active column
scaled to zero mean and unit variance) by a spectral projected gradient
ascent: Barzilai-Borwein step lengths, a nonmonotone backtracking line search
with safeguarded quadratic interpolation, and Euclidean projection onto the
constraint polyhedron through a dense active-set QP (quadprog). Sides whose
constraints are homogeneous are optimized up to scale, including the
normalized side, and the fit is mapped onto the normalization afterwards.
Several seeded starts are run and merged deterministically.
"""

from collections import deque
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import quadprog
import structlog
from scipy import linalg, optimize

from .config import ConstraintSpec, NormalizationSpec, SolverConfig
from .dataset import Dataset, Side
from .errors import ConfigError, ConstraintError, DegenerateCompositeError, DimensionError
from .stats import CorrelationObjective, WeightPair, correlation_of_weights, side_matrices, standardize

logger = structlog.get_logger(__name__)

AGREEMENT_TOLERANCE = 1e-6
TIE_TOLERANCE = 1e-12
TARGET_TOLERANCE = 1e-6
MAX_REDRAWS = 100
NONMONOTONE_MEMORY = 10
SUFFICIENT_INCREASE = 1e-4
STEP_MIN, STEP_MAX = 1e-10, 1e10
CONVERGENCE_FLOOR = 2e-15
NORMALIZER_FLOOR = 1e-9


class Relation(str, Enum):
    LE = "<="
    EQ = "="
    GE = ">="


@dataclass(frozen=True, eq=False)
class LinearConstraint:
    """``coeffs @ (a, b)  <relation>  rhs`` over the stacked weight vector."""

    coeffs: np.ndarray
    relation: Relation
    rhs: float

    def __post_init__(self) -> None:
        coeffs = np.array(self.coeffs, dtype=float).reshape(-1)
        if not np.all(np.isfinite(coeffs)) or not np.any(coeffs):
            raise ConstraintError("constraint coefficients must be finite and not all zero")
        if not np.isfinite(self.rhs):
            raise ConstraintError("constraint right-hand side must be finite")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "relation", Relation(self.relation))
        object.__setattr__(self, "rhs", float(self.rhs))

    def violation(self, w: Any) -> float:
        lhs = float(self.coeffs @ np.asarray(w, dtype=float))
        if self.relation is Relation.EQ:
            return abs(lhs - self.rhs)
        if self.relation is Relation.GE:
            return max(self.rhs - lhs, 0.0)
        return max(lhs - self.rhs, 0.0)


class NormalizationKind(str, Enum):
    FIX_COEFFICIENT = "fix_coefficient"
    SUM_TO_ONE = "sum_to_one"


@dataclass(frozen=True)
class Normalization:
    """The single scale-fixing equality that excludes the all-zero solution."""

    kind: NormalizationKind
    index: Optional[int] = None
    value: float = 1.0
    side: Optional[Side] = None

    @classmethod
    def fix_coefficient(cls, index: int, value: float = 1.0) -> "Normalization":
        if value == 0:
            raise ConstraintError("a coefficient cannot be fixed to zero")
        return cls(NormalizationKind.FIX_COEFFICIENT, index=int(index), value=float(value))

    @classmethod
    def sum_to_one(cls, side: Union[Side, str]) -> "Normalization":
        return cls(NormalizationKind.SUM_TO_ONE, side=Side(side))

    def side_of(self, n_x: int) -> Side:
        if self.kind is NormalizationKind.SUM_TO_ONE:
            return self.side
        return Side.X if self.index < n_x else Side.Y

    def row(self, n_x: int, n_total: int) -> Tuple[np.ndarray, float]:
        coeffs = np.zeros(n_total)
        if self.kind is NormalizationKind.FIX_COEFFICIENT:
            if not 0 <= self.index < n_total:
                raise ConstraintError(f"normalized coefficient index {self.index} out of range")
            coeffs[self.index] = 1.0
            return coeffs, self.value
        if self.side is Side.X:
            coeffs[:n_x] = 1.0
        else:
            coeffs[n_x:] = 1.0
        return coeffs, 1.0

    def describe(self, labels: Sequence[str]) -> Dict[str, Any]:
        if self.kind is NormalizationKind.FIX_COEFFICIENT:
            return {"kind": self.kind.value, "coefficient": labels[self.index], "value": self.value}
        return {"kind": self.kind.value, "side": self.side.value}


class FitStatus(str, Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max_iterations"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class StartRecord:
    index: int
    correlation: Optional[float]
    status: str
    iterations: int


@dataclass(frozen=True, eq=False)
class FitResult:
    weights: Optional[WeightPair]
    correlation: Optional[float]
    status: FitStatus
    starts_agreeing: int = 0
    iterations: int = 0
    starts: Tuple[StartRecord, ...] = ()
    projected_gradient_norm: Optional[float] = None
    max_violation: Optional[float] = None
    target: Optional[float] = None
    maximum: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": self.status.value,
            "correlation": self.correlation,
            "weights": self.weights.to_dict() if self.weights is not None else None,
            "starts_agreeing": self.starts_agreeing,
            "iterations": self.iterations,
            "projected_gradient_norm": self.projected_gradient_norm,
            "max_violation": self.max_violation,
            "target": self.target,
            "maximum": self.maximum,
            "starts": [
                {"index": s.index, "correlation": s.correlation, "status": s.status, "iterations": s.iterations}
                for s in self.starts
            ],
        }


def build_constraints(specs: Sequence[ConstraintSpec], labels: Sequence[str]) -> List[LinearConstraint]:
    """Turn label-keyed constraint specs into coefficient vectors; unreferenced weights get 0."""
    position = {label: i for i, label in enumerate(labels)}
    constraints = []
    for spec in specs:
        coeffs = np.zeros(len(labels))
        for label, value in spec.coeffs.items():
            if label not in position:
                raise ConstraintError(
                    f"constraint references unknown or constant-column weight '{label}'"
                )
            coeffs[position[label]] = value
        constraints.append(LinearConstraint(coeffs, Relation(spec.relation), spec.rhs))
    return constraints


def build_normalization(spec: Optional[NormalizationSpec], labels: Sequence[str]) -> Normalization:
    """Resolve a normalization spec; the default fixes the first x-side weight to 1."""
    if spec is None:
        return Normalization.fix_coefficient(0, 1.0)
    if spec.kind == "sum_to_one":
        return Normalization.sum_to_one(spec.side)
    label = spec.coefficient or labels[0]
    if label not in labels:
        raise ConstraintError(f"normalization references unknown or constant-column weight '{label}'")
    return Normalization.fix_coefficient(list(labels).index(label), spec.value)


class Polyhedron:
    """``E w = e`` and ``G w >= g``, with feasibility search and Euclidean projection."""

    def __init__(
        self,
        eq_rows: np.ndarray,
        eq_rhs: np.ndarray,
        ge_rows: np.ndarray,
        ge_rhs: np.ndarray,
        tolerance: float,
    ) -> None:
        self.e = np.asarray(eq_rhs, dtype=float).reshape(-1)
        self.g = np.asarray(ge_rhs, dtype=float).reshape(-1)
        eq_rows = np.asarray(eq_rows, dtype=float)
        ge_rows = np.asarray(ge_rows, dtype=float)
        self.n = eq_rows.shape[-1] if eq_rows.size else ge_rows.shape[-1]
        self.E = eq_rows.reshape(-1, self.n)
        self.G = ge_rows.reshape(-1, self.n)
        self.tolerance = tolerance

    def max_violation(self, w: np.ndarray) -> float:
        worst = float(np.max(np.abs(self.E @ w - self.e), initial=0.0))
        if len(self.g):
            worst = max(worst, float(np.max(self.g - self.G @ w, initial=0.0)))
        return worst

    def find_feasible(self) -> Optional[np.ndarray]:
        """Phase 1: least squares of the violations, with slacks on the inequalities."""
        m_in = len(self.g)
        top = np.hstack([self.E, np.zeros((len(self.e), m_in))])
        bottom = np.hstack([self.G, -np.eye(m_in)])
        system = np.vstack([top, bottom])
        rhs = np.concatenate([self.e, self.g])
        lower = np.concatenate([np.full(self.n, -np.inf), np.zeros(m_in)])
        upper = np.full(self.n + m_in, np.inf)
        if m_in:
            solution = optimize.lsq_linear(system, rhs, bounds=(lower, upper), method="trf", tol=1e-12).x
        else:
            solution = linalg.lstsq(system, rhs)[0]
        w = solution[: self.n]
        violation = self.max_violation(w)
        logger.debug("phase one", max_violation=violation)
        return w if violation <= self.tolerance else None

    def project(self, v: np.ndarray) -> Optional[np.ndarray]:
        v = np.asarray(v, dtype=float)
        if not len(self.e) and not len(self.g):
            return v.copy()
        C = np.vstack([self.E, self.G]).T.copy()
        b = np.concatenate([self.e, self.g])
        try:
            w = quadprog.solve_qp(np.eye(self.n), v.copy(), C, b, len(self.e))[0]
            if self.max_violation(w) <= self.tolerance:
                return w
        except ValueError:
            pass
        return self._project_slsqp(v)

    def _project_slsqp(self, v: np.ndarray) -> Optional[np.ndarray]:
        # quadprog rejects linearly dependent equalities; SLSQP tolerates them.
        constraints = []
        if len(self.e):
            constraints.append({"type": "eq", "fun": lambda x: self.E @ x - self.e, "jac": lambda x: self.E})
        if len(self.g):
            constraints.append({"type": "ineq", "fun": lambda x: self.G @ x - self.g, "jac": lambda x: self.G})
        result = optimize.minimize(
            lambda x: 0.5 * float((x - v) @ (x - v)),
            v,
            jac=lambda x: x - v,
            method="SLSQP",
            constraints=constraints,
            options={"ftol": 1e-15, "maxiter": 500},
        )
        w = result.x
        return w if self.max_violation(w) <= self.tolerance else None

    def interior_point(self) -> Optional[np.ndarray]:
        """Point on the equalities maximizing the smallest inequality slack (capped at 1).

        None when there are no inequalities or none can be made strictly slack.
        """
        m_in = len(self.g)
        if not m_in:
            return None
        cost = np.zeros(self.n + 1)
        cost[-1] = -1.0
        result = optimize.linprog(
            cost,
            A_ub=np.hstack([-self.G, np.ones((m_in, 1))]),
            b_ub=-self.g,
            A_eq=np.hstack([self.E, np.zeros((len(self.e), 1))]) if len(self.e) else None,
            b_eq=self.e if len(self.e) else None,
            bounds=[(None, None)] * self.n + [(None, 1.0)],
            method="highs",
        )
        if result.status != 0 or result.x[-1] <= 1e-9:
            return None
        return result.x[: self.n]


@dataclass
class _Ascent:
    w: np.ndarray
    value: float
    status: FitStatus
    iterations: int
    projected_gradient_norm: float


ObjectiveFn = Callable[[np.ndarray], Tuple[Optional[float], Optional[np.ndarray]]]


def spg_ascent(
    objective: ObjectiveFn,
    w0: np.ndarray,
    project: Callable[[np.ndarray], Optional[np.ndarray]],
    cfg: SolverConfig,
    stop_when: Optional[Callable[[float], bool]] = None,
    renormalize: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> _Ascent:
    """Spectral projected gradient ascent from a feasible, non-degenerate ``w0``.

    Stops when the relative objective change stays below ``cfg.convergence``
    for ``cfg.patience`` consecutive iterations AND the projected gradient
    norm is within ``cfg.gradient_tolerance``; a failed norm check tightens
    the convergence threshold tenfold and iteration continues. A projection
    failure ends the ascent with status numerical_failure at the last
    accepted point. ``renormalize`` maps each accepted iterate to an
    equivalent feasible point with the same objective value.
    """

    def pg_norm(w: np.ndarray, g: np.ndarray) -> float:
        projected = project(w + g)
        return float(np.max(np.abs(projected - w))) if projected is not None else np.inf

    w = np.asarray(w0, dtype=float)
    f, g = objective(w)
    if f is None:
        raise DegenerateCompositeError("starting point has a degenerate composite")

    history = deque([f], maxlen=NONMONOTONE_MEMORY)
    first = pg_norm(w, g)
    alpha = float(np.clip(1.0 / first, STEP_MIN, STEP_MAX)) if first > 0 else 1.0
    convergence = cfg.convergence
    calm = 0

    if stop_when is not None and stop_when(f):
        return _Ascent(w, f, FitStatus.OPTIMAL, 0, first)

    for iteration in range(1, cfg.max_iterations + 1):
        target = project(w + alpha * g)
        if target is None:
            logger.warning("projection failed", iteration=iteration)
            return _Ascent(w, f, FitStatus.NUMERICAL_FAILURE, iteration, pg_norm(w, g))
        d = target - w
        slope = float(g @ d)
        if not np.any(d) or slope <= 0:
            norm = pg_norm(w, g)
            if norm <= cfg.gradient_tolerance:
                return _Ascent(w, f, FitStatus.OPTIMAL, iteration, norm)
            alpha = float(np.clip(alpha * 0.1, STEP_MIN, STEP_MAX))
            continue

        reference = min(history)
        slack = 1e-14 * max(1.0, abs(f))
        t = 1.0
        while True:
            trial = w + t * d
            f_trial, g_trial = objective(trial)
            if f_trial is not None and f_trial >= reference + SUFFICIENT_INCREASE * t * slope - slack:
                break
            if f_trial is None:
                t_new = 0.5 * t
            else:
                # Maximizer of the quadratic through f(0), f'(0) and f(t).
                curvature = 2.0 * (slope * t - (f_trial - f))
                t_new = slope * t * t / curvature if curvature > 0 else 0.5 * t
            t = float(np.clip(t_new, 0.1 * t, 0.5 * t))
            if t < 1e-16:
                f_trial = None
                break

        if f_trial is None:
            norm = pg_norm(w, g)
            logger.debug("line search stalled", iteration=iteration, projected_gradient_norm=norm)
            status = FitStatus.OPTIMAL if norm <= cfg.gradient_tolerance else FitStatus.MAX_ITERATIONS
            return _Ascent(w, f, status, iteration, norm)

        if renormalize is not None:
            trial = renormalize(trial)
            f_trial, g_trial = objective(trial)

        s = trial - w
        y = g_trial - g
        curvature = -float(s @ y)
        alpha = float(np.clip(s @ s / curvature, STEP_MIN, STEP_MAX)) if curvature > 0 else STEP_MAX

        change = abs(f_trial - f) / max(abs(f), 1e-300)
        w, f, g = trial, f_trial, g_trial
        history.append(f)

        if stop_when is not None and stop_when(f):
            return _Ascent(w, f, FitStatus.OPTIMAL, iteration, pg_norm(w, g))

        calm = calm + 1 if change < convergence else 0
        if calm >= cfg.patience:
            norm = pg_norm(w, g)
            if norm <= cfg.gradient_tolerance:
                return _Ascent(w, f, FitStatus.OPTIMAL, iteration, norm)
            convergence = max(convergence * 0.1, CONVERGENCE_FLOOR)
            calm = 0

    return _Ascent(w, f, FitStatus.MAX_ITERATIONS, cfg.max_iterations, pg_norm(w, g))


class _Problem:
    """A constrained correlation problem restated in standardized coordinates.

    When every constraint touching the normalized side is homogeneous and
    confined to that side, the normalization equality is replaced by the
    half-space from which a positive rescaling reaches it. That side is then
    optimized up to scale and the fit is mapped onto the normalization at the
    end. ``chart`` always holds the system with the normalization equality.
    """

    def __init__(
        self,
        ds: Dataset,
        constraints: Sequence[LinearConstraint],
        norm: Normalization,
        cfg: SolverConfig,
        free_normalized_side: bool = True,
    ) -> None:
        self.ds = ds
        self.cfg = cfg
        x_matrix, y_matrix = side_matrices(ds)
        zx, _, sd_x = standardize(x_matrix)
        zy, _, sd_y = standardize(y_matrix)
        self.objective = CorrelationObjective(zx, zy)
        self.n_x = zx.shape[1]
        self.n = self.objective.size
        self.sd = np.concatenate([sd_x, sd_y])
        self.x_names, self.y_names = ds.x_names, ds.y_names

        for c in constraints:
            if len(c.coeffs) != self.n:
                raise DimensionError(f"constraint has {len(c.coeffs)} coefficients, expected {self.n}")
        self.constraints = list(constraints)
        self.norm = norm
        self.normalized_side = norm.side_of(self.n_x)

        eq_rows: List[np.ndarray] = []
        eq_rhs: List[float] = []
        ge_rows: List[np.ndarray] = []
        ge_rhs: List[float] = []
        for c in self.constraints:
            if c.relation is Relation.EQ:
                eq_rows.append(c.coeffs)
                eq_rhs.append(c.rhs)
            elif c.relation is Relation.GE:
                ge_rows.append(c.coeffs)
                ge_rhs.append(c.rhs)
            else:
                ge_rows.append(-c.coeffs)
                ge_rhs.append(-c.rhs)
        norm_row, norm_rhs = norm.row(self.n_x, self.n)
        self.chart = self._polyhedron(eq_rows + [norm_row], eq_rhs + [norm_rhs], ge_rows, ge_rhs)
        self.free_scale = free_normalized_side and self._is_homogeneous(self.normalized_side)
        if self.free_scale:
            half_space = float(np.sign(norm_rhs)) * norm_row
            self.polyhedron = self._polyhedron(eq_rows, eq_rhs, ge_rows + [half_space], ge_rhs + [0.0])
        else:
            self.polyhedron = self.chart

        self.scale_free = [
            side
            for side in Side
            if self._is_homogeneous(side) and (self.free_scale or side is not self.normalized_side)
        ]
        # Scale-free sides bound only by equalities may also change sign.
        self.flippable = [
            side
            for side in self.scale_free
            if side is not self.normalized_side
            and not any(
                c.relation is not Relation.EQ and np.any(c.coeffs[self._mask(side)]) for c in self.constraints
            )
        ]
        self.log = logger.bind(
            component="solver", weights=self.n, constraints=len(self.constraints), free_scale=self.free_scale
        )

    def _polyhedron(
        self, eq_rows: List[np.ndarray], eq_rhs: List[float], ge_rows: List[np.ndarray], ge_rhs: List[float]
    ) -> Polyhedron:
        # Original-space rows C w become (C / sd) w_std in standardized space.
        return Polyhedron(
            np.array(eq_rows).reshape(-1, self.n) / self.sd,
            np.array(eq_rhs, dtype=float),
            np.array(ge_rows).reshape(-1, self.n) / self.sd,
            np.array(ge_rhs, dtype=float),
            self.cfg.feasibility_tolerance,
        )

    def in_chart(self) -> "_Problem":
        """The same problem solved directly on the normalization equality."""
        return _Problem(self.ds, self.constraints, self.norm, self.cfg, free_normalized_side=False)

    def _mask(self, side: Side) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        if side is Side.X:
            mask[: self.n_x] = True
        else:
            mask[self.n_x :] = True
        return mask

    def _is_homogeneous(self, side: Side) -> bool:
        mask = self._mask(side)
        for c in self.constraints:
            if np.any(c.coeffs[mask]) and (np.any(c.coeffs[~mask]) or c.rhs != 0):
                return False
        return True

    def canonical(self, w: np.ndarray) -> np.ndarray:
        """Scale every scale-free side so its composite has unit standard deviation."""
        w = w.copy()
        for side in self.scale_free:
            mask = self._mask(side)
            z = self.objective.x if side is Side.X else self.objective.y
            spread = float(np.std(z @ w[mask]))
            if spread > 0:
                w[mask] = w[mask] / spread
        return w

    def to_weights(self, w_std: np.ndarray) -> WeightPair:
        return WeightPair.from_vector(w_std / self.sd, self.n_x, self.x_names, self.y_names)

    def finish(self, w_std: np.ndarray) -> Optional[WeightPair]:
        """Original-space weights on the requested normalization.

        None when the side was optimized up to scale and its normalized
        quantity vanishes at ``w_std``.
        """
        weights = self.to_weights(self.canonical(w_std))
        if not self.free_scale:
            return weights
        try:
            return normalized_weights(weights, self.norm, floor=NORMALIZER_FLOOR)
        except ConstraintError:
            return None

    def original_violation(self, weights: WeightPair) -> float:
        w = weights.vector
        row, rhs = self.norm.row(self.n_x, self.n)
        worst = abs(float(row @ w) - rhs)
        for c in self.constraints:
            worst = max(worst, c.violation(w))
        return worst

    def orient(self, w: np.ndarray) -> np.ndarray:
        """Negate a sign-free side when the start correlates negatively."""
        value = self.objective.value(w)
        if self.flippable and value is not None and value < 0:
            w = w.copy()
            mask = self._mask(self.flippable[0])
            w[mask] = -w[mask]
        return w

    def draw_start(self, rng: np.random.Generator) -> Optional[np.ndarray]:
        for _ in range(MAX_REDRAWS):
            w = self.chart.project(rng.uniform(-1.0, 1.0, self.n))
            if w is not None and not self.objective.is_degenerate(w):
                return self.orient(self.canonical(w))
        return None

    @cached_property
    def center(self) -> Optional[np.ndarray]:
        return self.polyhedron.interior_point()

    def draw_interior(self, rng: np.random.Generator) -> Optional[np.ndarray]:
        """A random feasible point, pulled halfway to the most-slack point so every inequality is strictly slack."""
        for _ in range(MAX_REDRAWS):
            w = self.polyhedron.project(rng.uniform(-1.0, 1.0, self.n))
            if w is None:
                continue
            if self.center is not None:
                w = 0.5 * (w + self.center)
            if not self.objective.is_degenerate(w):
                return self.canonical(w)
        return self.draw_start(rng)

    @property
    def renormalize(self) -> Optional[Callable[[np.ndarray], np.ndarray]]:
        return self.canonical if self.scale_free else None


def _start_rngs(cfg: SolverConfig) -> List[np.random.Generator]:
    children = np.random.SeedSequence(cfg.rng_seed).spawn(cfg.n_starts)
    return [np.random.default_rng(child) for child in children]


def _infeasible(target: Optional[float] = None, maximum: Optional[float] = None) -> FitResult:
    return FitResult(weights=None, correlation=None, status=FitStatus.INFEASIBLE, target=target, maximum=maximum)


def _improves(run: _Ascent, best: _Ascent) -> bool:
    """Higher correlation wins; within the tie tolerance a converged start beats an unconverged one."""
    if run.value > best.value + TIE_TOLERANCE:
        return True
    return (
        run.value >= best.value - TIE_TOLERANCE
        and run.status is FitStatus.OPTIMAL
        and best.status is not FitStatus.OPTIMAL
    )


def _maximize(problem: _Problem) -> Tuple[FitResult, Optional[np.ndarray], _Problem]:
    cfg = problem.cfg
    log = problem.log
    if problem.chart.find_feasible() is None:
        log.warning("constraint system is infeasible")
        return _infeasible(), None, problem

    best: Optional[_Ascent] = None
    best_index = -1
    records = []
    for k, rng in enumerate(_start_rngs(cfg)):
        w0 = problem.draw_start(rng)
        if w0 is None:
            log.warning("start degenerate after redraws", start=k)
            records.append(StartRecord(k, None, "degenerate", 0))
            continue
        run = spg_ascent(
            problem.objective.value_and_gradient,
            w0,
            problem.polyhedron.project,
            cfg,
            renormalize=problem.renormalize,
        )
        run = replace(run, w=problem.canonical(run.w))
        records.append(StartRecord(k, run.value, run.status.value, run.iterations))
        log.debug("start finished", start=k, correlation=run.value, status=run.status.value, iterations=run.iterations)
        if best is None or _improves(run, best):
            best, best_index = run, k

    if best is None:
        raise DegenerateCompositeError("every feasible start produced a degenerate composite")

    weights = problem.finish(best.w)
    if weights is None:
        log.warning("maximum reached where the normalized weights vanish; solving on the normalization")
        return _maximize(problem.in_chart())

    correlation = correlation_of_weights(problem.ds, weights)
    agreeing = sum(
        1 for r in records if r.correlation is not None and r.correlation >= best.value - AGREEMENT_TOLERANCE
    )
    violation = problem.original_violation(weights)
    status = best.status
    if violation > cfg.feasibility_tolerance:
        log.warning("returned weights violate constraints", max_violation=violation)
        status = FitStatus.NUMERICAL_FAILURE

    log.info(
        "fit finished",
        correlation=correlation,
        status=status.value,
        best_start=best_index,
        starts_agreeing=agreeing,
        starts=len(records),
    )
    result = FitResult(
        weights=weights,
        correlation=correlation,
        status=status,
        starts_agreeing=agreeing,
        iterations=best.iterations,
        starts=tuple(records),
        projected_gradient_norm=best.projected_gradient_norm,
        max_violation=violation,
    )
    return result, best.w, problem


def maximize(
    ds: Dataset,
    constraints: Sequence[LinearConstraint],
    norm: Normalization,
    cfg: Optional[SolverConfig] = None,
) -> FitResult:
    """Best constrained composite correlation over ``cfg.n_starts`` seeded starts."""
    problem = _Problem(ds, constraints, norm, cfg or SolverConfig())
    return _maximize(problem)[0]


def solve_for_target(
    ds: Dataset,
    constraints: Sequence[LinearConstraint],
    norm: Normalization,
    target: float,
    cfg: Optional[SolverConfig] = None,
) -> FitResult:
    """Feasible weights whose composite correlation equals ``target``.

    From each start's strictly feasible point the search either walks the
    segment towards the constrained maximizer (root of ``r - target`` by
    Brent's method) or, when the point already exceeds the target, descends
    ``(r - target)**2`` by projected gradient. The first success is returned.
    """
    if not -1.0 < target < 1.0:
        raise ConfigError(f"target correlation must lie in (-1, 1), got {target}")
    best, w_star, problem = _maximize(_Problem(ds, constraints, norm, cfg or SolverConfig()))
    cfg = problem.cfg
    log = problem.log.bind(target=target)

    if best.status is FitStatus.INFEASIBLE or w_star is None:
        return replace(best, target=target)
    maximum = best.correlation
    if target > maximum + TARGET_TOLERANCE:
        log.warning("target above constrained maximum", maximum=maximum)
        return _infeasible(target, maximum)
    if abs(target - maximum) <= TARGET_TOLERANCE:
        return replace(best, target=target, maximum=maximum)

    objective = problem.objective

    def gap(w: np.ndarray) -> Tuple[Optional[float], Optional[np.ndarray]]:
        r, g = objective.value_and_gradient(w)
        if r is None or g is None:
            return None, None
        return -((r - target) ** 2), -2.0 * (r - target) * g

    for k, rng in enumerate(_start_rngs(cfg)):
        w_s = problem.draw_interior(rng)
        if w_s is None:
            continue
        r_s = objective.value(w_s)
        if r_s is None:
            continue

        if r_s <= target:
            direction = w_s - w_star

            def along(theta: float) -> float:
                r = objective.value(w_star + theta * direction)
                if r is None:
                    raise DegenerateCompositeError("degenerate composite along the search segment")
                return r - target

            try:
                theta = optimize.brentq(along, 0.0, 1.0, xtol=1e-15, rtol=1e-14, maxiter=200)
            except (ValueError, DegenerateCompositeError):
                continue
            w = w_star + theta * direction
            iterations = 0
            pg = None
        else:
            run = spg_ascent(
                gap,
                w_s,
                problem.polyhedron.project,
                cfg,
                stop_when=lambda v: v >= -1e-16,
                renormalize=problem.renormalize,
            )
            w = run.w
            iterations = run.iterations
            pg = run.projected_gradient_norm

        weights = problem.finish(w)
        if weights is None:
            log.debug("start ended where the normalized weights vanish", start=k)
            continue
        correlation = correlation_of_weights(ds, weights)
        violation = problem.original_violation(weights)
        if abs(correlation - target) <= TARGET_TOLERANCE and violation <= cfg.feasibility_tolerance:
            log.info("target reached", start=k, correlation=correlation, maximum=maximum)
            return FitResult(
                weights=weights,
                correlation=correlation,
                status=FitStatus.OPTIMAL,
                starts_agreeing=best.starts_agreeing,
                iterations=iterations,
                starts=best.starts,
                projected_gradient_norm=pg,
                max_violation=violation,
                target=target,
                maximum=maximum,
            )
        log.debug("start missed target", start=k, correlation=correlation)

    log.warning("target not reachable from any start", maximum=maximum)
    return _infeasible(target, maximum)


def normalized_weights(w: WeightPair, norm: Normalization, floor: float = 0.0) -> WeightPair:
    """``w`` rescaled per side so that it satisfies ``norm``; the correlation is unchanged.

    Raises ConstraintError when the normalized quantity is zero, or no larger
    than ``floor`` times the largest weight magnitude on its side.
    """
    n_x = len(w.a)
    side = norm.side_of(n_x)
    on_side = w.a if side is Side.X else w.b
    scale = float(np.max(np.abs(on_side), initial=0.0))
    if norm.kind is NormalizationKind.FIX_COEFFICIENT:
        if not 0 <= norm.index < len(w.vector):
            raise ConstraintError(f"normalized coefficient index {norm.index} out of range")
        current = float(w.vector[norm.index])
        wanted = norm.value
        reason = f"coefficient {w.labels[norm.index]} is zero"
    else:
        current = float(np.sum(on_side))
        wanted = 1.0
        reason = f"{side.value}-side weights sum to zero"
    if current == 0 or abs(current) <= floor * scale:
        raise ConstraintError(f"cannot rescale: {reason}")
    factor = wanted / current

    # A negative factor flips the other side too, so the correlation keeps its sign.
    other = 1.0 if factor > 0 else -1.0
    if side is Side.X:
        return w.scaled(factor, other)
    return w.scaled(other, factor)


def rescale_result(res: FitResult, norm: Normalization) -> FitResult:
    """Re-express a fit under another normalization; the correlation is unchanged."""
    if res.weights is None:
        raise ConstraintError("cannot rescale a fit without weights")
    return replace(res, weights=normalized_weights(res.weights, norm))
