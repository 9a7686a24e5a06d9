"""
Exhaustive integer-coefficient correlation search.

Correlation is unchanged when either side's weights are multiplied by a
positive constant, and changes sign when one side is negated. Every integer
weight pair within ``[-bound, bound]`` is therefore visited once in a
canonical form: on each side the first nonzero entry is positive and the gcd
of the entries is 1, and the sign of the correlation carries the relative
orientation. The larger side's lattice is streamed in blocks and evaluated as
one matrix product against the smaller side's canonical vectors; only the
strongest ``top_k`` hits (plus near-ties of the weakest kept one) are held.
"""

import heapq
import itertools
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
import structlog

from .config import IntegerSearchConfig
from .dataset import Dataset, ZERO_VARIANCE_TOLERANCE
from .errors import DegenerateCompositeError, EnumerationLimitError
from .solver import TIE_TOLERANCE, FitResult
from .stats import WeightPair, side_matrices

logger = structlog.get_logger(__name__)

BLOCK_CELLS = 1_000_000


@dataclass(frozen=True)
class ResonanceHit:
    a: Tuple[int, ...]
    b: Tuple[int, ...]
    correlation: float
    x_names: Tuple[str, ...] = ()
    y_names: Tuple[str, ...] = ()

    @property
    def reduced(self) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
        return self.a, self.b

    def to_dict(self) -> Dict[str, Any]:
        return {
            "a": dict(zip(self.x_names, self.a)) if self.x_names else list(self.a),
            "b": dict(zip(self.y_names, self.b)) if self.y_names else list(self.b),
            "correlation": self.correlation,
        }


@dataclass(frozen=True)
class ResonanceReport:
    hits: Tuple[ResonanceHit, ...]
    enumeration_size: int
    evaluated: int
    degenerate: int


def enumeration_size(n_vars: int, bound: int) -> int:
    return (2 * bound + 1) ** n_vars


def _canonical(vectors: np.ndarray) -> np.ndarray:
    """Rows that are nonzero, lead with a positive entry and have gcd 1."""
    vectors = vectors[np.any(vectors != 0, axis=1)]
    lead = vectors[np.arange(len(vectors)), np.argmax(vectors != 0, axis=1)]
    vectors = vectors[lead > 0]
    return vectors[np.gcd.reduce(np.abs(vectors), axis=1) == 1]


def _lattice_blocks(n: int, bound: int, rows: int) -> Iterator[np.ndarray]:
    """Canonical integer vectors of length ``n`` within ``bound``, drawn ``rows`` lattice points at a time."""
    points = itertools.product(range(-bound, bound + 1), repeat=n)
    while True:
        chunk = list(itertools.islice(points, rows))
        if not chunk:
            return
        vectors = _canonical(np.array(chunk, dtype=np.int64))
        if len(vectors):
            yield vectors


def _composite_stats(matrix: np.ndarray, vectors: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    composites = matrix @ vectors.T
    spread = composites.std(axis=0)
    degenerate = spread < ZERO_VARIANCE_TOLERANCE * (np.mean(np.abs(composites), axis=0) + 1.0)
    centered = composites - composites.mean(axis=0)
    scale = np.where(degenerate, 1.0, spread * np.sqrt(len(matrix)))
    return centered / scale, degenerate, spread


_Entry = Tuple[float, int, float, Tuple[int, ...], Tuple[int, ...]]


def _size_rank(entry: _Entry) -> Tuple[Any, ...]:
    _, _, value, a, b = entry
    return (sum(abs(v) for v in a + b), value < 0, a, b)


class _TopK:
    """The ``k`` strongest hits by absolute correlation, plus every near-tie of the weakest kept one.

    Hits within ``TIE_TOLERANCE`` of each other rank by smallest total
    coefficient magnitude, then positive correlation first, then
    lexicographically.
    """

    def __init__(self, k: int) -> None:
        self.k = k
        self.heap: List[_Entry] = []
        self.fringe: List[_Entry] = []
        self.seen = 0

    @property
    def floor(self) -> float:
        return self.heap[0][0] - TIE_TOLERANCE if len(self.heap) >= self.k else -np.inf

    def offer(self, value: float, a: Tuple[int, ...], b: Tuple[int, ...]) -> None:
        entry = (abs(value), self.seen, value, a, b)
        self.seen += 1
        if len(self.heap) < self.k:
            heapq.heappush(self.heap, entry)
        elif entry[0] > self.heap[0][0]:
            self.fringe.append(heapq.heapreplace(self.heap, entry))
        elif entry[0] >= self.floor:
            self.fringe.append(entry)

    def prune(self) -> None:
        floor = self.floor
        self.fringe = [e for e in self.fringe if e[0] >= floor]

    def ranked(self) -> List[_Entry]:
        pool = sorted(self.heap + self.fringe, key=lambda e: (-e[0], e[1]))
        ordered: List[_Entry] = []
        start = 0
        while start < len(pool):
            head = pool[start][0]
            end = start
            while end < len(pool) and head - pool[end][0] <= TIE_TOLERANCE:
                end += 1
            ordered += sorted(pool[start:end], key=_size_rank)
            start = end
        return ordered[: self.k]


def integer_search(ds: Dataset, cfg: Optional[IntegerSearchConfig] = None) -> ResonanceReport:
    """The ``top_k`` canonical integer pairs ranked by absolute correlation."""
    cfg = cfg or IntegerSearchConfig()
    x, y = side_matrices(ds)
    p, q = x.shape[1], y.shape[1]
    size = enumeration_size(p + q, cfg.bound)
    log = logger.bind(component="resonance", bound=cfg.bound, variables=p + q)
    log.info("enumeration size", size=size, ceiling=cfg.ceiling)
    if size > cfg.ceiling:
        raise EnumerationLimitError(
            f"integer search over {p + q} variables with bound {cfg.bound} visits {size} "
            f"combinations, above the ceiling of {cfg.ceiling}; lower the bound or drop variables"
        )

    outer_is_x = p >= q
    outer_matrix, inner_matrix = (x, y) if outer_is_x else (y, x)
    inner = np.concatenate(list(_lattice_blocks(inner_matrix.shape[1], cfg.bound, BLOCK_CELLS)))
    z_inner, inner_degenerate, _ = _composite_stats(inner_matrix, inner)
    rows = max(1, BLOCK_CELLS // max(len(inner), len(outer_matrix)))

    pool = _TopK(cfg.top_k)
    evaluated = 0
    degenerate = 0
    for outer in _lattice_blocks(outer_matrix.shape[1], cfg.bound, rows):
        z_outer, outer_degenerate, _ = _composite_stats(outer_matrix, outer)
        r = np.clip(z_outer.T @ z_inner, -1.0, 1.0)
        broken = outer_degenerate[:, None] | inner_degenerate[None, :]
        degenerate += int(np.count_nonzero(broken))
        evaluated += int(np.count_nonzero(~broken))

        strength = np.where(broken, -1.0, np.abs(r)).ravel()
        cut = pool.floor
        if strength.size > cfg.top_k:
            cut = max(cut, float(np.partition(strength, -cfg.top_k)[-cfg.top_k]) - TIE_TOLERANCE)
        for flat in np.flatnonzero((strength >= cut) & (strength >= 0)):
            i, j = divmod(int(flat), len(inner))
            first = tuple(int(v) for v in outer[i])
            second = tuple(int(v) for v in inner[j])
            a, b = (first, second) if outer_is_x else (second, first)
            pool.offer(float(r[i, j]), a, b)
        pool.prune()

    hits = tuple(ResonanceHit(a, b, value, ds.x_names, ds.y_names) for _, _, value, a, b in pool.ranked())
    if degenerate:
        log.warning("degenerate composites skipped", count=degenerate)
    log.info("integer search finished", evaluated=evaluated, best=hits[0].correlation if hits else None)
    return ResonanceReport(hits, size, evaluated, degenerate)


@dataclass(frozen=True)
class IntegerReport:
    divisor: float
    scaled: Tuple[float, ...]
    nearest: Tuple[int, ...]
    distances: Tuple[float, ...]
    labels: Tuple[str, ...]
    threshold: float
    candidate: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "divisor": self.divisor,
            "threshold": self.threshold,
            "candidate": self.candidate,
            "coefficients": [
                {"weight": label, "scaled": s, "nearest": n, "distance": d}
                for label, s, n, d in zip(self.labels, self.scaled, self.nearest, self.distances)
            ],
        }


def nearest_integer_report(
    res: Union[FitResult, WeightPair],
    threshold: float,
    zero_tolerance: float = 0.0,
) -> IntegerReport:
    """Distance of every weight to the nearest integer after dividing by the
    smallest-magnitude nonzero weight.

    Weights with magnitude at most ``zero_tolerance`` times the largest one
    are not used as the divisor.
    """
    weights = res.weights if isinstance(res, FitResult) else res
    if weights is None:
        raise DegenerateCompositeError("fit has no weights")
    if threshold <= 0:
        raise ValueError("threshold must be positive")

    w = weights.vector
    magnitude = np.abs(w)
    largest = float(np.max(magnitude, initial=0.0))
    if largest == 0:
        raise DegenerateCompositeError("all weights are zero")
    usable = magnitude[magnitude > zero_tolerance * largest]
    divisor = float(np.min(usable[usable > 0]))

    scaled = w / divisor
    nearest = np.rint(scaled)
    distances = np.abs(scaled - nearest)
    candidate = bool(np.all(distances <= threshold))
    logger.info("nearest integer report", divisor=divisor, candidate=candidate, worst=float(np.max(distances)))
    return IntegerReport(
        divisor=divisor,
        scaled=tuple(float(v) for v in scaled),
        nearest=tuple(int(v) for v in nearest),
        distances=tuple(float(v) for v in distances),
        labels=tuple(weights.labels),
        threshold=float(threshold),
        candidate=candidate,
    )
