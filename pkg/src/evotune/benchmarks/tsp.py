"""TSP with guided local search driven by an evolved matrix updater.

The inner loop is deterministic best-improvement 2-opt on a working copy of
the distance matrix; after each local optimum the candidate's
``update_edge_distance`` rewrites the working matrix to push the search out
of the basin.  Tour quality is always measured on the true matrix, and
fitness is the negated mean percentage gap to the known optimum.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from evotune.benchmarks.base import CandidateFailure, FinalResult, seed_for, stable_id_hash
from evotune.configspace import ConfigAssignment, ConfigSpace, serialize_assignment

Updater = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]

_HELD_KARP_MAX = 13
_IMPROVE_EPS = 1e-9


class TooLarge(ValueError):
    """Exact solving is limited to small instances."""


class MatrixInvalid(ValueError):
    """An updater returned a malformed working matrix."""


@dataclass
class TspInstance:
    coords: np.ndarray
    dist: np.ndarray
    optimum_length: Optional[float] = None

    @property
    def n(self) -> int:
        return len(self.coords)


@dataclass
class GlsRun:
    working_matrix: np.ndarray
    edge_n_used: np.ndarray
    best_tour: np.ndarray
    best_length: float
    iterations: int


def distance_matrix(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt(np.sum(diff**2, axis=-1))


def gen_instance(n: int, rng: np.random.Generator) -> TspInstance:
    """n uniform points in the unit square with the full Euclidean matrix."""
    if n < 3:
        raise ValueError("need at least 3 nodes")
    coords = rng.uniform(0.0, 1.0, size=(n, 2))
    return TspInstance(coords=coords, dist=distance_matrix(coords))


def instance_from_coords(coords: Sequence[Sequence[float]], optimum_length: Optional[float] = None) -> TspInstance:
    arr = np.asarray(coords, dtype=float)
    return TspInstance(coords=arr, dist=distance_matrix(arr), optimum_length=optimum_length)


def tour_length(matrix: np.ndarray, tour: Sequence[int]) -> float:
    # summing the sorted edge multiset makes rotations/reflections of the
    # same cycle measure bitwise-identically (float addition is order-bound)
    t = np.asarray(tour)
    edges = matrix[t, np.roll(t, -1)]
    return float(np.sum(np.sort(edges)))


def local_search_2opt(matrix: np.ndarray, start_tour: Sequence[int]) -> np.ndarray:
    """Best-improvement 2-opt to a local optimum of the given matrix.

    Moves are scanned in lexicographic (i, j) edge-position order; the single
    best strict improvement is applied per pass until none remains, so the
    result is deterministic for a deterministic matrix.
    """
    tour = np.array(start_tour, dtype=np.int64)
    n = len(tour)
    if sorted(tour.tolist()) != list(range(n)):
        raise ValueError("start_tour must be a permutation of 0..n-1")
    if n < 4:
        return tour
    positions = np.arange(n)
    while True:
        nxt = np.roll(tour, -1)
        edge = matrix[tour, nxt]  # edge[i] = d(t_i, t_{i+1})
        cross = matrix[np.ix_(tour, tour)]
        cross_next = matrix[np.ix_(nxt, nxt)]
        # gain[i, j] replaces edges (i, i+1), (j, j+1) by (i, j), (i+1, j+1)
        gain = cross + cross_next - edge[:, None] - edge[None, :]
        invalid = positions[None, :] - positions[:, None] < 2
        gain = np.where(invalid, np.inf, gain)
        gain[0, n - 1] = np.inf  # wrap-around pair shares an endpoint
        flat = int(np.argmin(gain))
        i, j = divmod(flat, n)
        if gain[i, j] >= -_IMPROVE_EPS:
            return tour
        tour[i + 1 : j + 1] = tour[i + 1 : j + 1][::-1]


def _validate_matrix(candidate_matrix, n: int) -> np.ndarray:
    try:
        arr = np.asarray(candidate_matrix, dtype=float)
    except (TypeError, ValueError) as exc:
        raise MatrixInvalid(f"matrix not convertible to floats: {exc}") from None
    if arr.shape != (n, n):
        raise MatrixInvalid(f"expected shape {(n, n)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise MatrixInvalid("matrix contains non-finite entries")
    return arr


def gls_run(
    instance: TspInstance,
    updater: Updater,
    budget_iterations: int,
    rng: np.random.Generator,
    time_limit_s: Optional[float] = None,
) -> GlsRun:
    """Guided local search: one random start, then alternate 2-opt on the
    working matrix with candidate-driven matrix updates.

    Every local optimum bumps ``edge_n_used`` along its edges; the best tour
    is always measured on the true matrix.
    """
    if budget_iterations < 1:
        raise ValueError("budget_iterations must be >= 1")
    n = instance.n
    tour = rng.permutation(n).astype(np.int64)
    working = instance.dist.copy()
    edge_n_used = np.zeros((n, n), dtype=np.int64)
    best_tour = None
    best_length = math.inf
    started = time.monotonic()
    iterations = 0
    for _ in range(budget_iterations):
        iterations += 1
        tour = local_search_2opt(working, tour)
        true_length = tour_length(instance.dist, tour)
        if true_length < best_length:
            best_length = true_length
            best_tour = tour.copy()
        heads, tails = tour, np.roll(tour, -1)
        edge_n_used[heads, tails] += 1
        edge_n_used[tails, heads] += 1
        working = _validate_matrix(updater(working, tour.copy(), edge_n_used.copy()), n)
        if time_limit_s is not None and time.monotonic() - started > time_limit_s:
            break
    return GlsRun(
        working_matrix=working,
        edge_n_used=edge_n_used,
        best_tour=best_tour,
        best_length=best_length,
        iterations=iterations,
    )


def identity_updater(edge_distance: np.ndarray, local_opt_tour, edge_n_used) -> np.ndarray:
    return edge_distance


def optimal_tour(instance: TspInstance) -> Tuple[np.ndarray, float]:
    """Held-Karp exact optimum for n <= 13."""
    n = instance.n
    if n > _HELD_KARP_MAX:
        raise TooLarge(f"exact solver limited to n <= {_HELD_KARP_MAX}, got {n}")
    d = instance.dist
    m = n - 1  # nodes 1..n-1; node 0 is the fixed start
    size = 1 << m
    dp = np.full((size, m), np.inf)
    parent = np.full((size, m), -1, dtype=np.int64)
    for j in range(m):
        dp[1 << j, j] = d[0, j + 1]
    for mask in range(size):
        for j in range(m):
            if not mask & (1 << j) or not np.isfinite(dp[mask, j]):
                continue
            base = dp[mask, j]
            for k in range(m):
                if mask & (1 << k):
                    continue
                nmask = mask | (1 << k)
                cand = base + d[j + 1, k + 1]
                if cand < dp[nmask, k]:
                    dp[nmask, k] = cand
                    parent[nmask, k] = j
    full = size - 1
    closing = dp[full, :] + d[1:, 0]
    last = int(np.argmin(closing))
    order = []
    mask, j = full, last
    while j >= 0:
        order.append(j + 1)
        mask, j = mask ^ (1 << j), int(parent[mask, j])
    tour = np.array([0] + order[::-1], dtype=np.int64)
    # re-measure through tour_length so equal tours compare exactly equal
    # downstream (the DP accumulator sums in a different float order)
    return tour, tour_length(d, tour)


def gap_percent(tour_len: float, optimum_length: float) -> float:
    """Percentage gap above the optimum; the engine maximizes its negation."""
    if optimum_length <= 0:
        raise ValueError("optimum_length must be positive")
    return 100.0 * (tour_len - optimum_length) / optimum_length


def multi_start_reference(instance: TspInstance, starts: int, rng: np.random.Generator) -> float:
    """Best plain 2-opt length over random restarts; a reference (not an
    optimum) for instances too large for the exact solver."""
    best = math.inf
    for _ in range(starts):
        tour = local_search_2opt(instance.dist, rng.permutation(instance.n))
        best = min(best, tour_length(instance.dist, tour))
    return best


def write_instance(path: Path, instance: TspInstance, reference: bool = False) -> None:
    doc = {
        "coords": [[float(a), float(b)] for a, b in instance.coords],
        "optimum_length": instance.optimum_length,
        "optimum_is_reference": reference,
    }
    Path(path).write_text(json.dumps(doc))


def read_instance(path: Path) -> TspInstance:
    doc = json.loads(Path(path).read_text())
    return instance_from_coords(doc["coords"], doc.get("optimum_length"))


def read_tsplib(path: Path) -> TspInstance:
    """EUC_2D TSPLIB instances; distances use the standard nearest-integer
    rounding so published optima remain comparable."""
    coords: List[Tuple[float, float]] = []
    in_section = False
    for line in Path(path).read_text().splitlines():
        token = line.strip()
        if not token:
            continue
        upper = token.upper()
        if upper.startswith("EDGE_WEIGHT_TYPE") and "EUC_2D" not in upper:
            raise ValueError("only EUC_2D TSPLIB instances are supported")
        if upper == "NODE_COORD_SECTION":
            in_section = True
            continue
        if upper == "EOF":
            break
        if in_section:
            parts = token.split()
            coords.append((float(parts[1]), float(parts[2])))
    if not coords:
        raise ValueError(f"no NODE_COORD_SECTION found in {path}")
    arr = np.asarray(coords, dtype=float)
    dist = np.rint(distance_matrix(arr))
    return TspInstance(coords=arr, dist=dist)


def write_result(path: Path, tour: Sequence[int], length: float, gap: float, seconds: float) -> None:
    doc = {"tour": [int(v) for v in tour], "length": length, "gap": gap, "time": seconds}
    Path(path).write_text(json.dumps(doc))


class TspEvaluator:
    """Engine-facing evaluator running updater candidates through a runner.

    Cost of one assignment on one instance is the percentage gap of a GLS
    run; the final fitness is the negated mean gap over the full set, with
    the raw gap logged alongside.
    """

    problem = "tsp"
    reserved_parameter_names: Tuple[str, ...] = ()

    def __init__(
        self,
        instances: Mapping[object, TspInstance],
        training_ids: Sequence,
        full_ids: Sequence,
        runner,
        gls_iterations: int = 50,
        time_limit_s: Optional[float] = 10.0,
        base_seed: int = 0,
        results_dir: Optional[Path] = None,
    ):
        missing = [key for key, inst in instances.items() if inst.optimum_length is None]
        if missing:
            raise ValueError(f"instances without optimum/reference length: {missing}")
        self._instances = dict(instances)
        self.training_instances = tuple(training_ids)
        self.full_instances = tuple(full_ids)
        self._runner = runner
        self._gls_iterations = gls_iterations
        self._time_limit_s = time_limit_s
        self._base_seed = base_seed
        self._results_dir = Path(results_dir) if results_dir else None

    def bind(self, code: str, space: ConfigSpace, name: str) -> "_BoundTsp":
        return _BoundTsp(self, code, space)

    def _run_instance(self, code: str, config_text: str, instance_id, record: bool = False) -> float:
        instance = self._instances[instance_id]
        seed = seed_for(self._base_seed, stable_id_hash(instance_id))
        rng = np.random.default_rng(seed)
        started = time.monotonic()
        with self._runner.matrix_updater(code, config_text, seed) as updater:
            outcome = gls_run(instance, updater, self._gls_iterations, rng, self._time_limit_s)
        gap = gap_percent(outcome.best_length, instance.optimum_length)
        if record and self._results_dir is not None:
            self._results_dir.mkdir(parents=True, exist_ok=True)
            write_result(
                self._results_dir / f"{instance_id}.json",
                outcome.best_tour,
                outcome.best_length,
                gap,
                time.monotonic() - started,
            )
        return gap


class _BoundTsp:
    def __init__(self, evaluator: TspEvaluator, code: str, space: ConfigSpace):
        self._ev = evaluator
        self._code = code
        self._space = space

    def _config_text(self, assignment: ConfigAssignment) -> str:
        return serialize_assignment(assignment, self._space)

    def instance_cost(self, assignment: ConfigAssignment, instance_id) -> float:
        return self._ev._run_instance(self._code, self._config_text(assignment), instance_id)

    def final_evaluation(self, assignment: ConfigAssignment) -> FinalResult:
        config_text = self._config_text(assignment)
        gaps: List[float] = []
        for instance_id in self._ev.full_instances:
            try:
                gaps.append(
                    self._ev._run_instance(self._code, config_text, instance_id, record=True)
                )
            except CandidateFailure as exc:
                return FinalResult(
                    fitness=0.0, std=0.0, instance_evals=len(gaps) + 1, error=exc.traceback
                )
        mean_gap = float(np.mean(gaps))
        return FinalResult(
            fitness=-mean_gap,
            std=float(np.std(gaps)),
            instance_evals=len(self._ev.full_instances),
            raw={"mean_gap": mean_gap},
        )
