"""Online bin packing: Weibull instances, scorer-driven simulation, and the
Martello-Toth L2 lower bound.

The candidate supplies ``score(item, bins)``; each arriving item goes to the
feasible bin with the maximum score.  Fitness is the mean of lower-bound /
bins-used over the instance set, so 1.0 is ideal and larger is better.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Mapping, Sequence, Tuple

import numpy as np

from evotune.benchmarks.base import (
    CandidateFailure,
    FinalResult,
    ScorerError,
    seed_for,
    stable_id_hash,
)
from evotune.configspace import ConfigAssignment, ConfigSpace, serialize_assignment

Scorer = Callable[[int, np.ndarray], np.ndarray]


class LengthMismatch(ValueError):
    """The scorer returned a different number of scores than offered bins."""


@dataclass(frozen=True)
class BinPackInstance:
    items: Tuple[int, ...]
    capacity: int

    def __post_init__(self):
        if not self.items:
            raise ValueError("instance needs at least one item")
        if any(size < 1 or size > self.capacity for size in self.items):
            raise ValueError("item sizes must lie in [1, capacity]")


@dataclass(frozen=True)
class PackingResult:
    bins_used: int
    lower_bound: int

    @property
    def ratio(self) -> float:
        return self.lower_bound / self.bins_used


def gen_weibull_instance(
    n_items: int,
    capacity: int = 100,
    shape: float = 3.0,
    scale: float = 45.0,
    rng: np.random.Generator | None = None,
) -> BinPackInstance:
    """Item sizes are ceil of Weibull(shape)*scale draws, clamped to
    [1, capacity]."""
    if n_items < 1 or capacity < 1:
        raise ValueError("n_items and capacity must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    draws = rng.weibull(shape, size=n_items) * scale
    sizes = np.clip(np.ceil(draws).astype(int), 1, capacity)
    return BinPackInstance(items=tuple(int(s) for s in sizes), capacity=capacity)


def simulate_online(instance: BinPackInstance, scorer: Scorer) -> int:
    """Feed items one by one to the scorer and count the bins used.

    The scorer sees the remaining capacities of every feasible bin (remaining
    >= item) including exactly one untouched fresh bin; the item goes to the
    argmax score with ties resolved toward the lowest bin index.  Untouched
    bins do not count as used.
    """
    n, _ = _simulate(instance, scorer, trace=False)
    return n


def simulate_online_trace(
    instance: BinPackInstance, scorer: Scorer
) -> Tuple[int, List[Tuple[int, int]]]:
    """Like :func:`simulate_online` but also returns the (item, bin index)
    assignment list so tests can replay and audit capacity."""
    return _simulate(instance, scorer, trace=True)


def _simulate(instance, scorer, trace):
    capacity = instance.capacity
    remaining = np.empty(len(instance.items) + 1, dtype=np.int64)
    remaining[0] = capacity
    n_bins = 1  # the fresh bin
    assignments: List[Tuple[int, int]] = []
    for item in instance.items:
        view = remaining[:n_bins]
        feasible = np.nonzero(view >= item)[0]
        offered = view[feasible].astype(float)
        raw_scores = scorer(item, offered)
        scores = np.asarray(raw_scores, dtype=float)
        if scores.shape != offered.shape:
            raise LengthMismatch(
                f"scorer returned {scores.shape} scores for {offered.shape[0]} offered bins"
            )
        if not np.all(np.isfinite(scores)):
            raise ScorerError("scorer returned non-finite scores")
        chosen = int(feasible[int(np.argmax(scores))])
        was_fresh = remaining[chosen] == capacity
        remaining[chosen] -= item
        if trace:
            assignments.append((item, chosen))
        if was_fresh:
            remaining[n_bins] = capacity
            n_bins += 1
    used = int(np.sum(remaining[:n_bins] < capacity))
    return used, assignments


def l2_lower_bound(instance: BinPackInstance) -> int:
    """Martello-Toth L2 bound: maximize over the threshold alpha the count of
    large items plus the spill of small ones; never below ceil(total/C)."""
    sizes = np.asarray(instance.items, dtype=np.int64)
    capacity = instance.capacity
    total = int(sizes.sum())
    best = -(-total // capacity)
    for alpha in range(0, capacity // 2 + 1):
        j1 = sizes > capacity - alpha
        j2 = (~j1) & (2 * sizes > capacity)
        j3 = (2 * sizes <= capacity) & (sizes >= alpha)
        free_in_j2 = int(j2.sum()) * capacity - int(sizes[j2].sum())
        spill = int(sizes[j3].sum()) - free_in_j2
        extra = -(-spill // capacity) if spill > 0 else 0
        best = max(best, int(j1.sum()) + int(j2.sum()) + extra)
    return best


def pack(instance: BinPackInstance, scorer: Scorer) -> PackingResult:
    return PackingResult(bins_used=simulate_online(instance, scorer), lower_bound=l2_lower_bound(instance))


def fitness(instances: Sequence[BinPackInstance], scorer: Scorer) -> float:
    """Mean lower-bound/bins-used over the instances (maximize, 1.0 ideal)."""
    if not instances:
        raise ValueError("need at least one instance")
    return float(np.mean([pack(inst, scorer).ratio for inst in instances]))


def write_instance(path: Path, instance: BinPackInstance) -> None:
    Path(path).write_text(json.dumps({"capacity": instance.capacity, "items": list(instance.items)}))


def read_instance(path: Path) -> BinPackInstance:
    doc = json.loads(Path(path).read_text())
    return BinPackInstance(items=tuple(int(x) for x in doc["items"]), capacity=int(doc["capacity"]))


class BinpackEvaluator:
    """Engine-facing evaluator running scorer candidates through a runner.

    One sandbox session is spawned per (candidate, assignment, instance); the
    runner abstracts whether that is a real child process or an in-process
    test double.
    """

    problem = "binpack"
    reserved_parameter_names: Tuple[str, ...] = ()

    def __init__(
        self,
        instances: Mapping[object, BinPackInstance],
        training_ids: Sequence,
        full_ids: Sequence,
        runner,
        base_seed: int = 0,
    ):
        self._instances = dict(instances)
        self.training_instances = tuple(training_ids)
        self.full_instances = tuple(full_ids)
        self._runner = runner
        self._base_seed = base_seed
        self._bounds = {key: l2_lower_bound(inst) for key, inst in self._instances.items()}

    def bind(self, code: str, space: ConfigSpace, name: str) -> "_BoundBinpack":
        return _BoundBinpack(self, code, space)

    def _run_instance(self, code: str, config_text: str, instance_id) -> float:
        instance = self._instances[instance_id]
        seed = seed_for(self._base_seed, stable_id_hash(instance_id))
        with self._runner.scorer(code, config_text, seed) as scorer:
            bins_used = simulate_online(instance, scorer)
        return self._bounds[instance_id] / bins_used


class _BoundBinpack:
    def __init__(self, evaluator: BinpackEvaluator, code: str, space: ConfigSpace):
        self._ev = evaluator
        self._code = code
        self._space = space

    def _config_text(self, assignment: ConfigAssignment) -> str:
        return serialize_assignment(assignment, self._space)

    def instance_cost(self, assignment: ConfigAssignment, instance_id) -> float:
        ratio = self._ev._run_instance(self._code, self._config_text(assignment), instance_id)
        return -ratio

    def final_evaluation(self, assignment: ConfigAssignment) -> FinalResult:
        config_text = self._config_text(assignment)
        ratios: List[float] = []
        for instance_id in self._ev.full_instances:
            try:
                ratios.append(self._ev._run_instance(self._code, config_text, instance_id))
            except CandidateFailure as exc:
                return FinalResult(
                    fitness=0.0,
                    std=0.0,
                    instance_evals=len(ratios) + 1,
                    error=exc.traceback,
                )
        mean = float(np.mean(ratios))
        return FinalResult(
            fitness=mean,
            std=float(np.std(ratios)),
            instance_evals=len(self._ev.full_instances),
            raw={"mean_ratio": mean, "complement": 1.0 - mean},
        )


def best_fit_scorer(item: int, bins: np.ndarray) -> np.ndarray:
    """Reference best-fit: prefer the tightest feasible bin."""
    return -(bins - item)


def first_fit_scorer(item: int, bins: np.ndarray) -> np.ndarray:
    """Reference first-fit: strictly decreasing scores pick the oldest bin."""
    return -np.arange(len(bins), dtype=float)
