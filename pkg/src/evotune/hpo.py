"""In-loop hyper-parameter tuner: racing over training instances with either
uniform-random or surrogate-guided proposals.

The tuner minimizes.  A challenger is evaluated on a seeded shuffled instance
order shared by all configurations, earning one more instance at a time while
its running mean stays at or below the incumbent's mean on the shared prefix;
completing the instance cap with a mean no worse than the incumbent's takes
the incumbency.  The objective-call budget is a hard ceiling.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm
from sklearn.ensemble import RandomForestRegressor

from evotune.benchmarks.base import CandidateFailure
from evotune.configspace import (
    ConfigAssignment,
    ConfigSpace,
    FloatRange,
    IntRange,
    sample,
)

log = logging.getLogger(__name__)

Objective = Callable[[ConfigAssignment, object], float]

STRATEGIES = ("random", "surrogate")


class AllTrialsFailed(RuntimeError):
    """Every evaluated configuration errored; carries the first traceback and
    the trial log for budget accounting."""

    def __init__(self, first_error: str, trials: List["TrialRecord"]):
        super().__init__("all evaluated configurations failed")
        self.first_error = first_error
        self.trials = trials


@dataclass
class TunerConfig:
    budget: int
    min_instances: int = 1
    max_instances: int = 4
    strategy: str = "surrogate"
    seed: int = 0
    initial_design: Optional[int] = None  # default: max(5, |params|)
    pool_size: int = 500
    n_trees: int = 32

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if not 1 <= self.min_instances <= self.max_instances:
            raise ValueError("need 1 <= min_instances <= max_instances")
        if self.budget < self.min_instances:
            raise ValueError("budget must cover at least min_instances evaluations")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")


@dataclass
class TrialRecord:
    assignment: ConfigAssignment
    instance_id: object
    cost: Optional[float]
    error: Optional[str]
    eval_index: int


@dataclass
class Incumbent:
    assignment: ConfigAssignment
    mean_cost: float
    instances_seen: int


@dataclass
class _Raced:
    assignment: ConfigAssignment
    costs: List[float] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.costs))


def _default_initial_design(cfg: TunerConfig, space: ConfigSpace) -> int:
    return cfg.initial_design if cfg.initial_design is not None else max(5, len(space))


def tune(
    space: ConfigSpace,
    objective: Objective,
    training_instances: Sequence,
    cfg: TunerConfig,
) -> Tuple[Incumbent, List[TrialRecord]]:
    """Search ``space`` with at most ``cfg.budget`` objective calls.

    An empty space short-circuits to one evaluation per training instance
    (up to budget).  Raises :class:`AllTrialsFailed` when no configuration
    ever produced a successful trial.
    """
    if not training_instances:
        raise ValueError("training_instances must be non-empty")
    if cfg.max_instances > len(training_instances):
        raise ValueError(
            f"max_instances={cfg.max_instances} exceeds the {len(training_instances)} training instances"
        )

    rng = np.random.default_rng(cfg.seed)
    order = list(training_instances)
    rng.shuffle(order)

    trials: List[TrialRecord] = []
    first_error: Optional[str] = None

    def run_trial(assignment: ConfigAssignment, instance_id) -> Tuple[Optional[float], Optional[str]]:
        nonlocal first_error
        cost: Optional[float] = None
        error: Optional[str] = None
        try:
            cost = float(objective(assignment, instance_id))
            if not math.isfinite(cost):
                cost, error = None, f"objective returned a non-finite cost: {cost!r}"
        except CandidateFailure as exc:
            error = exc.traceback
        if error is not None and first_error is None:
            first_error = error
        trials.append(TrialRecord(dict(assignment), instance_id, cost, error, len(trials)))
        return cost, error

    if space.is_empty:
        costs: List[float] = []
        for instance_id in order[: cfg.budget]:
            cost, error = run_trial({}, instance_id)
            if error is not None:
                raise AllTrialsFailed(error, trials)
            costs.append(cost)
        return Incumbent({}, float(np.mean(costs)), len(costs)), trials

    effective_max = min(cfg.max_instances, len(order))
    initial_design = _default_initial_design(cfg, space)
    incumbent: Optional[_Raced] = None
    fallback: Optional[_Raced] = None  # best partial config if nothing completes
    any_success = False
    configs_tried = 0

    while len(trials) < cfg.budget:
        if cfg.strategy == "surrogate":
            assignment = surrogate_propose(
                trials, space, rng, initial_design=initial_design,
                pool_size=cfg.pool_size, n_trees=cfg.n_trees,
            )
        else:
            assignment = sample(space, rng)
        configs_tried += 1
        challenger = _Raced(assignment)
        failed = False
        target = min(cfg.min_instances, effective_max)
        while True:
            while len(challenger.costs) < target and len(trials) < cfg.budget:
                cost, error = run_trial(assignment, order[len(challenger.costs)])
                if error is not None:
                    failed = True
                    break
                any_success = True
                challenger.costs.append(cost)
            if failed or len(challenger.costs) < target:
                break  # errored or out of budget mid-race
            if incumbent is None:
                if target == effective_max:
                    incumbent = challenger
                    break
                target = effective_max
                continue
            shared = len(challenger.costs)
            incumbent_mean_shared = float(np.mean(incumbent.costs[:shared]))
            if challenger.mean > incumbent_mean_shared:
                break  # eliminated on the shared prefix
            if shared >= effective_max:
                if challenger.mean <= incumbent.mean:
                    incumbent = challenger
                break
            target = min(shared + 1, effective_max)
        if not failed and challenger.costs:
            if fallback is None or (len(challenger.costs), -challenger.mean) > (
                len(fallback.costs), -fallback.mean,
            ):
                fallback = challenger
        if failed and not any_success and configs_tried >= initial_design:
            raise AllTrialsFailed(first_error or "unknown failure", trials)

    if incumbent is None:
        if not any_success or fallback is None:
            raise AllTrialsFailed(first_error or "no successful trials", trials)
        log.warning("budget exhausted before any configuration completed the race")
        incumbent = fallback
    return Incumbent(incumbent.assignment, incumbent.mean, len(incumbent.costs)), trials


def _encode(space: ConfigSpace, assignments: Sequence[ConfigAssignment]) -> np.ndarray:
    """Min-max scaled floats/ints, one-hot categoricals."""
    columns: List[np.ndarray] = []
    for spec in space.params:
        kind = spec.kind
        raw = [assignment[spec.name] for assignment in assignments]
        if isinstance(kind, (FloatRange, IntRange)):
            span = float(kind.hi - kind.lo)
            values = (np.asarray(raw, dtype=float) - kind.lo) / span if span > 0 else np.zeros(len(raw))
            columns.append(values[:, None])
        else:
            index = {choice: k for k, choice in enumerate(kind.choices)}
            onehot = np.zeros((len(raw), len(kind.choices)))
            for row, value in enumerate(raw):
                onehot[row, index[value]] = 1.0
            columns.append(onehot)
    return np.hstack(columns)


def surrogate_propose(
    trials: Sequence[TrialRecord],
    space: ConfigSpace,
    rng: np.random.Generator,
    initial_design: Optional[int] = None,
    pool_size: int = 500,
    n_trees: int = 32,
) -> ConfigAssignment:
    """Regression-forest expected improvement over the incumbent mean.

    Falls back to a uniform sample before ``initial_design`` configurations
    have completed successfully or when the improvement signal degenerates.
    """
    if space.is_empty:
        return {}
    if initial_design is None:
        initial_design = max(5, len(space))

    groups: Dict[Tuple, _Raced] = {}
    for trial in trials:
        if trial.error is not None or trial.cost is None:
            continue
        key = tuple(trial.assignment[name] for name in space.names)
        groups.setdefault(key, _Raced(trial.assignment)).costs.append(trial.cost)
    if len(groups) < initial_design:
        return sample(space, rng)

    observed = list(groups.values())
    x_train = _encode(space, [g.assignment for g in observed])
    y_train = np.array([g.mean for g in observed])
    forest = RandomForestRegressor(
        n_estimators=n_trees,
        random_state=int(rng.integers(0, 2**31 - 1)),
        n_jobs=1,
    )
    forest.fit(x_train, y_train)

    pool = [sample(space, rng) for _ in range(pool_size)]
    x_pool = _encode(space, pool)
    mu = forest.predict(x_pool)
    # homoscedastic noise estimate; the per-tree spread over-explores badly
    # at the trial counts this tuner sees
    sd = float(np.sqrt(np.mean((forest.predict(x_train) - y_train) ** 2)))
    best = float(y_train.min())

    improvement = best - mu
    if sd > 1e-12:
        z = improvement / sd
        ei = improvement * norm.cdf(z) + sd * norm.pdf(z)
    else:
        ei = np.where(improvement > 0, improvement, 0.0)

    if not np.all(np.isfinite(ei)) or float(ei.max()) <= 0.0:
        return pool[0]  # degenerate signal: fall back to a uniform sample
    return pool[int(np.argmax(ei))]


class Tuner:
    """Strategy-configured tuner handle the evolution loop can call per
    candidate with a derived seed."""

    def __init__(self, cfg: TunerConfig):
        self.cfg = cfg

    def tune(
        self,
        space: ConfigSpace,
        objective: Objective,
        training_instances: Sequence,
        seed: Optional[int] = None,
    ) -> Tuple[Incumbent, List[TrialRecord]]:
        cfg = self.cfg if seed is None else replace(self.cfg, seed=seed)
        effective = cfg
        if cfg.max_instances > len(training_instances):
            effective = replace(
                cfg,
                max_instances=len(training_instances),
                min_instances=min(cfg.min_instances, len(training_instances)),
            )
        return tune(space, objective, training_instances, effective)
