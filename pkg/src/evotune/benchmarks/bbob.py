"""Shifted continuous test suite and anytime AOCC scoring.

Twenty-four classic noiseless functions are provided as shift-only instances
(no rotations or non-linear warps): each instance places its optimum x_opt
inside the domain and offsets values by f_opt, so f(x_opt) = f_opt exactly
and f(x) >= f_opt everywhere in [-5, 5]^d.  Anytime quality of one run is the
area over the convergence curve of clamped, log-scaled best precision.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from evotune.benchmarks.base import CandidateFailure, FinalResult, seed_for
from evotune.configspace import ConfigAssignment, ConfigSpace, serialize_assignment

DOMAIN_LO = -5.0
DOMAIN_UP = 5.0
DEFAULT_BUDGET = 10_000
AOCC_LB = 1e-8
AOCC_UB = 1e2

IMPLEMENTED_FUNCTIONS = tuple(range(1, 25))


class UnknownFunction(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class IncompleteGrid(ValueError):
    """The per-run AOCC map does not cover the full function x instance x
    seed grid."""


@dataclass
class Trajectory:
    """Best-so-far precision after each evaluation of one run."""

    best_precision: List[float]
    budget: int

    def __post_init__(self):
        if len(self.best_precision) > self.budget:
            raise ValueError("trajectory longer than its budget")

    def __len__(self) -> int:
        return len(self.best_precision)


def _instance_rng(function_id: int, instance_id: int) -> np.random.Generator:
    digest = hashlib.sha256(f"bbob:{function_id}:{instance_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


def _index_scale(dim: int, exponent: float) -> np.ndarray:
    if dim == 1:
        return np.ones(1)
    return 10.0 ** (exponent * np.arange(dim) / (dim - 1))


@dataclass
class BenchmarkFunction:
    function_id: int
    dim: int
    instance_id: int
    x_opt: np.ndarray
    f_opt: float
    eval_count: int = 0
    _aux: dict = field(default_factory=dict, repr=False)

    def evaluate(self, x: Sequence[float]) -> float:
        arr = np.asarray(x, dtype=float).reshape(-1)
        if arr.shape != (self.dim,):
            raise DimensionMismatch(f"expected dimension {self.dim}, got {arr.shape}")
        self.eval_count += 1
        return float(self.f_opt + _raw_batch(self, arr[None, :])[0])

    def evaluate_batch(self, xs: np.ndarray) -> np.ndarray:
        """Vectorized evaluation used by property tests; counts every row."""
        xs = np.asarray(xs, dtype=float)
        if xs.ndim != 2 or xs.shape[1] != self.dim:
            raise DimensionMismatch(f"expected (n, {self.dim}) batch, got {xs.shape}")
        self.eval_count += len(xs)
        return self.f_opt + _raw_batch(self, xs)

    __call__ = evaluate


def make_function(function_id: int, dim: int, instance_id: int) -> BenchmarkFunction:
    """Deterministic instance construction from (function_id, instance_id)."""
    if function_id not in IMPLEMENTED_FUNCTIONS:
        raise UnknownFunction(f"function {function_id} is not implemented")
    if dim < 1:
        raise ValueError("dim must be positive")
    rng = _instance_rng(function_id, instance_id)
    x_opt = rng.uniform(-4.0, 4.0, size=dim)
    if function_id == 5:
        # The linear slope attains its minimum only on a domain corner.
        x_opt = 5.0 * np.where(x_opt >= 0.0, 1.0, -1.0)
    f_opt = float(np.clip(np.round(100.0 * rng.standard_cauchy(), 2), -1000.0, 1000.0))
    aux: dict = {}
    if function_id in (21, 22):
        n_peaks = 101 if function_id == 21 else 21
        aux["centers"] = rng.uniform(-8.0, 8.0, size=(n_peaks - 1, dim))
        aux["heights"] = rng.uniform(0.5, 0.9, size=n_peaks - 1)
        aux["widths"] = rng.uniform(1.0, 3.0, size=n_peaks - 1)
    return BenchmarkFunction(function_id, dim, instance_id, x_opt, f_opt, _aux=aux)


def _raw_batch(fn: BenchmarkFunction, xs: np.ndarray) -> np.ndarray:
    """Shift-only value minus f_opt for a batch of points; non-negative with
    an exact zero at x_opt."""
    fid = fn.function_id
    d = fn.dim
    z = xs - fn.x_opt

    if fid == 1:  # sphere
        return np.sum(z**2, axis=1)
    if fid in (2, 10):  # ellipsoid (separable / high conditioning)
        return np.sum(_index_scale(d, 6.0) * z**2, axis=1)
    if fid in (3, 15):  # Rastrigin
        return 10.0 * (d - np.sum(np.cos(2.0 * np.pi * z), axis=1)) + np.sum(z**2, axis=1)
    if fid == 4:  # Bueche-Rastrigin
        zz = _index_scale(d, 0.5) * z
        # odd coordinates (1-based) are stretched further on the positive side
        zz = np.where((np.arange(d) % 2 == 0) & (zz > 0), 10.0 * zz, zz)
        return 10.0 * (d - np.sum(np.cos(2.0 * np.pi * zz), axis=1)) + np.sum(zz**2, axis=1)
    if fid == 5:  # linear slope
        s = np.sign(fn.x_opt) * _index_scale(d, 1.0)
        inside = xs * fn.x_opt < 25.0
        zcap = np.where(inside, xs, fn.x_opt)
        return np.sum(5.0 * np.abs(s) - s * zcap, axis=1)
    if fid == 6:  # attractive sector
        s = np.where(z * fn.x_opt > 0.0, 100.0, 1.0)
        return np.sum((s * z) ** 2, axis=1) ** 0.9
    if fid == 7:  # step ellipsoid
        zhat = np.where(np.abs(z) > 0.5, np.floor(0.5 + z), np.round(z * 10.0) / 10.0)
        body = np.sum(_index_scale(d, 2.0) * zhat**2, axis=1)
        return 0.1 * np.maximum(np.abs(z[:, 0]) / 1e4, body)
    if fid in (8, 9):  # Rosenbrock (original / moderate variant)
        scale = max(1.0, math.sqrt(d) / 8.0)
        zr = scale * z + 1.0
        return np.sum(
            100.0 * (zr[:, :-1] ** 2 - zr[:, 1:]) ** 2 + (zr[:, :-1] - 1.0) ** 2, axis=1
        )
    if fid == 11:  # discus
        return 1e6 * z[:, 0] ** 2 + np.sum(z[:, 1:] ** 2, axis=1)
    if fid == 12:  # bent cigar
        return z[:, 0] ** 2 + 1e6 * np.sum(z[:, 1:] ** 2, axis=1)
    if fid == 13:  # sharp ridge
        return z[:, 0] ** 2 + 100.0 * np.sqrt(np.sum(z[:, 1:] ** 2, axis=1))
    if fid == 14:  # sum of different powers
        exponents = 2.0 + 4.0 * np.arange(d) / max(d - 1, 1)
        return np.sqrt(np.sum(np.abs(z) ** exponents, axis=1))
    if fid == 16:  # Weierstrass
        k = np.arange(12)
        ak = 0.5**k
        bk = 3.0**k
        inner = np.sum(
            ak[None, None, :] * np.cos(2.0 * np.pi * bk[None, None, :] * (z[:, :, None] + 0.5)),
            axis=2,
        )
        f0 = float(np.sum(ak * np.cos(np.pi * bk)))
        # subtract per coordinate so the optimum is an exact zero
        return 10.0 * np.mean(inner - f0, axis=1) ** 3
    if fid in (17, 18):  # Schaffers F7 (and ill-conditioned variant)
        scale = _index_scale(d, 0.0 if fid == 17 else 3.0)
        zz = scale * z
        s = np.sqrt(zz[:, :-1] ** 2 + zz[:, 1:] ** 2)
        term = np.sqrt(s) + np.sqrt(s) * np.sin(50.0 * s**0.2) ** 2
        return (np.mean(term, axis=1)) ** 2
    if fid == 19:  # composite Griewank-Rosenbrock
        zr = z + 1.0
        r = 100.0 * (zr[:, :-1] ** 2 - zr[:, 1:]) ** 2 + (zr[:, :-1] - 1.0) ** 2
        # r/4000 + (1 - cos r) is non-negative termwise and exactly 0 at r = 0
        return (10.0 / (d - 1)) * np.sum(r / 4000.0 - np.cos(r) + 1.0, axis=1)
    if fid == 20:  # Schwefel, windowed around the sine hump peak
        t0 = 420.968746227
        peak = t0 * np.sin(np.sqrt(t0))
        w = t0 + 5.0 * z
        # the window [t0-50, t0+50] holds a single hump; clamp float noise
        return np.sum(np.maximum(peak - w * np.sin(np.sqrt(np.abs(w))), 0.0), axis=1)
    if fid in (21, 22):  # Gallagher peaks
        centers = fn._aux["centers"]
        heights = fn._aux["heights"]
        widths = fn._aux["widths"]
        sq = np.sum((z[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        others = heights[None, :] * np.exp(-sq / (2.0 * widths[None, :] ** 2))
        main = np.exp(-np.sum(z**2, axis=1) / 2.0)
        best = np.maximum(main, np.max(others, axis=1))
        return 10.0 * (1.0 - best)
    if fid == 23:  # Katsuura
        j = np.arange(1, 33)
        two_j = 2.0**j
        frac = np.abs(two_j[None, None, :] * z[:, :, None] - np.round(two_j[None, None, :] * z[:, :, None]))
        inner = np.sum(frac / two_j[None, None, :], axis=2)
        factors = (1.0 + np.arange(1, d + 1)[None, :] * inner) ** (10.0 / d**1.2)
        return (10.0 / d**2) * np.prod(factors, axis=1) - 10.0 / d**2
    if fid == 24:  # two-funnel Rastrigin
        mu1 = -2.5
        basin = np.minimum(np.sum(z**2, axis=1), d + 0.9 * np.sum((z - mu1) ** 2, axis=1))
        return basin + 10.0 * (d - np.sum(np.cos(2.0 * np.pi * z), axis=1))
    raise UnknownFunction(f"function {fid} is not implemented")


@dataclass(frozen=True)
class SuiteSlot:
    function_id: int
    instance_id: int
    seed: int


def make_suite(
    function_ids: Sequence[int],
    dim: int,
    instances_per_fn: int,
    seeds: int,
) -> List[SuiteSlot]:
    """Full run grid: |function_ids| x instances_per_fn x seeds slots."""
    for fid in function_ids:
        if fid not in IMPLEMENTED_FUNCTIONS:
            raise UnknownFunction(f"function {fid} is not implemented")
    if min(dim, instances_per_fn, seeds) < 1:
        raise ValueError("dim, instances_per_fn and seeds must be positive")
    return [
        SuiteSlot(fid, iid, seed)
        for fid in function_ids
        for iid in range(1, instances_per_fn + 1)
        for seed in range(1, seeds + 1)
    ]


def write_suite_manifest(path: Path, slots: Sequence[SuiteSlot], dim: int) -> None:
    entries = []
    seen = set()
    for slot in slots:
        key = (slot.function_id, slot.instance_id)
        if key in seen:
            continue
        seen.add(key)
        fn = make_function(slot.function_id, dim, slot.instance_id)
        entries.append(
            {
                "function_id": slot.function_id,
                "instance_id": slot.instance_id,
                "x_opt_digest": hashlib.sha256(fn.x_opt.tobytes()).hexdigest(),
                "f_opt": fn.f_opt,
            }
        )
    Path(path).write_text(json.dumps({"dim": dim, "instances": entries}, indent=2))


def aocc(
    traj: Sequence[float] | Trajectory,
    budget: int = DEFAULT_BUDGET,
    lb: float = AOCC_LB,
    ub: float = AOCC_UB,
) -> float:
    """Area over the convergence curve of one run, in [0, 1], higher better.

    Each of ``budget`` slots contributes 1 minus the normalized log-scaled
    best precision, clamped to [lb, ub]; runs shorter than the budget hold
    their final value for the remaining slots.
    """
    values = traj.best_precision if isinstance(traj, Trajectory) else traj
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("trajectory must be non-empty")
    arr = np.where(np.isfinite(arr), arr, ub)
    if arr.size < budget:
        arr = np.concatenate([arr, np.full(budget - arr.size, arr[-1])])
    else:
        arr = arr[:budget]
    clamped = np.clip(arr, lb, ub)
    logs = np.log10(clamped)
    span = math.log10(ub) - math.log10(lb)
    contributions = 1.0 - (logs - math.log10(lb)) / span
    return float(np.mean(contributions))


def aggregate_aocc(per_run: Mapping[Tuple[int, int, int], Optional[float]]) -> float:
    """Mean over (function, instance) cells, then over seeds.

    Keys are (function_id, instance_id, seed).  A ``None`` cell marks a run
    that crashed; any such cell forces the aggregate to the minimum, zero.
    Raises :class:`IncompleteGrid` when the grid has holes.
    """
    if not per_run:
        raise IncompleteGrid("empty grid")
    cells = sorted({(f, i) for f, i, _ in per_run})
    seeds = sorted({s for _, _, s in per_run})
    expected = {(f, i, s) for f, i in cells for s in seeds}
    if expected != set(per_run):
        raise IncompleteGrid(
            f"expected {len(expected)} cells ({len(cells)} function-instances x {len(seeds)} seeds), "
            f"got {len(per_run)}"
        )
    if any(v is None for v in per_run.values()):
        return 0.0
    per_seed = [float(np.mean([per_run[(f, i, s)] for f, i in cells])) for s in seeds]
    return float(np.mean(per_seed))


def trajectory_from_best_values(best_values: Sequence[float], f_opt: float, budget: int) -> Trajectory:
    precision = [v - f_opt if math.isfinite(v) else math.inf for v in best_values]
    return Trajectory(best_precision=precision, budget=budget)


def write_trajectory(path: Path, traj: Trajectory) -> None:
    """One CSV per run slot: eval_index, best_precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["eval_index", "best_precision"])
        for i, value in enumerate(traj.best_precision, start=1):
            writer.writerow([i, repr(float(value))])


def read_trajectory(path: Path) -> List[float]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["eval_index", "best_precision"]:
            raise ValueError(f"not a trajectory CSV: {path}")
        return [float(row[1]) for row in reader]


class BbobEvaluator:
    """Engine-facing evaluator over a slot grid.

    Tuning cost of one assignment on one slot is the negated AOCC of a single
    run; the final evaluation runs the full grid and aggregates.  The
    candidate constructor receives ``budget`` and ``dim`` from the harness,
    so those names are reserved in configuration spaces.
    """

    problem = "bbob"
    reserved_parameter_names: Tuple[str, ...] = ("budget", "dim")

    def __init__(
        self,
        training_slots: Sequence[SuiteSlot],
        full_slots: Sequence[SuiteSlot],
        dim: int,
        budget: int,
        runner,
        base_seed: int = 0,
        trajectory_dir: Optional[Path] = None,
    ):
        self.training_instances = tuple(training_slots)
        self.full_instances = tuple(full_slots)
        self._dim = dim
        self._budget = budget
        self._runner = runner
        self._base_seed = base_seed
        self._trajectory_dir = Path(trajectory_dir) if trajectory_dir else None

    def bind(self, code: str, space: ConfigSpace, name: str) -> "_BoundBbob":
        return _BoundBbob(self, code, space)

    def _run_slot(self, code: str, config_text: str, slot: SuiteSlot) -> Trajectory:
        fn = make_function(slot.function_id, self._dim, slot.instance_id)
        seed = seed_for(self._base_seed, slot.function_id, slot.instance_id, slot.seed)
        best_values = self._runner.optimize(
            code,
            config_text,
            seed,
            objective=fn.evaluate,
            budget=self._budget,
            dim=self._dim,
            lb=DOMAIN_LO,
            ub=DOMAIN_UP,
        )
        return trajectory_from_best_values(best_values, fn.f_opt, self._budget)

    def _dump(self, slot: SuiteSlot, traj: Trajectory) -> None:
        if self._trajectory_dir is None:
            return
        self._trajectory_dir.mkdir(parents=True, exist_ok=True)
        name = f"f{slot.function_id}_i{slot.instance_id}_s{slot.seed}.csv"
        write_trajectory(self._trajectory_dir / name, traj)


class _BoundBbob:
    def __init__(self, evaluator: BbobEvaluator, code: str, space: ConfigSpace):
        self._ev = evaluator
        self._code = code
        self._space = space

    def _config_text(self, assignment: ConfigAssignment) -> str:
        return serialize_assignment(assignment, self._space)

    def instance_cost(self, assignment: ConfigAssignment, instance_id: SuiteSlot) -> float:
        traj = self._ev._run_slot(self._code, self._config_text(assignment), instance_id)
        return -aocc(traj, budget=self._ev._budget)

    def final_evaluation(self, assignment: ConfigAssignment) -> FinalResult:
        config_text = self._config_text(assignment)
        per_run: Dict[Tuple[int, int, int], Optional[float]] = {}
        attempts = 0
        error: Optional[str] = None
        for slot in self._ev.full_instances:
            attempts += 1
            try:
                traj = self._ev._run_slot(self._code, config_text, slot)
            except CandidateFailure as exc:
                error = exc.traceback
                break
            self._ev._dump(slot, traj)
            per_run[(slot.function_id, slot.instance_id, slot.seed)] = aocc(
                traj, budget=self._ev._budget
            )
        if error is not None:
            return FinalResult(fitness=0.0, std=0.0, instance_evals=attempts, error=error)
        fitness = aggregate_aocc(per_run)
        seeds = sorted({s for _, _, s in per_run})
        cells = sorted({(f, i) for f, i, _ in per_run})
        per_seed = [float(np.mean([per_run[(f, i, s)] for f, i in cells])) for s in seeds]
        return FinalResult(
            fitness=fitness,
            std=float(np.std(per_seed)),
            instance_evals=attempts,
            raw={"mean_aocc": fitness},
        )
