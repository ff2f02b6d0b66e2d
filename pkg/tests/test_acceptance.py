"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`.  The last two criteria
exercise the child-process shim and are skipped when it is not installed.
"""

import json
import math
from fractions import Fraction

import numpy as np
import pytest

from conftest import make_response, needs_shim
from oracles import exact_min_bins, exhaustive_tsp

from evotune.benchmarks.bbob import aocc
from evotune.benchmarks.binpack import (
    BinPackInstance,
    best_fit_scorer,
    gen_weibull_instance,
    l2_lower_bound,
    simulate_online,
    simulate_online_trace,
)
from evotune.benchmarks.tsp import (
    gen_instance,
    gls_run,
    gap_percent,
    identity_updater,
    local_search_2opt,
    optimal_tour,
    tour_length,
)
from evotune.cli import main
from evotune.configspace import parse_space, serialize_space
from evotune.glicko2 import RatingState, glicko2_update, tournament
from evotune.hpo import TunerConfig, TrialRecord, surrogate_propose, tune
from evotune.llm import parse_response
from evotune.store import RunStore, export_convergence


def _ok(label):
    print(f"\n[PASS] {label}")


def test_budget_arithmetic(tmp_path):
    """HPO budget 2000 over a 216-slot suite charges exactly 2000/216 = 9.25
    full-benchmark-evaluation units of tuning cost per candidate."""
    plan = [("A", 0.5), ("B", 0.6)]
    scripts = tmp_path / "scripts"
    scripts.mkdir()
    for i, (name, _) in enumerate(plan):
        (scripts / f"{i}.txt").write_text(
            make_response(name, f"class {name}:\n    pass", '{"s1": (0.1, 1.5)}')
        )
    recorded = tmp_path / "recorded.json"
    recorded.write_text(
        json.dumps(
            {
                "full_set_size": 216,
                "training_size": 4,
                "results": {n: {"fitness": f} for n, f in plan},
            }
        )
    )
    out = tmp_path / "run"
    assert (
        main(
            [
                "run", "--problem", "bbob", "--llm", "mock",
                "--script-dir", str(scripts), "--llm-budget", "2",
                "--hpo-budget", "2000", "--hpo-strategy", "random",
                "--seed", "7", "--out", str(out), "--recorded-evals", str(recorded),
            ]
        )
        == 0
    )
    store = RunStore(out)
    evaluations = [e["payload"] for e in store.events() if e["kind"] == "evaluation"]
    assert len(evaluations) == 2
    for payload in evaluations:
        tuning_units = Fraction(payload["tuning_evals"], 216)
        assert tuning_units == Fraction(2000, 216)  # the 9.25 of the protocol, exact
        assert payload["full_evals"] == 216
    _ok("budget arithmetic: 2000/216 tuning units per candidate, exact")


def test_aocc_suite(rng):
    # clamp cases, exact
    assert aocc([1e2] * 10) == 0.0
    assert aocc([250.0] * 10) == 0.0
    assert aocc([1e-8] * 10) == 1.0
    assert aocc([1e-12] * 10) == 1.0
    # constant precision 1e-3 over the full default budget
    assert aocc([1e-3] * 10_000) == 0.5
    # bounds on 10 000 random trajectories
    for _ in range(10_000):
        length = int(rng.integers(1, 30))
        traj = np.minimum.accumulate(rng.uniform(0.0, 10.0 ** rng.integers(-9, 4), size=length))
        value = aocc(traj, budget=32)
        assert 0.0 <= value <= 1.0
    # monotone dominance: pointwise-lower trajectories never score lower
    violations = 0
    for _ in range(1_000):
        length = int(rng.integers(1, 30))
        base = np.minimum.accumulate(rng.uniform(1e-9, 1e3, size=length))
        dominating = np.minimum.accumulate(base * rng.uniform(0.05, 1.0, size=length))
        if aocc(dominating, budget=40) < aocc(base, budget=40):
            violations += 1
    assert violations == 0
    _ok("AOCC: bounds, exact clamps, 0.5 midpoint, dominance (0 violations)")


def test_l2_bound_soundness(rng):
    checked = 0
    for _ in range(1_000):
        n = int(rng.integers(1, 11))
        capacity = int(rng.integers(5, 150))
        items = tuple(int(rng.integers(1, capacity + 1)) for _ in range(n))
        instance = BinPackInstance(items=items, capacity=capacity)
        bound = l2_lower_bound(instance)
        assert bound <= exact_min_bins(items, capacity)
        assert bound >= math.ceil(sum(items) / capacity)
        checked += 1
    assert checked == 1_000
    _ok("L2 bound: <= exact optimum and >= ceil(total/C) on 1000 instances")


def test_online_simulation(rng):
    # best-fit fixture
    assert simulate_online(BinPackInstance(items=(50, 50, 50, 50), capacity=100), best_fit_scorer) == 2

    # capacity fuzz: one million assignments under randomized scorers
    assignments_checked = 0
    scorer_rng = np.random.default_rng(999)
    while assignments_checked < 1_000_000:
        items = int(min(20_000, 1_000_000 - assignments_checked))
        instance = gen_weibull_instance(items, 100, rng=rng)

        def random_scorer(item, bins):
            return scorer_rng.normal(size=len(bins))

        used, trace = simulate_online_trace(instance, random_scorer)
        loads = np.zeros(len(trace) + 1, dtype=np.int64)
        for item, bin_index in trace:
            loads[bin_index] += item
        assert loads.max() <= instance.capacity
        assert used == int(np.count_nonzero(loads))
        assignments_checked += len(trace)
    assert assignments_checked >= 1_000_000
    _ok("online simulation: 1e6 assignments, zero capacity violations; best-fit fixture n=2")


def test_hpo_recovery():
    space = parse_space('{"x": (0.0, 1.0)}')

    def quadratic(assignment, instance_id):
        return (assignment["x"] - 0.7) ** 2

    for strategy in ("random", "surrogate"):
        hits = 0
        for seed in range(20):
            cfg = TunerConfig(budget=40, min_instances=1, max_instances=1, strategy=strategy, seed=seed)
            incumbent, trials = tune(space, quadratic, ["i0"], cfg)
            assert len(trials) <= 40
            if abs(incumbent.assignment["x"] - 0.7) <= 0.1:
                hits += 1
        assert hits >= 18, f"{strategy}: {hits}/20"

    wins = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        xs = rng.uniform(0.0, 1.0, size=10)
        trials = [
            TrialRecord({"x": float(x)}, "i0", (x - 0.7) ** 2, None, i)
            for i, x in enumerate(xs)
        ]
        proposal = surrogate_propose(trials, space, rng, initial_design=10)
        pool = rng.uniform(0.0, 1.0, size=100)
        if (proposal["x"] - 0.7) ** 2 <= float(np.median((pool - 0.7) ** 2)):
            wins += 1
    assert wins >= 40, f"surrogate beat the random-pool median only {wins}/50 times"
    _ok(f"HPO recovery: both strategies >= 18/20; surrogate beats random median {wins}/50")


def test_glicko2_acceptance():
    state = RatingState(rating=1500.0, deviation=200.0, volatility=0.06, tau=0.5)
    updated = glicko2_update(state, [(1400.0, 30.0, 1.0), (1550.0, 100.0, 0.0), (1700.0, 300.0, 0.0)])
    assert math.isclose(updated.rating, 1464.06, abs_tol=0.01)
    assert math.isclose(updated.deviation, 151.52, abs_tol=0.01)
    assert math.isclose(updated.volatility, 0.05999, abs_tol=1e-4)

    runs = {"f1": [[1e-3] * 25], "f2": [[1e-5] * 25]}
    symmetric = tournament({"A": runs, "B": runs}, 200, np.random.default_rng(1))
    for row in symmetric.rows:
        assert row.draws == row.games
        assert math.isclose(row.rating, 1500.0, abs_tol=1.0)

    dominant = tournament(
        {"A": {"f1": [[1e-7] * 25]}, "B": {"f1": [[1e-1] * 25]}}, 200, np.random.default_rng(2)
    )
    rows = {row.algorithm: row for row in dominant.rows}
    assert rows["A"].wins == rows["A"].games and rows["A"].losses == 0
    assert rows["A"].rating > rows["B"].rating
    _ok("Glicko-2: worked example within tolerance; draw symmetry and dominance exact")


def test_tsp_oracles(rng):
    # exact solver against brute-force enumeration
    for trial in range(50):
        n = int(rng.integers(5, 11))
        instance = gen_instance(n, rng)
        _, hk_length = optimal_tour(instance)
        _, brute_length = exhaustive_tsp(instance.dist)
        assert math.isclose(hk_length, brute_length, rel_tol=1e-12), f"instance {trial}"

    # identity-updater GLS is exactly plain 2-opt
    for seed in range(20):
        instance = gen_instance(25, np.random.default_rng(seed))
        start = np.random.default_rng(seed + 500).permutation(25)
        plain = tour_length(instance.dist, local_search_2opt(instance.dist, start))
        run = gls_run(instance, identity_updater, 3, np.random.default_rng(seed + 500))
        assert run.best_length == plain

    # gap is never negative against exact optima
    for seed in range(20):
        instance = gen_instance(9, np.random.default_rng(seed))
        _, optimum = optimal_tour(instance)
        tour = local_search_2opt(instance.dist, np.random.default_rng(seed).permutation(9))
        assert gap_percent(tour_length(instance.dist, tour), optimum) >= 0.0
    _ok("TSP oracles: Held-Karp == enumeration (50/50); identity GLS == 2-opt; gap >= 0")


PLAN_ELITIST = [("A", 0.8), ("B", 0.7), ("C", 0.9)]


def _mock_run_args(tmp_path, tag):
    scripts = tmp_path / f"scripts-{tag}"
    if not scripts.exists():
        scripts.mkdir()
        for index, (name, _) in enumerate(PLAN_ELITIST):
            (scripts / f"{index:02d}.txt").write_text(
                make_response(name, f"class {name}:\n    pass", '{"s1": (0.1, 1.5)}')
            )
    recorded = tmp_path / f"recorded-{tag}.json"
    recorded.write_text(
        json.dumps(
            {
                "full_set_size": 5,
                "training_size": 4,
                "results": {n: {"fitness": f} for n, f in PLAN_ELITIST},
            }
        )
    )
    return [
        "run", "--problem", "binpack", "--llm", "mock",
        "--script-dir", str(scripts), "--llm-budget", "3",
        "--hpo-budget", "8", "--hpo-strategy", "random", "--seed", "1",
        "--recorded-evals", str(recorded),
    ]


def test_end_to_end_determinism(tmp_path):
    """Two identical mock runs are byte-identical; the 0.8/0.7/0.9 fixture
    produces the elitist best series 0.8, 0.8, 0.9 (pure-parse variant: the
    scripted candidates never execute)."""
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(_mock_run_args(tmp_path, "a") + ["--out", str(out_a)]) == 0
    assert main(_mock_run_args(tmp_path, "b") + ["--out", str(out_b)]) == 0
    bytes_a = (out_a / "events.jsonl").read_bytes()
    bytes_b = (out_b / "events.jsonl").read_bytes()
    assert bytes_a == bytes_b and len(bytes_a) > 0

    series_a, _ = export_convergence(out_a)
    best_column = [float(line.split(",")[1]) for line in series_a.strip().splitlines()[1:]]
    assert best_column == [0.8, 0.8, 0.9]
    _ok("end-to-end determinism: byte-identical events.jsonl; elitist series 0.8/0.8/0.9")


def test_parser_suites(rng):
    # grammar round-trip on 1000 generated spaces
    from evotune.configspace import Categorical, ConfigSpace, FloatRange, IntRange, ParamSpec

    kinds = ["float", "int", "cat"]
    for trial in range(1_000):
        params = []
        for index in range(int(rng.integers(0, 6))):
            kind = kinds[int(rng.integers(0, 3))]
            name = f"p{index}"
            if kind == "float":
                lo, hi = sorted(rng.uniform(-1e4, 1e4, size=2))
                params.append(ParamSpec(name, FloatRange(float(lo), float(hi))))
            elif kind == "int":
                lo, hi = sorted(int(v) for v in rng.integers(-1000, 1000, size=2))
                params.append(ParamSpec(name, IntRange(lo, hi)))
            else:
                count = int(rng.integers(1, 5))
                params.append(ParamSpec(name, Categorical(tuple(f"c{k}" for k in range(count)))))
        space = ConfigSpace(tuple(params))
        assert parse_space(serialize_space(space)) == space

    # both response-format headings from the prompt templates parse
    for heading in ("Space", "Configspace", "space", "CONFIGSPACE"):
        raw = make_response("H", "class H:\n    pass", '{"a": (1, 2)}', heading=heading)
        parsed = parse_response(raw)
        assert parsed.space_text == '{"a": (1, 2)}'
    _ok("parsers: 1000 space round-trips; both Space and Configspace headings accepted")


# -- secondary component (requires the shim package) -------------------------

RANDOM_SEARCH = """import numpy as np

class RandomSearch:
    def __init__(self, budget=10000, dim=10):
        self.budget = budget
        self.dim = dim

    def __call__(self, func):
        self.f_opt = np.Inf
        self.x_opt = None
        for i in range(self.budget):
            x = np.random.uniform(func.bounds.lb, func.bounds.ub)

            f = func(x)
            if f < self.f_opt:
                self.f_opt = f
                self.x_opt = x

        return self.f_opt, self.x_opt
"""


@needs_shim
def test_shim_conformance():
    """The stock random-search example performs exactly `budget` evaluation
    queries then finishes; syntax errors surface as init errors; an
    over-budget candidate is refused at query budget+1."""
    from evotune.sandbox import InitError, SandboxLimits, SandboxSession, init_message
    from evotune.benchmarks.runners import DEFAULT_SHIM_COMMAND

    limits = SandboxLimits(wall_timeout_per_call=30.0, wall_timeout_total=120.0)
    with SandboxSession.spawn(
        DEFAULT_SHIM_COMMAND, init_message("optimize", RANDOM_SEARCH, "{}", 3), limits
    ) as session:
        calls = {"n": 0}

        def objective(x):
            calls["n"] += 1
            return float(np.sum(np.square(x)))

        _, _, series = session.drive_optimize(objective, budget=50, dim=5, lb=-5.0, ub=5.0)
    assert calls["n"] == 50
    assert len(series) == 50

    with pytest.raises(InitError) as excinfo:
        SandboxSession.spawn(
            DEFAULT_SHIM_COMMAND,
            init_message("optimize", "class Broken(:\n    pass", "{}", 0),
            limits,
        )
    assert "SyntaxError" in excinfo.value.traceback

    over_budget = RANDOM_SEARCH.replace("range(self.budget)", "range(self.budget + 1)")
    from evotune.sandbox import ChildDied

    with SandboxSession.spawn(
        DEFAULT_SHIM_COMMAND, init_message("optimize", over_budget, "{}", 3), limits
    ) as session:
        with pytest.raises(ChildDied) as excinfo:
            session.drive_optimize(lambda x: float(np.sum(np.square(x))), budget=20, dim=3, lb=-5.0, ub=5.0)
    assert "budget exhausted" in excinfo.value.traceback
    assert len(excinfo.value.trajectory) == 20
    _ok("shim conformance: exact budget; init error traceback; over-budget refusal")


CRASHY_SCORER = """import numpy as np

class CrashyScorer:
    def __init__(self, s1=1.0):
        self.s1 = s1
        self.calls = 0

    def score(self, item, bins):
        self.calls += 1
        if self.calls > 3:
            raise ValueError("deliberate mid-run crash")
        return bins - item
"""


@needs_shim
def test_crash_propagation(tmp_path):
    """A scorer raising mid-run surfaces its verbatim traceback in the
    candidate's error record and forces fitness 0 in the engine."""
    from evotune.benchmarks.binpack import BinpackEvaluator
    from evotune.benchmarks.runners import SandboxRunner
    from evotune.engine import EvolutionConfig, run_evolution
    from evotune.hpo import Tuner, TunerConfig
    from evotune.llm import ScriptedSource

    instances = {
        f"i{k}": gen_weibull_instance(30, 100, rng=np.random.default_rng(k)) for k in range(3)
    }
    evaluator = BinpackEvaluator(
        instances, ["i0", "i1"], ["i0", "i1", "i2"], SandboxRunner(), base_seed=1
    )
    raw = make_response("CrashyScorer", CRASHY_SCORER, '{"s1": (0.1, 1.5)}')
    store = RunStore(tmp_path / "run")
    config = EvolutionConfig(
        problem="binpack",
        llm_budget=1,
        hpo_budget=6,
        seeds=(1,),
        training_instances=tuple(evaluator.training_instances),
        full_instances=tuple(evaluator.full_instances),
    )
    tuner = Tuner(TunerConfig(budget=6, min_instances=1, max_instances=2, strategy="random", seed=1))
    best, _ = run_evolution(config, ScriptedSource([raw]), tuner, evaluator, store)
    assert best.fitness == 0.0
    assert best.error is not None
    assert "deliberate mid-run crash" in best.error
    assert "Traceback" in best.error
    _ok("crash propagation: verbatim traceback in Candidate.error, fitness forced to 0")
