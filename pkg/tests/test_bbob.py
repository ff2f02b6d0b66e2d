import json
import math

import numpy as np
import pytest

from evotune.benchmarks.bbob import (
    IMPLEMENTED_FUNCTIONS,
    BbobEvaluator,
    DimensionMismatch,
    IncompleteGrid,
    Trajectory,
    UnknownFunction,
    aggregate_aocc,
    aocc,
    make_function,
    make_suite,
    read_trajectory,
    trajectory_from_best_values,
    write_suite_manifest,
    write_trajectory,
)


def test_suite_size_arithmetic():
    assert len(make_suite(list(range(1, 9)), 5, 3, 3)) == 72
    suite = make_suite(list(IMPLEMENTED_FUNCTIONS), 5, 3, 3)
    assert len(suite) == 216  # 24 functions x 3 instances x 3 seeds


def test_suite_rejects_unknown_function():
    with pytest.raises(UnknownFunction):
        make_suite([1, 99], 5, 3, 3)


def test_instance_determinism_across_constructions():
    a = make_function(8, 5, 2)
    b = make_function(8, 5, 2)
    assert np.array_equal(a.x_opt, b.x_opt)
    assert a.f_opt == b.f_opt


def test_instances_differ():
    assert not np.array_equal(make_function(1, 5, 1).x_opt, make_function(1, 5, 2).x_opt)


def test_sphere_optimum_identity():
    fn = make_function(1, 5, 1)
    assert fn(fn.x_opt) == fn.f_opt


def test_sphere_hand_value():
    fn = make_function(1, 5, 1)
    fn.x_opt = np.zeros(5)
    fn.f_opt = 0.0
    assert fn(np.ones(5)) == 5.0


def test_rastrigin_optimality():
    fn = make_function(3, 5, 1)
    assert fn(fn.x_opt) == fn.f_opt
    assert fn(fn.x_opt + 0.5) > fn.f_opt


def test_all_functions_exact_at_optimum():
    for fid in IMPLEMENTED_FUNCTIONS:
        fn = make_function(fid, 5, 1)
        assert fn(fn.x_opt) == fn.f_opt, f"f{fid} optimum identity"


def test_all_functions_never_below_optimum():
    # 1e5 random domain points per function, chunked to bound the memory of
    # the wide intermediate arrays (Gallagher, Katsuura)
    rng = np.random.default_rng(77)
    for fid in IMPLEMENTED_FUNCTIONS:
        fn = make_function(fid, 5, 1)
        for _ in range(5):
            xs = rng.uniform(-5.0, 5.0, size=(20_000, 5))
            values = fn.evaluate_batch(xs)
            assert np.all(values >= fn.f_opt), f"f{fid} dipped below its optimum"
        assert fn.eval_count == 100_000


def test_eval_count_tracks_calls():
    fn = make_function(1, 3, 1)
    for _ in range(7):
        fn(np.zeros(3))
    assert fn.eval_count == 7


def test_dimension_mismatch():
    fn = make_function(1, 5, 1)
    with pytest.raises(DimensionMismatch):
        fn(np.zeros(4))


def test_f_opt_within_bbob_bounds():
    for fid in IMPLEMENTED_FUNCTIONS:
        for iid in range(1, 4):
            assert -1000.0 <= make_function(fid, 5, iid).f_opt <= 1000.0


def test_linear_slope_optimum_on_corner():
    fn = make_function(5, 5, 1)
    assert np.all(np.abs(fn.x_opt) == 5.0)


def test_aocc_upper_clamp_zero():
    assert aocc([1e2] * 10) == 0.0
    assert aocc([5e3] * 10) == 0.0


def test_aocc_lower_clamp_one():
    assert aocc([1e-8] * 10) == 1.0
    assert aocc([0.0] * 10) == 1.0


def test_aocc_constant_midpoint():
    # log10(1e-3) = -3; contribution 1 - (-3 + 8)/10 = 0.5, exactly
    assert aocc([1e-3] * 10_000) == 0.5


def test_aocc_bounds_random(rng):
    for _ in range(200):
        length = int(rng.integers(1, 50))
        traj = np.maximum.accumulate(rng.uniform(0, 1e3, size=length)[::-1])[::-1]
        value = aocc(traj, budget=64)
        assert 0.0 <= value <= 1.0


def test_aocc_padding_invariance():
    traj = [1.0, 0.1, 0.01]
    extended = traj + [0.01] * 40
    assert aocc(traj, budget=16) == aocc(extended, budget=16)


def test_aocc_monotone_dominance(rng):
    for _ in range(200):
        length = int(rng.integers(1, 40))
        base = np.minimum.accumulate(rng.uniform(1e-9, 1e3, size=length))
        lower = base * rng.uniform(0.1, 1.0, size=length)
        lower = np.minimum.accumulate(lower)
        assert aocc(lower, budget=50) >= aocc(base, budget=50)


def test_aggregate_grand_mean():
    per_run = {
        (1, 1, 1): 0.2,
        (2, 1, 1): 0.4,
        (1, 1, 2): 0.2,
        (2, 1, 2): 0.4,
    }
    assert math.isclose(aggregate_aocc(per_run), 0.3)


def test_aggregate_all_ones():
    per_run = {(f, i, s): 1.0 for f in (1, 2) for i in (1, 2, 3) for s in (1, 2)}
    assert aggregate_aocc(per_run) == 1.0


def test_aggregate_errored_cell_zeroes():
    per_run = {(1, 1, 1): 0.9, (1, 1, 2): None}
    assert aggregate_aocc(per_run) == 0.0


def test_aggregate_incomplete_grid():
    with pytest.raises(IncompleteGrid):
        aggregate_aocc({(1, 1, 1): 0.5, (2, 1, 2): 0.5})
    with pytest.raises(IncompleteGrid):
        aggregate_aocc({})


def test_trajectory_budget_invariant():
    with pytest.raises(ValueError):
        Trajectory(best_precision=[1.0, 0.5], budget=1)


def test_trajectory_csv_round_trip(tmp_path):
    traj = trajectory_from_best_values([3.0, 1.0, 1.0], f_opt=0.5, budget=10)
    assert traj.best_precision == [2.5, 0.5, 0.5]
    path = tmp_path / "f1_i1_s1.csv"
    write_trajectory(path, traj)
    assert read_trajectory(path) == [2.5, 0.5, 0.5]


def test_suite_manifest(tmp_path):
    slots = make_suite([1, 2], 5, 2, 1)
    path = tmp_path / "manifest.json"
    write_suite_manifest(path, slots, 5)
    doc = json.loads(path.read_text())
    assert len(doc["instances"]) == 4
    assert {"function_id", "instance_id", "x_opt_digest", "f_opt"} <= set(doc["instances"][0])


class _DirectOptimizeRunner:
    """Random-search optimizer run in-process, honoring the budget."""

    def optimize(self, code, config_text, seed, objective, budget, dim, lb, ub):
        rng = np.random.default_rng(seed)
        best = math.inf
        series = []
        for _ in range(budget):
            value = float(objective(rng.uniform(lb, ub, size=dim)))
            best = min(best, value)
            series.append(best)
        return series


def test_evaluator_full_grid():
    slots = make_suite([1, 2], 3, 1, 2)
    evaluator = BbobEvaluator(slots[:2], slots, dim=3, budget=40, runner=_DirectOptimizeRunner())
    bound = evaluator.bind("code", __import__("evotune.configspace", fromlist=["ConfigSpace"]).ConfigSpace(()), "X")
    result = bound.final_evaluation({})
    assert result.error is None
    assert 0.0 <= result.fitness <= 1.0
    assert result.instance_evals == len(slots)
    cost = bound.instance_cost({}, slots[0])
    assert -1.0 <= cost <= 0.0
