import json
from fractions import Fraction

import numpy as np
import pytest

from conftest import make_response
from evotune.benchmarks.recorded import RecordedEvaluator
from evotune.configspace import parse_space
from evotune.engine import Candidate, EvolutionConfig, run_evolution, select
from evotune.hpo import Tuner, TunerConfig
from evotune.llm import ScriptedSource, ScriptExhausted
from evotune.prompts import UnknownProblem, build_feedback_prompt, build_task_prompt
from evotune.store import RunStore


def _candidate(cid=0, name="A", fitness=0.5, error=None, tuned=None, space=None, code="class A: pass"):
    return Candidate(
        id=cid,
        parent_id=None,
        name=name,
        code=code,
        space_text="{}",
        space=space,
        tuned=tuned,
        fitness=fitness if not error else 0.0,
        fitness_std=0.0,
        error=error,
        llm_query_index=cid,
    )


# -- prompts ----------------------------------------------------------------


def test_task_prompt_binpack_contract():
    assert "score(self, item, bins)" in build_task_prompt("binpack")


def test_task_prompt_tsp_contract():
    assert "update_edge_distance" in build_task_prompt("tsp")


def test_task_prompt_bbob_contract():
    assert "__init__(self, budget, dim)" in build_task_prompt("bbob")


def test_task_prompt_unknown_problem():
    with pytest.raises(UnknownProblem):
        build_task_prompt("sudoku")


def test_feedback_prompt_lists_history_in_order():
    space = parse_space('{"s1": (0.0, 2.0)}')
    best = _candidate(1, "B", 0.2, tuned={"s1": 1.0}, space=space)
    prompt = build_feedback_prompt("TASK", [("A", 0.1), ("B", 0.2)], best)
    assert prompt.index("TASK") == 0
    assert prompt.index("- A: 0.1") < prompt.index("- B: 0.2")
    assert best.code in prompt
    assert '{"s1": 1.0}' in prompt
    assert "refine or redesign" in prompt


def test_feedback_prompt_without_error_has_no_error_section():
    best = _candidate(0, "A", 0.5)
    prompt = build_feedback_prompt("TASK", [("A", 0.5)], best)
    assert "following error" not in prompt


def test_feedback_prompt_embeds_traceback_verbatim():
    traceback_text = 'Traceback (most recent call last):\n  File "<candidate>", line 3\nZeroDivisionError: division by zero'
    best = _candidate(0, "A", 0.0, error=traceback_text)
    prompt = build_feedback_prompt("TASK", [("A", 0.0)], best)
    assert traceback_text in prompt


# -- selection --------------------------------------------------------------


def test_select_tie_goes_to_challenger():
    best = _candidate(0, "A", 0.5)
    challenger = _candidate(1, "B", 0.5)
    assert select(best, challenger) is challenger


def test_select_worse_challenger_rejected():
    best = _candidate(0, "A", 0.5)
    challenger = _candidate(1, "B", 0.4)
    assert select(best, challenger) is best


def test_select_degenerate_zero_tie():
    best = _candidate(0, "A", 0.0, error="old failure")
    challenger = _candidate(1, "B", 0.0, error="new failure")
    assert select(best, challenger) is challenger


def test_candidate_error_forces_zero_fitness():
    with pytest.raises(ValueError):
        Candidate(
            id=0, parent_id=None, name="X", code="", space_text="", space=None,
            tuned=None, fitness=0.3, fitness_std=0.0, error="boom", llm_query_index=0,
        )


# -- run_evolution ----------------------------------------------------------

VALID_SPACE = '{"s1": (0.1, 1.5)}'


def _scripted(names_and_fitness, broken_prefix=0):
    """Scripted responses: `broken_prefix` malformed ones, then valid ones."""
    responses = []
    for i in range(broken_prefix):
        responses.append(f"no sections here at all ({i})")
    for name, _ in names_and_fitness:
        responses.append(make_response(name, f"class {name}:\n    pass", VALID_SPACE))
    return ScriptedSource(responses)


def _recorded(names_and_fitness, full=5, training=4):
    results = {name: {"fitness": fit} for name, fit in names_and_fitness}
    return RecordedEvaluator("binpack", results, full_set_size=full, training_size=training)


def _config(evaluator, T, hpo_budget=8):
    return EvolutionConfig(
        problem=evaluator.problem,
        llm_budget=T,
        hpo_budget=hpo_budget,
        seeds=(1,),
        training_instances=tuple(evaluator.training_instances),
        full_instances=tuple(evaluator.full_instances),
    )


def _tuner(budget=8, strategy="random", seed=1):
    return Tuner(TunerConfig(budget=budget, min_instances=1, max_instances=2, strategy=strategy, seed=seed))


def test_broken_then_valid_candidates(tmp_path):
    plan = [("BestFit", 0.9)]
    llm = _scripted(plan, broken_prefix=3)
    evaluator = _recorded(plan)
    store = RunStore(tmp_path / "run")
    best, state = run_evolution(_config(evaluator, T=4), llm, _tuner(), evaluator, store)
    assert best.name == "BestFit"
    assert best.fitness == 0.9
    assert state.t == 4
    names = [name for name, _ in state.history]
    assert len(names) == 4
    for cid in range(3):
        cand = store.load_candidate(cid)
        assert cand.fitness == 0.0
        assert cand.error
    assert json.loads((tmp_path / "run" / "best.json").read_text())["id"] == 3


def test_single_query_budget(tmp_path):
    plan = [("Only", 0.4)]
    llm = _scripted(plan)
    evaluator = _recorded(plan)
    store = RunStore(tmp_path / "run")
    best, state = run_evolution(_config(evaluator, T=1), llm, _tuner(), evaluator, store)
    assert state.t == 1
    assert llm.cursor == 1  # exactly one LLM query issued
    assert best.name == "Only"


def test_elitist_best_series(tmp_path):
    plan = [("A", 0.8), ("B", 0.7), ("C", 0.9)]
    llm = _scripted(plan)
    evaluator = _recorded(plan)
    store = RunStore(tmp_path / "run")
    best, state = run_evolution(_config(evaluator, T=3), llm, _tuner(), evaluator, store)
    assert best.name == "C"
    series = [
        e["payload"]["best_fitness"]
        for e in store.events()
        if e["kind"] == "selection"
    ]
    assert series == [0.8, 0.8, 0.9]
    assert all(series[i] <= series[i + 1] for i in range(len(series) - 1))


def test_monotone_best_fitness_property(tmp_path):
    rng = np.random.default_rng(5)
    plan = [(f"N{i}", float(rng.uniform(0, 1))) for i in range(8)]
    llm = _scripted(plan)
    evaluator = _recorded(plan)
    store = RunStore(tmp_path / "run")
    _, state = run_evolution(_config(evaluator, T=8), llm, _tuner(), evaluator, store)
    series = [e["payload"]["best_fitness"] for e in store.events() if e["kind"] == "selection"]
    assert series == sorted(series) or all(series[i] <= series[i + 1] for i in range(len(series) - 1))
    assert max(series) == max(fit for _, fit in plan)


def test_instance_eval_accounting(tmp_path):
    plan = [("A", 0.8), ("B", 0.7)]
    llm = _scripted(plan, broken_prefix=1)
    evaluator = _recorded(plan, full=5, training=4)
    store = RunStore(tmp_path / "run")
    hpo_budget = 8
    _, state = run_evolution(_config(evaluator, T=3, hpo_budget=hpo_budget), llm, _tuner(hpo_budget), evaluator, store)
    # candidate 0 parses nothing: zero evals; candidates 1-2: 8 tuning + 5 full each
    assert state.instance_evals_total == 2 * (hpo_budget + 5)
    assert state.full_benchmark_evals == Fraction(26, 5)
    evaluations = [e["payload"] for e in store.events() if e["kind"] == "evaluation"]
    assert evaluations[0]["tuning_evals"] == 0 and evaluations[0]["full_evals"] == 0
    assert evaluations[1]["tuning_evals"] == hpo_budget and evaluations[1]["full_evals"] == 5


def test_code_bytes_round_trip(tmp_path):
    code = "class Weird:\n    s = '\\u00e9\\u4e2d'   \n    # trailing spaces  "
    raw = make_response("Weird", code, VALID_SPACE)
    llm = ScriptedSource([raw])
    evaluator = _recorded([("Weird", 0.5)])
    store = RunStore(tmp_path / "run")
    best, _ = run_evolution(_config(evaluator, T=1), llm, _tuner(), evaluator, store)
    assert best.code == code  # parsed exactly as written inside the fence
    stored = (tmp_path / "run" / "candidates" / "0" / "code.py").read_bytes()
    assert stored == best.code.encode("utf-8")
    assert store.load_candidate(0).code == best.code


def test_script_exhausted_aborts_with_state_persisted(tmp_path):
    plan = [("A", 0.8)]
    llm = _scripted(plan)  # only one response but T=3
    evaluator = _recorded(plan)
    store = RunStore(tmp_path / "run")
    with pytest.raises(ScriptExhausted):
        run_evolution(_config(evaluator, T=3), llm, _tuner(), evaluator, store)
    assert (tmp_path / "run" / "best.json").exists()
    kinds = [e["kind"] for e in store.events()]
    assert kinds[-1] == "error"
    assert "selection" in kinds


def test_mismatched_evaluator_problem_rejected(tmp_path):
    plan = [("A", 0.8)]
    evaluator = _recorded(plan)
    config = _config(evaluator, T=1)
    config.problem = "tsp"
    with pytest.raises(ValueError):
        run_evolution(config, _scripted(plan), _tuner(), evaluator, RunStore(tmp_path / "run"))


def test_bad_space_recorded_as_candidate_error(tmp_path):
    raw = make_response("BadSpace", "class B:\n    pass", '{"a": (1, 2, 3)}')
    llm = ScriptedSource([raw])
    evaluator = _recorded([("BadSpace", 0.8)])
    store = RunStore(tmp_path / "run")
    best, _ = run_evolution(_config(evaluator, T=1), llm, _tuner(), evaluator, store)
    assert best.fitness == 0.0
    assert "configuration space error" in best.error


def test_reserved_parameter_rejected_for_bbob(tmp_path):
    raw = make_response("Res", "class R:\n    pass", '{"budget": (1, 5)}')
    llm = ScriptedSource([raw])
    evaluator = _recorded([("Res", 0.8)])
    evaluator.problem = "bbob"
    evaluator.reserved_parameter_names = ("budget", "dim")
    store = RunStore(tmp_path / "run")
    config = _config(evaluator, T=1)
    best, _ = run_evolution(config, llm, _tuner(), evaluator, store)
    assert best.fitness == 0.0
    assert "reserved" in best.error


def test_crashing_candidate_gets_first_traceback(tmp_path):
    plan = [("Crashy", 0.0)]
    raw = make_response("Crashy", "class C:\n    pass", VALID_SPACE)
    llm = ScriptedSource([raw])
    evaluator = RecordedEvaluator(
        "binpack", {"Crashy": {"error": "Traceback: ValueError: exploded"}}, 5, 4
    )
    store = RunStore(tmp_path / "run")
    best, state = run_evolution(_config(evaluator, T=1), llm, _tuner(), evaluator, store)
    assert best.fitness == 0.0
    assert "exploded" in best.error
    # tuning aborted early: fewer objective calls than the budget
    assert state.instance_evals_total < 8


def test_feedback_prompt_flows_into_next_query(tmp_path):
    plan = [("A", 0.8), ("B", 0.9)]
    llm = _scripted(plan)
    evaluator = _recorded(plan)
    store = RunStore(tmp_path / "run")
    run_evolution(_config(evaluator, T=2), llm, _tuner(), evaluator, store)
    queries = [e["payload"] for e in store.events() if e["kind"] == "llm_query"]
    assert queries[0]["kind"] == "initial"
    assert queries[1]["kind"] == "mutation"
    assert "- A: 0.8" in queries[1]["prompt"]
    assert "class A:" in queries[1]["prompt"]
