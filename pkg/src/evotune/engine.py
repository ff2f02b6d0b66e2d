"""The (1+1) evolution loop with in-loop hyper-parameter tuning.

One LLM query produces one candidate (code plus configuration space); the
tuner spends its instance-evaluation budget on the training split, the tuned
incumbent is scored once on the full instance set, and the best-so-far
candidate survives ties.  Any failure along the way (format drift, bad
space, crashing code) zeroes the fitness and records the error text so the
next mutation prompt can self-debug.  Every candidate is persisted before the
next query.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Tuple

import numpy as np

from evotune.benchmarks import PROBLEMS
from evotune.benchmarks.base import Evaluator
from evotune.configspace import (
    ConfigAssignment,
    ConfigSpace,
    SpaceSyntaxError,
    check_reserved,
    parse_space,
)
from evotune.hpo import AllTrialsFailed, Tuner
from evotune.llm import LLMGateway, LLMRequest, MissingSection, parse_response
from evotune.prompts import build_feedback_prompt, build_task_prompt

log = logging.getLogger(__name__)


@dataclass
class EvolutionConfig:
    problem: str
    llm_budget: int  # total LLM queries, the initial generation included
    hpo_budget: int  # instance evaluations granted to the tuner per candidate
    seeds: Tuple[int, ...] = (1,)
    training_instances: Tuple = ()
    full_instances: Tuple = ()
    model_name: str = "gpt-4o"
    temperature: float = 1.0
    system_message: str = ""

    def validate(self) -> None:
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.llm_budget < 1:
            raise ValueError("llm_budget must be >= 1")
        if self.hpo_budget < 1:
            raise ValueError("hpo_budget must be >= 1")
        if not self.training_instances:
            raise ValueError("need at least one training instance")
        if not set(self.training_instances) <= set(self.full_instances):
            raise ValueError("training instances must be a subset of the full set")


@dataclass
class Candidate:
    id: int
    parent_id: Optional[int]
    name: str
    code: str
    space_text: str
    space: Optional[ConfigSpace]
    tuned: Optional[ConfigAssignment]
    fitness: float
    fitness_std: float
    error: Optional[str]
    llm_query_index: int

    def __post_init__(self):
        if self.error and self.fitness != 0.0:
            raise ValueError("a failed candidate must carry fitness 0")


@dataclass
class RunState:
    t: int = 0  # LLM queries issued
    best: Optional[Candidate] = None
    history: List[Tuple[str, float]] = field(default_factory=list)
    instance_evals_total: int = 0
    full_set_size: int = 0

    @property
    def full_benchmark_evals(self) -> Fraction:
        if self.full_set_size == 0:
            return Fraction(0)
        return Fraction(self.instance_evals_total, self.full_set_size)


@dataclass
class ResumeInfo:
    """Replay summary an interrupted run leaves behind (built by the store)."""

    t: int
    next_candidate_id: int
    responses_consumed: int
    best_id: Optional[int]
    history: List[Tuple[str, float]]
    instance_evals_total: int
    dangling: Optional[Tuple[int, str]] = None  # (candidate id, raw response)


def select(best: Candidate, challenger: Candidate) -> Candidate:
    """Elitist comparison against the best-so-far; ties go to the challenger."""
    return challenger if challenger.fitness >= best.fitness else best


def _tuner_seed(base_seed: int, candidate_id: int) -> int:
    return int(np.random.SeedSequence([base_seed & 0xFFFFFFFF, candidate_id]).generate_state(1)[0])


class _Aborted(RuntimeError):
    pass


def run_evolution(
    config: EvolutionConfig,
    llm: LLMGateway,
    tuner: Tuner,
    evaluator: Evaluator,
    store,
    resume: Optional[ResumeInfo] = None,
) -> Tuple[Candidate, RunState]:
    """Run the loop to its query budget and return the best candidate.

    Gateway failures abort with the state persisted; candidate-level failures
    (unparseable response, bad space, crashing code) are recorded with fitness
    zero and the loop continues.
    """
    config.validate()
    if evaluator.problem != config.problem:
        raise ValueError(
            f"evaluator solves {evaluator.problem!r} but the run is configured for {config.problem!r}"
        )

    state = RunState(full_set_size=len(config.full_instances))
    task_prompt = build_task_prompt(config.problem)
    next_id = 0

    if resume is None:
        store.append("config_snapshot", _snapshot(config, tuner))
    else:
        state.t = resume.t
        state.instance_evals_total = resume.instance_evals_total
        state.history = list(resume.history)
        if resume.best_id is not None:
            state.best = store.load_candidate(resume.best_id)
        next_id = resume.next_candidate_id
        if resume.dangling is not None:
            cand_id, raw = resume.dangling
            candidate = _process_response(raw, cand_id, _parent_id(state), config, tuner, evaluator, store, state)
            _finish_candidate(candidate, state, store)
            next_id = cand_id + 1

    while state.t < config.llm_budget:
        if next_id == 0:
            prompt = task_prompt
        else:
            prompt = build_feedback_prompt(task_prompt, state.history, state.best)
        raw = _query(llm, prompt, next_id, config, store, state)
        state.t += 1
        candidate = _process_response(raw, next_id, _parent_id(state), config, tuner, evaluator, store, state)
        _finish_candidate(candidate, state, store)
        next_id += 1

    store.write_best(state.best)
    return state.best, state


def _parent_id(state: RunState) -> Optional[int]:
    return state.best.id if state.best is not None else None


def _snapshot(config: EvolutionConfig, tuner: Tuner) -> dict:
    return {
        "problem": config.problem,
        "llm_budget": config.llm_budget,
        "hpo_budget": config.hpo_budget,
        "seeds": list(config.seeds),
        "training_instances": [repr(i) for i in config.training_instances],
        "full_set_size": len(config.full_instances),
        "model_name": config.model_name,
        "temperature": config.temperature,
        "system_message": config.system_message,
        "tuner": {
            "strategy": tuner.cfg.strategy,
            "budget": tuner.cfg.budget,
            "min_instances": tuner.cfg.min_instances,
            "max_instances": tuner.cfg.max_instances,
            "seed": tuner.cfg.seed,
            "initial_design": tuner.cfg.initial_design,
            "pool_size": tuner.cfg.pool_size,
        },
    }


def _query(llm, prompt: str, index: int, config: EvolutionConfig, store, state: RunState) -> str:
    store.append("llm_query", {"candidate_id": index, "kind": "initial" if index == 0 else "mutation", "prompt": prompt})
    request = LLMRequest(
        system_message=config.system_message,
        user_message=prompt,
        temperature=config.temperature,
        model_name=config.model_name,
    )
    try:
        raw = llm.query(request)
    except Exception as exc:
        store.append("error", {"candidate_id": index, "message": f"LLM gateway failure: {exc}"})
        if state.best is not None:
            store.write_best(state.best)
        raise
    store.append("llm_response", {"candidate_id": index, "raw": raw})
    return raw


def _failed_candidate(cand_id, parent_id, name, code, space_text, error, query_index) -> Candidate:
    return Candidate(
        id=cand_id,
        parent_id=parent_id,
        name=name,
        code=code,
        space_text=space_text,
        space=None,
        tuned=None,
        fitness=0.0,
        fitness_std=0.0,
        error=error,
        llm_query_index=query_index,
    )


def _process_response(
    raw: str,
    cand_id: int,
    parent_id: Optional[int],
    config: EvolutionConfig,
    tuner: Tuner,
    evaluator: Evaluator,
    store,
    state: RunState,
) -> Candidate:
    """Parse, tune and evaluate one response; failures become zero-fitness
    candidates with the error text preserved."""
    try:
        parsed = parse_response(raw)
    except MissingSection as exc:
        name = exc.partial.get("name") or f"Candidate{cand_id}"
        error = f"response format error: missing section '{exc.section}'"
        store.append("parse_result", {"candidate_id": cand_id, "ok": False, "name": name, "error": error})
        store.append("evaluation", _evaluation_payload(cand_id, 0.0, 0.0, error, 0, 0, {}))
        return _failed_candidate(
            cand_id, parent_id, name, exc.partial.get("code", ""), exc.partial.get("space", ""), error, cand_id
        )

    store.append("parse_result", {"candidate_id": cand_id, "ok": True, "name": parsed.name})

    try:
        space = parse_space(parsed.space_text)
    except SpaceSyntaxError as exc:
        error = f"configuration space error: {exc}"
        store.append("evaluation", _evaluation_payload(cand_id, 0.0, 0.0, error, 0, 0, {}))
        return _failed_candidate(cand_id, parent_id, parsed.name, parsed.code, parsed.space_text, error, cand_id)

    reserved = check_reserved(space, evaluator.reserved_parameter_names)
    if reserved:
        error = "configuration space error: " + "; ".join(reserved)
        store.append("evaluation", _evaluation_payload(cand_id, 0.0, 0.0, error, 0, 0, {}))
        return _failed_candidate(cand_id, parent_id, parsed.name, parsed.code, parsed.space_text, error, cand_id)

    bound = evaluator.bind(parsed.code, space, parsed.name)

    try:
        incumbent, trials = tuner.tune(
            space,
            bound.instance_cost,
            evaluator.training_instances,
            seed=_tuner_seed(tuner.cfg.seed, cand_id),
        )
    except AllTrialsFailed as exc:
        _log_trials(store, cand_id, exc.trials)
        state.instance_evals_total += len(exc.trials)
        error = exc.first_error
        store.append("evaluation", _evaluation_payload(cand_id, 0.0, 0.0, error, len(exc.trials), 0, {}))
        return _failed_candidate(cand_id, parent_id, parsed.name, parsed.code, parsed.space_text, error, cand_id)

    _log_trials(store, cand_id, trials)
    state.instance_evals_total += len(trials)
    store.append(
        "hpo_incumbent",
        {
            "candidate_id": cand_id,
            "assignment": incumbent.assignment,
            "mean_cost": incumbent.mean_cost,
            "instances_seen": incumbent.instances_seen,
        },
    )

    final = bound.final_evaluation(incumbent.assignment)
    state.instance_evals_total += final.instance_evals
    fitness = 0.0 if final.error else final.fitness
    std = 0.0 if final.error else final.std
    store.append(
        "evaluation",
        _evaluation_payload(cand_id, fitness, std, final.error, len(trials), final.instance_evals, final.raw),
    )
    return Candidate(
        id=cand_id,
        parent_id=parent_id,
        name=parsed.name,
        code=parsed.code,
        space_text=parsed.space_text,
        space=space,
        tuned=incumbent.assignment,
        fitness=fitness,
        fitness_std=std,
        error=final.error,
        llm_query_index=cand_id,
    )


def _evaluation_payload(cand_id, fitness, std, error, tuning_evals, full_evals, raw) -> dict:
    return {
        "candidate_id": cand_id,
        "fitness": fitness,
        "fitness_std": std,
        "error": error,
        "tuning_evals": tuning_evals,
        "full_evals": full_evals,
        "raw": dict(raw),
    }


def _log_trials(store, cand_id: int, trials) -> None:
    for trial in trials:
        store.append(
            "hpo_trial",
            {
                "candidate_id": cand_id,
                "eval_index": trial.eval_index,
                "instance": repr(trial.instance_id),
                "assignment": trial.assignment,
                "cost": trial.cost,
                "error": trial.error,
            },
        )


def _finish_candidate(candidate: Candidate, state: RunState, store) -> None:
    if state.best is None:
        state.best = candidate
        improved = True
    else:
        chosen = select(state.best, candidate)
        improved = chosen is candidate
        state.best = chosen
    state.history.append((candidate.name, candidate.fitness))
    store.save_candidate(candidate)
    store.append(
        "selection",
        {
            "candidate_id": candidate.id,
            "name": candidate.name,
            "fitness": candidate.fitness,
            "improved": improved,
            "best_id": state.best.id,
            "best_fitness": state.best.fitness,
            "t": state.t,
            "instance_evals_total": state.instance_evals_total,
        },
    )
    store.write_best(state.best)
