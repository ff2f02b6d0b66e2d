"""Pre-recorded evaluation results keyed by candidate name.

Lets the whole loop run without executing any generated code: the tuner sees
a constant objective and the final evaluation replays the recorded fitness.
Used by deterministic end-to-end tests and by `run --recorded-evals`.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, Mapping, Tuple

from evotune.benchmarks.base import CandidateFailure, FinalResult
from evotune.configspace import ConfigAssignment, ConfigSpace


class RecordedEvaluator:
    reserved_parameter_names: Tuple[str, ...] = ()

    def __init__(
        self,
        problem: str,
        results: Mapping[str, Mapping],
        full_set_size: int,
        training_size: int,
    ):
        if training_size < 1 or training_size > full_set_size:
            raise ValueError("need 1 <= training_size <= full_set_size")
        self.problem = problem
        self._results: Dict[str, dict] = {name: dict(rec) for name, rec in results.items()}
        self.training_instances = tuple(range(training_size))
        self.full_instances = tuple(range(full_set_size))

    @classmethod
    def from_file(cls, path: Path, problem: str) -> "RecordedEvaluator":
        doc = json.loads(Path(path).read_text())
        return cls(
            problem=problem,
            results=doc["results"],
            full_set_size=int(doc["full_set_size"]),
            training_size=int(doc["training_size"]),
        )

    def bind(self, code: str, space: ConfigSpace, name: str) -> "_BoundRecorded":
        record = self._results.get(name)
        if record is None:
            record = {"error": f"no recorded result for candidate {name!r}"}
        return _BoundRecorded(record, len(self.full_instances))


class _BoundRecorded:
    def __init__(self, record: dict, full_set_size: int):
        self._record = record
        self._full_set_size = full_set_size

    def instance_cost(self, assignment: ConfigAssignment, instance_id) -> float:
        error = self._record.get("error")
        if error:
            raise CandidateFailure(error, error)
        return -float(self._record["fitness"])

    def final_evaluation(self, assignment: ConfigAssignment) -> FinalResult:
        error = self._record.get("error")
        if error:
            return FinalResult(fitness=0.0, std=0.0, instance_evals=0, error=error)
        return FinalResult(
            fitness=float(self._record["fitness"]),
            std=float(self._record.get("std", 0.0)),
            instance_evals=self._full_set_size,
        )
