"""Evaluator interface between the evolution loop and the benchmarks.

The engine never executes candidate code itself: it binds a candidate to an
evaluator, the tuner probes ``instance_cost`` on training instances, and the
final incumbent is scored once on the full instance set.  Costs are always
minimized here; benchmarks that maximize expose ``cost = -fitness``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Dict, Optional, Protocol, Tuple, runtime_checkable

from evotune.configspace import ConfigAssignment, ConfigSpace


class CandidateFailure(RuntimeError):
    """Candidate code failed to run; carries the traceback for self-debugging
    feedback."""

    def __init__(self, message: str, traceback_text: Optional[str] = None):
        super().__init__(message)
        self.traceback = traceback_text if traceback_text is not None else message


class ScorerError(CandidateFailure):
    """A bin-packing scorer misbehaved or its sandbox session failed."""


class UpdaterError(CandidateFailure):
    """A TSP matrix updater misbehaved or its sandbox session failed."""


@dataclass
class FinalResult:
    """Outcome of the full-set evaluation of one tuned candidate.

    ``fitness`` is in maximization orientation; ``instance_evals`` counts the
    instance evaluations actually performed (for budget accounting); ``raw``
    carries benchmark-native metrics (e.g. the un-negated mean gap for TSP).
    """

    fitness: float
    std: float
    instance_evals: int
    error: Optional[str] = None
    raw: Dict[str, float] = field(default_factory=dict)


@runtime_checkable
class BoundCandidate(Protocol):
    def instance_cost(self, assignment: ConfigAssignment, instance_id) -> float:
        """Minimization cost of one assignment on one instance.

        Raises :class:`CandidateFailure` when the candidate itself fails.
        """
        ...

    def final_evaluation(self, assignment: ConfigAssignment) -> FinalResult: ...


@runtime_checkable
class Evaluator(Protocol):
    problem: str
    training_instances: Tuple
    full_instances: Tuple
    reserved_parameter_names: Tuple[str, ...]

    def bind(self, code: str, space: ConfigSpace, name: str) -> BoundCandidate: ...


def stable_id_hash(value) -> int:
    """Process-independent hash of an instance identifier (the builtin hash
    is salted for strings and would break run reproducibility)."""
    return zlib.crc32(repr(value).encode("utf-8"))


def seed_for(base_seed: int, *components: int) -> int:
    """Stable per-(instance, role) seed derivation; keeps runs reproducible
    without sharing one RNG across concurrent sessions."""
    value = base_seed & 0xFFFFFFFF
    for component in components:
        value = (value * 1_000_003 + (component & 0xFFFFFFFF) + 0x9E3779B9) & 0xFFFFFFFF
    return value
