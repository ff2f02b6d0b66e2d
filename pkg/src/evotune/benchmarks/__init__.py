"""Benchmark problems and the evaluator interface the evolution loop drives."""

from evotune.benchmarks.base import (  # noqa: F401
    BoundCandidate,
    CandidateFailure,
    Evaluator,
    FinalResult,
    ScorerError,
    UpdaterError,
)

PROBLEMS = ("binpack", "bbob", "tsp")
