"""Task and feedback prompt construction.

The task prompt for each benchmark is a packaged template served verbatim;
the feedback prompt stitches the task prompt, the generation history, and the
current best candidate (code, score, tuned parameters and any error trace)
into the refine-or-redesign request.
"""

from __future__ import annotations

from importlib import resources
from typing import TYPE_CHECKING, Sequence, Tuple

from evotune.benchmarks import PROBLEMS
from evotune.configspace import serialize_assignment

if TYPE_CHECKING:  # pragma: no cover
    from evotune.engine import Candidate


class UnknownProblem(ValueError):
    pass


def build_task_prompt(problem: str) -> str:
    if problem not in PROBLEMS:
        raise UnknownProblem(f"unknown problem {problem!r}; expected one of {PROBLEMS}")
    return (resources.files("evotune") / "templates" / f"{problem}.txt").read_text()


REFINE_INSTRUCTION = (
    "Either refine or redesign to improve the algorithm and provide both the "
    "code and a new configuration space."
)


def build_feedback_prompt(
    task_prompt: str,
    history: Sequence[Tuple[str, float]],
    best: "Candidate",
) -> str:
    """Mutation prompt: task context, all (name, score) pairs in generation
    order, the selected best candidate in full, and the refine instruction."""
    lines = [task_prompt.rstrip("\n"), ""]
    lines.append("Previously generated algorithms and their scores:")
    for name, fitness in history:
        lines.append(f"- {name}: {fitness!r}")
    lines.append("")
    lines.append(
        f"The algorithm selected to refine is {best.name} with score {best.fitness!r} "
        f"(standard deviation {best.fitness_std!r})."
    )
    lines.append("Its code is:")
    lines.append("```python")
    lines.append(best.code)
    lines.append("```")
    if best.tuned is not None and best.space is not None:
        lines.append("Its optimal hyper-parameters are:")
        lines.append(serialize_assignment(best.tuned, best.space))
    if best.error:
        lines.append("The algorithm produced the following error:")
        lines.append(best.error)
    lines.append(REFINE_INSTRUCTION)
    return "\n".join(lines)
