"""Bridges one candidate's code to the callables the benchmarks consume.

The sandbox runner spawns one shim child per session and translates every
sandbox-level failure into :class:`CandidateFailure` so the engine can record
the traceback and zero the fitness.  Tests may substitute any object with the
same three methods to run candidates in-process.
"""

from __future__ import annotations

import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from evotune.benchmarks.base import CandidateFailure, ScorerError, UpdaterError
from evotune.sandbox import (
    SCORE_REQUEST,
    UPDATE_MATRIX_REQUEST,
    CallTimeout,
    ChildDied,
    InitError,
    ProtocolViolation,
    SandboxLimits,
    SandboxSession,
    SpawnFailure,
    init_message,
)

DEFAULT_SHIM_COMMAND = (sys.executable, "-m", "evotune_shim")


def _failure(exc: Exception, kind=CandidateFailure) -> CandidateFailure:
    traceback_text = getattr(exc, "traceback", None) or str(exc)
    return kind(str(exc), traceback_text)


class SandboxRunner:
    """Runs candidates out of process via the protocol shim."""

    def __init__(
        self,
        shim_command: Sequence[str] = DEFAULT_SHIM_COMMAND,
        limits: SandboxLimits = SandboxLimits(),
        stderr_dir: Optional[Path] = None,
    ):
        self.shim_command = tuple(shim_command)
        self.limits = limits
        self.stderr_dir = Path(stderr_dir) if stderr_dir else None
        self._session_counter = 0

    def _stderr_path(self, role: str) -> Optional[Path]:
        if self.stderr_dir is None:
            return None
        self.stderr_dir.mkdir(parents=True, exist_ok=True)
        self._session_counter += 1
        return self.stderr_dir / f"{role}-{self._session_counter:05d}.stderr"

    def _spawn(self, role: str, code: str, config_text: str, seed: int) -> SandboxSession:
        init = init_message(role, code, config_text, seed)
        try:
            return SandboxSession.spawn(
                self.shim_command, init, self.limits, stderr_path=self._stderr_path(role)
            )
        except SpawnFailure:
            raise  # an orchestrator misconfiguration, not a candidate fault
        except (InitError, ChildDied, CallTimeout, ProtocolViolation) as exc:
            raise _failure(exc) from exc

    @contextmanager
    def scorer(self, code: str, config_text: str, seed: int):
        session = self._spawn("score", code, config_text, seed)
        try:

            def score(item: int, bins: np.ndarray) -> np.ndarray:
                request = {
                    "type": SCORE_REQUEST,
                    "item": int(item),
                    "bins": [float(b) for b in bins],
                }
                try:
                    reply = session.call(request)
                except (ChildDied, CallTimeout, ProtocolViolation) as exc:
                    raise _failure(exc, ScorerError) from exc
                return np.asarray(reply["scores"], dtype=float)

            yield score
        finally:
            session.close()

    @contextmanager
    def matrix_updater(self, code: str, config_text: str, seed: int):
        session = self._spawn("update_matrix", code, config_text, seed)
        try:

            def update(edge_distance: np.ndarray, tour: np.ndarray, edge_n_used: np.ndarray):
                request = {
                    "type": UPDATE_MATRIX_REQUEST,
                    "edge_distance": edge_distance.tolist(),
                    "local_opt_tour": [int(v) for v in tour],
                    "edge_n_used": edge_n_used.tolist(),
                }
                try:
                    reply = session.call(request)
                except (ChildDied, CallTimeout, ProtocolViolation) as exc:
                    raise _failure(exc, UpdaterError) from exc
                return reply["updated"]

            yield update
        finally:
            session.close()

    def optimize(
        self,
        code: str,
        config_text: str,
        seed: int,
        objective: Callable[[Sequence[float]], float],
        budget: int,
        dim: int,
        lb: float,
        ub: float,
    ) -> List[float]:
        """One full optimization run; returns the best-so-far value series."""
        session = self._spawn("optimize", code, config_text, seed)
        try:
            try:
                _, _, series = session.drive_optimize(objective, budget, dim, lb, ub)
            except (ChildDied, CallTimeout, ProtocolViolation) as exc:
                raise _failure(exc) from exc
            if not series:
                raise CandidateFailure("candidate finished without evaluating anything")
            return series
        finally:
            session.close()
