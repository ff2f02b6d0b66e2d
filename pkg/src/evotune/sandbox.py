"""Out-of-process execution of candidate programs.

Each candidate runs in a child process speaking one-line JSON messages over
its standard streams (documented bit-exact in PROTOCOL.md).  The parent side
here enforces per-call and per-session wall timeouts, reply-size limits and
reply-type discipline, and always reaps the child.
"""

from __future__ import annotations

import json
import logging
import math
import os
import select
import subprocess
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

log = logging.getLogger(__name__)

# message type tags (see PROTOCOL.md)
INIT = "init"
READY = "ready"
SCORE_REQUEST = "score_request"
SCORE_REPLY = "score_reply"
UPDATE_MATRIX_REQUEST = "update_matrix_request"
UPDATE_MATRIX_REPLY = "update_matrix_reply"
OPTIMIZE_REQUEST = "optimize_request"
EVAL_QUERY = "eval_query"
EVAL_REPLY = "eval_reply"
OPTIMIZE_DONE = "optimize_done"
ERROR = "error"
SHUTDOWN = "shutdown"

ROLES = ("score", "update_matrix", "optimize")
_REQUEST_FOR_ROLE = {
    "score": SCORE_REQUEST,
    "update_matrix": UPDATE_MATRIX_REQUEST,
    "optimize": OPTIMIZE_REQUEST,
}
_REPLY_FOR_REQUEST = {
    SCORE_REQUEST: SCORE_REPLY,
    UPDATE_MATRIX_REQUEST: UPDATE_MATRIX_REPLY,
}


class SpawnFailure(RuntimeError):
    """The shim command could not be started."""


class InitError(RuntimeError):
    """Candidate construction failed; carries the child's traceback."""

    def __init__(self, traceback_text: str):
        super().__init__(traceback_text)
        self.traceback = traceback_text


class ProtocolViolation(RuntimeError):
    """The child broke the wire contract (wrong type, garbage, oversize)."""


class CallTimeout(TimeoutError):
    """A request exceeded its wall-clock allowance; the child was killed."""


class ChildDied(RuntimeError):
    """The child reported an error or exited mid-conversation."""

    def __init__(self, traceback_text: str, trajectory: Optional[List[float]] = None):
        super().__init__(traceback_text or "child process died")
        self.traceback = traceback_text
        self.trajectory = trajectory or []


@dataclass(frozen=True)
class SandboxLimits:
    wall_timeout_per_call: float = 60.0
    wall_timeout_total: float = 600.0
    max_reply_bytes: int = 8_000_000

    def __post_init__(self):
        if self.wall_timeout_per_call > self.wall_timeout_total:
            raise ValueError("per-call timeout must not exceed the session total")


def init_message(role: str, code: str, config_text: str, seed: int) -> dict:
    if role not in ROLES:
        raise ValueError(f"unknown role {role!r}")
    return {"type": INIT, "role": role, "code": code, "config": config_text, "seed": seed}


def _matrix_finite(matrix) -> bool:
    try:
        return all(
            isinstance(v, (int, float)) and math.isfinite(v) for row in matrix for v in row
        )
    except TypeError:
        return False


class SandboxSession:
    """One child process; request/reply is strictly alternating."""

    def __init__(self, proc: subprocess.Popen, role: str, limits: SandboxLimits, stderr_path: Path, owns_stderr: bool):
        self._proc = proc
        self.role = role
        self._limits = limits
        self._buffer = b""
        self._deadline = time.monotonic() + limits.wall_timeout_total
        self._closed = False
        self.stderr_path = stderr_path
        self._owns_stderr = owns_stderr

    @classmethod
    def spawn(
        cls,
        shim_command: Sequence[str],
        init: dict,
        limits: SandboxLimits = SandboxLimits(),
        stderr_path: Optional[Path] = None,
    ) -> "SandboxSession":
        """Start the child, deliver Init, and wait for readiness.

        Construction failures inside the child (syntax errors, bad
        constructor arguments) surface here as :class:`InitError` whose
        traceback feeds the self-debugging prompt.
        """
        if init.get("type") != INIT:
            raise ValueError("spawn expects an init message")
        owns_stderr = stderr_path is None
        if stderr_path is None:
            fd, name = tempfile.mkstemp(prefix="evotune-child-", suffix=".stderr")
            os.close(fd)
            stderr_path = Path(name)
        stderr_file = open(stderr_path, "wb")
        try:
            proc = subprocess.Popen(
                list(shim_command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=stderr_file,
            )
        except OSError as exc:
            stderr_file.close()
            raise SpawnFailure(f"cannot start {shim_command!r}: {exc}") from exc
        finally:
            stderr_file.close()  # the child holds its own handle now
        session = cls(proc, init["role"], limits, stderr_path, owns_stderr)
        try:
            session._send(init)
            reply = session._recv()
        except (ChildDied, CallTimeout, ProtocolViolation):
            session.close()
            raise
        if reply.get("type") == ERROR:
            session.close()
            raise InitError(reply.get("traceback", ""))
        if reply.get("type") != READY:
            session.close()
            raise ProtocolViolation(f"expected readiness, got {reply.get('type')!r}")
        return session

    # -- wire helpers ------------------------------------------------------

    def _send(self, msg: dict) -> None:
        line = json.dumps(msg, sort_keys=True) + "\n"
        try:
            self._proc.stdin.write(line.encode("utf-8"))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            raise ChildDied(self._stderr_tail()) from None

    def _recv(self, timeout: Optional[float] = None) -> dict:
        per_call = timeout if timeout is not None else self._limits.wall_timeout_per_call
        deadline = min(time.monotonic() + per_call, self._deadline)
        stream = self._proc.stdout
        while True:
            newline = self._buffer.find(b"\n")
            if newline >= 0:
                line, self._buffer = self._buffer[:newline], self._buffer[newline + 1 :]
                return self._decode(line)
            if len(self._buffer) > self._limits.max_reply_bytes:
                self._kill()
                raise ProtocolViolation(
                    f"reply exceeds {self._limits.max_reply_bytes} bytes"
                )
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self._kill()
                raise CallTimeout(f"no reply within {per_call:.1f}s")
            ready, _, _ = select.select([stream], [], [], min(remaining, 0.5))
            if not ready:
                continue
            chunk = os.read(stream.fileno(), 65536)
            if not chunk:
                raise ChildDied(self._stderr_tail())
            self._buffer += chunk

    def _decode(self, line: bytes) -> dict:
        try:
            msg = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            self._kill()
            raise ProtocolViolation(f"undecodable protocol line: {line[:200]!r}") from None
        if not isinstance(msg, dict) or "type" not in msg:
            self._kill()
            raise ProtocolViolation(f"message without a type field: {line[:200]!r}")
        return msg

    def _stderr_tail(self, limit: int = 4000) -> str:
        try:
            data = self.stderr_path.read_bytes()
        except OSError:
            return ""
        return data[-limit:].decode("utf-8", errors="replace")

    def _kill(self) -> None:
        if self._proc.poll() is None:
            self._proc.kill()
        self._proc.wait()

    # -- public API --------------------------------------------------------

    def call(self, msg: dict) -> dict:
        """One request, one reply; the reply type must match the role."""
        msg_type = msg.get("type")
        expected_request = _REQUEST_FOR_ROLE[self.role]
        if msg_type != expected_request:
            raise ProtocolViolation(
                f"request {msg_type!r} is not valid for a {self.role!r} session"
            )
        self._send(msg)
        reply = self._recv()
        reply_type = reply.get("type")
        if reply_type == ERROR:
            raise ChildDied(reply.get("traceback", ""))
        expected_reply = _REPLY_FOR_REQUEST.get(expected_request)
        if reply_type != expected_reply:
            self._kill()
            raise ProtocolViolation(f"expected {expected_reply!r} reply, got {reply_type!r}")
        if reply_type == UPDATE_MATRIX_REPLY and not _matrix_finite(reply.get("updated", [])):
            self._kill()
            raise ProtocolViolation("updated matrix contains non-finite or non-numeric entries")
        return reply

    def drive_optimize(
        self,
        objective: Callable[[Sequence[float]], float],
        budget: int,
        dim: int,
        lb: float,
        ub: float,
    ) -> Tuple[float, Optional[List[float]], List[float]]:
        """Serve the candidate's evaluation queries up to ``budget``.

        Returns the parent-tracked best value, its point, and the best-so-far
        series (one entry per served evaluation).  Queries beyond the budget
        are answered with an error report so well-behaved candidates can
        still finish; a child that exits silently after at least one
        evaluation yields its partial series with a warning, while an
        explicit error report raises :class:`ChildDied` carrying the partial
        series.
        """
        if self.role != "optimize":
            raise ProtocolViolation("drive_optimize needs an optimize-role session")
        self._send({"type": OPTIMIZE_REQUEST, "budget": budget, "dim": dim, "lb": lb, "ub": ub})
        best = math.inf
        best_x: Optional[List[float]] = None
        series: List[float] = []

        def tolerate_exit() -> Tuple[float, Optional[List[float]], List[float]]:
            log.warning(
                "candidate exited without finishing; keeping %d evaluations", len(series)
            )
            return best, best_x, series

        while True:
            try:
                msg = self._recv()
            except ChildDied:
                if series:
                    return tolerate_exit()
                raise
            msg_type = msg.get("type")
            if msg_type == EVAL_QUERY:
                if len(series) >= budget:
                    try:
                        self._send({"type": ERROR, "traceback": "budget exhausted"})
                    except ChildDied:
                        return tolerate_exit()
                    continue
                x = msg.get("x")
                value = float(objective(x))
                if math.isfinite(value) and value < best:
                    best = value
                    best_x = list(x)
                series.append(best)
                try:
                    self._send({"type": EVAL_REPLY, "f": value})
                except ChildDied:
                    return tolerate_exit()
            elif msg_type == OPTIMIZE_DONE:
                return best, best_x, series
            elif msg_type == ERROR:
                raise ChildDied(msg.get("traceback", ""), trajectory=series)
            else:
                self._kill()
                raise ProtocolViolation(f"unexpected message {msg_type!r} during optimization")

    def close(self) -> None:
        """Shut the child down and reap it; never raises."""
        if self._closed:
            return
        self._closed = True
        try:
            if self._proc.poll() is None:
                try:
                    self._send({"type": SHUTDOWN})
                except ChildDied:
                    pass
                try:
                    self._proc.wait(timeout=2.0)
                except subprocess.TimeoutExpired:
                    self._proc.terminate()
                    try:
                        self._proc.wait(timeout=2.0)
                    except subprocess.TimeoutExpired:
                        self._proc.kill()
            self._proc.wait()
        finally:
            for stream in (self._proc.stdin, self._proc.stdout):
                if stream is not None:
                    try:
                        stream.close()
                    except OSError:
                        pass
            if self._owns_stderr:
                try:
                    self.stderr_path.unlink()
                except OSError:
                    pass

    def __enter__(self) -> "SandboxSession":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
