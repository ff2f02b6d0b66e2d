"""Child-process half of the candidate sandbox.

Loads one candidate class from source text, constructs it with the tuned
hyper-parameters, and services one-line JSON requests on stdin/stdout (see
PROTOCOL.md at the repository root).  Every exception anywhere becomes a
single error report carrying the full traceback, then the process exits;
candidate prints are redirected to stderr so the protocol stream stays
clean.
"""

from __future__ import annotations

import ast
import json
import random
import sys
import traceback
from types import SimpleNamespace
from typing import Any, Dict, Optional, TextIO

__version__ = "0.1.0"

_ROLE_METHODS = {
    "score": "score",
    "update_matrix": "update_edge_distance",
    "optimize": "__call__",
}


class _Channel:
    """Line-delimited JSON over explicit streams (the process's real stdio)."""

    def __init__(self, reader: TextIO, writer: TextIO):
        self._reader = reader
        self._writer = writer

    def send(self, message: Dict[str, Any]) -> None:
        self._writer.write(json.dumps(message) + "\n")
        self._writer.flush()

    def receive(self) -> Optional[Dict[str, Any]]:
        line = self._reader.readline()
        if not line:
            return None
        return json.loads(line)

    def error(self, traceback_text: str) -> None:
        self.send({"type": "error", "traceback": traceback_text})


class BudgetRefused(RuntimeError):
    """The parent declined an evaluation query (budget exhausted)."""


class _EvalFunction:
    """The callable handed to optimize-role candidates.

    Exposes ``bounds.lb`` / ``bounds.ub`` as arrays so code written against
    the stock random-search example runs unmodified; tracks its own best
    point as a fallback result.
    """

    def __init__(self, channel: _Channel, budget: int, dim: int, lb: float, ub: float):
        import numpy as np

        self._channel = channel
        self._np = np
        self.budget = budget
        self.dim = dim
        self.bounds = SimpleNamespace(lb=np.full(dim, lb), ub=np.full(dim, ub))
        self.best_f = float("inf")
        self.best_x = None

    def __call__(self, x) -> float:
        vector = self._np.asarray(x, dtype=float).reshape(-1)
        self._channel.send({"type": "eval_query", "x": [float(v) for v in vector]})
        reply = self._channel.receive()
        if reply is None:
            raise EOFError("parent closed the stream mid-evaluation")
        if reply.get("type") == "error":
            raise BudgetRefused(reply.get("traceback") or "evaluation refused")
        value = float(reply["f"])
        if value < self.best_f:
            self.best_f = value
            self.best_x = vector.copy()
        return value


def _restore_legacy_numpy_aliases() -> None:
    """Re-add spellings NumPy 2.0 removed (np.Inf, np.NaN, ...).

    Generated candidates imitate example code written against older NumPy;
    hosting them means tolerating those aliases.
    """
    try:
        import numpy as np
    except ImportError:
        return
    for name, value in (
        ("Inf", np.inf),
        ("Infinity", np.inf),
        ("infty", np.inf),
        ("PINF", np.inf),
        ("NINF", -np.inf),
        ("NaN", np.nan),
        ("NAN", np.nan),
        ("float_", np.float64),
        ("complex_", np.complex128),
        ("unicode_", np.str_),
    ):
        if not hasattr(np, name):
            setattr(np, name, value)


def _load_candidate_class(code: str):
    """Execute the candidate source and return its single top-level class."""
    _restore_legacy_numpy_aliases()
    namespace: Dict[str, Any] = {"__name__": "<candidate>"}
    exec(compile(code, "<candidate>", "exec"), namespace)
    classes = [
        value
        for value in namespace.values()
        if isinstance(value, type) and getattr(value, "__module__", None) == "<candidate>"
    ]
    if len(classes) > 1:
        names = ", ".join(cls.__name__ for cls in classes)
        raise RuntimeError(f"ambiguous candidate: multiple classes ({names})")
    if not classes:
        raise RuntimeError("no candidate class found in the provided code")
    return classes[0]


def _parse_config(config_text: str) -> Dict[str, Any]:
    if not config_text or not config_text.strip():
        return {}
    parsed = ast.literal_eval(config_text.strip())
    if not isinstance(parsed, dict):
        raise RuntimeError("config must be a dictionary literal")
    return parsed


def _seed_everything(seed: int) -> None:
    random.seed(seed)
    try:
        import numpy as np

        np.random.seed(seed % 2**32)
    except ImportError:
        pass


def _serve_score(channel: _Channel, instance) -> int:
    import numpy as np

    while True:
        message = channel.receive()
        if message is None or message.get("type") == "shutdown":
            return 0
        if message.get("type") != "score_request":
            raise RuntimeError(f"unexpected message for score role: {message.get('type')!r}")
        scores = instance.score(int(message["item"]), np.asarray(message["bins"], dtype=float))
        flat = np.asarray(scores, dtype=float).reshape(-1)
        channel.send({"type": "score_reply", "scores": [float(s) for s in flat]})


def _serve_update_matrix(channel: _Channel, instance) -> int:
    import numpy as np

    while True:
        message = channel.receive()
        if message is None or message.get("type") == "shutdown":
            return 0
        if message.get("type") != "update_matrix_request":
            raise RuntimeError(
                f"unexpected message for update_matrix role: {message.get('type')!r}"
            )
        updated = instance.update_edge_distance(
            np.asarray(message["edge_distance"], dtype=float),
            np.asarray(message["local_opt_tour"], dtype=int),
            np.asarray(message["edge_n_used"], dtype=float),
        )
        rows = np.asarray(updated, dtype=float)
        channel.send({"type": "update_matrix_reply", "updated": rows.tolist()})


def _serve_optimize(channel: _Channel, candidate_class, kwargs: Dict[str, Any]) -> int:
    message = channel.receive()
    if message is None or message.get("type") == "shutdown":
        return 0
    if message.get("type") != "optimize_request":
        raise RuntimeError(f"expected optimize_request, got {message.get('type')!r}")
    func = _EvalFunction(
        channel,
        budget=int(message["budget"]),
        dim=int(message["dim"]),
        lb=float(message["lb"]),
        ub=float(message["ub"]),
    )
    instance = candidate_class(budget=int(message["budget"]), dim=int(message["dim"]), **kwargs)
    result = instance(func)
    # best-effort extraction: the parent tracks its own best and treats these
    # values as informational, so odd return shapes must not fail the session
    try:
        f_opt, x_opt = result
        f_opt = float(f_opt) if f_opt is not None else None
        x_opt = [float(v) for v in x_opt] if x_opt is not None else None
    except (TypeError, ValueError):
        tracked = func.best_x is not None
        f_opt = func.best_f if tracked else None
        x_opt = [float(v) for v in func.best_x] if tracked else None
    channel.send({"type": "optimize_done", "f_opt": f_opt, "x_opt": x_opt})
    channel.receive()  # wait for shutdown so the parent never hits a closed pipe
    return 0


def serve(stdin: Optional[TextIO] = None, stdout: Optional[TextIO] = None) -> int:
    """Process one session; returns the exit status."""
    reader = stdin if stdin is not None else sys.stdin
    proto_out = stdout if stdout is not None else sys.stdout
    channel = _Channel(reader, proto_out)
    sys.stdout = sys.stderr  # candidate prints must not touch the protocol
    try:
        init = channel.receive()
        if init is None:
            return 1
        if init.get("type") != "init":
            raise RuntimeError(f"expected init, got {init.get('type')!r}")
        role = init.get("role")
        if role not in _ROLE_METHODS:
            raise RuntimeError(f"unknown role {role!r}")
        _seed_everything(int(init.get("seed", 0)))
        candidate_class = _load_candidate_class(init["code"])
        method = _ROLE_METHODS[role]
        # hasattr is vacuous for __call__ (classes are callable); look for the
        # method in the class hierarchy itself
        defined = any(method in vars(klass) for klass in candidate_class.__mro__[:-1])
        if not defined:
            raise RuntimeError(
                f"candidate class {candidate_class.__name__!r} lacks the {method!r} method"
            )
        kwargs = _parse_config(init.get("config", ""))
        if role == "optimize":
            channel.send({"type": "ready"})
            return _serve_optimize(channel, candidate_class, kwargs)
        instance = candidate_class(**kwargs)
        channel.send({"type": "ready"})
        if role == "score":
            return _serve_score(channel, instance)
        return _serve_update_matrix(channel, instance)
    except BaseException:
        channel.error(traceback.format_exc())
        return 1
