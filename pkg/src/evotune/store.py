"""Run directory layout, append-only event log, replay and plot export.

Layout::

    <run>/config.json                 flat key-value mirror of the CLI flags
    <run>/events.jsonl                one event per line, strictly sequenced
    <run>/candidates/<id>/code.py     candidate source, byte-exact
    <run>/candidates/<id>/space.txt   configuration-space text as received
    <run>/candidates/<id>/tuned.json  incumbent assignment (null if none)
    <run>/candidates/<id>/result.json fitness record
    <run>/best.json                   pointer to the current best candidate
    <run>/trajectories/               per-run-slot CSV dumps (continuous suite)

Replay folds the selection events (each carries a full state snapshot), which
makes resume robust: a candidate interrupted mid-processing is redone from
its logged raw response without consuming a fresh LLM query.
"""

from __future__ import annotations

import csv
import io
import json
import time
from fractions import Fraction
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

from evotune.configspace import parse_space
from evotune.engine import Candidate, ResumeInfo

EVENT_KINDS = (
    "config_snapshot",
    "llm_query",
    "llm_response",
    "parse_result",
    "hpo_trial",
    "hpo_incumbent",
    "evaluation",
    "selection",
    "error",
)


class CorruptLog(RuntimeError):
    """The event log has a sequence gap or an undecodable line."""


class LogicalClock:
    """Deterministic stand-in for the wall clock in mock runs, so two equal
    runs produce byte-identical logs."""

    def __init__(self):
        self._now = -1.0

    def __call__(self) -> float:
        self._now += 1.0
        return self._now


class RunStore:
    def __init__(self, root: Path, clock: Optional[Callable[[], float]] = None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "candidates").mkdir(exist_ok=True)
        self._clock = clock if clock is not None else time.time
        self._events_path = self.root / "events.jsonl"
        self._next_sequence = self._scan_next_sequence()
        self._fh = None

    def repair(self) -> None:
        """Writer-side crash recovery; readers must never call this."""
        self._trim_torn_tail()

    def _trim_torn_tail(self) -> None:
        """Drop a half-written final line left by a crash, so appending after
        a resume never buries garbage in the middle of the log."""
        if not self._events_path.exists():
            return
        raw = self._events_path.read_bytes()
        if not raw:
            return
        cut = len(raw)
        if not raw.endswith(b"\n"):
            cut = raw.rfind(b"\n") + 1  # 0 when no complete line exists
        else:
            last = raw.rstrip(b"\n").rfind(b"\n") + 1
            try:
                json.loads(raw[last:].decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                cut = last
        if cut != len(raw):
            with open(self._events_path, "r+b") as fh:
                fh.truncate(cut)

    def _scan_next_sequence(self) -> int:
        if not self._events_path.exists():
            return 0
        last = -1
        for event in self.events(strict=False):
            last = event["sequence"]
        return last + 1

    # -- event log ---------------------------------------------------------

    def append(self, kind: str, payload: dict) -> dict:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        event = {
            "sequence": self._next_sequence,
            "timestamp": float(self._clock()),
            "kind": kind,
            "payload": payload,
        }
        if self._fh is None:
            self._trim_torn_tail()  # writers repair crash damage; readers never touch the file
            self._fh = open(self._events_path, "a", encoding="utf-8")
        self._fh.write(json.dumps(event, sort_keys=True, separators=(",", ":")) + "\n")
        self._fh.flush()
        self._next_sequence += 1
        return event

    def events(self, strict: bool = True) -> List[dict]:
        """Read the log back.  Strict mode raises :class:`CorruptLog` on any
        damage; lenient mode tolerates a truncated final line (the expected
        wound after a crash) but still rejects sequence gaps."""
        if not self._events_path.exists():
            return []
        raw_lines = self._events_path.read_bytes().split(b"\n")
        if raw_lines and raw_lines[-1] == b"":
            raw_lines.pop()
        events = []
        for index, line in enumerate(raw_lines):
            try:
                event = json.loads(line.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                if not strict and index == len(raw_lines) - 1:
                    break
                raise CorruptLog(f"undecodable event line {index}") from None
            events.append(event)
        expected = 0
        for event in events:
            if event.get("sequence") != expected:
                raise CorruptLog(f"sequence gap: expected {expected}, found {event.get('sequence')}")
            expected += 1
        return events

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    # -- candidates --------------------------------------------------------

    def candidate_dir(self, candidate_id: int) -> Path:
        return self.root / "candidates" / str(candidate_id)

    def save_candidate(self, candidate: Candidate) -> None:
        folder = self.candidate_dir(candidate.id)
        folder.mkdir(parents=True, exist_ok=True)
        (folder / "code.py").write_bytes(candidate.code.encode("utf-8"))
        (folder / "space.txt").write_bytes(candidate.space_text.encode("utf-8"))
        (folder / "tuned.json").write_text(json.dumps(candidate.tuned, sort_keys=True))
        (folder / "result.json").write_text(
            json.dumps(
                {
                    "id": candidate.id,
                    "parent_id": candidate.parent_id,
                    "name": candidate.name,
                    "fitness": candidate.fitness,
                    "fitness_std": candidate.fitness_std,
                    "error": candidate.error,
                    "llm_query_index": candidate.llm_query_index,
                },
                sort_keys=True,
                indent=2,
            )
        )

    def load_candidate(self, candidate_id: int) -> Candidate:
        folder = self.candidate_dir(candidate_id)
        meta = json.loads((folder / "result.json").read_text())
        code = (folder / "code.py").read_bytes().decode("utf-8")
        space_text = (folder / "space.txt").read_bytes().decode("utf-8")
        tuned = json.loads((folder / "tuned.json").read_text())
        space = None
        if space_text.strip():
            try:
                space = parse_space(space_text)
            except Exception:
                space = None
        return Candidate(
            id=meta["id"],
            parent_id=meta["parent_id"],
            name=meta["name"],
            code=code,
            space_text=space_text,
            space=space,
            tuned=tuned,
            fitness=meta["fitness"],
            fitness_std=meta["fitness_std"],
            error=meta["error"],
            llm_query_index=meta["llm_query_index"],
        )

    def write_best(self, candidate: Candidate) -> None:
        (self.root / "best.json").write_text(
            json.dumps(
                {
                    "id": candidate.id,
                    "name": candidate.name,
                    "fitness": candidate.fitness,
                    "fitness_std": candidate.fitness_std,
                    "error": candidate.error,
                    "path": f"candidates/{candidate.id}",
                },
                sort_keys=True,
                indent=2,
            )
        )

    def write_config(self, mapping: dict) -> None:
        (self.root / "config.json").write_text(json.dumps(mapping, sort_keys=True, indent=2))

    def read_config(self) -> dict:
        return json.loads((self.root / "config.json").read_text())

    # -- replay ------------------------------------------------------------

    def build_resume(self) -> Optional[ResumeInfo]:
        """Summarize an interrupted run, or return ``None`` for a fresh one."""
        events = self.events(strict=False)
        if not events:
            return None
        responses: Dict[int, str] = {}
        selections: List[dict] = []
        for event in events:
            if event["kind"] == "llm_response":
                responses[event["payload"]["candidate_id"]] = event["payload"]["raw"]
            elif event["kind"] == "selection":
                selections.append(event["payload"])
        complete = {sel["candidate_id"] for sel in selections}
        history = [(sel["name"], sel["fitness"]) for sel in selections]
        last = selections[-1] if selections else None
        dangling = None
        for cand_id in sorted(responses):
            if cand_id not in complete:
                dangling = (cand_id, responses[cand_id])
                break
        return ResumeInfo(
            t=len(responses),
            next_candidate_id=(max(complete) + 1 if complete else 0),
            responses_consumed=len(responses),
            best_id=last["best_id"] if last else None,
            history=history,
            instance_evals_total=last["instance_evals_total"] if last else 0,
            dangling=dangling,
        )


def export_convergence(run_dir: Path) -> Tuple[str, str]:
    """Two CSV series from a run: best fitness against LLM queries used, and
    against full-benchmark-evaluation units (cumulative instance evaluations
    over the full-set size, kept as an exact fraction)."""
    store = RunStore(run_dir)
    events = store.events(strict=True)
    snapshot = None
    selections = []
    for event in events:
        if event["kind"] == "config_snapshot" and snapshot is None:
            snapshot = event["payload"]
        elif event["kind"] == "selection":
            selections.append(event["payload"])
    if snapshot is None:
        raise CorruptLog("no config snapshot in the event log")
    problem = snapshot.get("problem")
    full_set_size = int(snapshot.get("full_set_size") or 0)

    series_a = io.StringIO()
    writer = csv.writer(series_a)
    header_a = ["llm_query_index", "best_fitness"]
    if problem == "binpack":
        header_a.append("best_fitness_complement")
    if problem == "tsp":
        header_a.append("best_mean_gap")
    writer.writerow(header_a)
    for sel in selections:
        row = [sel["candidate_id"], repr(sel["best_fitness"])]
        if problem == "binpack":
            row.append(repr(1.0 - sel["best_fitness"]))
        if problem == "tsp":
            row.append(repr(-sel["best_fitness"]))
        writer.writerow(row)

    series_b = io.StringIO()
    writer = csv.writer(series_b)
    writer.writerow(["full_benchmark_evals", "full_benchmark_evals_float", "best_fitness"])
    for sel in selections:
        evals = Fraction(sel["instance_evals_total"], full_set_size) if full_set_size else Fraction(0)
        writer.writerow([f"{evals.numerator}/{evals.denominator}", repr(float(evals)), repr(sel["best_fitness"])])

    return series_a.getvalue(), series_b.getvalue()
