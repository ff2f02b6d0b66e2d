"""LLM access and structured-response parsing.

Two gateways share one interface: an OpenAI-compatible chat-completions
client for live runs, and a deterministic scripted source for tests and
replays.  Responses are expected to carry ``# Name:``, ``# Code:`` and
``# Space:`` (or ``# Configspace:``) sections; :func:`parse_response`
extracts them, stripping code fences.
"""

from __future__ import annotations

import logging
import os
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence

import requests

log = logging.getLogger(__name__)

DEFAULT_MODEL = "gpt-4o"
DEFAULT_ENDPOINT = "https://api.openai.com/v1/chat/completions"
DEFAULT_API_KEY_ENV = "OPENAI_API_KEY"


class LLMUnavailable(RuntimeError):
    """The gateway gave up after its configured retries."""


class ScriptExhausted(RuntimeError):
    """A scripted source was asked for more responses than it holds."""


class MissingSection(ValueError):
    """A required response section was absent or empty.

    ``partial`` holds whatever sections were successfully extracted so the
    caller can still name the failed candidate in its error record.
    """

    def __init__(self, section: str, partial: Optional[Dict[str, str]] = None):
        self.section = section
        self.partial = partial or {}
        super().__init__(f"missing section: {section}")


@dataclass
class LLMRequest:
    system_message: str
    user_message: str
    temperature: float = 1.0
    model_name: str = DEFAULT_MODEL

    def __post_init__(self):
        if not self.user_message:
            raise ValueError("user_message must be non-empty")


@dataclass
class ParsedResponse:
    name: str
    code: str
    space_text: str
    raw: str


class LLMGateway(Protocol):
    def query(self, request: LLMRequest) -> str: ...


class ScriptedSource:
    """Replays a fixed list of responses in order; never wraps around."""

    def __init__(self, responses: Sequence[str]):
        self._responses = list(responses)
        self._cursor = 0

    @classmethod
    def from_dir(cls, path: Path) -> "ScriptedSource":
        """Load every file in ``path`` in lexicographic filename order."""
        files = sorted(p for p in Path(path).iterdir() if p.is_file())
        if not files:
            raise FileNotFoundError(f"no script files in {path}")
        return cls([p.read_text() for p in files])

    @property
    def cursor(self) -> int:
        return self._cursor

    def advance(self, count: int) -> None:
        """Skip responses already consumed by an earlier, interrupted run."""
        if count > len(self._responses):
            raise ScriptExhausted(f"cannot skip {count} of {len(self._responses)} responses")
        self._cursor = count

    def query(self, request: Optional[LLMRequest] = None) -> str:
        if self._cursor >= len(self._responses):
            raise ScriptExhausted(
                f"script holds {len(self._responses)} responses, request #{self._cursor + 1} exceeds it"
            )
        response = self._responses[self._cursor]
        self._cursor += 1
        return response


class OpenAIGateway:
    """Minimal chat-completions client with bounded retry.

    The endpoint URL is configurable so local model servers work; the key is
    read from an environment variable and never stored in run artifacts.
    """

    def __init__(
        self,
        endpoint: str = DEFAULT_ENDPOINT,
        api_key_env: str = DEFAULT_API_KEY_ENV,
        retries: int = 3,
        backoff_s: float = 1.0,
        timeout_s: float = 120.0,
    ):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.retries = retries
        self.backoff_s = backoff_s
        self.timeout_s = timeout_s

    def _payload(self, request: LLMRequest) -> dict:
        messages: List[dict] = []
        if request.system_message:
            messages.append({"role": "system", "content": request.system_message})
        messages.append({"role": "user", "content": request.user_message})
        return {
            "model": request.model_name,
            "messages": messages,
            "temperature": request.temperature,
        }

    def query(self, request: LLMRequest) -> str:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = self._payload(request)
        last_error: Optional[str] = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff_s * 2 ** (attempt - 1))
            try:
                resp = requests.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout_s)
            except requests.RequestException as exc:
                last_error = f"transport error: {exc}"
                log.warning("LLM request attempt %d failed: %s", attempt + 1, last_error)
                continue
            if resp.status_code == 200:
                try:
                    return resp.json()["choices"][0]["message"]["content"]
                except (KeyError, IndexError, ValueError) as exc:
                    raise LLMUnavailable(f"malformed completion payload: {exc}") from exc
            last_error = f"HTTP {resp.status_code}: {resp.text[:500]}"
            if resp.status_code < 500 and resp.status_code != 429:
                break  # auth/validation errors will not heal with retries
            log.warning("LLM request attempt %d failed: %s", attempt + 1, last_error)
        raise LLMUnavailable(last_error or "no attempt made")


_HEADING_RE = re.compile(
    r"^[ \t]*\**#+[ \t]*\**[ \t]*(name|code|configspace|space)[ \t]*\**[ \t]*:\**[ \t]*(.*?)[ \t]*$",
    re.IGNORECASE,
)
_FENCE_RE = re.compile(r"^[ \t]*```[\w+-]*[ \t]*$")

_CANONICAL = {"name": "name", "code": "code", "configspace": "space", "space": "space"}


def _find_headings(lines: List[str]) -> List[tuple]:
    """(line index, canonical key, inline remainder) for every section
    heading that sits outside a code fence."""
    headings = []
    in_fence = False
    for i, line in enumerate(lines):
        if _FENCE_RE.match(line):
            in_fence = not in_fence
            continue
        if in_fence:
            continue
        m = _HEADING_RE.match(line)
        if m:
            headings.append((i, _CANONICAL[m.group(1).lower()], m.group(2)))
    return headings


def _strip_fences(block_lines: List[str]) -> str:
    """Content of the first fenced block if any, else the block itself;
    fence-marker lines never survive."""
    fence_idx = [i for i, line in enumerate(block_lines) if _FENCE_RE.match(line)]
    if fence_idx:
        start = fence_idx[0] + 1
        end = fence_idx[1] if len(fence_idx) > 1 else len(block_lines)
        block_lines = block_lines[start:end]
    kept = [line for line in block_lines if not _FENCE_RE.match(line)]
    return "\n".join(kept).strip("\n")


def parse_response(raw: str) -> ParsedResponse:
    """Extract name, code and configuration-space text from a response.

    Accepts both ``# Space:`` and ``# Configspace:`` headings, optional
    markdown bold markers, any or no fence language tag, and prose before or
    after the sections.  When a heading occurs twice the first occurrence
    wins and a warning is logged.
    """
    lines = raw.split("\n")
    headings = _find_headings(lines)
    sections: Dict[str, str] = {}
    for pos, (idx, key, inline) in enumerate(headings):
        if key in sections:
            log.warning("duplicate %r section in response; using the first", key)
            continue
        end = headings[pos + 1][0] if pos + 1 < len(headings) else len(lines)
        block = lines[idx + 1 : end]
        if key == "name":
            value = inline.strip().strip("*").strip("`").strip()
            if not value:
                for line in block:
                    if line.strip():
                        value = line.strip().strip("*").strip("`").strip()
                        break
        else:
            body = _strip_fences(block)
            if inline.strip() and not body:
                body = inline.strip()
            value = body
        if value:
            sections[key] = value

    for required in ("name", "code", "space"):
        if not sections.get(required):
            raise MissingSection(required, partial=sections)
    return ParsedResponse(name=sections["name"], code=sections["code"], space_text=sections["space"], raw=raw)
