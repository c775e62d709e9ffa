"""Chat-completion access for all agents: one live OpenAI-compatible HTTP
backend, one deterministic scripted backend for offline replay, token
accounting, and the JSON-payload parsing discipline shared by every agent.
"""

from __future__ import annotations

import ast
import hashlib
import json
import math
import os
import re
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, GatewayError, PayloadError, TranscriptMissError

BACKEND_LIVE = "live"
BACKEND_SCRIPTED = "scripted"

_SEGMENT = re.compile(r"[぀-ヿ一-鿿가-힯]|\w+|[^\w\s]")


def count_tokens(text: str, model_id: str = "") -> int:
    """Deterministic approximate token count (no vendor tokenizer).

    Whitespace/punctuation segmentation at roughly 4 characters per token;
    CJK characters count one token each. Good for relative accounting only.
    """
    total = 0
    for segment in _SEGMENT.findall(text):
        total += max(1, math.ceil(len(segment) / 4))
    return total


@dataclass(frozen=True)
class Message:
    role: str  # system | user | assistant
    content: str


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_output_tokens: int = 1024

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.messages[0].role not in ("system", "user"):
            raise ValueError("first message must be system or user")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")


def user_request(model_id: str, content: str, temperature: float = 0.0,
                 max_output_tokens: int = 1024) -> ChatRequest:
    return ChatRequest(model_id=model_id, messages=(Message("user", content),),
                       temperature=temperature, max_output_tokens=max_output_tokens)


@dataclass(frozen=True)
class ChatResponse:
    content: str
    prompt_tokens: int
    completion_tokens: int
    backend: str


def prompt_digest(messages: tuple[Message, ...]) -> str:
    """Stable key for scripted transcripts: hash of the rendered conversation."""
    h = hashlib.sha256()
    for msg in messages:
        h.update(msg.role.encode("utf-8"))
        h.update(b"\x1f")
        h.update(msg.content.encode("utf-8"))
        h.update(b"\x1e")
    return h.hexdigest()


class TokenLedger:
    """Per-agent, per-round accumulators; monotonically non-decreasing."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._cells: dict[tuple[str, int], list[int]] = {}

    def record(self, agent: str, round_index: int, prompt_tokens: int,
               completion_tokens: int) -> None:
        with self._lock:
            cell = self._cells.setdefault((agent, round_index), [0, 0])
            cell[0] += prompt_tokens
            cell[1] += completion_tokens

    def round_total(self, round_index: int) -> int:
        with self._lock:
            return sum(sum(cell) for (_, r), cell in self._cells.items() if r == round_index)

    def agent_total(self, agent: str) -> int:
        with self._lock:
            return sum(sum(cell) for (a, _), cell in self._cells.items() if a == agent)

    def grand_total(self) -> int:
        with self._lock:
            return sum(sum(cell) for cell in self._cells.values())

    def to_dict(self) -> dict:
        with self._lock:
            return {
                f"{agent}@{round_index}": {"prompt_tokens": cell[0], "completion_tokens": cell[1]}
                for (agent, round_index), cell in sorted(self._cells.items())
            }

    @classmethod
    def from_dict(cls, data: dict) -> "TokenLedger":
        ledger = cls()
        for key, cell in data.items():
            agent, _, round_index = key.rpartition("@")
            ledger.record(agent, int(round_index), cell["prompt_tokens"], cell["completion_tokens"])
        return ledger


class ScriptedBackend:
    """Replays canned responses keyed by prompt digest; misses are test bugs."""

    kind = BACKEND_SCRIPTED

    def __init__(self, entries: dict[str, str] | None = None):
        self.entries = dict(entries or {})

    @classmethod
    def from_file(cls, path: Path | str) -> "ScriptedBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data["entries"] if "entries" in data else data)

    def save(self, path: Path | str) -> None:
        payload = {"format": "nlrewrite-transcript", "version": 1, "entries": self.entries}
        Path(path).write_text(
            json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8")

    def add(self, messages: tuple[Message, ...] | str, content: str) -> str:
        if isinstance(messages, str):
            messages = (Message("user", messages),)
        digest = prompt_digest(messages)
        self.entries[digest] = content
        return digest

    def complete(self, request: ChatRequest) -> ChatResponse:
        digest = prompt_digest(request.messages)
        if digest not in self.entries:
            preview = request.messages[-1].content[:160]
            raise TranscriptMissError(digest, preview)
        content = self.entries[digest]
        prompt_text = "\n".join(m.content for m in request.messages)
        return ChatResponse(
            content=content,
            prompt_tokens=count_tokens(prompt_text, request.model_id),
            completion_tokens=count_tokens(content, request.model_id),
            backend=BACKEND_SCRIPTED,
        )


_RETRYABLE_STATUS = {429, 500, 502, 503, 504}


class LiveBackend:
    """OpenAI-compatible /chat/completions client with bounded retries."""

    kind = BACKEND_LIVE

    def __init__(self, base_url: str, api_key_env: str = "LLM_API_KEY",
                 max_attempts: int = 3, backoff_s: float = 0.5,
                 request_timeout_s: float = 120.0):
        if not base_url:
            raise ConfigError("live backend requires a base URL")
        key = os.environ.get(api_key_env, "")
        if not key:
            raise ConfigError(f"live backend credential env var {api_key_env} is empty")
        self.base_url = base_url.rstrip("/")
        self.api_key = key
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self.request_timeout_s = request_timeout_s

    def complete(self, request: ChatRequest) -> ChatResponse:
        import requests

        payload = {
            "model": request.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {"Authorization": f"Bearer {self.api_key}"}
        last_error: str = ""
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff_s * (2 ** (attempt - 1)))
            try:
                response = requests.post(
                    f"{self.base_url}/chat/completions", json=payload,
                    headers=headers, timeout=self.request_timeout_s)
            except requests.RequestException as exc:
                last_error = f"transport error: {exc}"
                continue
            if response.status_code in _RETRYABLE_STATUS:
                last_error = f"HTTP {response.status_code}"
                continue
            if response.status_code != 200:
                raise GatewayError(f"chat endpoint returned HTTP {response.status_code}: "
                                   f"{response.text[:200]}")
            body = response.json()
            content = body["choices"][0]["message"]["content"]
            usage = body.get("usage") or {}
            prompt_text = "\n".join(m.content for m in request.messages)
            return ChatResponse(
                content=content,
                prompt_tokens=int(usage.get("prompt_tokens",
                                            count_tokens(prompt_text, request.model_id))),
                completion_tokens=int(usage.get("completion_tokens",
                                                count_tokens(content, request.model_id))),
                backend=BACKEND_LIVE,
            )
        raise GatewayError(f"retries exhausted after {self.max_attempts} attempts ({last_error})")


class LlmGateway:
    """Uniform completion entry point; every call lands in the token ledger."""

    def __init__(self, backend, ledger: TokenLedger | None = None, max_inflight: int = 8):
        self.backend = backend
        self.ledger = ledger if ledger is not None else TokenLedger()
        self._slots = threading.Semaphore(max_inflight)
        self._tlocal = threading.local()

    @property
    def backend_kind(self) -> str:
        return self.backend.kind

    @contextmanager
    def metered(self):
        """Collect per-agent usage of the calls made by this thread, e.g. to
        attribute tokens to one sample while a worker processes it."""
        sink: dict[str, dict[str, int]] = {}
        previous = getattr(self._tlocal, "sink", None)
        self._tlocal.sink = sink
        try:
            yield sink
        finally:
            self._tlocal.sink = previous

    def complete(self, request: ChatRequest, agent: str = "",
                 round_index: int = 0) -> ChatResponse:
        with self._slots:
            response = self.backend.complete(request)
        self.ledger.record(agent, round_index, response.prompt_tokens,
                           response.completion_tokens)
        sink = getattr(self._tlocal, "sink", None)
        if sink is not None:
            cell = sink.setdefault(agent or "other",
                                   {"prompt_tokens": 0, "completion_tokens": 0})
            cell["prompt_tokens"] += response.prompt_tokens
            cell["completion_tokens"] += response.completion_tokens
        return response

    def complete_json(self, request: ChatRequest, required_keys: list[str],
                      agent: str = "", round_index: int = 0) -> tuple[dict, list[ChatResponse]]:
        """complete() plus payload parsing, with one corrective re-ask on failure."""
        responses = [self.complete(request, agent, round_index)]
        try:
            return parse_json_payload(responses[0].content, required_keys), responses
        except PayloadError:
            retry = ChatRequest(
                model_id=request.model_id,
                messages=request.messages + (
                    Message("assistant", responses[0].content),
                    Message("user", "Return only valid JSON."),
                ),
                temperature=request.temperature,
                max_output_tokens=request.max_output_tokens,
            )
            responses.append(self.complete(retry, agent, round_index))
            return parse_json_payload(responses[1].content, required_keys), responses


def _first_balanced_block(text: str) -> str | None:
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string: str | None = None
        i = start
        while i < len(text):
            ch = text[i]
            if in_string:
                if ch == "\\":
                    i += 2
                    continue
                if ch == in_string:
                    in_string = None
            elif ch in ("'", '"'):
                in_string = ch
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return text[start:i + 1]
            i += 1
        start = text.find("{", start + 1)
    return None


def parse_json_payload(content: str, required_keys: list[str]) -> dict:
    """Extract the first balanced {...} block (models wrap JSON in prose and
    code fences), parse it, and verify the required keys are present."""
    block = _first_balanced_block(content)
    if block is None:
        raise PayloadError("no balanced JSON object found in model output", content)
    try:
        payload = json.loads(block)
    except json.JSONDecodeError:
        try:
            payload = ast.literal_eval(block)
        except (ValueError, SyntaxError):
            raise PayloadError("balanced block is neither JSON nor a dict literal", content)
    if not isinstance(payload, dict):
        raise PayloadError("parsed payload is not an object", content)
    missing = [key for key in required_keys if key not in payload]
    if missing:
        raise PayloadError(f"payload missing required keys {missing}", content)
    return payload
