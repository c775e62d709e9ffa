"""Black-box access to any NL2SQL translator.

The pipeline never sees translator internals; it builds a TranslateRequest
and gets back SQL through one of four adapter kinds:

  http        POST {sample_id, nl, db_id, schema_text} -> {"sql": ...}
  subprocess  one JSON request line on stdin, SQL on stdout
  static_file precomputed sample_id -> sql map (replay of published predictions)
  builtin_llm minimal zero-shot schema+question prompt through the gateway
"""

from __future__ import annotations

import json
import re
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .dbharness import SchemaSnapshot, render_schema_prompt
from .errors import (
    ConfigError,
    EmptySqlError,
    MissingPredictionError,
    TranslatorError,
    TranslatorHttpError,
    TranslatorProcessError,
    TranslatorTimeoutError,
)
from .gateway import LlmGateway, user_request

KINDS = ("http", "subprocess", "static_file", "builtin_llm")

BUILTIN_PROMPT = (
    "Given the database schema below, write one SQLite SQL query that answers "
    "the question. Return only the SQL.\n\nSCHEMA:\n{schema}\n\nQUESTION:\n{nl}\n\nSQL:"
)


@dataclass(frozen=True)
class TranslatorConfig:
    kind: str
    endpoint: str = ""          # http
    command: str = ""           # subprocess (shell string)
    path: str = ""              # static_file
    model_id: str = ""          # builtin_llm
    timeout_s: float = 60.0
    reentrant_command: bool = False
    schema_token_budget: int = 2048

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"translator kind must be one of {KINDS}, got {self.kind!r}")
        required = {"http": self.endpoint, "subprocess": self.command,
                    "static_file": self.path, "builtin_llm": self.model_id}
        if not required[self.kind]:
            raise ConfigError(f"translator kind {self.kind!r} is missing its parameter")


@dataclass(frozen=True)
class TranslateRequest:
    sample_id: str
    nl: str
    db_id: str
    schema: SchemaSnapshot


@dataclass(frozen=True)
class TranslationResult:
    sql: str
    translator_tokens: int | None = None
    latency_ms: float = 0.0


def _strip_sql_decoration(text: str) -> str:
    text = text.strip()
    fence = re.search(r"```(?:sql)?\s*(.*?)```", text, re.DOTALL | re.IGNORECASE)
    if fence:
        text = fence.group(1).strip()
    return text.strip().rstrip(";").strip() + ""


def load_static_predictions(path: Path | str) -> dict[str, str]:
    """sample_id -> sql map; JSON object, or TSV lines `sample_id<TAB>sql`."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("{"):
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ConfigError(f"static prediction file {path} must map sample_id to sql")
        return {str(k): str(v) for k, v in data.items()}
    mapping: dict[str, str] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise ConfigError(f"static prediction file {path} line {line_no}: expected TAB")
        sample_id, sql = line.split("\t", 1)
        mapping[sample_id.strip()] = sql.strip()
    return mapping


class Translator:
    """One configured adapter; translate() is safe for concurrent use except
    for non-reentrant subprocess commands, which serialize on a lock."""

    def __init__(self, config: TranslatorConfig, gateway: LlmGateway | None = None):
        self.config = config
        self.gateway = gateway
        self._static: dict[str, str] | None = None
        self._proc_lock = threading.Lock()
        if config.kind == "static_file":
            self._static = load_static_predictions(config.path)
        if config.kind == "builtin_llm" and gateway is None:
            raise ConfigError("builtin_llm translator requires a gateway")

    def translate(self, request: TranslateRequest, round_index: int = 0) -> TranslationResult:
        start = time.perf_counter()
        handler = getattr(self, f"_translate_{self.config.kind}")
        sql, tokens = handler(request, round_index)
        sql = (sql or "").strip()
        if not sql:
            raise EmptySqlError(f"translator returned empty SQL for {request.sample_id}")
        return TranslationResult(
            sql=sql, translator_tokens=tokens,
            latency_ms=(time.perf_counter() - start) * 1000.0)

    # adapters

    def _translate_static_file(self, request: TranslateRequest, _round: int):
        assert self._static is not None
        if request.sample_id not in self._static:
            raise MissingPredictionError(
                f"no prediction for sample {request.sample_id} in {self.config.path}")
        return self._static[request.sample_id], None

    def _translate_http(self, request: TranslateRequest, _round: int):
        import requests

        schema_text = render_schema_prompt(request.schema, self.config.schema_token_budget)
        body = {"sample_id": request.sample_id, "nl": request.nl,
                "db_id": request.db_id, "schema_text": schema_text}
        try:
            response = requests.post(self.config.endpoint, json=body,
                                     timeout=self.config.timeout_s)
        except requests.Timeout as exc:
            raise TranslatorTimeoutError(f"http translator timed out: {exc}") from exc
        except requests.RequestException as exc:
            raise TranslatorHttpError(f"http translator transport error: {exc}") from exc
        if response.status_code != 200:
            raise TranslatorHttpError(
                f"http translator returned {response.status_code}: {response.text[:200]}")
        try:
            sql = response.json()["sql"]
        except (ValueError, KeyError) as exc:
            raise TranslatorHttpError(f"http translator response missing sql: {exc}") from exc
        return sql, None

    def _translate_subprocess(self, request: TranslateRequest, _round: int):
        schema_text = render_schema_prompt(request.schema, self.config.schema_token_budget)
        line = json.dumps({"sample_id": request.sample_id, "nl": request.nl,
                           "db_id": request.db_id, "schema_text": schema_text},
                          sort_keys=True)
        lock = self._proc_lock if not self.config.reentrant_command else None
        if lock:
            lock.acquire()
        try:
            proc = subprocess.run(
                self.config.command, shell=True, input=line + "\n",
                capture_output=True, text=True, timeout=self.config.timeout_s)
        except subprocess.TimeoutExpired as exc:
            raise TranslatorTimeoutError(f"subprocess translator timed out: {exc}") from exc
        finally:
            if lock:
                lock.release()
        if proc.returncode != 0:
            raise TranslatorProcessError(
                f"subprocess translator exited {proc.returncode}", stderr=proc.stderr)
        return proc.stdout.strip(), None

    def _translate_builtin_llm(self, request: TranslateRequest, round_index: int):
        assert self.gateway is not None
        schema_text = render_schema_prompt(request.schema, self.config.schema_token_budget)
        prompt = BUILTIN_PROMPT.format(schema=schema_text, nl=request.nl)
        response = self.gateway.complete(
            user_request(self.config.model_id, prompt),
            agent="translator", round_index=round_index)
        sql = _strip_sql_decoration(response.content)
        return sql, response.prompt_tokens + response.completion_tokens
