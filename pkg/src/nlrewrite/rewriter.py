"""Rewrites a flagged question under the guidance of its reflection.

The prompt instructs the model to keep the original narrative style and to
never answer with a query; a mechanical SQL-shape guard enforces the latter
with one corrective re-ask before giving up.
"""

from __future__ import annotations

import re
import sqlite3
from dataclasses import dataclass

from . import prompts
from .dbharness import SchemaSnapshot, render_schema_prompt
from .errors import PayloadError, RewriteError, StyleViolationError
from .gateway import LlmGateway, Message, ChatRequest, user_request
from .reflector import Reflection


@dataclass(frozen=True)
class RewriteResult:
    sample_id: str
    rewritten_nl: str
    details: str
    round_index: int


_SELECT_FROM = re.compile(r"\bselect\b\s+.+?\s+\bfrom\b\s+\S+", re.IGNORECASE | re.DOTALL)


def _parses_as_sql(candidate: str) -> bool:
    """True when the SQL engine accepts the text's structure. A semantic
    error (unknown table/column) still means the text parses as SQL."""
    conn = sqlite3.connect(":memory:")
    try:
        conn.execute("EXPLAIN " + candidate)
        return True
    except sqlite3.Error as exc:
        low = str(exc).lower()
        return "syntax error" not in low and "unrecognized token" not in low \
            and "incomplete input" not in low
    finally:
        conn.close()


def looks_like_sql(text: str) -> bool:
    """SQL-shape guard: leading SELECT/WITH, or an embedded statement that
    the engine can actually parse."""
    trimmed = text.strip().strip("`").strip()
    first = trimmed.split(None, 1)[0].upper() if trimmed.split() else ""
    if first in ("SELECT", "WITH"):
        return True
    match = _SELECT_FROM.search(trimmed)
    if not match:
        return False
    return _parses_as_sql(trimmed[match.start():])


class Rewriter:
    def __init__(self, gateway: LlmGateway, model_id: str,
                 schema_token_budget: int = 2048, prompt_dir=None):
        self.gateway = gateway
        self.model_id = model_id
        self.schema_token_budget = schema_token_budget
        self.template = prompts.load_template(prompts.REWRITER, prompt_dir)

    def render_prompt(self, nl: str, schema: SchemaSnapshot, reflection: Reflection) -> str:
        return prompts.fill(self.template, {
            "SCHEMA_SLOT": render_schema_prompt(schema, self.schema_token_budget, self.model_id),
            "NL_SLOT": nl,
            "REFLECTION_SLOT": reflection.raw_text,
        })

    def rewrite(self, sample_id: str, nl: str, schema: SchemaSnapshot,
                reflection: Reflection, round_index: int = 0) -> RewriteResult:
        prompt = self.render_prompt(nl, schema, reflection)
        request = user_request(self.model_id, prompt)
        try:
            payload, _ = self.gateway.complete_json(
                request, required_keys=["details", "result"],
                agent="rewriter", round_index=round_index)
        except PayloadError as exc:
            raise RewriteError(f"rewrite output unparseable after retry: {exc}") from exc
        rewritten = str(payload["result"]).strip()
        details = str(payload["details"])
        if rewritten and not looks_like_sql(rewritten):
            return RewriteResult(sample_id, rewritten, details, round_index)

        reask = ChatRequest(
            model_id=request.model_id,
            messages=request.messages + (
                Message("assistant", rewritten or "(empty)"),
                Message("user", "Do not output a SQL query. Rewrite the question as one "
                                "natural-language sentence."),
            ),
            temperature=request.temperature,
            max_output_tokens=request.max_output_tokens,
        )
        try:
            payload, _ = self.gateway.complete_json(
                reask, required_keys=["details", "result"],
                agent="rewriter", round_index=round_index)
        except PayloadError as exc:
            raise RewriteError(f"rewrite re-ask unparseable: {exc}") from exc
        rewritten = str(payload["result"]).strip()
        if not rewritten:
            raise RewriteError("rewriter returned an empty question")
        if looks_like_sql(rewritten):
            raise StyleViolationError("rewriter produced SQL twice; keeping the original question")
        return RewriteResult(sample_id, rewritten, str(payload["details"]), round_index)
