"""Two-phase judgment of whether generated SQL matches the user's question.

Phase 1 executes the SQL and filters out anything the engine rejects; phase 2
asks the judgment model whether the result aligns with the question's intent.
The binary label is the reward signal for the rest of the framework.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import prompts
from .dbharness import DbHarness, ExecutionOutcome, SchemaSnapshot, render_schema_prompt
from .errors import CheckerError, PayloadError
from .gateway import LlmGateway, user_request

NL_MATCH_SQL = "NL_MATCH_SQL"
NL_DO_NOT_MATCH_SQL = "NL_DO_NOT_MATCH_SQL"

PHASE_EXECUTION = "execution_filter"
PHASE_LLM = "llm_judgment"

RESULT_ROWS_SHOWN = 3
PARSE_FAILURE_DETAILS = "checker-parse-failure"


@dataclass(frozen=True)
class CheckVerdict:
    label: str
    phase: str
    details: str
    execution: ExecutionOutcome


def render_execution_result(execution: ExecutionOutcome,
                            rows_shown: int = RESULT_ROWS_SHOWN) -> str:
    """Column headers plus at most the top three records, with a truncation note."""
    if not execution.ok:
        return f"<execution failed: {execution.status}: {execution.error_text or ''}>"
    columns = execution.columns or []
    rows = execution.rows or []
    lines = ["columns: (" + ", ".join(columns) + ")"]
    if not rows:
        lines.append("(no rows)")
    for row in rows[:rows_shown]:
        lines.append(repr(tuple(row)))
    if len(rows) > rows_shown:
        total = f"{len(rows)}{'+' if execution.truncated else ''}"
        lines.append(f"... ({total} rows total, only showing top three records)")
    return "\n".join(lines)


class Checker:
    def __init__(self, harness: DbHarness, gateway: LlmGateway, model_id: str,
                 schema_token_budget: int = 2048, extra_rules: str = "",
                 prompt_dir=None):
        self.harness = harness
        self.gateway = gateway
        self.model_id = model_id
        self.schema_token_budget = schema_token_budget
        self.extra_rules = extra_rules
        self.template = prompts.load_template(prompts.CHECKER, prompt_dir)

    def check_phase1(self, db_id: str, sql: str,
                     timeout_s: float | None = None) -> tuple[ExecutionOutcome, CheckVerdict | None]:
        """Execute the SQL; a non-ok outcome is an immediate no-match verdict."""
        execution = self.harness.execute(db_id, sql, timeout_s=timeout_s)
        if execution.ok:
            return execution, None
        details = f"{execution.status}: {execution.error_text or 'execution failed'}"
        return execution, CheckVerdict(
            label=NL_DO_NOT_MATCH_SQL, phase=PHASE_EXECUTION,
            details=details, execution=execution)

    def render_prompt(self, nl: str, sql: str, schema: SchemaSnapshot,
                      execution: ExecutionOutcome) -> str:
        template = self.template
        if self.extra_rules:
            template = template.replace(
                "### Output Format:",
                self.extra_rules.rstrip() + "\n\n### Output Format:", 1)
        return prompts.fill(template, {
            "SCHEMA_SLOT": render_schema_prompt(schema, self.schema_token_budget, self.model_id),
            "NL_SLOT": nl,
            "SQL_SLOT": sql,
            "EXECUTION_RESULT_SLOT": render_execution_result(execution),
        })

    def check_phase2(self, nl: str, sql: str, schema: SchemaSnapshot,
                     execution: ExecutionOutcome, round_index: int = 0) -> CheckVerdict:
        if not execution.ok:
            raise CheckerError("phase 2 requires a successful execution outcome")
        prompt = self.render_prompt(nl, sql, schema, execution)
        try:
            payload, _ = self.gateway.complete_json(
                user_request(self.model_id, prompt),
                required_keys=["details", "result"],
                agent="checker", round_index=round_index)
        except PayloadError as exc:
            raise CheckerError(f"checker output unparseable after retry: {exc}") from exc
        result = str(payload["result"]).strip().upper()
        if result not in ("TRUE", "FALSE"):
            raise CheckerError(f"checker result must be TRUE or FALSE, got {payload['result']!r}")
        label = NL_MATCH_SQL if result == "TRUE" else NL_DO_NOT_MATCH_SQL
        return CheckVerdict(label=label, phase=PHASE_LLM,
                            details=str(payload["details"]), execution=execution)

    def check(self, nl: str, sql: str, db_id: str, round_index: int = 0,
              timeout_s: float | None = None) -> CheckVerdict:
        """Phase 1 then phase 2; engine-rejected SQL never reaches the model."""
        execution, verdict = self.check_phase1(db_id, sql, timeout_s=timeout_s)
        if verdict is not None:
            return verdict
        schema = self.harness.schema(db_id)
        return self.check_phase2(nl, sql, schema, execution, round_index=round_index)


def conservative_verdict(execution: ExecutionOutcome,
                         details: str = PARSE_FAILURE_DETAILS) -> CheckVerdict:
    """Flawed-by-default mapping used when the judgment call itself failed:
    treating the sample as bad routes it into reflection rather than past it."""
    return CheckVerdict(label=NL_DO_NOT_MATCH_SQL, phase=PHASE_LLM,
                        details=details, execution=execution)
