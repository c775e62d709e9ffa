"""Round orchestration: translate -> check -> reflect -> rewrite, then loop
over the surviving bad samples until the round cap or an empty bad set.

Matched samples never re-enter the loop, so later rounds only spend tokens on
the shrinking bad set. Per-sample agent failures are recorded in that sample's
round record and never abort the round.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .checker import (
    NL_DO_NOT_MATCH_SQL,
    NL_MATCH_SQL,
    PHASE_EXECUTION,
    Checker,
    CheckVerdict,
    conservative_verdict,
)
from .dataset import NlSample, effective_nl
from .dbharness import DbHarness, ExecutionOutcome, STATUS_RUNTIME
from .errors import CheckerError, NlRewriteError, ReflectionError, RewriteError, TranslatorError
from .gateway import LlmGateway
from .memory import Memory, RoundRecord
from .reflector import REWARD_MATCH, REWARD_NO_MATCH, Reflector
from .rewriter import Rewriter
from .translators import TranslateRequest, Translator


@dataclass
class RunConfig:
    checker_model: str = "gpt-4o"
    reflector_model: str = "gpt-4o"
    rewriter_model: str = "gpt-4o"
    max_rounds: int = 3
    workers: int = 4
    flaw_batch_size: int = 5
    action_batch_size: int = 5
    include_evidence: bool = False
    immediate_weight_updates: bool = False
    execution_timeout_s: float = 30.0
    schema_token_budget: int = 2048
    checker_extra_rules: str = ""
    prompt_dir: str | None = None
    skip_reflection: bool = False  # check-only mode


@dataclass(frozen=True)
class WorkItem:
    sample: NlSample
    nl_override: str | None = None  # rewrite carried over from the previous round


@dataclass
class RunResult:
    predictions: dict[str, str]
    rounds_completed: int
    round_tokens: dict[int, int]
    bad_counts: dict[int, int]


class Pipeline:
    def __init__(self, config: RunConfig, harness: DbHarness, gateway: LlmGateway,
                 translator: Translator, memory: Memory):
        self.config = config
        self.harness = harness
        self.gateway = gateway
        self.translator = translator
        self.memory = memory
        self.checker = Checker(
            harness, gateway, config.checker_model,
            schema_token_budget=config.schema_token_budget,
            extra_rules=config.checker_extra_rules, prompt_dir=config.prompt_dir)
        self.reflector = Reflector(
            memory.store, gateway, config.reflector_model,
            flaw_batch_size=config.flaw_batch_size,
            action_batch_size=config.action_batch_size,
            schema_token_budget=config.schema_token_budget, prompt_dir=config.prompt_dir)
        self.rewriter = Rewriter(
            gateway, config.rewriter_model,
            schema_token_budget=config.schema_token_budget, prompt_dir=config.prompt_dir)

    # --- single sample ---

    def _process(self, item: WorkItem, round_index: int) -> RoundRecord:
        sample = item.sample
        nl_used = item.nl_override if item.nl_override is not None else sample.nl
        nl_prompted = effective_nl(sample, item.nl_override, self.config.include_evidence)
        errors: list[str] = []

        with self.gateway.metered() as tokens:
            sql = ""
            verdict: CheckVerdict | None = None
            try:
                schema = self.harness.schema(sample.db_id)
            except NlRewriteError as exc:
                schema = None
                errors.append(f"schema: {exc}")
            if schema is not None:
                try:
                    translation = self.translator.translate(
                        TranslateRequest(sample_id=sample.sample_id, nl=nl_prompted,
                                         db_id=sample.db_id, schema=schema),
                        round_index=round_index)
                    sql = translation.sql
                except TranslatorError as exc:
                    errors.append(f"translator ({type(exc).__name__}): {exc}")
            if schema is None or not sql:
                verdict = CheckVerdict(
                    label=NL_DO_NOT_MATCH_SQL, phase=PHASE_EXECUTION,
                    details="; ".join(errors) or "no SQL produced",
                    execution=ExecutionOutcome(status=STATUS_RUNTIME,
                                               error_text="translation failed"))
            else:
                try:
                    verdict = self.checker.check(
                        nl_prompted, sql, sample.db_id, round_index=round_index,
                        timeout_s=self.config.execution_timeout_s)
                except CheckerError as exc:
                    errors.append(f"checker: {exc}")
                    execution, _ = self.checker.check_phase1(
                        sample.db_id, sql, timeout_s=self.config.execution_timeout_s)
                    verdict = conservative_verdict(execution)

            reflection = None
            rewrite = None
            if (verdict.label == NL_DO_NOT_MATCH_SQL and schema is not None
                    and not self.config.skip_reflection):
                flaw_batch, action_batch = self.reflector.select_batches()
                try:
                    reflection = self.reflector.reflect(
                        sample.sample_id, nl_prompted, schema, flaw_batch, action_batch,
                        round_index=round_index)
                except ReflectionError as exc:
                    errors.append(f"reflector: {exc}")
                if reflection is not None:
                    try:
                        rewrite = self.rewriter.rewrite(
                            sample.sample_id, nl_prompted, schema, reflection,
                            round_index=round_index)
                    except RewriteError as exc:
                        errors.append(f"rewriter: {exc}")

        if self.config.immediate_weight_updates and round_index > 1:
            self._apply_reward(sample.sample_id, round_index, verdict.label)

        return RoundRecord.build(
            sample_id=sample.sample_id, round_index=round_index, db_id=sample.db_id,
            nl_used=nl_used, sql=sql, verdict=verdict, reflection=reflection,
            rewrite=rewrite, tokens=tokens, error="; ".join(errors) or None)

    def _apply_reward(self, sample_id: str, round_index: int, label: str) -> None:
        """Reward the experiences whose reflection produced the question that
        this round just judged."""
        prior = self.memory.query(sample_id=sample_id, round_index=round_index - 1)
        if not prior or not prior[0].reflection:
            return
        used = prior[0].reflection.get("used_experience_ids") or []
        if not used:
            return
        reward = REWARD_MATCH if label == NL_MATCH_SQL else REWARD_NO_MATCH
        self.memory.store.update_weights(used, reward)

    # --- rounds ---

    def run_round(self, items: list[WorkItem], round_index: int) -> list[RoundRecord]:
        """Process every item, append records in input order, then apply the
        round-boundary weight updates from this round's verdicts."""
        if self.config.workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                records = list(pool.map(lambda it: self._process(it, round_index), items))
        else:
            records = [self._process(item, round_index) for item in items]
        for record in records:
            self.memory.append(record)
        if not self.config.immediate_weight_updates and round_index > 1:
            for record in records:
                self._apply_reward(record.sample_id, round_index, record.verdict_label)
        return records

    def _next_items(self, items: list[WorkItem],
                    records: list[RoundRecord]) -> list[WorkItem]:
        by_id = {record.sample_id: record for record in records}
        out: list[WorkItem] = []
        for item in items:
            record = by_id[item.sample.sample_id]
            if record.verdict_label != NL_DO_NOT_MATCH_SQL:
                continue
            rewritten = (record.rewrite or {}).get("rewritten_nl")
            out.append(WorkItem(sample=item.sample,
                                nl_override=rewritten if rewritten else record.nl_used))
        return out

    def run(self, samples: list[NlSample], max_rounds: int | None = None,
            snapshot_path=None, start_round: int = 1,
            initial_items: list[WorkItem] | None = None) -> RunResult:
        rounds = self.config.max_rounds if max_rounds is None else max_rounds
        if rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        items = initial_items if initial_items is not None \
            else [WorkItem(sample=s) for s in samples]
        round_tokens: dict[int, int] = {}
        bad_counts: dict[int, int] = {}
        rounds_completed = start_round - 1
        for round_index in range(start_round, rounds + 1):
            if not items:
                break
            records = self.run_round(items, round_index)
            rounds_completed = round_index
            round_tokens[round_index] = sum(r.total_tokens() for r in records)
            items = self._next_items(items, records)
            bad_counts[round_index] = len(items)
            if snapshot_path is not None:
                self.memory.snapshot(snapshot_path, meta={"rounds_completed": round_index})
        return RunResult(
            predictions=self.memory.latest_sql(),
            rounds_completed=rounds_completed,
            round_tokens=round_tokens,
            bad_counts=bad_counts,
        )


def resume_items(memory: Memory, samples: list[NlSample],
                 rounds_completed: int) -> list[WorkItem]:
    """Reconstruct the next round's input set from restored records: the
    prior round's bad samples with their rewrites substituted."""
    by_id = {s.sample_id: s for s in samples}
    items: list[WorkItem] = []
    for record in memory.query(round_index=rounds_completed, label=NL_DO_NOT_MATCH_SQL):
        sample = by_id.get(record.sample_id)
        if sample is None:
            continue
        rewritten = (record.rewrite or {}).get("rewritten_nl")
        items.append(WorkItem(sample=sample,
                              nl_override=rewritten if rewritten else record.nl_used))
    return items
