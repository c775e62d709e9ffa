"""Shared persistent ledger of everything the agents exchange.

Round records go to an append-only line-delimited JSON log with a version
header; snapshots bundle records, the experience store, and the token ledger
into one file for resume and offline analysis. Record serialization contains
no wall-clock values, so identical runs produce byte-identical logs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .checker import CheckVerdict
from .dbharness import ExecutionOutcome
from .errors import MemoryConflictError, SnapshotVersionError
from .gateway import TokenLedger
from .reflector import ExperienceStore, Reflection, ReflectionTriple, WeightConfig
from .rewriter import RewriteResult

LOG_FORMAT = "nlrewrite-roundlog"
SNAPSHOT_FORMAT = "nlrewrite-snapshot"
VERSION = 1


def execution_summary(execution: ExecutionOutcome) -> dict:
    """The durable view of an execution: status and shape, no timings."""
    return {
        "status": execution.status,
        "row_count": len(execution.rows) if execution.rows is not None else None,
        "truncated": execution.truncated,
        "error_text": execution.error_text,
    }


@dataclass(frozen=True)
class RoundRecord:
    sample_id: str
    round_index: int
    db_id: str
    nl_used: str
    sql: str
    execution: dict
    verdict_label: str
    verdict_phase: str
    verdict_details: str
    reflection: dict | None = None
    rewrite: dict | None = None
    tokens: dict = field(default_factory=dict)
    error: str | None = None

    @classmethod
    def build(cls, sample_id: str, round_index: int, db_id: str, nl_used: str,
              sql: str, verdict: CheckVerdict, reflection: Reflection | None = None,
              rewrite: RewriteResult | None = None, tokens: dict | None = None,
              error: str | None = None) -> "RoundRecord":
        reflection_dict = None
        if reflection is not None:
            reflection_dict = {
                "raw_text": reflection.raw_text,
                "used_experience_ids": list(reflection.used_experience_ids),
                "triples": [
                    {"keyword": t.keyword, "flaw": t.flaw, "action": t.action,
                     "used_experience_ids": list(t.used_experience_ids)}
                    for t in reflection.triples
                ],
            }
        rewrite_dict = None
        if rewrite is not None:
            rewrite_dict = {"rewritten_nl": rewrite.rewritten_nl, "details": rewrite.details}
        return cls(
            sample_id=sample_id, round_index=round_index, db_id=db_id, nl_used=nl_used,
            sql=sql, execution=execution_summary(verdict.execution),
            verdict_label=verdict.label, verdict_phase=verdict.phase,
            verdict_details=verdict.details, reflection=reflection_dict,
            rewrite=rewrite_dict, tokens=dict(tokens or {}), error=error)

    def total_tokens(self) -> int:
        return sum(cell.get("prompt_tokens", 0) + cell.get("completion_tokens", 0)
                   for cell in self.tokens.values())

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id, "round": self.round_index, "db_id": self.db_id,
            "nl_used": self.nl_used, "sql": self.sql, "execution": self.execution,
            "verdict": {"label": self.verdict_label, "phase": self.verdict_phase,
                        "details": self.verdict_details},
            "reflection": self.reflection, "rewrite": self.rewrite,
            "tokens": self.tokens, "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RoundRecord":
        verdict = data["verdict"]
        return cls(
            sample_id=data["sample_id"], round_index=data["round"], db_id=data["db_id"],
            nl_used=data["nl_used"], sql=data["sql"], execution=data["execution"],
            verdict_label=verdict["label"], verdict_phase=verdict["phase"],
            verdict_details=verdict["details"], reflection=data.get("reflection"),
            rewrite=data.get("rewrite"), tokens=data.get("tokens", {}),
            error=data.get("error"))


def _dump_line(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


class Memory:
    """Single-writer record log plus the experience store and token ledger."""

    def __init__(self, store: ExperienceStore | None = None,
                 ledger: TokenLedger | None = None,
                 log_path: Path | str | None = None):
        self.store = store if store is not None else ExperienceStore()
        self.ledger = ledger if ledger is not None else TokenLedger()
        self.records: list[RoundRecord] = []
        self._keys: set[tuple[int, str]] = set()
        self._log_path = Path(log_path) if log_path else None
        self._log_fh = None
        if self._log_path is not None:
            self._open_log()

    def _open_log(self) -> None:
        assert self._log_path is not None
        if self._log_path.exists() and self._log_path.stat().st_size > 0:
            self._load_log()
            self._log_fh = self._log_path.open("a", encoding="utf-8")
        else:
            self._log_path.parent.mkdir(parents=True, exist_ok=True)
            self._log_fh = self._log_path.open("w", encoding="utf-8")
            self._log_fh.write(_dump_line({"format": LOG_FORMAT, "version": VERSION}) + "\n")
            self._log_fh.flush()

    def _load_log(self) -> None:
        assert self._log_path is not None
        lines = self._log_path.read_text(encoding="utf-8").splitlines()
        if not lines:
            raise SnapshotVersionError(f"{self._log_path} is empty, not a record log")
        header = json.loads(lines[0])
        if header.get("format") != LOG_FORMAT or header.get("version") != VERSION:
            raise SnapshotVersionError(f"{self._log_path} has unsupported header {header}")
        for line in lines[1:]:
            if not line.strip():
                continue
            record = RoundRecord.from_dict(json.loads(line))
            self._remember(record)

    def _remember(self, record: RoundRecord) -> None:
        key = (record.round_index, record.sample_id)
        if key in self._keys:
            raise MemoryConflictError(f"duplicate record for round={key[0]} sample={key[1]}")
        self._keys.add(key)
        self.records.append(record)

    def append(self, record: RoundRecord) -> None:
        """Durably append one record; duplicates of (round, sample_id) conflict."""
        self._remember(record)
        if self._log_fh is not None:
            self._log_fh.write(_dump_line(record.to_dict()) + "\n")
            self._log_fh.flush()

    def query(self, sample_id: str | None = None, round_index: int | None = None,
              label: str | None = None, db_id: str | None = None) -> list[RoundRecord]:
        out = []
        for record in self.records:
            if sample_id is not None and record.sample_id != sample_id:
                continue
            if round_index is not None and record.round_index != round_index:
                continue
            if label is not None and record.verdict_label != label:
                continue
            if db_id is not None and record.db_id != db_id:
                continue
            out.append(record)
        return out

    def rounds(self) -> list[int]:
        return sorted({r.round_index for r in self.records})

    def latest_sql(self) -> dict[str, str]:
        """Final prediction per sample: the SQL of its highest round."""
        latest: dict[str, RoundRecord] = {}
        for record in self.records:
            current = latest.get(record.sample_id)
            if current is None or record.round_index > current.round_index:
                latest[record.sample_id] = record
        return {sid: rec.sql for sid, rec in latest.items()}

    def round_tokens(self, round_index: int) -> int:
        return sum(r.total_tokens() for r in self.records if r.round_index == round_index)

    def close(self) -> None:
        if self._log_fh is not None:
            self._log_fh.close()
            self._log_fh = None

    def __enter__(self) -> "Memory":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # --- snapshot / restore ---

    def snapshot(self, path: Path | str, meta: dict | None = None) -> None:
        payload = {
            "format": SNAPSHOT_FORMAT,
            "version": VERSION,
            "meta": dict(meta or {}),
            "records": [r.to_dict() for r in self.records],
            "experiences": self.store.to_dict(),
            "ledger": self.ledger.to_dict(),
        }
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(
            json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8")

    @classmethod
    def restore(cls, path: Path | str, log_path: Path | str | None = None,
                weights: WeightConfig | None = None,
                event_log_path: Path | str | None = None) -> tuple["Memory", dict]:
        """Rebuild full state from a snapshot; when log_path is given the
        record log is rewritten so a resumed run ends with the same bytes an
        uninterrupted run would produce."""
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if data.get("format") != SNAPSHOT_FORMAT or data.get("version") != VERSION:
            raise SnapshotVersionError(
                f"snapshot {path} has format={data.get('format')!r} "
                f"version={data.get('version')!r}, expected {SNAPSHOT_FORMAT} v{VERSION}")
        store = ExperienceStore.from_dict(data["experiences"], weights=weights,
                                          event_log_path=event_log_path)
        ledger = TokenLedger.from_dict(data["ledger"])
        if log_path is not None:
            Path(log_path).parent.mkdir(parents=True, exist_ok=True)
            Path(log_path).write_text("", encoding="utf-8")
        memory = cls(store=store, ledger=ledger, log_path=log_path)
        for entry in data["records"]:
            memory.append(RoundRecord.from_dict(entry))
        return memory, data["meta"]


EXPORT_COLUMNS = [
    "sample_id", "round", "db_id", "nl_used", "sql", "exec_status", "verdict_label",
    "verdict_phase", "rewritten_nl", "prompt_tokens", "completion_tokens", "error",
]


def export_table(memory: Memory, path: Path | str, fmt: str = "tsv") -> int:
    """Flatten the record log into one row per (sample, round) for analysis."""
    rows = []
    for record in memory.records:
        prompt_tokens = sum(c.get("prompt_tokens", 0) for c in record.tokens.values())
        completion_tokens = sum(c.get("completion_tokens", 0) for c in record.tokens.values())
        rows.append([
            record.sample_id, record.round_index, record.db_id, record.nl_used,
            record.sql, record.execution.get("status"), record.verdict_label,
            record.verdict_phase,
            (record.rewrite or {}).get("rewritten_nl", ""),
            prompt_tokens, completion_tokens, record.error or "",
        ])
    delimiter = "\t" if fmt == "tsv" else ","
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(EXPORT_COLUMNS)
        writer.writerows(rows)
    return len(rows)
