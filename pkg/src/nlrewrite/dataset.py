"""Benchmark ingestion: Spider- and BIRD-style question files into a uniform sample stream.

A question file is a UTF-8 JSON array of records. Spider records carry
``question`` / ``query``; BIRD records carry ``question`` / ``SQL`` plus an
optional ``evidence`` hint. Both are mapped onto :class:`NlSample`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, DatasetParseError, MissingDatabaseError

SPLITS = ("dev", "train", "custom")


@dataclass(frozen=True)
class NlSample:
    """One benchmark item: a natural-language question against one database."""

    sample_id: str
    db_id: str
    nl: str
    gold_sql: str | None = None
    evidence: str | None = None


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    question_path: Path
    db_root: Path
    split: str = "custom"

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS}, got {self.split!r}")


def database_path(db_root: Path, db_id: str) -> Path:
    """Resolve a db_id to its file inside the benchmark layout (db_root/<id>/<id>.sqlite)."""
    nested = Path(db_root) / db_id / f"{db_id}.sqlite"
    if nested.exists():
        return nested
    # some dumps keep the files flat
    return Path(db_root) / f"{db_id}.sqlite"


def _sample_from_record(record: dict, index: int, split: str) -> NlSample:
    if not isinstance(record, dict):
        raise DatasetParseError(f"record {index} is not an object", record_index=index)
    db_id = record.get("db_id")
    nl = record.get("question")
    if not db_id or not isinstance(db_id, str):
        raise DatasetParseError(f"record {index} has no db_id", record_index=index)
    if not nl or not isinstance(nl, str):
        raise DatasetParseError(f"record {index} has no question text", record_index=index)
    gold = record.get("query") or record.get("SQL") or None
    evidence = record.get("evidence") or None
    explicit_id = record.get("sample_id") or record.get("question_id")
    sample_id = str(explicit_id) if explicit_id is not None else f"{split}:{index}"
    return NlSample(sample_id=sample_id, db_id=db_id, nl=nl, gold_sql=gold, evidence=evidence)


def load_benchmark(manifest: DatasetManifest) -> list[NlSample]:
    """Load all samples in file order, verifying each db_id has a database file.

    Raises DatasetParseError naming the offending record index on malformed
    input, and MissingDatabaseError listing every unresolved db_id.
    """
    question_path = Path(manifest.question_path)
    if not question_path.exists():
        raise ConfigError(f"question file not found: {question_path}")
    if not Path(manifest.db_root).is_dir():
        raise ConfigError(f"db_root is not a directory: {manifest.db_root}")
    try:
        raw = json.loads(question_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetParseError(f"question file is not valid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise DatasetParseError("question file must be a JSON array of records")

    samples = [_sample_from_record(record, i, manifest.split) for i, record in enumerate(raw)]

    seen: set[str] = set()
    for sample in samples:
        if sample.sample_id in seen:
            raise DatasetParseError(f"duplicate sample_id {sample.sample_id!r}")
        seen.add(sample.sample_id)

    missing = [s.db_id for s in samples if not database_path(manifest.db_root, s.db_id).exists()]
    if missing:
        raise MissingDatabaseError(missing)
    return samples


def dataset_stats(samples: list[NlSample]) -> dict[str, int]:
    """Counts of samples, distinct databases, gold-SQL coverage, and evidence coverage."""
    return {
        "samples": len(samples),
        "dbs": len({s.db_id for s in samples}),
        "with_gold": sum(1 for s in samples if s.gold_sql),
        "with_evidence": sum(1 for s in samples if s.evidence),
    }


def effective_nl(sample: NlSample, nl_override: str | None, include_evidence: bool) -> str:
    """The question text agents and translators actually see.

    ``nl_override`` replaces the original question (a rewrite from a previous
    round); the evidence hint, when enabled, is appended with a label since
    the agent prompts have no dedicated slot for it.
    """
    nl = nl_override if nl_override is not None else sample.nl
    if include_evidence and sample.evidence:
        return f"{nl}\nEvidence: {sample.evidence}"
    return nl
