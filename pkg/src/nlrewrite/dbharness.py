"""SQLite access for benchmark databases: schema extraction, prompt rendering,
read-only execution with timeouts, and result-set comparison.

Benchmarks ship one database file per db_id; every call opens its own
read-only connection, so harness values are safe to share across workers.
"""

from __future__ import annotations

import math
import re
import sqlite3
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import database_path
from .errors import NlRewriteError
from .gateway import count_tokens

DEFAULT_TIMEOUT_S = 30.0
DEFAULT_ROW_CAP = 500
FLOAT_TOLERANCE = 1e-6

STATUS_OK = "ok"
STATUS_SYNTAX = "syntax_error"
STATUS_RUNTIME = "runtime_error"
STATUS_TIMEOUT = "timeout"


@dataclass(frozen=True)
class ColumnInfo:
    column_name: str
    declared_type: str
    sample_values: tuple = ()


@dataclass(frozen=True)
class TableInfo:
    table_name: str
    columns: tuple[ColumnInfo, ...]


@dataclass(frozen=True)
class ForeignKey:
    from_table: str
    from_column: str
    to_table: str
    to_column: str


@dataclass(frozen=True)
class SchemaSnapshot:
    db_id: str
    tables: tuple[TableInfo, ...]
    foreign_keys: tuple[ForeignKey, ...]
    primary_keys: tuple[tuple[str, str], ...]  # (table, column)


@dataclass
class ExecutionOutcome:
    """Classified result of running one SQL statement.

    rows is present exactly when status == "ok"; truncated marks that the
    row cap was hit before the cursor was exhausted.
    """

    status: str
    rows: list[tuple] | None = None
    columns: list[str] | None = None
    elapsed_ms: float = 0.0
    error_text: str | None = None
    truncated: bool = False

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


class DbOpenError(NlRewriteError):
    pass


class ComparisonError(NlRewriteError):
    """compare_results called on a non-ok outcome; callers treat as mismatch."""


def _classify_error(exc: BaseException) -> tuple[str, str]:
    text = str(exc)
    low = text.lower()
    if "interrupted" in low:
        return STATUS_TIMEOUT, text
    if "syntax error" in low or "incomplete input" in low or "unrecognized token" in low:
        return STATUS_SYNTAX, text
    return STATUS_RUNTIME, text


class DbHarness:
    """Opens benchmark databases under one root directory."""

    def __init__(self, db_root: Path | str, timeout_s: float = DEFAULT_TIMEOUT_S,
                 row_cap: int | None = DEFAULT_ROW_CAP):
        self.db_root = Path(db_root)
        self.timeout_s = timeout_s
        self.row_cap = row_cap
        self._schema_cache: dict[str, SchemaSnapshot] = {}
        self._cache_lock = threading.Lock()

    def db_path(self, db_id: str) -> Path:
        return database_path(self.db_root, db_id)

    def _connect(self, db_id: str) -> sqlite3.Connection:
        path = self.db_path(db_id)
        if not path.exists():
            raise DbOpenError(f"no database file for {db_id!r} under {self.db_root}")
        try:
            conn = sqlite3.connect(f"file:{path}?mode=ro", uri=True, timeout=5.0)
            conn.text_factory = lambda b: b.decode("utf-8", "replace")
            conn.execute("SELECT 1").fetchone()
        except sqlite3.Error as exc:
            raise DbOpenError(f"cannot open database {db_id!r}: {exc}") from exc
        return conn

    def schema(self, db_id: str) -> SchemaSnapshot:
        """Cached extract_schema; extraction is deterministic so caching is safe."""
        with self._cache_lock:
            cached = self._schema_cache.get(db_id)
        if cached is not None:
            return cached
        snapshot = self.extract_schema(db_id)
        with self._cache_lock:
            self._schema_cache[db_id] = snapshot
        return snapshot

    def extract_schema(self, db_id: str) -> SchemaSnapshot:
        """Read tables, columns, keys, and up to 3 sample values per column.

        Sample values are the first 3 distinct non-null values in primary-key
        (or rowid) order, so re-extraction always yields an identical snapshot.
        """
        conn = self._connect(db_id)
        try:
            names = [
                r[0] for r in conn.execute(
                    "SELECT name FROM sqlite_master WHERE type='table' "
                    "AND name NOT LIKE 'sqlite_%' ORDER BY name"
                )
            ]
            tables: list[TableInfo] = []
            primary_keys: list[tuple[str, str]] = []
            foreign_keys: list[ForeignKey] = []
            for name in names:
                cols = list(conn.execute(f'PRAGMA table_info("{name}")'))
                pk_cols = [c[1] for c in sorted((c for c in cols if c[5]), key=lambda c: c[5])]
                primary_keys.extend((name, col) for col in pk_cols)
                order_clause = ", ".join(f'"{c}"' for c in pk_cols) if pk_cols else "rowid"
                infos = []
                for col in cols:
                    col_name, col_type = col[1], col[2] or ""
                    infos.append(ColumnInfo(
                        column_name=col_name,
                        declared_type=col_type,
                        sample_values=self._sample_values(conn, name, col_name, order_clause),
                    ))
                tables.append(TableInfo(table_name=name, columns=tuple(infos)))
                for fk in conn.execute(f'PRAGMA foreign_key_list("{name}")'):
                    # (id, seq, table, from, to, on_update, on_delete, match)
                    to_col = fk[4]
                    if to_col is None:
                        to_col = self._referenced_pk(conn, fk[2])
                    foreign_keys.append(ForeignKey(
                        from_table=name, from_column=fk[3], to_table=fk[2], to_column=to_col or ""))
        finally:
            conn.close()
        return SchemaSnapshot(
            db_id=db_id,
            tables=tuple(tables),
            foreign_keys=tuple(foreign_keys),
            primary_keys=tuple(primary_keys),
        )

    @staticmethod
    def _referenced_pk(conn: sqlite3.Connection, table: str) -> str | None:
        try:
            cols = list(conn.execute(f'PRAGMA table_info("{table}")'))
        except sqlite3.Error:
            return None
        for col in cols:
            if col[5] == 1:
                return col[1]
        return None

    @staticmethod
    def _sample_values(conn: sqlite3.Connection, table: str, column: str,
                       order_clause: str) -> tuple:
        try:
            cursor = conn.execute(
                f'SELECT "{column}" FROM "{table}" ORDER BY {order_clause} LIMIT 64')
        except sqlite3.Error:
            return ()
        seen: list = []
        for (value,) in cursor:
            if value is None or value in seen:
                continue
            seen.append(value)
            if len(seen) == 3:
                break
        return tuple(seen)

    def execute(self, db_id: str, sql: str, timeout_s: float | None = None,
                row_cap: int | None | object = "default") -> ExecutionOutcome:
        """Run arbitrary SQL read-only; all failures are encoded in the status.

        row_cap=None streams every row (used for result comparison); the
        default cap only bounds what gets stored for prompt rendering.
        """
        cap = self.row_cap if row_cap == "default" else row_cap
        limit = self.timeout_s if timeout_s is None else timeout_s
        try:
            conn = self._connect(db_id)
        except DbOpenError as exc:
            return ExecutionOutcome(status=STATUS_RUNTIME, error_text=str(exc))
        timer = threading.Timer(limit, conn.interrupt)
        start = time.perf_counter()
        try:
            timer.start()
            cursor = conn.execute(sql)
            columns = [d[0] for d in cursor.description] if cursor.description else []
            rows: list[tuple] = []
            truncated = False
            for row in cursor:
                if cap is not None and len(rows) >= cap:
                    truncated = True
                    break
                rows.append(tuple(row))
            elapsed = (time.perf_counter() - start) * 1000.0
            return ExecutionOutcome(status=STATUS_OK, rows=rows, columns=columns,
                                    elapsed_ms=elapsed, truncated=truncated)
        except sqlite3.Error as exc:
            elapsed = (time.perf_counter() - start) * 1000.0
            status, text = _classify_error(exc)
            if status != STATUS_TIMEOUT and elapsed >= limit * 1000.0:
                # interrupt can surface as a generic error on some codepaths
                status, text = STATUS_TIMEOUT, text
            return ExecutionOutcome(status=status, elapsed_ms=elapsed, error_text=text)
        finally:
            timer.cancel()
            conn.close()


# --- cell canonicalization and result comparison ---

def canonical_cell(value):
    """Canonical form used for equality: numbers unify and round to 1e-6.

    Idempotent: canonical_cell(canonical_cell(v)) == canonical_cell(v).
    """
    if value is None:
        return None
    if isinstance(value, bool):
        return float(int(value))
    if isinstance(value, int):
        return float(value)
    if isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            return value
        return round(value, 6)
    return value


def _row_key(row: tuple) -> tuple:
    # total order over mixed-type canonical rows, for multiset comparison
    key = []
    for cell in row:
        if cell is None:
            key.append((0, ""))
        elif isinstance(cell, float):
            key.append((1, cell))
        elif isinstance(cell, str):
            key.append((2, cell))
        elif isinstance(cell, bytes):
            key.append((3, cell.hex()))
        else:
            key.append((4, repr(cell)))
    return tuple(key)


def _cells_equal(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    if isinstance(a, float) and isinstance(b, float):
        if math.isnan(a) or math.isnan(b):
            return math.isnan(a) and math.isnan(b)
        return abs(a - b) <= FLOAT_TOLERANCE
    return a == b


def _rows_equal(a: tuple, b: tuple) -> bool:
    return len(a) == len(b) and all(_cells_equal(x, y) for x, y in zip(a, b))


def has_top_level_order_by(sql: str) -> bool:
    """Detect ORDER BY outside string literals and parenthesized subqueries."""
    depth = 0
    i = 0
    text = sql
    n = len(text)
    stripped = []
    while i < n:
        ch = text[i]
        if ch in ("'", '"'):
            quote = ch
            i += 1
            while i < n:
                if text[i] == quote:
                    if i + 1 < n and text[i + 1] == quote:
                        i += 2
                        continue
                    break
                i += 1
            i += 1
            continue
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth = max(0, depth - 1)
        elif depth == 0:
            stripped.append(ch)
        i += 1
    return re.search(r"\border\s+by\b", "".join(stripped), re.IGNORECASE) is not None


def compare_results(pred: ExecutionOutcome, gold: ExecutionOutcome,
                    order_sensitive: bool) -> bool:
    """Result-set equality after cell canonicalization.

    Order-insensitive comparison treats rows as a multiset; both directions
    must have status ok or a ComparisonError is raised.
    """
    if not pred.ok or not gold.ok:
        raise ComparisonError("compare_results requires both outcomes to be ok")
    pred_rows = [tuple(canonical_cell(c) for c in row) for row in pred.rows or []]
    gold_rows = [tuple(canonical_cell(c) for c in row) for row in gold.rows or []]
    if len(pred_rows) != len(gold_rows):
        return False
    if not order_sensitive:
        pred_rows = sorted(pred_rows, key=_row_key)
        gold_rows = sorted(gold_rows, key=_row_key)
    return all(_rows_equal(a, b) for a, b in zip(pred_rows, gold_rows))


# --- schema prompt rendering ---

def _format_sample_value(value) -> str:
    if isinstance(value, str):
        short = value if len(value) <= 40 else value[:37] + "..."
        return "'" + short.replace("'", "''") + "'"
    if isinstance(value, bytes):
        return "x'" + value[:8].hex() + "'"
    if isinstance(value, float):
        return repr(round(value, 6))
    return repr(value)


def _render(schema: SchemaSnapshot, with_samples: bool, with_types: bool) -> str:
    fk_by_table: dict[str, list[ForeignKey]] = {}
    for fk in schema.foreign_keys:
        fk_by_table.setdefault(fk.from_table, []).append(fk)
    pk_by_table: dict[str, list[str]] = {}
    for table, column in schema.primary_keys:
        pk_by_table.setdefault(table, []).append(column)

    blocks = []
    for table in schema.tables:
        lines = [f"CREATE TABLE {table.table_name} ("]
        body: list[tuple[str, str]] = []  # (definition, comment)
        for col in table.columns:
            piece = f"  {col.column_name}"
            if with_types and col.declared_type:
                piece += f" {col.declared_type}"
            comment = ""
            if with_samples and col.sample_values:
                rendered = ", ".join(_format_sample_value(v) for v in col.sample_values)
                comment = f"  -- sample values: {rendered}"
            body.append((piece, comment))
        pks = pk_by_table.get(table.table_name)
        if pks:
            body.append((f"  PRIMARY KEY ({', '.join(pks)})", ""))
        for fk in fk_by_table.get(table.table_name, []):
            body.append(
                (f"  FOREIGN KEY ({fk.from_column}) REFERENCES {fk.to_table}({fk.to_column})", ""))
        for i, (piece, comment) in enumerate(body):
            separator = "," if i + 1 < len(body) else ""
            lines.append(piece + separator + comment)
        lines.append(");")
        blocks.append("\n".join(lines))
    return "\n".join(blocks)


def render_schema_prompt(schema: SchemaSnapshot, budget: int, model_id: str = "") -> str:
    """Deterministic CREATE TABLE-style text for the prompt {SCHEMA_SLOT}.

    Over budget, sample-value comments are dropped first, then column types;
    table and column names are never dropped.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    for with_samples, with_types in ((True, True), (False, True), (False, False)):
        text = _render(schema, with_samples, with_types)
        if count_tokens(text, model_id) <= budget:
            return text
    return text
