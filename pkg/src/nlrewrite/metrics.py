"""Scoring of pipeline outputs: execution accuracy (EX), clause-set exact
match (EM), valid efficiency score (VES), and check precision (CP), plus the
before/after comparison report.

EM here is a simplified clause-set comparison, not the full benchmark
component matcher; reports label the column "EM (clause-set)" accordingly.
"""

from __future__ import annotations

import re
import statistics
from dataclasses import dataclass, field

from .checker import NL_DO_NOT_MATCH_SQL
from .dataset import NlSample
from .dbharness import DbHarness, compare_results, has_top_level_order_by
from .errors import EvalError, ReportError


@dataclass
class MetricOutcome:
    value: float | None
    per_sample: dict[str, float | bool | None] = field(default_factory=dict)
    skipped: dict[str, str] = field(default_factory=dict)


@dataclass
class MetricReport:
    ex: float
    em: float
    ves: float
    cp: float | None
    scored: int
    skipped: dict[str, str]
    sample_ids: list[str]
    per_round: dict[int, dict] = field(default_factory=dict)
    cp_by_phase: dict[str, float | None] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ex": self.ex, "em": self.em, "ves": self.ves, "cp": self.cp,
            "scored": self.scored, "skipped": self.skipped,
            "sample_ids": self.sample_ids,
            "per_round": {str(k): v for k, v in self.per_round.items()},
            "cp_by_phase": self.cp_by_phase,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricReport":
        return cls(
            ex=data["ex"], em=data["em"], ves=data["ves"], cp=data.get("cp"),
            scored=data["scored"], skipped=data.get("skipped", {}),
            sample_ids=data.get("sample_ids", []),
            per_round={int(k): v for k, v in data.get("per_round", {}).items()},
            cp_by_phase=data.get("cp_by_phase", {}))


def _require_gold(samples: list[NlSample]) -> None:
    missing = [s.sample_id for s in samples if not s.gold_sql]
    if missing:
        raise EvalError(f"samples without gold SQL cannot be scored: {missing[:5]}")


def _result_match(harness: DbHarness, sample: NlSample, pred_sql: str) -> bool | None:
    """True/False result-set equivalence; None when the gold itself fails."""
    gold_out = harness.execute(sample.db_id, sample.gold_sql, row_cap=None)
    if not gold_out.ok:
        return None
    if not pred_sql:
        return False
    pred_out = harness.execute(sample.db_id, pred_sql, row_cap=None)
    if not pred_out.ok:
        return False
    return compare_results(pred_out, gold_out,
                           order_sensitive=has_top_level_order_by(sample.gold_sql))


def compute_ex(predictions: dict[str, str], samples: list[NlSample],
               harness: DbHarness) -> MetricOutcome:
    """Fraction of samples whose prediction returns the gold result set.

    Prediction failures count as non-match; gold failures are skipped with a
    reason and removed from the denominator.
    """
    _require_gold(samples)
    outcome = MetricOutcome(value=None)
    matches = 0
    total = 0
    for sample in samples:
        verdict = _result_match(harness, sample, predictions.get(sample.sample_id, ""))
        if verdict is None:
            outcome.skipped[sample.sample_id] = "gold SQL failed to execute"
            continue
        outcome.per_sample[sample.sample_id] = verdict
        total += 1
        matches += int(verdict)
    outcome.value = matches / total if total else 0.0
    return outcome


# --- clause-set exact match ---

_CLAUSE_HEADS = ("select", "from", "where", "group by", "having", "order by", "limit")


def _mask_strings(sql: str) -> str:
    out = []
    i = 0
    while i < len(sql):
        ch = sql[i]
        if ch in ("'", '"'):
            quote = ch
            out.append(quote)
            i += 1
            while i < len(sql):
                out.append("?" if sql[i] != quote else quote)
                if sql[i] == quote:
                    break
                i += 1
        else:
            out.append(ch)
        i += 1
    return "".join(out)


def split_clauses(sql: str) -> dict[str, str]:
    """Top-level clause texts keyed by clause head, scanning outside strings
    and parentheses. Raises EvalError when no top-level SELECT exists."""
    masked = _mask_strings(sql)
    depth = 0
    positions: list[tuple[int, str]] = []
    for match in re.finditer(r"\b(select|from|where|group\s+by|having|order\s+by|limit)\b",
                             masked, re.IGNORECASE):
        start = match.start()
        depth = masked.count("(", 0, start) - masked.count(")", 0, start)
        if depth == 0:
            head = re.sub(r"\s+", " ", match.group(1).lower())
            positions.append((start, head))
    if not positions or positions[0][1] != "select":
        raise EvalError("query has no top-level SELECT; cannot split clauses")
    clauses: dict[str, str] = {}
    for idx, (start, head) in enumerate(positions):
        end = positions[idx + 1][0] if idx + 1 < len(positions) else len(sql)
        keyword_len = len(re.match(r"(?i)(select|from|where|group\s+by|having|order\s+by|limit)",
                                   sql[start:end]).group(0))
        clauses[head] = sql[start + keyword_len:end].strip().rstrip(";").strip()
    return clauses


def _split_top_level(text: str, separator: str) -> list[str]:
    masked = _mask_strings(text)
    parts: list[str] = []
    depth = 0
    last = 0
    if separator == ",":
        pattern = re.compile(r",")
    else:
        pattern = re.compile(rf"\b{separator}\b", re.IGNORECASE)
    for match in pattern.finditer(masked):
        depth = masked.count("(", 0, match.start()) - masked.count(")", 0, match.start())
        if depth == 0:
            parts.append(text[last:match.start()])
            last = match.end()
    parts.append(text[last:])
    return [p.strip() for p in parts if p.strip()]


def _normalize_term(term: str) -> str:
    masked = _mask_strings(term)
    out = []
    i = 0
    while i < len(term):
        out.append(term[i] if masked[i] == "?" or term[i] in "'\"" else term[i].lower())
        i += 1
    text = " ".join("".join(out).split())
    text = re.sub(r"\s+as\s+\w+$", "", text)
    text = re.sub(r"\s*([(),=<>])\s*", r"\1", text)
    return text


def clause_sets(sql: str) -> dict[str, object]:
    """Per-clause comparable values: sets for SELECT items and WHERE
    conjuncts, normalized text for everything else."""
    clauses = split_clauses(sql)
    comparable: dict[str, object] = {}
    for head, body in clauses.items():
        if head == "select":
            comparable[head] = frozenset(_normalize_term(t)
                                         for t in _split_top_level(body, ","))
        elif head == "where":
            if re.search(r"\bor\b", _mask_strings(body), re.IGNORECASE):
                comparable[head] = _normalize_term(body)
            else:
                comparable[head] = frozenset(_normalize_term(t)
                                             for t in _split_top_level(body, "and"))
        else:
            comparable[head] = _normalize_term(body)
    return comparable


def em_match(pred_sql: str, gold_sql: str) -> bool:
    return clause_sets(pred_sql) == clause_sets(gold_sql)


def compute_em(predictions: dict[str, str], samples: list[NlSample]) -> MetricOutcome:
    """Clause-set exact match; unsplittable predictions score as non-match."""
    _require_gold(samples)
    outcome = MetricOutcome(value=None)
    matches = 0
    total = 0
    for sample in samples:
        pred = predictions.get(sample.sample_id, "")
        total += 1
        try:
            verdict = bool(pred) and em_match(pred, sample.gold_sql)
        except EvalError as exc:
            verdict = False
            outcome.skipped[sample.sample_id] = f"flagged: {exc}"
        outcome.per_sample[sample.sample_id] = verdict
        matches += int(verdict)
    outcome.value = matches / total if total else 0.0
    return outcome


def compute_ves(predictions: dict[str, str], samples: list[NlSample],
                harness: DbHarness, repeats: int = 5) -> MetricOutcome:
    """Result-match-gated relative runtime efficiency, scaled by 100.

    Per sample: sqrt(median gold runtime / median prediction runtime) when
    the result sets match, else 0. Timing uses the harness clock over
    `repeats` executions with medians to tame noise.
    """
    _require_gold(samples)
    outcome = MetricOutcome(value=None)
    ratios: list[float] = []
    for sample in samples:
        pred = predictions.get(sample.sample_id, "")
        match = _result_match(harness, sample, pred)
        if match is None:
            outcome.skipped[sample.sample_id] = "gold SQL failed to execute"
            continue
        if not match:
            outcome.per_sample[sample.sample_id] = 0.0
            ratios.append(0.0)
            continue
        gold_times = []
        pred_times = []
        for _ in range(repeats):
            gold_times.append(harness.execute(sample.db_id, sample.gold_sql,
                                              row_cap=None).elapsed_ms)
            pred_times.append(harness.execute(sample.db_id, pred,
                                              row_cap=None).elapsed_ms)
        gold_med = max(statistics.median(gold_times), 1e-3)
        pred_med = max(statistics.median(pred_times), 1e-3)
        ratio = (gold_med / pred_med) ** 0.5
        outcome.per_sample[sample.sample_id] = ratio
        ratios.append(ratio)
    outcome.value = (sum(ratios) / len(ratios)) * 100.0 if ratios else 0.0
    return outcome


def compute_cp(verdict_labels: dict[str, str], predictions: dict[str, str],
               samples: list[NlSample], harness: DbHarness) -> MetricOutcome:
    """Precision of the checker's bad-sample calls against execution-derived
    ground truth; undefined (None) when nothing was predicted bad."""
    _require_gold(samples)
    outcome = MetricOutcome(value=None)
    predicted_bad: set[str] = set()
    truth_bad: set[str] = set()
    for sample in samples:
        label = verdict_labels.get(sample.sample_id)
        match = _result_match(harness, sample, predictions.get(sample.sample_id, ""))
        if match is None:
            outcome.skipped[sample.sample_id] = "gold SQL failed to execute"
            continue
        if label == NL_DO_NOT_MATCH_SQL:
            predicted_bad.add(sample.sample_id)
        if not match:
            truth_bad.add(sample.sample_id)
    if not predicted_bad:
        outcome.value = None
        return outcome
    outcome.value = len(predicted_bad & truth_bad) / len(predicted_bad)
    outcome.per_sample = {sid: (sid in truth_bad) for sid in sorted(predicted_bad)}
    return outcome


def cp_from_sets(predicted_bad: set[str], truth_bad: set[str]) -> float | None:
    if not predicted_bad:
        return None
    return len(predicted_bad & truth_bad) / len(predicted_bad)


def build_report(predictions: dict[str, str], samples: list[NlSample],
                 harness: DbHarness, verdict_labels: dict[str, str] | None = None,
                 ves_repeats: int = 5, per_round: dict[int, dict] | None = None,
                 verdict_phases: dict[str, str] | None = None) -> MetricReport:
    ex = compute_ex(predictions, samples, harness)
    em = compute_em(predictions, samples)
    ves = compute_ves(predictions, samples, harness, repeats=ves_repeats)
    cp = compute_cp(verdict_labels or {}, predictions, samples, harness) \
        if verdict_labels else MetricOutcome(value=None)
    cp_by_phase: dict[str, float | None] = {}
    if verdict_labels and verdict_phases:
        for phase in sorted(set(verdict_phases.values())):
            subset = {sid: label for sid, label in verdict_labels.items()
                      if verdict_phases.get(sid) == phase}
            in_phase = [s for s in samples if s.sample_id in subset]
            cp_by_phase[phase] = compute_cp(subset, predictions, in_phase, harness).value
    skipped = dict(ex.skipped)
    skipped.update(em.skipped)
    return MetricReport(
        ex=ex.value or 0.0, em=em.value or 0.0, ves=ves.value or 0.0, cp=cp.value,
        scored=len(ex.per_sample), skipped=skipped,
        sample_ids=sorted(s.sample_id for s in samples),
        per_round=per_round or {}, cp_by_phase=cp_by_phase)


def _fmt(value: float | None, scale: float = 100.0) -> str:
    return "n/a" if value is None else f"{value * scale:.1f}"


def _delta(before: float | None, after: float | None, scale: float = 100.0) -> str:
    if before is None or after is None:
        return "n/a"
    diff = (after - before) * scale
    arrow = "=" if abs(diff) < 1e-9 else ("↑" if diff > 0 else "↓")
    return f"{diff:+.1f} {arrow}"


def render_comparison(before: MetricReport, after: MetricReport) -> str:
    """Baseline vs post-rewrite table with deltas, plus round token totals."""
    if before.sample_ids != after.sample_ids:
        missing = set(before.sample_ids).symmetric_difference(after.sample_ids)
        raise ReportError(f"reports cover different sample sets; differing ids: "
                          f"{sorted(missing)[:10]}")
    rows = [
        ("EX", _fmt(before.ex), _fmt(after.ex), _delta(before.ex, after.ex)),
        ("EM (clause-set)", _fmt(before.em), _fmt(after.em), _delta(before.em, after.em)),
        ("VES", _fmt(before.ves, 1.0), _fmt(after.ves, 1.0),
         _delta(before.ves, after.ves, 1.0)),
        ("CP", _fmt(before.cp), _fmt(after.cp), _delta(before.cp, after.cp)),
    ]
    widths = [max(len(r[i]) for r in rows + [("metric", "baseline", "rewritten", "delta")])
              for i in range(4)]
    header = ("metric", "baseline", "rewritten", "delta")
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(header))]
    lines.append("  ".join("-" * widths[i] for i in range(4)))
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    if after.per_round:
        lines.append("")
        lines.append("round tokens:")
        for round_index in sorted(after.per_round):
            info = after.per_round[round_index]
            lines.append(f"  round {round_index}: {info.get('tokens', 0)} tokens, "
                         f"{info.get('bad', '?')} bad samples")
    return "\n".join(lines)
