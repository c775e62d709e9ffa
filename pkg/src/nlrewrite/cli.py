"""Operator entry point.

Subcommands: init-exp, run, check, rewrite-once, eval, report, export.
Exit codes: 0 success, 1 configuration/usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import AppConfig, load_config
from .dataset import load_benchmark
from .dbharness import DbHarness
from .errors import ConfigError, NlRewriteError
from .gateway import LiveBackend, LlmGateway, ScriptedBackend, TokenLedger
from .memory import Memory, export_table
from .metrics import MetricReport, build_report, render_comparison
from .pipeline import Pipeline, resume_items
from .reflector import ExperienceStore, init_experiences
from .translators import Translator, TranslatorConfig

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are configuration errors
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _build_gateway(app: AppConfig) -> LlmGateway:
    if app.gateway.backend == "scripted":
        if app.gateway.transcript is None:
            raise ConfigError("scripted gateway needs a transcript path")
        backend = ScriptedBackend.from_file(app.gateway.transcript)
    else:
        backend = LiveBackend(
            base_url=app.gateway.api_base,
            api_key_env=app.gateway.api_key_env,
            max_attempts=app.gateway.max_attempts,
            backoff_s=app.gateway.backoff_s,
        )
    return LlmGateway(backend, TokenLedger(), max_inflight=app.gateway.max_inflight)


def _build_store(app: AppConfig, gateway: LlmGateway | None) -> ExperienceStore:
    if app.paths.experience_snapshot and Path(app.paths.experience_snapshot).exists():
        return ExperienceStore.load_snapshot(
            app.paths.experience_snapshot, weights=app.weights,
            event_log_path=app.paths.experience_log)
    store = ExperienceStore(weights=app.weights, event_log_path=app.paths.experience_log)
    init_experiences(app.seed_mode, store, gateway=gateway,
                     model_id=app.run.reflector_model, prompt_dir=app.run.prompt_dir)
    return store


_ADAPTER_ALIASES = {"static": "static_file", "builtin": "builtin_llm",
                    "process": "subprocess"}


def _parse_adapter_flag(value: str, base: TranslatorConfig | None) -> TranslatorConfig:
    kind, _, param = value.partition(":")
    kind = _ADAPTER_ALIASES.get(kind, kind)
    fields = {"http": "endpoint", "subprocess": "command",
              "static_file": "path", "builtin_llm": "model_id"}
    if kind not in fields:
        raise ConfigError(f"--adapter kind must be one of {sorted(fields)}, got {kind!r}")
    kwargs = {"kind": kind, fields[kind]: param}
    if base is not None:
        kwargs["timeout_s"] = base.timeout_s
        kwargs["schema_token_budget"] = base.schema_token_budget
    return TranslatorConfig(**kwargs)


def _refuse_overwrite(path: Path | None, force: bool) -> None:
    if path is not None and path.exists() and path.stat().st_size > 0 and not force:
        raise ConfigError(f"{path} exists; pass --force to append-over it")


def cmd_init_exp(args) -> int:
    app = load_config(args.config)
    if args.seed_mode:
        app.seed_mode = args.seed_mode
    gateway = _build_gateway(app) if app.seed_mode in ("self_initialized", "both") else None
    store = ExperienceStore(weights=app.weights, event_log_path=app.paths.experience_log)
    init_experiences(app.seed_mode, store, gateway=gateway,
                     model_id=app.run.reflector_model, prompt_dir=app.run.prompt_dir)
    out = Path(args.out) if args.out else app.paths.experience_snapshot
    if out is None:
        raise ConfigError("init-exp needs --out or [paths] experience_snapshot")
    _refuse_overwrite(out, args.force)
    out.parent.mkdir(parents=True, exist_ok=True)
    store.save_snapshot(out)
    print(f"seeded {len(store)} experiences ({app.seed_mode}) -> {out}")
    return EXIT_OK


def _prepare_run(app: AppConfig, args):
    if args.max_rounds is not None:
        app.run.max_rounds = args.max_rounds
    if args.workers is not None:
        app.run.workers = args.workers
    translator_config = app.translator
    if args.adapter:
        translator_config = _parse_adapter_flag(args.adapter, app.translator)
    if translator_config is None:
        raise ConfigError("no translator configured; add a [translator] section or --adapter")
    log_path = Path(args.log) if args.log else app.paths.log
    snapshot_path = Path(args.snapshot) if getattr(args, "snapshot", None) \
        else app.paths.snapshot
    samples = load_benchmark(app.manifest)
    if args.limit:
        samples = samples[:args.limit]
    gateway = _build_gateway(app)
    harness = DbHarness(app.manifest.db_root, timeout_s=app.run.execution_timeout_s)
    translator = Translator(translator_config, gateway=gateway)
    return samples, gateway, harness, translator, log_path, snapshot_path


def cmd_run(args) -> int:
    app = load_config(args.config)
    samples, gateway, harness, translator, log_path, snapshot_path = _prepare_run(app, args)

    if args.resume:
        memory, meta = Memory.restore(args.resume, log_path=log_path, weights=app.weights,
                                      event_log_path=app.paths.experience_log)
        gateway.ledger = memory.ledger  # keep post-resume accounting monotone
        start_round = int(meta.get("rounds_completed", 0)) + 1
        items = resume_items(memory, samples, start_round - 1)
    else:
        _refuse_overwrite(log_path, args.force)
        if log_path is not None and log_path.exists():
            log_path.unlink()
        store = _build_store(app, gateway)
        memory = Memory(store=store, ledger=gateway.ledger, log_path=log_path)
        start_round = 1
        items = None

    pipeline = Pipeline(app.run, harness, gateway, translator, memory)
    result = pipeline.run(samples, snapshot_path=snapshot_path,
                          start_round=start_round, initial_items=items)
    memory.close()
    for round_index in sorted(result.round_tokens):
        print(f"round {round_index}: {result.round_tokens[round_index]} tokens, "
              f"{result.bad_counts.get(round_index, 0)} samples still flawed")
    print(f"completed {result.rounds_completed} round(s) over {len(samples)} samples"
          + (f"; log -> {log_path}" if log_path else ""))
    return EXIT_OK


def cmd_check(args) -> int:
    app = load_config(args.config)
    app.run.skip_reflection = True
    app.run.max_rounds = 1
    samples, gateway, harness, translator, log_path, _ = _prepare_run(app, args)
    _refuse_overwrite(log_path, args.force)
    if log_path is not None and log_path.exists():
        log_path.unlink()
    memory = Memory(store=ExperienceStore(weights=app.weights), ledger=gateway.ledger,
                    log_path=log_path)
    pipeline = Pipeline(app.run, harness, gateway, translator, memory)
    pipeline.run(samples, max_rounds=1)
    memory.close()
    bad = memory.query(label="NL_DO_NOT_MATCH_SQL")
    print(f"checked {len(samples)} samples: {len(bad)} flagged as flawed"
          + (f"; log -> {log_path}" if log_path else ""))
    return EXIT_OK


def cmd_rewrite_once(args) -> int:
    app = load_config(args.config)
    gateway = _build_gateway(app)
    harness = DbHarness(app.manifest.db_root, timeout_s=app.run.execution_timeout_s)
    store = _build_store(app, gateway)
    memory = Memory(store=store, ledger=gateway.ledger)
    pipeline = Pipeline(app.run, harness, gateway, None, memory)

    if args.sample_id:
        samples = {s.sample_id: s for s in load_benchmark(app.manifest)}
        if args.sample_id not in samples:
            raise ConfigError(f"sample {args.sample_id!r} not in dataset")
        sample = samples[args.sample_id]
        nl, db_id = sample.nl, sample.db_id
    else:
        if not (args.nl and args.db):
            raise ConfigError("rewrite-once needs --sample-id or both --nl and --db")
        nl, db_id = args.nl, args.db

    schema = harness.schema(db_id)
    flaw_batch, action_batch = pipeline.reflector.select_batches()
    reflection = pipeline.reflector.reflect(args.sample_id or "adhoc", nl, schema,
                                            flaw_batch, action_batch, round_index=1)
    rewrite = pipeline.rewriter.rewrite(args.sample_id or "adhoc", nl, schema,
                                        reflection, round_index=1)
    print(json.dumps({
        "nl": nl,
        "reflection": reflection.raw_text,
        "triples": [{"keyword": t.keyword, "flaw": t.flaw, "action": t.action}
                    for t in reflection.triples],
        "rewritten_nl": rewrite.rewritten_nl,
    }, indent=2, ensure_ascii=False))
    return EXIT_OK


def _report_from_log(args, app: AppConfig) -> MetricReport:
    memory = Memory(log_path=args.log)
    memory.close()
    if not memory.records:
        raise ConfigError(f"log {args.log} holds no records")
    harness = DbHarness(args.db_root or app.manifest.db_root)
    from .dataset import DatasetManifest
    manifest = DatasetManifest(
        name="eval", question_path=Path(args.gold or app.manifest.question_path),
        db_root=Path(args.db_root or app.manifest.db_root), split=app.manifest.split)
    samples = load_benchmark(manifest)
    logged_ids = {r.sample_id for r in memory.records}
    samples = [s for s in samples if s.sample_id in logged_ids]
    predictions = memory.latest_sql()
    round1 = {r.sample_id: r.verdict_label for r in memory.query(round_index=1)}
    phases = {r.sample_id: r.verdict_phase for r in memory.query(round_index=1)}
    per_round = {
        ri: {"tokens": memory.round_tokens(ri),
             "bad": len(memory.query(round_index=ri, label="NL_DO_NOT_MATCH_SQL"))}
        for ri in memory.rounds()
    }
    return build_report(predictions, samples, harness, verdict_labels=round1,
                        ves_repeats=app.ves_repeats, per_round=per_round,
                        verdict_phases=phases)


def cmd_eval(args) -> int:
    app = load_config(args.config) if args.config else None
    if app is None:
        if not (args.gold and args.db_root):
            raise ConfigError("eval needs --config or both --gold and --db-root")
        from .dataset import DatasetManifest
        app = AppConfig(manifest=DatasetManifest(
            name="eval", question_path=Path(args.gold), db_root=Path(args.db_root)))
    report = _report_from_log(args, app)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.out:
        _refuse_overwrite(Path(args.out), args.force)
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    cp = "n/a" if report.cp is None else f"{report.cp * 100:.1f}"
    print(f"EX {report.ex * 100:.1f}  EM(clause-set) {report.em * 100:.1f}  "
          f"VES {report.ves:.1f}  CP {cp}  (scored {report.scored}, "
          f"skipped {len(report.skipped)})")
    if args.out:
        print(f"report -> {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    before = MetricReport.from_dict(json.loads(Path(args.before).read_text(encoding="utf-8")))
    after = MetricReport.from_dict(json.loads(Path(args.after).read_text(encoding="utf-8")))
    print(render_comparison(before, after))
    return EXIT_OK


def cmd_export(args) -> int:
    memory = Memory(log_path=args.log)
    memory.close()
    out = Path(args.out)
    _refuse_overwrite(out, args.force)
    count = export_table(memory, out, fmt="csv" if out.suffix == ".csv" else "tsv")
    print(f"exported {count} rows -> {out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="nlrewrite",
                     description="detect, diagnose, and rewrite flawed questions "
                                 "in front of a black-box NL2SQL translator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-exp", help="seed the experience store")
    p.add_argument("--config", required=True)
    p.add_argument("--seed-mode", choices=["hand_crafted", "self_initialized", "both"])
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_init_exp)

    for name, func, with_rounds in (("run", cmd_run, True), ("check", cmd_check, False)):
        p = sub.add_parser(name, help=f"{name} over the configured benchmark")
        p.add_argument("--config", required=True)
        p.add_argument("--adapter", help="override translator, e.g. static_file:preds.json")
        p.add_argument("--log", help="memory log output path")
        p.add_argument("--workers", type=int)
        p.add_argument("--limit", type=int, help="only the first N samples")
        p.add_argument("--force", action="store_true")
        p.add_argument("--max-rounds", type=int, dest="max_rounds")
        if with_rounds:
            p.add_argument("--snapshot", help="snapshot path written at each round boundary")
            p.add_argument("--resume", help="resume from a snapshot file")
        p.set_defaults(func=func)

    p = sub.add_parser("rewrite-once", help="reflect+rewrite one sample, for debugging")
    p.add_argument("--config", required=True)
    p.add_argument("--sample-id")
    p.add_argument("--nl")
    p.add_argument("--db")
    p.set_defaults(func=cmd_rewrite_once)

    p = sub.add_parser("eval", help="score a memory log against gold SQL")
    p.add_argument("--log", required=True)
    p.add_argument("--gold", help="question file with gold SQL")
    p.add_argument("--db-root", dest="db_root")
    p.add_argument("--config")
    p.add_argument("--out", help="write the machine-readable report here")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="before/after comparison table")
    p.add_argument("--before", required=True)
    p.add_argument("--after", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("export", help="flatten a memory log to a table")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NlRewriteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
