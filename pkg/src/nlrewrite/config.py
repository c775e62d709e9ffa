"""Run configuration: a flat INI file with sections, all defaults overridable.

Relative paths inside the file resolve against the file's own directory so a
config can ship next to its fixtures.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import DatasetManifest
from .errors import ConfigError
from .pipeline import RunConfig
from .reflector import WeightConfig
from .translators import TranslatorConfig


@dataclass
class GatewaySettings:
    backend: str = "scripted"  # scripted | live
    transcript: Path | None = None
    api_base: str = ""
    api_key_env: str = "LLM_API_KEY"
    max_attempts: int = 3
    backoff_s: float = 0.5
    max_inflight: int = 8


@dataclass
class PathSettings:
    log: Path | None = None
    snapshot: Path | None = None
    experience_log: Path | None = None
    experience_snapshot: Path | None = None


@dataclass
class AppConfig:
    manifest: DatasetManifest
    run: RunConfig = field(default_factory=RunConfig)
    weights: WeightConfig = field(default_factory=WeightConfig)
    gateway: GatewaySettings = field(default_factory=GatewaySettings)
    translator: TranslatorConfig | None = None
    paths: PathSettings = field(default_factory=PathSettings)
    seed_mode: str = "hand_crafted"
    ves_repeats: int = 5


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else (base / path)


def load_config(path: Path | str) -> AppConfig:
    cfg_path = Path(path)
    if not cfg_path.exists():
        raise ConfigError(f"config file not found: {cfg_path}")
    base = cfg_path.parent.resolve()
    parser = configparser.ConfigParser()
    try:
        parser.read(cfg_path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {cfg_path}: {exc}") from exc

    if "dataset" not in parser:
        raise ConfigError("config needs a [dataset] section with questions and db_root")
    ds = parser["dataset"]
    try:
        manifest = DatasetManifest(
            name=ds.get("name", cfg_path.stem),
            question_path=_resolve(base, ds["questions"]),
            db_root=_resolve(base, ds["db_root"]),
            split=ds.get("split", "custom"),
        )
    except KeyError as exc:
        raise ConfigError(f"[dataset] missing key {exc}") from exc

    gw = parser["gateway"] if "gateway" in parser else {}
    gateway = GatewaySettings(
        backend=gw.get("backend", "scripted"),
        transcript=_resolve(base, gw["transcript"]) if "transcript" in gw else None,
        api_base=gw.get("api_base", ""),
        api_key_env=gw.get("api_key_env", "LLM_API_KEY"),
        max_attempts=int(gw.get("max_attempts", 3)),
        backoff_s=float(gw.get("backoff_s", 0.5)),
        max_inflight=int(gw.get("max_inflight", 8)),
    )
    if gateway.backend not in ("scripted", "live"):
        raise ConfigError(f"gateway backend must be scripted or live, got {gateway.backend!r}")

    translator = None
    if "translator" in parser:
        tr = parser["translator"]
        kind = tr.get("kind", "")
        translator = TranslatorConfig(
            kind=kind,
            endpoint=tr.get("endpoint", ""),
            command=tr.get("command", ""),
            path=str(_resolve(base, tr["path"])) if "path" in tr else "",
            model_id=tr.get("model_id", ""),
            timeout_s=float(tr.get("timeout_s", 60.0)),
            reentrant_command=tr.get("reentrant_command", "false").lower() == "true",
            schema_token_budget=int(tr.get("schema_token_budget", 2048)),
        )

    rf = parser["reflector"] if "reflector" in parser else {}
    weights = WeightConfig(
        eta=float(rf.get("eta", 0.1)),
        w_init=float(rf.get("w_init", 1.0)),
        w_min=float(rf.get("w_min", 0.1)),
        w_max=float(rf.get("w_max", 2.0)),
        dedup_threshold=float(rf.get("dedup_threshold", 0.8)),
    )
    seed_mode = rf.get("seed_mode", "hand_crafted") if rf else "hand_crafted"

    pl = parser["pipeline"] if "pipeline" in parser else {}
    agents = parser["agents"] if "agents" in parser else {}
    run = RunConfig(
        checker_model=agents.get("checker_model", agents.get("model", "gpt-4o")),
        reflector_model=agents.get("reflector_model", agents.get("model", "gpt-4o")),
        rewriter_model=agents.get("rewriter_model", agents.get("model", "gpt-4o")),
        max_rounds=int(pl.get("max_rounds", 3)),
        workers=int(pl.get("workers", 4)),
        flaw_batch_size=int(rf.get("flaw_batch", 5)) if rf else 5,
        action_batch_size=int(rf.get("action_batch", 5)) if rf else 5,
        include_evidence=pl.get("include_evidence", "false").lower() == "true",
        immediate_weight_updates=pl.get("immediate_weight_updates", "false").lower() == "true",
        execution_timeout_s=float(pl.get("execution_timeout_s", 30.0)),
        schema_token_budget=int(pl.get("schema_token_budget", 2048)),
        checker_extra_rules=pl.get("checker_extra_rules", ""),
        prompt_dir=str(_resolve(base, pl["prompt_dir"])) if "prompt_dir" in pl else None,
    )

    pt = parser["paths"] if "paths" in parser else {}
    paths = PathSettings(
        log=_resolve(base, pt["log"]) if "log" in pt else None,
        snapshot=_resolve(base, pt["snapshot"]) if "snapshot" in pt else None,
        experience_log=_resolve(base, pt["experience_log"]) if "experience_log" in pt else None,
        experience_snapshot=(_resolve(base, pt["experience_snapshot"])
                             if "experience_snapshot" in pt else None),
    )

    ev = parser["eval"] if "eval" in parser else {}
    return AppConfig(
        manifest=manifest, run=run, weights=weights, gateway=gateway,
        translator=translator, paths=paths, seed_mode=seed_mode,
        ves_repeats=int(ev.get("ves_repeats", 5)),
    )
