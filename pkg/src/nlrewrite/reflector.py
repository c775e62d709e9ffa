"""Flaw analysis with a weighted experience memory.

Experiences are short flaw or rewrite-action descriptions carrying a weight.
The highest-weight batch is loaded into the reflection prompt; the checker's
binary verdict on the following round feeds back into those weights, so the
store drifts toward the flaw distribution actually seen in the workload.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from . import prompts
from .dbharness import SchemaSnapshot, render_schema_prompt
from .errors import ExperienceInitError, PayloadError, ReflectionError, UnknownExperienceError
from .gateway import LlmGateway, user_request

KIND_FLAW = "flaw"
KIND_ACTION = "action"

ORIGIN_HAND_CRAFTED = "hand_crafted"
ORIGIN_SELF_INITIALIZED = "self_initialized"
ORIGIN_LEARNING_UPDATED = "learning_updated"

REWARD_MATCH = "match"
REWARD_NO_MATCH = "no_match"

SEED_MODES = ("hand_crafted", "self_initialized", "both")


@dataclass(frozen=True)
class WeightConfig:
    eta: float = 0.1
    w_init: float = 1.0
    w_min: float = 0.1
    w_max: float = 2.0
    dedup_threshold: float = 0.8


@dataclass
class Experience:
    exp_id: str
    kind: str
    title: str
    description: str
    weight: float
    origin: str
    use_count: int = 0
    success_count: int = 0

    def success_ratio(self) -> float:
        return self.success_count / self.use_count if self.use_count else 0.0

    def to_dict(self) -> dict:
        return {
            "exp_id": self.exp_id, "kind": self.kind, "title": self.title,
            "description": self.description, "weight": self.weight,
            "origin": self.origin, "use_count": self.use_count,
            "success_count": self.success_count,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Experience":
        return cls(**data)


@dataclass(frozen=True)
class ReflectionTriple:
    keyword: str
    flaw: str
    action: str
    used_experience_ids: tuple[str, ...]


@dataclass(frozen=True)
class Reflection:
    sample_id: str
    triples: tuple[ReflectionTriple, ...]
    raw_text: str
    used_experience_ids: tuple[str, ...]


def normalize_title(title: str) -> str:
    return " ".join(title.split()).casefold().rstrip(".")


def _slug(kind: str, title: str) -> str:
    base = re.sub(r"[^a-z0-9]+", "-", normalize_title(title)).strip("-") or "untitled"
    return f"{kind}/{base}"


def _token_set(text: str) -> frozenset[str]:
    return frozenset(re.findall(r"[a-z0-9]+", text.casefold()))


def jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


class ExperienceStore:
    """Insertion-ordered experience set with an optional append-only event log.

    Mutations are serialized on one lock; reads hand out the live Experience
    objects (callers treat them as read-only outside the store's methods).
    """

    def __init__(self, weights: WeightConfig | None = None,
                 event_log_path: Path | str | None = None):
        self.weights = weights or WeightConfig()
        self._items: dict[str, Experience] = {}
        self._lock = threading.Lock()
        self._event_log_path = Path(event_log_path) if event_log_path else None

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, exp_id: str) -> bool:
        return exp_id in self._items

    def get(self, exp_id: str) -> Experience:
        return self._items[exp_id]

    def all(self) -> list[Experience]:
        return list(self._items.values())

    def by_kind(self, kind: str) -> list[Experience]:
        return [e for e in self._items.values() if e.kind == kind]

    def _log_event(self, event: dict) -> None:
        if self._event_log_path is None:
            return
        with self._event_log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True, ensure_ascii=False) + "\n")

    def add(self, kind: str, title: str, description: str, origin: str,
            weight: float | None = None) -> Experience:
        with self._lock:
            exp_id = _slug(kind, title)
            suffix = 2
            while exp_id in self._items:
                exp_id = f"{_slug(kind, title)}-{suffix}"
                suffix += 1
            exp = Experience(
                exp_id=exp_id, kind=kind, title=title, description=description,
                weight=self.weights.w_init if weight is None else weight, origin=origin)
            self._items[exp_id] = exp
        self._log_event({"event": "add", **exp.to_dict()})
        return exp

    def select(self, kind: str, k: int) -> list[Experience]:
        """Top-k by weight; ties broken by success ratio then exp_id, so the
        batch is a pure function of the store."""
        if k <= 0:
            return []
        ranked = sorted(self.by_kind(kind),
                        key=lambda e: (-e.weight, -e.success_ratio(), e.exp_id))
        return ranked[:k]

    def update_weights(self, used_experience_ids, reward: str) -> None:
        ids = list(used_experience_ids)
        with self._lock:
            unknown = [i for i in ids if i not in self._items]
            if unknown:
                raise UnknownExperienceError(f"weight update references unknown ids {unknown}")
            if reward not in (REWARD_MATCH, REWARD_NO_MATCH):
                raise ValueError(f"reward must be match or no_match, got {reward!r}")
            for exp_id in ids:
                exp = self._items[exp_id]
                exp.use_count += 1
                if reward == REWARD_MATCH:
                    exp.weight = min(self.weights.w_max, exp.weight + self.weights.eta)
                    exp.success_count += 1
                else:
                    exp.weight = max(self.weights.w_min, exp.weight - self.weights.eta)
                exp.origin = ORIGIN_LEARNING_UPDATED
        self._log_event({"event": "reward", "ids": sorted(ids), "reward": reward})

    def dedup(self, threshold: float | None = None) -> int:
        """Merge same-kind experiences with equal normalized titles or highly
        overlapping descriptions; keeps the earliest id and the max weight."""
        limit = self.weights.dedup_threshold if threshold is None else threshold
        merged = 0
        with self._lock:
            kept: list[Experience] = []
            for exp in self._items.values():
                target = None
                for rep in kept:
                    if rep.kind != exp.kind:
                        continue
                    if normalize_title(rep.title) == normalize_title(exp.title) or \
                            jaccard(_token_set(rep.description), _token_set(exp.description)) >= limit:
                        target = rep
                        break
                if target is None:
                    kept.append(exp)
                else:
                    target.weight = max(target.weight, exp.weight)
                    target.use_count += exp.use_count
                    target.success_count += exp.success_count
                    merged += 1
                    self._log_event({"event": "merge", "into": target.exp_id,
                                     "removed": exp.exp_id})
            self._items = {e.exp_id: e for e in kept}
        return merged

    def to_dict(self) -> dict:
        return {"experiences": [e.to_dict() for e in self._items.values()]}

    @classmethod
    def from_dict(cls, data: dict, weights: WeightConfig | None = None,
                  event_log_path: Path | str | None = None) -> "ExperienceStore":
        store = cls(weights=weights, event_log_path=event_log_path)
        for entry in data["experiences"]:
            exp = Experience.from_dict(entry)
            store._items[exp.exp_id] = exp
        return store

    def save_snapshot(self, path: Path | str) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8")

    @classmethod
    def load_snapshot(cls, path: Path | str, weights: WeightConfig | None = None,
                      event_log_path: Path | str | None = None) -> "ExperienceStore":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_dict(data, weights=weights, event_log_path=event_log_path)

    @classmethod
    def replay_event_log(cls, path: Path | str,
                         weights: WeightConfig | None = None) -> "ExperienceStore":
        store = cls(weights=weights)
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            event = json.loads(line)
            kind = event.pop("event")
            if kind == "add":
                exp = Experience.from_dict(event)
                store._items[exp.exp_id] = exp
            elif kind == "reward":
                store.update_weights(event["ids"], event["reward"])
            elif kind == "merge":
                target, removed = store._items[event["into"]], store._items[event["removed"]]
                target.weight = max(target.weight, removed.weight)
                target.use_count += removed.use_count
                target.success_count += removed.success_count
                del store._items[event["removed"]]
        return store


# module-level aliases matching the operation surface

def select_experiences(store: ExperienceStore, kind: str, k: int) -> list[Experience]:
    return store.select(kind, k)


def update_weights(store: ExperienceStore, used_experience_ids, reward: str) -> None:
    store.update_weights(used_experience_ids, reward)


def dedup_experiences(store: ExperienceStore) -> ExperienceStore:
    store.dedup()
    return store


def load_seed_taxonomy() -> dict:
    text = resources.files("nlrewrite").joinpath("data/seed_experiences.json").read_text("utf-8")
    return json.loads(text)


def _experience_map_from_payload(payload: dict) -> dict[str, str]:
    entries = {str(k).strip(): str(v).strip() for k, v in payload.items()
               if str(k).strip() and str(v).strip()}
    if not entries:
        raise ExperienceInitError("model returned no usable title/description pairs")
    return entries


def render_experience_lines(batch: list[Experience]) -> str:
    return "\n".join(f"- {e.title}: {e.description}" for e in batch)


def init_experiences(seed_mode: str, store: ExperienceStore,
                     gateway: LlmGateway | None = None, model_id: str = "",
                     prompt_dir=None) -> ExperienceStore:
    """Populate the store. hand_crafted loads the shipped taxonomy;
    self_initialized asks the model for flaws first, then for actions over
    that flaw space; duplicates are merged afterwards."""
    if seed_mode not in SEED_MODES:
        raise ExperienceInitError(f"seed_mode must be one of {SEED_MODES}, got {seed_mode!r}")
    if seed_mode in ("hand_crafted", "both"):
        taxonomy = load_seed_taxonomy()
        for title, description in taxonomy["flaws"].items():
            store.add(KIND_FLAW, title, description, ORIGIN_HAND_CRAFTED)
        for title, description in taxonomy["actions"].items():
            store.add(KIND_ACTION, title, description, ORIGIN_HAND_CRAFTED)
    if seed_mode in ("self_initialized", "both"):
        if gateway is None:
            raise ExperienceInitError("self_initialized seeding requires a configured gateway")
        flaw_prompt = prompts.load_template(prompts.REFLECTOR_INIT_FLAWS, prompt_dir)
        try:
            payload, _ = gateway.complete_json(
                user_request(model_id, flaw_prompt), required_keys=[],
                agent="reflector", round_index=0)
        except PayloadError as exc:
            raise ExperienceInitError(f"flaw initialization unparseable: {exc}") from exc
        flaw_map = _experience_map_from_payload(payload)
        flaw_batch = []
        for title, description in flaw_map.items():
            flaw_batch.append(store.add(KIND_FLAW, title, description, ORIGIN_SELF_INITIALIZED))
        action_prompt = prompts.fill(
            prompts.load_template(prompts.REFLECTOR_INIT_ACTIONS, prompt_dir),
            {"ERROR_SPACE": render_experience_lines(flaw_batch)})
        try:
            payload, _ = gateway.complete_json(
                user_request(model_id, action_prompt), required_keys=[],
                agent="reflector", round_index=0)
        except PayloadError as exc:
            raise ExperienceInitError(f"action initialization unparseable: {exc}") from exc
        for title, description in _experience_map_from_payload(payload).items():
            store.add(KIND_ACTION, title, description, ORIGIN_SELF_INITIALIZED)
    store.dedup()
    return store


# --- reflection ---

_FLAW_SPLIT = re.compile(r"the\s+flaw\s+is", re.IGNORECASE)
_ACTION_SPLIT = re.compile(r"the\s+recommended\s+(?:operation|action)\s+is", re.IGNORECASE)
_QUOTED = re.compile(r"[\"'`]([^\"'`]{2,60})[\"'`]")


def _find_keyword(flaw_text: str, nl: str) -> str:
    """Best-effort span of the question that the flaw clause is about."""
    nl_fold = nl.casefold()
    quoted = [m.group(1).strip() for m in _QUOTED.finditer(flaw_text)]
    quoted = [q for q in quoted if q and q.casefold() in nl_fold]
    if quoted:
        best = max(quoted, key=len)
        pos = nl_fold.index(best.casefold())
        return nl[pos:pos + len(best)]
    candidates = []
    for word in re.findall(r"\w{3,}", flaw_text):
        match = re.search(rf"\b{re.escape(word)}\b", nl, re.IGNORECASE)
        if match:
            candidates.append((len(word), -flaw_text.index(word), match))
    if candidates:
        match = max(candidates, key=lambda c: (c[0], c[1]))[2]
        return match.group(0)
    return ""


def _mentioned_ids(text: str, batch: list[Experience]) -> list[str]:
    folded = " ".join(text.split()).casefold()
    return [e.exp_id for e in batch if normalize_title(e.title) in folded]


def parse_reflection_triples(raw_text: str, nl: str, flaw_batch: list[Experience],
                             action_batch: list[Experience]) -> list[ReflectionTriple]:
    """Extract (Keyword, Flaw, Action) from the scaffolded reflection text."""
    segments = _FLAW_SPLIT.split(raw_text)[1:]
    triples: list[ReflectionTriple] = []
    whole_batch = tuple(e.exp_id for e in flaw_batch + action_batch)
    for segment in segments:
        parts = _ACTION_SPLIT.split(segment, maxsplit=1)
        if len(parts) != 2:
            continue
        flaw_text = parts[0].strip(" .,;:\n")
        action_text = parts[1].strip(" .,;:\n")
        if not flaw_text or not action_text:
            continue
        used = _mentioned_ids(flaw_text, flaw_batch) + _mentioned_ids(action_text, action_batch)
        triples.append(ReflectionTriple(
            keyword=_find_keyword(flaw_text, nl),
            flaw=flaw_text,
            action=action_text,
            used_experience_ids=tuple(used) if used else whole_batch,
        ))
    return triples


class Reflector:
    def __init__(self, store: ExperienceStore, gateway: LlmGateway, model_id: str,
                 flaw_batch_size: int = 5, action_batch_size: int = 5,
                 schema_token_budget: int = 2048, prompt_dir=None):
        self.store = store
        self.gateway = gateway
        self.model_id = model_id
        self.flaw_batch_size = flaw_batch_size
        self.action_batch_size = action_batch_size
        self.schema_token_budget = schema_token_budget
        self.template = prompts.load_template(prompts.REFLECTOR, prompt_dir)

    def select_batches(self) -> tuple[list[Experience], list[Experience]]:
        return (self.store.select(KIND_FLAW, self.flaw_batch_size),
                self.store.select(KIND_ACTION, self.action_batch_size))

    def render_prompt(self, nl: str, schema: SchemaSnapshot,
                      flaw_batch: list[Experience], action_batch: list[Experience]) -> str:
        return prompts.fill(self.template, {
            "FLAW_SLOT": render_experience_lines(flaw_batch),
            "ACTION_SLOT": render_experience_lines(action_batch),
            "SCHEMA_SLOT": render_schema_prompt(schema, self.schema_token_budget, self.model_id),
            "NL_SLOT": nl,
        })

    def reflect(self, sample_id: str, nl: str, schema: SchemaSnapshot,
                flaw_batch: list[Experience], action_batch: list[Experience],
                round_index: int = 0) -> Reflection:
        if not flaw_batch and not action_batch:
            raise ReflectionError("reflection needs at least one experience in a batch")
        prompt = self.render_prompt(nl, schema, flaw_batch, action_batch)
        try:
            payload, _ = self.gateway.complete_json(
                user_request(self.model_id, prompt), required_keys=["reflection"],
                agent="reflector", round_index=round_index)
        except PayloadError as exc:
            raise ReflectionError(f"reflection unparseable after retry: {exc}") from exc
        raw_text = str(payload["reflection"])
        triples = parse_reflection_triples(raw_text, nl, flaw_batch, action_batch)
        if triples:
            used: list[str] = []
            for triple in triples:
                for exp_id in triple.used_experience_ids:
                    if exp_id not in used:
                        used.append(exp_id)
        else:
            used = [e.exp_id for e in flaw_batch + action_batch]
        return Reflection(sample_id=sample_id, triples=tuple(triples),
                          raw_text=raw_text, used_experience_ids=tuple(used))
