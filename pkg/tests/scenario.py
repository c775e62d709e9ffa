"""Scenario tooling shared by the pipeline tests, the acceptance suite, and
the toy-benchmark builder script.

A RecordingBackend behaves exactly like the scripted backend but fills
transcript misses from rule tables keyed by the question text, so a full
pipeline run both exercises the real orchestration and emits the transcript
that later replays it byte-for-byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from nlrewrite.gateway import ChatRequest, ChatResponse, count_tokens, prompt_digest

CHECKER_MARK = "determine whether the SQL query is expected to return the correct"
REFLECTOR_MARK = "your task is to analyze the flaws of the questions"
REWRITER_MARK = "your task is to rewrite the NL entered by the user"
INIT_FLAWS_MARK = "Please list 10 possible problems"
INIT_ACTIONS_MARK = "Please think deeply about the corresponding modification"
TRANSLATOR_MARK = "write one SQLite SQL query"


@dataclass
class ReplyRules:
    """Canned agent behavior keyed by the exact question text in the prompt."""

    checker: dict[str, str] = field(default_factory=dict)      # nl -> TRUE | FALSE
    reflections: dict[str, str] = field(default_factory=dict)  # nl -> reflection text
    rewrites: dict[str, str] = field(default_factory=dict)     # nl -> rewritten nl
    translations: dict[str, str] = field(default_factory=dict)  # nl -> sql (builtin_llm)
    init_flaws: str | None = None
    init_actions: str | None = None

    def _match_nl(self, prompt: str, table: dict[str, str], role: str) -> str:
        hits = [nl for nl in table if nl in prompt]
        if not hits:
            raise KeyError(f"no {role} rule matches this prompt: {prompt[-200:]!r}")
        return table[max(hits, key=len)]

    def reply(self, request: ChatRequest) -> str:
        prompt = "\n".join(m.content for m in request.messages)
        if INIT_FLAWS_MARK in prompt:
            if self.init_flaws is None:
                raise KeyError("scenario has no init_flaws reply")
            return self.init_flaws
        if INIT_ACTIONS_MARK in prompt:
            if self.init_actions is None:
                raise KeyError("scenario has no init_actions reply")
            return self.init_actions
        if TRANSLATOR_MARK in prompt:
            return self._match_nl(prompt, self.translations, "translator")
        if CHECKER_MARK in prompt:
            verdict = self._match_nl(prompt, self.checker, "checker")
            return json.dumps({"details": f"scripted verdict {verdict}", "result": verdict})
        if REFLECTOR_MARK in prompt:
            return json.dumps({"reflection": self._match_nl(prompt, self.reflections,
                                                            "reflector")})
        if REWRITER_MARK in prompt:
            rewritten = self._match_nl(prompt, self.rewrites, "rewriter")
            return json.dumps({"details": "scripted rewrite", "result": rewritten})
        raise KeyError(f"prompt matches no known agent template: {prompt[:160]!r}")


class RecordingBackend:
    """Scripted backend that synthesizes missing entries from rules and keeps
    every served entry, so `entries` is a complete replayable transcript."""

    kind = "scripted"

    def __init__(self, rules: ReplyRules):
        self.rules = rules
        self.entries: dict[str, str] = {}

    def complete(self, request: ChatRequest) -> ChatResponse:
        digest = prompt_digest(request.messages)
        if digest not in self.entries:
            self.entries[digest] = self.rules.reply(request)
        content = self.entries[digest]
        prompt_text = "\n".join(m.content for m in request.messages)
        return ChatResponse(content=content,
                            prompt_tokens=count_tokens(prompt_text, request.model_id),
                            completion_tokens=count_tokens(content, request.model_id),
                            backend="scripted")


# --- the shipped 12-sample toy benchmark ---

STATIONS_NL = ("What are the locations and names of all stations with capacity "
               "between 5000 and 10000?")
STATIONS_FIXED_NL = ("What are the locations and names of all stadiums with capacity "
                     "between 5000 and 10000?")
ORDER_NL = ("Show name, country, age for all singers ordered by age from the oldest "
            "to the youngest.")
ORDER_FIXED_NL = ("Show name, country, and age for all singers ordered by age in "
                  "descending order.")
SONGS_NL = "What are the names and release years for all the songs of the youngest singer?"
SONGS_FIXED_NL = ("Show the Song Name and Song release year of the song by the singer "
                  "with the lowest Age")
MODEL_NL = "What model has the most different versions?"
MODEL_FIXED_NL = ("Which car model in the model list table has the highest number of "
                  "distinct versions in the cars data table?")

TOY_QUESTIONS = [
    {"sample_id": "toy:00", "db_id": "concert_singer",
     "question": "How many singers do we have?",
     "query": "SELECT count(*) FROM singer"},
    {"sample_id": "toy:01", "db_id": "concert_singer",
     "question": STATIONS_NL,
     "query": "SELECT location, name FROM stadium WHERE capacity BETWEEN 5000 AND 10000"},
    {"sample_id": "toy:02", "db_id": "concert_singer",
     "question": ORDER_NL,
     "query": "SELECT name, country, age FROM singer ORDER BY age DESC"},
    {"sample_id": "toy:03", "db_id": "concert_singer",
     "question": SONGS_NL,
     "query": "SELECT song_name, song_release_year FROM singer ORDER BY age LIMIT 1"},
    {"sample_id": "toy:04", "db_id": "concert_singer",
     "question": "What is the maximum capacity of all stadiums?",
     "query": "SELECT max(capacity) FROM stadium"},
    {"sample_id": "toy:05", "db_id": "concert_singer",
     "question": "Show the stadium name and the number of concerts in each stadium.",
     "query": ("SELECT t2.name, count(*) FROM concert AS t1 JOIN stadium AS t2 "
               "ON t1.stadium_id = t2.stadium_id GROUP BY t1.stadium_id")},
    {"sample_id": "toy:06", "db_id": "concert_singer",
     "question": "What is the average capacity of stadiums?",
     "query": "SELECT avg(capacity) FROM stadium"},
    {"sample_id": "toy:07", "db_id": "car_retail",
     "question": MODEL_NL,
     "query": "SELECT model FROM car_names GROUP BY model ORDER BY count(*) DESC LIMIT 1"},
    {"sample_id": "toy:08", "db_id": "car_retail",
     "question": "How many cars were made in 1980?",
     "query": "SELECT count(*) FROM cars_data WHERE year = 1980"},
    {"sample_id": "toy:09", "db_id": "car_retail",
     "question": "What is the average mpg of cars with 4 cylinders?",
     "query": "SELECT avg(mpg) FROM cars_data WHERE cylinders = 4"},
    {"sample_id": "toy:10", "db_id": "car_retail",
     "question": "List all makers in the model list.",
     "query": "SELECT DISTINCT maker FROM model_list"},
    {"sample_id": "toy:11", "db_id": "car_retail",
     "question": "How many car models are there?",
     "query": "SELECT count(DISTINCT model) FROM model_list"},
]

# the static translator output: four deliberately bad queries
TOY_PREDICTIONS = {
    record["sample_id"]: record["query"] for record in TOY_QUESTIONS
}
TOY_PREDICTIONS.update({
    # missing table: phase-1 runtime error
    "toy:01": "SELECT location, name FROM stations WHERE capacity BETWEEN 5000 AND 10000",
    # wrong direction: executes but contradicts the question
    "toy:02": "SELECT name, country, age FROM singer ORDER BY age ASC",
    # typo: phase-1 syntax error
    "toy:03": "SELEC song_name, song_release_year FROM singer ORDER BY age LIMIT 1",
    # wrong table: executes but counts nothing useful
    "toy:07": "SELECT model FROM model_list GROUP BY model ORDER BY count(*) DESC LIMIT 1",
})

TOY_BAD_ROUND1 = ["toy:01", "toy:02", "toy:03", "toy:07"]


def toy_rules() -> ReplyRules:
    rules = ReplyRules()
    # round 1: good samples judged TRUE, executable-bad judged FALSE
    for record in TOY_QUESTIONS:
        rules.checker[record["question"]] = "TRUE"
    rules.checker[ORDER_NL] = "FALSE"
    rules.checker[MODEL_NL] = "FALSE"
    # round 2 verdicts on the rewritten questions (same replayed SQL)
    rules.checker[ORDER_FIXED_NL] = "TRUE"
    rules.checker[MODEL_FIXED_NL] = "FALSE"

    rules.reflections[STATIONS_NL] = (
        "The flaw is a Wrong Entity: 'stations' do not exist in the DB, the real entity "
        "should be the stadium table, the recommended operation is Correct Entities: "
        "replace 'stations' with 'stadiums' so every mentioned entity exists in the DB.")
    rules.reflections[ORDER_NL] = (
        "The flaw is a Non-standard Statement: 'from the oldest to the youngest' is a "
        "colloquial ordering phrase, the recommended operation is Normalize Statement: "
        "state the order as descending by age.")
    rules.reflections[SONGS_NL] = (
        "The flaw is Ambiguity: 'names' can mean the Name column or the Song_Name column "
        "of the singer table, the recommended operation is Disambiguation: ask for the "
        "Song Name and the Song release year explicitly.")
    rules.reflections[MODEL_NL] = (
        "The flaw is Missing Info.: the question does not say which table holds the "
        "versions, the recommended operation is Complete Information: mention the "
        "model list and cars data tables.")

    rules.rewrites[STATIONS_NL] = STATIONS_FIXED_NL
    rules.rewrites[ORDER_NL] = ORDER_FIXED_NL
    rules.rewrites[SONGS_NL] = SONGS_FIXED_NL
    rules.rewrites[MODEL_NL] = MODEL_FIXED_NL

    # round 2 reflections/rewrites for the still-bad samples (identity rewrites)
    for nl in (STATIONS_FIXED_NL, SONGS_FIXED_NL, MODEL_FIXED_NL):
        rules.reflections[nl] = (
            "The flaw is that the question already names valid entities while the "
            "generated SQL does not, the recommended operation is to keep the wording "
            "and state the target table once more.")
        rules.rewrites[nl] = nl
    return rules


def record_toy_transcript(toy_dir: Path) -> dict[str, str]:
    """Drive the real pipeline over the toy benchmark with rule-backed replies
    and save the resulting transcript next to the config. Returns the entries."""
    from nlrewrite.config import load_config
    from nlrewrite.dataset import load_benchmark
    from nlrewrite.dbharness import DbHarness
    from nlrewrite.gateway import LlmGateway, ScriptedBackend, TokenLedger
    from nlrewrite.memory import Memory
    from nlrewrite.pipeline import Pipeline
    from nlrewrite.reflector import ExperienceStore, init_experiences
    from nlrewrite.translators import Translator

    app = load_config(toy_dir / "toy.cfg")
    samples = load_benchmark(app.manifest)
    backend = RecordingBackend(toy_rules())
    gateway = LlmGateway(backend, TokenLedger())
    harness = DbHarness(app.manifest.db_root, timeout_s=app.run.execution_timeout_s)
    translator = Translator(app.translator, gateway=gateway)
    store = init_experiences(app.seed_mode, ExperienceStore(weights=app.weights))
    memory = Memory(store=store, ledger=gateway.ledger)
    Pipeline(app.run, harness, gateway, translator, memory).run(samples)
    ScriptedBackend(backend.entries).save(toy_dir / "transcript.json")
    return dict(backend.entries)


def write_toy_inputs(root: Path) -> dict[str, Path]:
    """questions.json, preds.json, and toy.cfg under root (databases separate)."""
    root.mkdir(parents=True, exist_ok=True)
    questions = root / "questions.json"
    questions.write_text(json.dumps(TOY_QUESTIONS, indent=2) + "\n", encoding="utf-8")
    preds = root / "preds.json"
    preds.write_text(json.dumps(TOY_PREDICTIONS, indent=2, sort_keys=True) + "\n",
                     encoding="utf-8")
    cfg = root / "toy.cfg"
    cfg.write_text(
        "[dataset]\n"
        "name = toy\n"
        "questions = questions.json\n"
        "db_root = databases\n"
        "split = custom\n"
        "\n"
        "[gateway]\n"
        "backend = scripted\n"
        "transcript = transcript.json\n"
        "\n"
        "[translator]\n"
        "kind = static_file\n"
        "path = preds.json\n"
        "\n"
        "[agents]\n"
        "model = scripted-model\n"
        "\n"
        "[reflector]\n"
        "seed_mode = hand_crafted\n"
        "flaw_batch = 5\n"
        "action_batch = 5\n"
        "\n"
        "[pipeline]\n"
        "max_rounds = 2\n"
        "workers = 2\n"
        "execution_timeout_s = 5\n"
        "schema_token_budget = 2048\n",
        encoding="utf-8")
    return {"questions": questions, "preds": preds, "cfg": cfg}
