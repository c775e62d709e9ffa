import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from nlrewrite.errors import (
    ConfigError,
    EmptySqlError,
    MissingPredictionError,
    TranslatorHttpError,
    TranslatorProcessError,
)
from nlrewrite.gateway import LlmGateway, ScriptedBackend, TokenLedger
from nlrewrite.translators import (
    BUILTIN_PROMPT,
    TranslateRequest,
    Translator,
    TranslatorConfig,
    load_static_predictions,
)
from nlrewrite.dbharness import render_schema_prompt


@pytest.fixture()
def schema(harness):
    return harness.extract_schema("concert_singer")


def request_for(schema, nl="How many singers do we have?") -> TranslateRequest:
    return TranslateRequest(sample_id="dev:0", nl=nl, db_id="concert_singer", schema=schema)


def test_config_requires_exactly_its_parameter():
    with pytest.raises(ConfigError):
        TranslatorConfig(kind="http")  # endpoint missing
    with pytest.raises(ConfigError):
        TranslatorConfig(kind="teleport", endpoint="x")


# --- static file ---

def test_static_json_map_replay(tmp_path, schema):
    path = tmp_path / "preds.json"
    path.write_text(json.dumps({"dev:0": "SELECT count(*) FROM singer"}), encoding="utf-8")
    translator = Translator(TranslatorConfig(kind="static_file", path=str(path)))
    result = translator.translate(request_for(schema))
    assert result.sql == "SELECT count(*) FROM singer"


def test_static_tsv_replay(tmp_path, schema):
    path = tmp_path / "preds.tsv"
    path.write_text("dev:0\tSELECT 1\ndev:1\tSELECT 2\n", encoding="utf-8")
    assert load_static_predictions(path) == {"dev:0": "SELECT 1", "dev:1": "SELECT 2"}


def test_static_missing_sample_errors(tmp_path, schema):
    path = tmp_path / "preds.json"
    path.write_text(json.dumps({"other": "SELECT 1"}), encoding="utf-8")
    translator = Translator(TranslatorConfig(kind="static_file", path=str(path)))
    with pytest.raises(MissingPredictionError):
        translator.translate(request_for(schema))


def test_static_empty_sql_errors(tmp_path, schema):
    path = tmp_path / "preds.json"
    path.write_text(json.dumps({"dev:0": "   "}), encoding="utf-8")
    translator = Translator(TranslatorConfig(kind="static_file", path=str(path)))
    with pytest.raises(EmptySqlError):
        translator.translate(request_for(schema))


# --- subprocess ---

def test_subprocess_line_protocol(tmp_path, schema):
    script = tmp_path / "translate.py"
    script.write_text(
        "import json, sys\n"
        "req = json.loads(sys.stdin.readline())\n"
        "print('SELECT count(*) FROM singer -- ' + req['sample_id'])\n",
        encoding="utf-8")
    config = TranslatorConfig(kind="subprocess", command=f"python3 {script}")
    result = Translator(config).translate(request_for(schema))
    assert result.sql == "SELECT count(*) FROM singer -- dev:0"


def test_subprocess_nonzero_exit_carries_stderr(tmp_path, schema):
    script = tmp_path / "fail.py"
    script.write_text("import sys; sys.stderr.write('boom'); sys.exit(1)\n", encoding="utf-8")
    config = TranslatorConfig(kind="subprocess", command=f"python3 {script}")
    with pytest.raises(TranslatorProcessError) as err:
        Translator(config).translate(request_for(schema))
    assert "boom" in err.value.stderr


# --- http ---

class _SqlHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        assert {"sample_id", "nl", "db_id", "schema_text"} <= set(body)
        data = json.dumps({"sql": f"SELECT '{body['sample_id']}'"}).encode()
        self.send_response(200)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture()
def sql_server():
    server = HTTPServer(("127.0.0.1", 0), _SqlHandler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    yield f"http://127.0.0.1:{server.server_address[1]}/translate"
    server.shutdown()


def test_http_adapter_posts_contract_fields(sql_server, schema):
    translator = Translator(TranslatorConfig(kind="http", endpoint=sql_server))
    result = translator.translate(request_for(schema))
    assert result.sql == "SELECT 'dev:0'"


def test_http_adapter_unreachable_errors(schema):
    translator = Translator(TranslatorConfig(kind="http", endpoint="http://127.0.0.1:9/x",
                                             timeout_s=0.2))
    with pytest.raises(TranslatorHttpError):
        translator.translate(request_for(schema))


# --- builtin llm ---

def test_builtin_llm_scripted(schema):
    backend = ScriptedBackend()
    gateway = LlmGateway(backend, TokenLedger())
    schema_text = render_schema_prompt(schema, 2048)
    prompt = BUILTIN_PROMPT.format(schema=schema_text, nl="How many singers do we have?")
    backend.add(prompt, "```sql\nSELECT count(*) FROM singer;\n```")
    config = TranslatorConfig(kind="builtin_llm", model_id="m")
    result = Translator(config, gateway=gateway).translate(request_for(schema), round_index=1)
    assert result.sql == "SELECT count(*) FROM singer"
    assert result.translator_tokens > 0
    assert gateway.ledger.agent_total("translator") == result.translator_tokens


def test_builtin_llm_requires_gateway():
    with pytest.raises(ConfigError):
        Translator(TranslatorConfig(kind="builtin_llm", model_id="m"))
