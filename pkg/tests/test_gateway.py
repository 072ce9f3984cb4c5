from __future__ import annotations

import json
import time

import httpx
import pytest
from hypothesis import given, settings

from v2xcorridor import gateway
from v2xcorridor.gateway import (
    BackendRefused,
    BackendTimeout,
    LlmRequest,
    NoSlotsFound,
    RecordingBackend,
    RemoteBackend,
    StubBackend,
    TranscriptBackend,
    TranscriptExhausted,
    complete,
    extract_slots,
)

import golden_fixtures as pf
from strategies import answers

DESCRIPTION_SLOTS = {
    "LANE_ID": "11",
    "INTERSECTION_NAME": "Park St @ Regent",
    "SPEED": "0.91",
    "MOVEMENT": "SB-T",
    "PHASE_STATE": "stop-And-Remain",
    "TIMING": "18.77",
}


def request(kind="description", answer=pf.DESCRIPTION_GOLDEN, **kw):
    return LlmRequest("role", "context", "prompt", kind, reference_answer=answer, **kw)


def test_request_invariants():
    with pytest.raises(ValueError):
        request(timeout_s=0)
    with pytest.raises(ValueError):
        request(timeout_s=301)
    with pytest.raises(ValueError):
        request(temperature=2.5)
    with pytest.raises(ValueError):
        request(kind="poetry")
    assert request().temperature == 0.0


def test_request_hash_ignores_reference():
    assert request(answer="a").request_hash() == request(answer="b").request_hash()
    assert request().request_hash() != request(kind="prediction").request_hash()


def test_stub_echoes_reference():
    r = complete(request(), StubBackend())
    assert r.raw_text == pf.DESCRIPTION_GOLDEN
    assert r.backend_id == "stub"
    assert {k: r.extracted[k] for k in DESCRIPTION_SLOTS} == DESCRIPTION_SLOTS
    assert complete(request(), StubBackend()).raw_text == r.raw_text


def test_extract_published_description():
    slots = extract_slots(pf.DESCRIPTION_GOLDEN, "description")
    for k, v in DESCRIPTION_SLOTS.items():
        assert slots[k] == v
    assert slots["TIMESTAMP"] == "2023-07-04 10:48:50.95"


def test_extract_published_prediction_line():
    slots = extract_slots(pf.PREDICTION_LINE_GOLDEN, "prediction")
    assert slots == {
        "LANE_ID#1": "11",
        "SIGNAL_PHASE#1": "permissive-Movement-Allowed",
        "REMAINING_TIME#1": "34.38",
        "NEXT_SIGNAL_PHASE#1": "stop-And-Remain",
        "NEXT_TIMESTAMP#1": "10:49:23.82",
    }


def test_extract_published_advisory():
    slots = extract_slots(pf.ADVISORY_GOLDEN, "advisory")
    assert slots["ARRIVAL_TIMESTAMP#5"] == "2023-07-04 10:50:51"
    assert slots["NEXT_LANE_ID#5"] == "8"
    assert slots["NEXT_INTERSECTION_NAME#5"] == "Park St @ FishHatchery"
    assert slots["SIGNAL_PHASE"] == "green"
    assert [slots[f"ESTIMATED_TRAVEL_TIME#{k}"] for k in range(1, 6)] == [
        "40 seconds", "50 seconds", "10 seconds", "25 seconds", "35 seconds"]


def test_extract_published_layout():
    slots = extract_slots(pf.LAYOUT_GOLDEN, "explanation")
    assert slots["NUMBER"] == "six"
    assert slots["CORRIDOR_LENGTH"] == "1.08"
    assert [slots[f"DISTANCE#{k}"] for k in range(1, 6)] == ["0.24", "0.09", "0.21", "0.19", "0.35"]


def test_extract_off_template():
    with pytest.raises(NoSlotsFound):
        extract_slots("Lorem ipsum dolor sit amet, consectetur adipiscing elit.", "description")
    r = complete(request(answer="Lorem ipsum"), StubBackend())
    assert r.extracted == {}


def test_extract_partial_answer_omits_missing_slots():
    slots = extract_slots("The vehicle is currently in lane 4 at intersection Main, traveling fast.", "description")
    assert slots == {"LANE_ID": "4", "INTERSECTION_NAME": "Main"}
    assert all(v for v in slots.values())


def _check_recovery(kind, text, slots):
    got = extract_slots(text, kind)
    assert got == {k: v for k, v in slots.items() if v}
    assert set(got) <= set(slots)


@settings(max_examples=150, deadline=None)
@given(answers["description"])
def test_recovery_description(case):
    _check_recovery("description", *case)


@settings(max_examples=150, deadline=None)
@given(answers["explanation"])
def test_recovery_explanation(case):
    _check_recovery("explanation", *case)


@settings(max_examples=150, deadline=None)
@given(answers["prediction"])
def test_recovery_prediction(case):
    _check_recovery("prediction", *case)


@settings(max_examples=150, deadline=None)
@given(answers["advisory"])
def test_recovery_advisory(case):
    _check_recovery("advisory", *case)


# --- transcripts -----------------------------------------------------------

def test_transcript_replays_in_order(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text("\n".join(json.dumps({"request_hash": None, "raw_text": t}) for t in ("one", "two")) + "\n")
    backend = TranscriptBackend(path)
    assert complete(request(), backend).raw_text == "one"
    assert complete(request(), backend).raw_text == "two"
    with pytest.raises(TranscriptExhausted):
        complete(request(), backend)


def test_recording_round_trip(tmp_path):
    path = tmp_path / "rec.jsonl"
    rec = RecordingBackend(StubBackend(), path)
    reqs = [request(), request(kind="advisory", answer=pf.ADVISORY_GOLDEN)]
    first = [complete(r, rec).raw_text for r in reqs]
    lines = [json.loads(x) for x in path.read_text().splitlines()]
    assert [x["request_hash"] for x in lines] == [r.request_hash() for r in reqs]
    replay = TranscriptBackend(path)
    assert [complete(r, replay).raw_text for r in reqs] == first


def test_transcript_hash_mismatch_warns(tmp_path, caplog):
    path = tmp_path / "t.jsonl"
    path.write_text(json.dumps({"request_hash": "0" * 64, "raw_text": "x"}) + "\n")
    with caplog.at_level("WARNING"):
        assert TranscriptBackend(path).send(request()) == "x"
    assert "different request" in caplog.text


# --- remote -----------------------------------------------------------------

def chat_reply(text):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}]})


def remote(handler, sleeps=None):
    sleeps = [] if sleeps is None else sleeps
    return RemoteBackend("https://llm.test/v1/chat/completions", "m1", "key",
                         transport=httpx.MockTransport(handler), sleep=sleeps.append)


def test_remote_success_wire_shape():
    seen = []

    def handler(req):
        seen.append(req)
        return chat_reply(pf.DESCRIPTION_GOLDEN)

    r = complete(request(), remote(handler))
    assert r.extracted["LANE_ID"] == "11"
    body = json.loads(seen[0].content)
    assert body["model"] == "m1"
    assert [m["role"] for m in body["messages"]] == ["system", "user"]
    assert "reference" not in json.dumps(body)
    assert pf.DESCRIPTION_GOLDEN not in json.dumps(body)
    assert seen[0].headers["Authorization"] == "Bearer key"


def test_remote_retries_server_errors():
    calls, sleeps = [], []

    def handler(req):
        calls.append(req)
        return httpx.Response(503, text="busy") if len(calls) < 3 else chat_reply("ok")

    assert remote(handler, sleeps).send(request()) == "ok"
    assert sleeps == [1.0, 2.0]


def test_remote_gives_up_after_two_retries():
    calls, sleeps = [], []

    def handler(req):
        calls.append(req)
        return httpx.Response(500, text="down")

    with pytest.raises(BackendRefused) as e:
        remote(handler, sleeps).send(request())
    assert len(calls) == 3
    assert e.value.status == 500 and e.value.body == "down"


def test_remote_client_error_not_retried():
    calls = []

    def handler(req):
        calls.append(req)
        return httpx.Response(401, text="no key")

    with pytest.raises(BackendRefused) as e:
        remote(handler).send(request())
    assert len(calls) == 1
    assert e.value.body == "no key"


def test_remote_timeout_is_typed():
    def handler(req):
        raise httpx.ReadTimeout("slow", request=req)

    sleeps = []
    with pytest.raises(BackendTimeout):
        remote(handler, sleeps).send(request())
    assert sleeps == [1.0, 2.0]


def test_remote_malformed_body():
    with pytest.raises(BackendRefused):
        remote(lambda req: httpx.Response(200, text="not json")).send(request())


def test_remote_unreachable_host():
    backend = RemoteBackend("http://127.0.0.1:9/v1/chat/completions", "m", sleep=lambda s: None)
    t0 = time.monotonic()
    with pytest.raises(BackendTimeout):
        backend.send(request(timeout_s=1.0))
    assert time.monotonic() - t0 < 3 * 1.0 + 1.0


def test_remote_from_env(monkeypatch):
    monkeypatch.delenv(gateway.ENV_ENDPOINT, raising=False)
    monkeypatch.delenv(gateway.ENV_MODEL, raising=False)
    with pytest.raises(gateway.GatewayError):
        RemoteBackend.from_env()
    monkeypatch.setenv(gateway.ENV_ENDPOINT, "https://env.test")
    monkeypatch.setenv(gateway.ENV_MODEL, "env-model")
    monkeypatch.setenv(gateway.ENV_API_KEY, "k")
    b = RemoteBackend.from_env()
    assert (b.endpoint, b.model, b.api_key) == ("https://env.test", "env-model", "k")
    assert RemoteBackend.from_env(model="other").model == "other"
