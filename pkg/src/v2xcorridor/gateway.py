"""Chat-completion gateway with stub, transcript and remote backends, plus
slot extraction that reads template fields back out of answer text."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Union

import httpx

from . import promptgen

logger = logging.getLogger(__name__)

ENV_ENDPOINT = "V2XLLM_ENDPOINT"
ENV_MODEL = "V2XLLM_MODEL"
ENV_API_KEY = "V2XLLM_API_KEY"
RETRY_BACKOFF_S = (1.0, 2.0)
CONTEXT_WINDOW_S = 60.0


class GatewayError(RuntimeError):
    pass


class BackendTimeout(GatewayError):
    pass


class BackendRefused(GatewayError):
    def __init__(self, status: int, body: str) -> None:
        self.status, self.body = status, body
        super().__init__(f"backend returned status {status}: {body[:200]}")


class TranscriptExhausted(GatewayError):
    pass


class NoSlotsFound(ValueError):
    pass


@dataclass(frozen=True)
class LlmRequest:
    role_text: str
    context_text: str
    task_prompt: str
    template_hint: str
    max_tokens: int = 1024
    temperature: float = 0.0
    timeout_s: float = 60.0
    # Deterministic answer for the stub backend; never sent to a remote service.
    reference_answer: Optional[str] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not 0.0 < self.timeout_s <= 300.0:
            raise ValueError(f"timeout_s must be in (0, 300], got {self.timeout_s}")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature must be in [0, 2], got {self.temperature}")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.template_hint not in promptgen.TASK_KINDS:
            raise ValueError(f"unknown task kind {self.template_hint!r}")

    def messages(self) -> list[dict[str, str]]:
        return [
            {"role": "system", "content": f"{self.role_text}\n\n{self.context_text}"},
            {"role": "user", "content": self.task_prompt},
        ]

    def request_hash(self) -> str:
        d = asdict(self)
        d.pop("reference_answer")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LlmResponse:
    raw_text: str
    backend_id: str
    latency_ms: float
    extracted: dict[str, str]


def build_request(
    bundle: promptgen.PromptBundle,
    query_text: str,
    *,
    max_tokens: int = 1024,
    temperature: float = 0.0,
    timeout_s: float = 60.0,
) -> LlmRequest:
    """User turn = task instruction, the concrete query, and the answer template."""
    sections = promptgen.load_templates(bundle.task_kind)
    shape = "\n".join(text for name, texts in sections.items() if name != "prompt" for text in texts)
    prompt = f"{bundle.task_prompt}\n{query_text}\nAnswer using this template:\n{shape}"
    return LlmRequest(
        bundle.role_text,
        bundle.context_text,
        prompt,
        bundle.task_kind,
        max_tokens,
        temperature,
        timeout_s,
        reference_answer=bundle.filled_template,
    )


class Backend(Protocol):
    backend_id: str

    def send(self, req: LlmRequest) -> str: ...


class StubBackend:
    """Echoes the request's deterministic reference answer."""

    backend_id = "stub"

    def send(self, req: LlmRequest) -> str:
        if req.reference_answer is None:
            raise GatewayError("stub backend needs a request with a reference answer")
        return req.reference_answer


class TranscriptBackend:
    """Replays recorded responses in order from a JSONL file of
    ``{request_hash, raw_text}`` objects."""

    backend_id = "transcript"

    def __init__(self, path: Union[str, Path]) -> None:
        self.path = Path(path)
        self._entries = [
            json.loads(line) for line in self.path.read_text(encoding="utf-8").splitlines() if line.strip()
        ]
        self._next = 0
        self._lock = threading.Lock()

    def send(self, req: LlmRequest) -> str:
        with self._lock:
            if self._next >= len(self._entries):
                raise TranscriptExhausted(f"{self.path} has only {len(self._entries)} entries")
            entry = self._entries[self._next]
            self._next += 1
        if entry.get("request_hash") not in (None, req.request_hash()):
            logger.warning("transcript entry %d was recorded for a different request", self._next - 1)
        return entry["raw_text"]


class RecordingBackend:
    """Wraps another backend and appends each exchange to a transcript file."""

    def __init__(self, inner: Backend, path: Union[str, Path]) -> None:
        self.inner = inner
        self.path = Path(path)
        self.backend_id = inner.backend_id
        self._lock = threading.Lock()

    def send(self, req: LlmRequest) -> str:
        raw = self.inner.send(req)
        line = json.dumps({"request_hash": req.request_hash(), "raw_text": raw}, ensure_ascii=False)
        with self._lock, self.path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")
        return raw


class RemoteBackend:
    """POSTs chat-completion requests; retries transport failures and 5xx/429
    twice with 1 s then 2 s backoff."""

    backend_id = "remote"

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: Optional[str] = None,
        *,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self._transport = transport
        self._sleep = sleep

    @classmethod
    def from_env(cls, endpoint: Optional[str] = None, model: Optional[str] = None, **kw) -> "RemoteBackend":
        """Explicit ``endpoint``/``model`` take precedence over the environment."""
        endpoint = endpoint or os.environ.get(ENV_ENDPOINT)
        model = model or os.environ.get(ENV_MODEL)
        if not endpoint or not model:
            raise GatewayError(f"set {ENV_ENDPOINT} and {ENV_MODEL} to use the remote backend")
        return cls(endpoint, model, os.environ.get(ENV_API_KEY), **kw)

    def _payload(self, req: LlmRequest) -> dict:
        return {
            "model": self.model,
            "messages": req.messages(),
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        }

    def send(self, req: LlmRequest) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = self._payload(req)
        last: Optional[GatewayError] = None
        with httpx.Client(timeout=req.timeout_s, transport=self._transport) as client:
            for attempt in range(len(RETRY_BACKOFF_S) + 1):
                if attempt:
                    self._sleep(RETRY_BACKOFF_S[attempt - 1])
                try:
                    r = client.post(self.endpoint, json=payload, headers=headers)
                except (httpx.TimeoutException, httpx.TransportError) as exc:
                    last = BackendTimeout(f"{type(exc).__name__}: {exc}")
                    continue
                if r.status_code == 429 or r.status_code >= 500:
                    last = BackendRefused(r.status_code, r.text)
                    continue
                if not r.is_success:
                    raise BackendRefused(r.status_code, r.text)
                try:
                    return r.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError):
                    raise BackendRefused(r.status_code, r.text) from None
        assert last is not None
        raise last


def complete(req: LlmRequest, backend: Backend) -> LlmResponse:
    t0 = time.perf_counter()
    raw = backend.send(req)
    latency = (time.perf_counter() - t0) * 1000.0
    try:
        extracted = extract_slots(raw, req.template_hint)
    except NoSlotsFound:
        logger.info("response from %s matched no template anchors", backend.backend_id)
        extracted = {}
    return LlmResponse(raw, backend.backend_id, latency, extracted)


# ------------------------------------------------------------- slot grammar

_TS = r"\d{4}-\d{2}-\d{2} \d{2}:\d{2}:\d{2}(?:\.\d+)?"
_CLOCK = r"\d{2}:\d{2}:\d{2}(?:\.\d+)?"
_NUM = r"-?\d+(?:\.\d+)?"
_PHASE = r"[A-Za-z]+(?:-[A-Za-z]+)*"
_PT = rf"\({_NUM}, {_NUM}\)"


@dataclass(frozen=True)
class _Rule:
    pattern: re.Pattern
    names: tuple[str, ...]
    repeated: bool = False


def _r(pattern: str, *names: str, repeated: bool = False) -> _Rule:
    return _Rule(re.compile(pattern, re.MULTILINE), names, repeated)


_GRAMMARS: dict[str, tuple[_Rule, ...]] = {
    "description": (
        _r(rf"At the current timestamp ({_TS}),", "TIMESTAMP"),
        _r(r"currently in lane (\d+) at intersection (.+?), traveling", "LANE_ID", "INTERSECTION_NAME"),
        _r(rf"speed of ({_NUM}) miles per hour", "SPEED"),
        _r(r"movement for this lane is ([NSEW]B-[A-Z]+)(?: \(([A-Za-z ]+)\))?", "MOVEMENT", "MOVEMENT_NAME"),
        _r(rf"signal phase for this lane is ({_PHASE}), with ({_NUM}) seconds remaining", "PHASE_STATE", "TIMING"),
    ),
    "explanation": (
        _r(r"corridor contains (\w+) intersections", "NUMBER"),
        _r(r"aligned in a general (.+?) direction", "DIRECTION"),
        _r(r"These intersections are: (.+?)\. The length", "INTERSECTION_NAMES"),
        _r(rf"length of the corridor section is approximately ({_NUM}) miles", "CORRIDOR_LENGTH"),
        _r(
            rf"from ([^,\n]+?) to ([^,\n]+?) is approximately ({_NUM}) miles",
            "FROM_NAME", "TO_NAME", "DISTANCE", repeated=True,
        ),
        _r(rf"started trip from (.+?) at ({_TS}) and travels along", "START_NAME", "START_TIMESTAMP"),
        _r(rf"travels along (.+?), and finally arrives at (.+?) at ({_TS})\.", "VISITED_NAMES", "END_NAME", "END_TIMESTAMP"),
        _r(rf"vehicle travels ({_NUM}) miles with (\d+) seconds", "TRIP_DISTANCE", "DURATION"),
    ),
    "prediction": (
        _r(rf"vehicle is currently at ({_PT})", "POSITION"),
        _r(rf"trajectory of the vehicle will be (\[{_PT}(?:, {_PT})*\])", "TRAJECTORY"),
        _r(
            rf"At the timestamp ({_TS}), the signal phase and timing of intersection (.+?) are as follows",
            "TIMESTAMP", "INTERSECTION_NAME", repeated=True,
        ),
        _r(
            rf"Lane (\d+): phase ({_PHASE}) with ({_NUM}) seconds remaining\. "
            rf"The next phase and the anticipated time is ({_PHASE}) at ({_CLOCK})\.",
            "LANE_ID", "SIGNAL_PHASE", "REMAINING_TIME", "NEXT_SIGNAL_PHASE", "NEXT_TIMESTAMP", repeated=True,
        ),
    ),
    "advisory": (
        _r(rf"At the current timestamp ({_TS}), the connected vehicle", "TIMESTAMP"),
        _r(
            r"is in lane (\d+) at the intersection (.+?), with signal group (\w+) and movement (.+?)\. "
            r"The signal phase is (.+?), and the remaining time is (.+?)\. ",
            "LANE_ID", "INTERSECTION_NAME", "SIGNAL_GROUP_ID", "MOVEMENT", "SIGNAL_PHASE", "REMAINING_TIME",
        ),
        _r(
            r"(?:travel|move|navigate|transition) to lane (\d+) (?:inside|within) the (?:current )?intersection"
            r".*?proceed to lane (\d+) of the (?:next|final) intersection, (.+?)"
            r"(?:\. The estimated travel time between intersections is|, with an estimated travel time of) "
            rf"(\d+ seconds?)\. At timestamp ({_TS}), the vehicle arrives",
            "INTERNAL_LANE_ID", "NEXT_LANE_ID", "NEXT_INTERSECTION_NAME", "ESTIMATED_TRAVEL_TIME",
            "ARRIVAL_TIMESTAMP", repeated=True,
        ),
    ),
}


def extract_slots(raw_text: str, task_kind: str) -> dict[str, str]:
    """Template fields found in ``raw_text``. Repeated fields are keyed
    ``NAME#k`` with k counting from 1; unmatched fields are absent."""
    grammar = _GRAMMARS.get(task_kind)
    if grammar is None:
        raise ValueError(f"unknown task kind {task_kind!r}")
    out: dict[str, str] = {}
    for rule in grammar:
        matches = list(rule.pattern.finditer(raw_text)) if rule.repeated else [rule.pattern.search(raw_text)]
        for k, m in enumerate(matches, 1):
            if m is None:
                continue
            for name, value in zip(rule.names, m.groups()):
                if value:
                    out[f"{name}#{k}" if rule.repeated else name] = value
    if not out:
        raise NoSlotsFound(f"no {task_kind} template anchors found")
    return out
