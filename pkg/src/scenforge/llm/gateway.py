"""Uniform completion interface with transcript record/replay."""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Protocol

from ..errors import ConfigError, MalformedOutput, ProviderError, ReplayMiss
from . import schemas

log = logging.getLogger(__name__)

CORRECTIVE_SUFFIX = (
    "Your previous reply could not be used ({reason}). "
    "Reply again, following the required output format exactly and adding nothing else."
)


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class Message:
    role: Role
    content: str


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple[Message, ...]
    temperature: float | None = None  # None: provider default
    max_output: int = 4096
    tag: str = ""

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("request needs at least one message")
        if self.messages[0].role is Role.ASSISTANT:
            raise ValueError("first message must come from system or user")
        if self.temperature is not None and self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @classmethod
    def of(cls, system: str, user: str, **kw: Any) -> CompletionRequest:
        return cls((Message(Role.SYSTEM, system), Message(Role.USER, user)), **kw)

    def canonical(self) -> dict[str, Any]:
        # tag is a label only; it does not change what is asked
        return {
            "max_output": self.max_output,
            "messages": [{"content": " ".join(m.content.split()), "role": m.role.value} for m in self.messages],
            "temperature": self.temperature,
        }

    @property
    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def followed_by(self, *messages: Message) -> CompletionRequest:
        return CompletionRequest(self.messages + messages, self.temperature, self.max_output, self.tag)


class Provider(Protocol):
    def complete(self, request: CompletionRequest) -> str: ...


class TranscriptMode(str, Enum):
    RECORD = "record"
    REPLAY = "replay"


@dataclass(frozen=True)
class TranscriptEntry:
    request_digest: str
    response: str
    tag: str = ""


@dataclass
class Transcript:
    """Append-only request/response log; JSON lines on disk."""

    mode: TranscriptMode
    path: Path | None = None
    entries: list[TranscriptEntry] = field(default_factory=list)
    _by_digest: dict[str, str] = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self) -> None:
        for e in self.entries:
            self._by_digest.setdefault(e.request_digest, e.response)

    @classmethod
    def load(cls, path: Path, mode: TranscriptMode = TranscriptMode.REPLAY) -> Transcript:
        path = Path(path)
        entries = []
        if path.exists():
            for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                    entries.append(TranscriptEntry(row["digest"], row["response"], row.get("tag", "")))
                except (json.JSONDecodeError, KeyError) as exc:
                    raise ConfigError(f"{path}:{n}: bad transcript line ({exc})") from exc
        elif mode is TranscriptMode.REPLAY:
            raise ConfigError(f"transcript {path} does not exist")
        return cls(mode=mode, path=path, entries=entries)

    def lookup(self, digest: str) -> str | None:
        return self._by_digest.get(digest)

    def append(self, request: CompletionRequest, response: str) -> None:
        entry = TranscriptEntry(request.digest, response, request.tag)
        with self._lock:
            self.entries.append(entry)
            self._by_digest.setdefault(entry.request_digest, response)
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                row = {"digest": entry.request_digest, "tag": entry.tag,
                       "request": request.canonical(), "response": response}
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class CallRecord:
    tag: str
    digest: str


class Gateway:
    """Routes completions to a live provider, a recording wrapper, or a replay transcript."""

    def __init__(self, provider: Provider | None = None, transcript: Transcript | None = None,
                 provider_retries: int = 2, backoff: float = 1.0):
        if transcript is None and provider is None:
            raise ConfigError("no LLM provider configured and no transcript given")
        if transcript is not None and transcript.mode is TranscriptMode.RECORD and provider is None:
            raise ConfigError("record mode needs a live provider")
        self.provider = provider
        self.transcript = transcript
        self.provider_retries = provider_retries
        self.backoff = backoff
        self._calls: list[CallRecord] = []
        self._lock = threading.Lock()

    @property
    def replaying(self) -> bool:
        return self.transcript is not None and self.transcript.mode is TranscriptMode.REPLAY

    @property
    def calls(self) -> list[CallRecord]:
        with self._lock:
            return list(self._calls)

    def count(self, tag: str) -> int:
        return sum(1 for c in self.calls if c.tag == tag)

    def complete(self, request: CompletionRequest) -> str:
        digest = request.digest
        with self._lock:
            self._calls.append(CallRecord(request.tag, digest))
        if self.replaying:
            response = self.transcript.lookup(digest)
            if response is None:
                raise ReplayMiss(digest, request.tag)
            return response
        response = self._call_provider(request)
        if self.transcript is not None:
            self.transcript.append(request, response)
        return response

    def _call_provider(self, request: CompletionRequest) -> str:
        attempt = 0
        while True:
            try:
                return self.provider.complete(request)
            except ProviderError as exc:
                if not exc.retryable or attempt >= self.provider_retries:
                    raise
                attempt += 1
                log.warning("provider error (%s); retry %d", exc, attempt)
                time.sleep(self.backoff * 2 ** (attempt - 1))

    def complete_structured(self, request: CompletionRequest, schema_id: str, **context: Any) -> Any:
        """Complete and parse against a registered output schema.

        A violation triggers exactly one reissue with a corrective message;
        a second violation raises MalformedOutput.
        """
        parse = schemas.get(schema_id)
        response = self.complete(request)
        try:
            return parse(response, **context)
        except schemas.SchemaViolation as first:
            log.info("%s: malformed %s output (%s); reissuing", request.tag, schema_id, first)
            retry = request.followed_by(
                Message(Role.ASSISTANT, response),
                Message(Role.USER, CORRECTIVE_SUFFIX.format(reason=first)),
            )
            response = self.complete(retry)
            try:
                return parse(response, **context)
            except schemas.SchemaViolation as second:
                raise MalformedOutput(schema_id, str(second), after_retries=1) from second
