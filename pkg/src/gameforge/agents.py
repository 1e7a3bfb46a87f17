"""Agent runtime: role-conditioned backend calls over private memory and a
shared public record.

Every agent step conditions a backend (a scripted table in tests, a remote
chat-completion endpoint in production) on the agent's own memory plus a
stage-filtered slice of the public record, validates the response against
the stage's schema, and commits the output to both memory and record.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

import httpx

from gameforge.errors import (
    SchemaViolation,
    Timeout,
    TransportError,
    UnknownScriptKey,
)

# Reparse retries before an agent step escalates to a human.
DEFAULT_RETRIES = 2

ENV_BACKEND_URL = "FORGE_BACKEND_URL"
ENV_BACKEND_MODEL = "FORGE_BACKEND_MODEL"
ENV_BACKEND_KEY = "FORGE_BACKEND_KEY"


class AgentRole(str, Enum):
    CONTENT_DESIGNER = "content_designer"
    DEVELOPMENT_MANAGER = "development_manager"
    PLAN_REVIEWER = "plan_reviewer"
    DEVELOPMENT_ENGINEER = "development_engineer"
    TASK_REVIEWER = "task_reviewer"
    ENGINE_ENGINEER = "engine_engineer"
    CODE_REVIEWER = "code_reviewer"
    TESTING_ENGINEER = "testing_engineer"


# Test hooks: each callable receives (owner_id, reader_id) on every
# memory read, letting tests assert that no agent reads another's memory.
memory_audit_hooks: list[Callable[[str, str], None]] = []


class PrivateMemory:
    """Append-only step history owned by a single agent."""

    def __init__(self, agent_id: str, entries: list[tuple[int, Any]] | None = None):
        self.agent_id = agent_id
        self._entries: list[tuple[int, Any]] = list(entries or [])

    def append(self, writer_id: str, content: Any) -> int:
        if writer_id != self.agent_id:
            raise PermissionError(f"{writer_id} cannot write to memory of {self.agent_id}")
        step = self._entries[-1][0] + 1 if self._entries else 0
        self._entries.append((step, content))
        return step

    def read(self, reader_id: str) -> list[tuple[int, Any]]:
        for hook in memory_audit_hooks:
            hook(self.agent_id, reader_id)
        return list(self._entries)

    def next_step(self) -> int:
        return self._entries[-1][0] + 1 if self._entries else 0

    def to_doc(self) -> dict[str, Any]:
        return {"agent_id": self.agent_id, "entries": [[t, c] for t, c in self._entries]}

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> PrivateMemory:
        return cls(doc["agent_id"], [(int(t), c) for t, c in doc["entries"]])


@dataclass(frozen=True)
class RecordEvent:
    seq: int
    author: str  # an AgentRole value, "orchestrator", or "user"
    stage: str
    payload: Any

    def to_doc(self) -> dict[str, Any]:
        return {"seq": self.seq, "author": self.author, "stage": self.stage, "payload": self.payload}

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> RecordEvent:
        return cls(int(doc["seq"]), doc["author"], doc["stage"], doc["payload"])


@dataclass(frozen=True)
class PublicRecord:
    """Shared append-only event sequence; seq values are gap-free."""

    events: tuple[RecordEvent, ...] = ()

    def next_seq(self) -> int:
        return self.events[-1].seq + 1 if self.events else 0

    def since(self, seq: int) -> list[RecordEvent]:
        return [e for e in self.events if e.seq > seq]

    def by_stage(self, stages: tuple[str, ...]) -> list[RecordEvent]:
        return [e for e in self.events if e.stage in stages]

    def to_doc(self) -> list[dict[str, Any]]:
        return [e.to_doc() for e in self.events]

    @classmethod
    def from_doc(cls, doc: list[dict[str, Any]]) -> PublicRecord:
        return cls(tuple(RecordEvent.from_doc(e) for e in doc))


def append_event(record: PublicRecord, author: str, stage: str, payload: Any) -> PublicRecord:
    """New record with the event appended at the next gap-free seq."""
    event = RecordEvent(seq=record.next_seq(), author=author, stage=stage, payload=payload)
    return PublicRecord(events=record.events + (event,))


@dataclass(frozen=True)
class AgentOutput:
    agent_id: str
    step_index: int
    payload: Any
    raw: str


@dataclass(frozen=True)
class StagePrompt:
    """What one stage asks of one agent, including its output schema.

    ``key`` is the scripted-backend lookup key: a stable function of the
    stage, role, and salient payload fields only, so prompt wording can
    change without breaking fixtures. ``record_stages`` names which prior
    stages' events the assembled prompt may include.
    """

    stage: str
    role: AgentRole
    key: str
    instructions: str
    body: str
    schema: Callable[[str], Any]
    record_stages: tuple[str, ...] = ()


@dataclass(frozen=True)
class Prompt:
    """Assembled backend input."""

    key: str
    system: str
    user: str

    def messages(self) -> list[dict[str, str]]:
        return [
            {"role": "system", "content": self.system},
            {"role": "user", "content": self.user},
        ]


class ScriptedBackend:
    """Canned responses keyed by prompt key; a pure function of its input."""

    kind = "scripted"

    def __init__(self, responses: dict[str, str]):
        self.responses = dict(responses)
        self.calls: list[str] = []

    @classmethod
    def from_paths(cls, paths: list[str]) -> ScriptedBackend:
        """Merge one or more fixture files (or directories of *.json)."""
        import pathlib

        responses: dict[str, str] = {}
        for p in paths:
            path = pathlib.Path(p)
            files = sorted(path.glob("*.json")) if path.is_dir() else [path]
            for f in files:
                doc = json.loads(f.read_text(encoding="utf-8"))
                if not isinstance(doc, dict):
                    raise ValueError(f"fixture file {f} must hold a JSON object")
                responses.update({str(k): str(v) for k, v in doc.items()})
        return cls(responses)

    def complete(self, prompt: Prompt) -> str:
        self.calls.append(prompt.key)
        if prompt.key not in self.responses:
            raise UnknownScriptKey(prompt.key)
        return self.responses[prompt.key]


@dataclass
class RemoteConfig:
    base_url: str
    model: str
    api_key: str = ""
    timeout: float = 30.0
    max_retries: int = 2
    decoding: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("remote backend timeout must be positive")

    @classmethod
    def from_env(cls, **overrides: Any) -> RemoteConfig:
        base_url = overrides.pop("base_url", None) or os.environ.get(ENV_BACKEND_URL, "")
        model = overrides.pop("model", None) or os.environ.get(ENV_BACKEND_MODEL, "")
        api_key = overrides.pop("api_key", None) or os.environ.get(ENV_BACKEND_KEY, "")
        if not base_url or not model:
            raise ValueError(
                f"remote backend needs {ENV_BACKEND_URL} and {ENV_BACKEND_MODEL}"
            )
        return cls(base_url=base_url, model=model, api_key=api_key, **overrides)


class RemoteBackend:
    """Chat-completion endpoint: role-tagged messages in, one text choice out."""

    kind = "remote"

    def __init__(self, config: RemoteConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        self.calls: list[str] = []
        headers = {}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        self._client = httpx.Client(
            timeout=config.timeout, headers=headers, transport=transport
        )

    def _url(self) -> str:
        base = self.config.base_url.rstrip("/")
        if base.endswith("/chat/completions"):
            return base
        return base + "/chat/completions"

    def complete(self, prompt: Prompt) -> str:
        self.calls.append(prompt.key)
        body: dict[str, Any] = {
            "model": self.config.model,
            "messages": prompt.messages(),
        }
        body.update(self.config.decoding)
        last: Exception | None = None
        for _ in range(self.config.max_retries + 1):
            try:
                response = self._client.post(self._url(), json=body)
            except httpx.TimeoutException as exc:
                last = Timeout(str(exc))
                continue
            except httpx.TransportError as exc:
                last = TransportError(str(exc))
                continue
            if response.status_code != 200:
                last = TransportError(f"backend returned HTTP {response.status_code}")
                continue
            try:
                doc = response.json()
                return doc["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                last = TransportError(f"malformed completion document: {exc}")
                continue
        raise last if last is not None else TransportError("no attempts made")


Backend = ScriptedBackend | RemoteBackend


def backend_complete(backend: Backend, prompt: Prompt) -> str:
    """Single completion; scripted lookups are exact, remote calls retried."""
    if not prompt.key or not prompt.user:
        raise ValueError("prompt must be non-empty")
    return backend.complete(prompt)


def assemble_prompt_text(
    stage_prompt: StagePrompt,
    memory: PrivateMemory,
    record: PublicRecord,
    extra: str = "",
) -> Prompt:
    """Join the stage body, the agent's own memory, and the record slice."""
    parts = [stage_prompt.body]
    slice_events = record.by_stage(stage_prompt.record_stages)
    if slice_events:
        lines = [json.dumps(e.to_doc(), sort_keys=True) for e in slice_events]
        parts.append("Shared record:\n" + "\n".join(lines))
    entries = memory.read(stage_prompt.role.value)
    if entries:
        lines = [json.dumps({"step": t, "content": c}, sort_keys=True) for t, c in entries]
        parts.append("Your memory:\n" + "\n".join(lines))
    if extra:
        parts.append(extra)
    return Prompt(key=stage_prompt.key, system=stage_prompt.instructions, user="\n\n".join(parts))


def agent_step(
    role: AgentRole,
    memory: PrivateMemory,
    record: PublicRecord,
    stage_prompt: StagePrompt,
    backend: Backend,
    retries: int = DEFAULT_RETRIES,
) -> tuple[AgentOutput, PublicRecord]:
    """One agent move: prompt the backend, validate, commit to memory + record.

    Invalid responses are re-prompted with the validation error appended,
    at most ``retries`` times, then SchemaViolation escalates to a human.
    """
    if role.value != memory.agent_id:
        raise PermissionError(f"memory of {memory.agent_id} handed to {role.value}")
    error_note = ""
    last_error: SchemaViolation | None = None
    for _ in range(retries + 1):
        prompt = assemble_prompt_text(stage_prompt, memory, record, extra=error_note)
        raw = backend_complete(backend, prompt)
        try:
            payload = stage_prompt.schema(raw)
        except SchemaViolation as exc:
            last_error = exc
            error_note = (
                f"The previous response failed validation: {exc}. "
                "Return a corrected document."
            )
            continue
        step = memory.append(role.value, {"stage": stage_prompt.stage, "payload": payload})
        output = AgentOutput(agent_id=role.value, step_index=step, payload=payload, raw=raw)
        new_record = append_event(record, role.value, stage_prompt.stage, payload)
        return output, new_record
    raise last_error if last_error is not None else SchemaViolation("no attempts made")
