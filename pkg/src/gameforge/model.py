"""Core domain types shared by every pipeline stage.

All types here are plain values: once constructed they are never mutated in
place. Plan edits produce a new revision; that is what makes replay and
crash recovery cheap to reason about.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from gameforge.errors import DanglingDependency

SCHEMA_VERSION = 1

# Jaccard threshold above which two task descriptions count as redundant.
DEFAULT_THETA = 0.8


class Genre(str, Enum):
    """The five supported game genres, in tie-breaking order."""

    ACTION = "action"
    STRATEGY = "strategy"
    ROLE_PLAYING = "role_playing"
    SIMULATION = "simulation"
    ADVENTURE = "adventure"


GENRE_ORDER = list(Genre)

ARG_KINDS = ("string", "integer", "number", "entity_ref", "enum")

FINDING_KINDS = ("hallucination", "redundancy", "vague", "type_mismatch", "arg_mismatch")

# Findings of these kinds block acceptance of a review verdict.
BLOCKING_KINDS = frozenset({"hallucination", "type_mismatch", "arg_mismatch"})

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize(description: str) -> set[str]:
    """Lowercase, strip punctuation, split on whitespace, dedupe."""
    return set(description.lower().translate(_PUNCT_TABLE).split())


def similarity(a: set[str], b: set[str]) -> float:
    """Jaccard index of two token sets; two empty sets count as identical."""
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


@dataclass(frozen=True)
class GameRequest:
    """A client's free-form game request."""

    request_id: str
    text: str
    created_at: float

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("request text must be non-empty")
        if not self.request_id:
            raise ValueError("request_id must be non-empty")

    def to_doc(self) -> dict[str, Any]:
        return {"request_id": self.request_id, "text": self.text, "created_at": self.created_at}

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> GameRequest:
        return cls(
            request_id=doc["request_id"],
            text=doc["text"],
            created_at=float(doc["created_at"]),
        )


@dataclass(frozen=True)
class ArgField:
    """One slot in a task type's argument schema."""

    arg_name: str
    arg_kind: str
    required: bool
    values: tuple[str, ...] = ()  # enum choices; empty for other kinds

    def __post_init__(self) -> None:
        if self.arg_kind not in ARG_KINDS:
            raise ValueError(f"unknown arg_kind {self.arg_kind!r}")
        if self.arg_kind == "enum" and not self.values:
            raise ValueError(f"enum arg {self.arg_name!r} needs values")

    def to_doc(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "arg_name": self.arg_name,
            "arg_kind": self.arg_kind,
            "required": self.required,
        }
        if self.values:
            doc["values"] = list(self.values)
        return doc

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> ArgField:
        return cls(
            arg_name=doc["arg_name"],
            arg_kind=doc["arg_kind"],
            required=bool(doc["required"]),
            values=tuple(doc.get("values", ())),
        )


@dataclass(frozen=True)
class TaskTypeEntry:
    """A lexicon entry describing one kind of development task."""

    name: str
    arg_schema: tuple[ArgField, ...]
    blurb: str
    keywords: tuple[str, ...]
    examples: tuple[str, ...] = ()
    holdout: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        names = [f.arg_name for f in self.arg_schema]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate arg names in schema for {self.name!r}")

    def field_by_name(self, arg_name: str) -> ArgField | None:
        for f in self.arg_schema:
            if f.arg_name == arg_name:
                return f
        return None

    def required_args(self) -> list[ArgField]:
        return [f for f in self.arg_schema if f.required]


def check_arg_value(field_: ArgField, value: Any) -> bool:
    """True when a value conforms to the field's arg_kind."""
    if field_.arg_kind == "string":
        return isinstance(value, str)
    if field_.arg_kind == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    if field_.arg_kind == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if field_.arg_kind == "entity_ref":
        return isinstance(value, str) and bool(value) and " " not in value
    if field_.arg_kind == "enum":
        return isinstance(value, str) and value in field_.values
    return False


@dataclass(frozen=True)
class ArgumentSet:
    """Populated argument template for one task."""

    values: dict[str, Any] = field(default_factory=dict)
    missing: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        overlap = set(self.values) & set(self.missing)
        if overlap:
            raise ValueError(f"args both filled and missing: {sorted(overlap)}")

    def to_doc(self) -> dict[str, Any]:
        return {"values": dict(self.values), "missing": list(self.missing)}

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> ArgumentSet:
        return cls(values=dict(doc["values"]), missing=tuple(doc["missing"]))


@dataclass(frozen=True)
class Task:
    """One unit of the plan; ids are ordinal within the owning plan."""

    task_id: int
    description: str
    task_type: str | None = None
    arguments: ArgumentSet | None = None
    depends_on: tuple[int, ...] = ()
    reviewed: bool = False

    def __post_init__(self) -> None:
        if not self.description.strip():
            raise ValueError("task description must be non-empty")
        if self.task_id in self.depends_on:
            raise ValueError(f"task {self.task_id} depends on itself")

    def with_(self, **changes: Any) -> Task:
        doc = {
            "task_id": self.task_id,
            "description": self.description,
            "task_type": self.task_type,
            "arguments": self.arguments,
            "depends_on": self.depends_on,
            "reviewed": self.reviewed,
        }
        doc.update(changes)
        return Task(**doc)

    def to_doc(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "description": self.description,
            "task_type": self.task_type,
            "arguments": self.arguments.to_doc() if self.arguments else None,
            "depends_on": list(self.depends_on),
            "reviewed": self.reviewed,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> Task:
        args = doc.get("arguments")
        return cls(
            task_id=int(doc["task_id"]),
            description=doc["description"],
            task_type=doc.get("task_type"),
            arguments=ArgumentSet.from_doc(args) if args else None,
            depends_on=tuple(int(d) for d in doc.get("depends_on", ())),
            reviewed=bool(doc.get("reviewed", False)),
        )


PLAN_STATUSES = ("draft", "under_review", "awaiting_user", "accepted")


@dataclass(frozen=True)
class TaskPlan:
    """Ordered task list for one request; every mutation bumps revision."""

    plan_id: str
    request_id: str
    genre: Genre
    tasks: tuple[Task, ...]
    revision: int = 0
    status: str = "draft"

    def __post_init__(self) -> None:
        if self.status not in PLAN_STATUSES:
            raise ValueError(f"unknown plan status {self.status!r}")
        ids = [t.task_id for t in self.tasks]
        if ids != list(range(len(ids))):
            raise ValueError(f"task ids must be contiguous 0..n-1, got {ids}")
        for t in self.tasks:
            for dep in t.depends_on:
                if dep < 0 or dep >= len(ids):
                    raise DanglingDependency(
                        f"task {t.task_id} depends on missing task {dep}"
                    )

    def task(self, task_id: int) -> Task:
        return self.tasks[task_id]

    def with_tasks(self, tasks: list[Task], *, status: str | None = None) -> TaskPlan:
        """New revision holding the given tasks."""
        return TaskPlan(
            plan_id=self.plan_id,
            request_id=self.request_id,
            genre=self.genre,
            tasks=tuple(tasks),
            revision=self.revision + 1,
            status=status if status is not None else self.status,
        )

    def with_status(self, status: str) -> TaskPlan:
        return self.with_tasks(list(self.tasks), status=status)

    def to_doc(self) -> dict[str, Any]:
        return {
            "plan_id": self.plan_id,
            "request_id": self.request_id,
            "genre": self.genre.value,
            "tasks": [t.to_doc() for t in self.tasks],
            "revision": self.revision,
            "status": self.status,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> TaskPlan:
        return cls(
            plan_id=doc["plan_id"],
            request_id=doc["request_id"],
            genre=Genre(doc["genre"]),
            tasks=tuple(Task.from_doc(t) for t in doc["tasks"]),
            revision=int(doc["revision"]),
            status=doc["status"],
        )


@dataclass(frozen=True)
class Finding:
    """One reviewer observation about a plan, task, or snippet."""

    kind: str
    target_id: int
    note: str

    def __post_init__(self) -> None:
        if self.kind not in FINDING_KINDS:
            raise ValueError(f"unknown finding kind {self.kind!r}")

    def to_doc(self) -> dict[str, Any]:
        return {"kind": self.kind, "target_id": self.target_id, "note": self.note}

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> Finding:
        return cls(kind=doc["kind"], target_id=int(doc["target_id"]), note=doc["note"])


@dataclass(frozen=True)
class ReviewVerdict:
    """Reviewer outcome: acceptance plus the findings behind it."""

    accepted: bool
    findings: tuple[Finding, ...] = ()
    revision: str | None = None

    def __post_init__(self) -> None:
        if self.accepted and any(f.kind in BLOCKING_KINDS for f in self.findings):
            raise ValueError("accepted verdict cannot carry blocking findings")

    def blocking(self) -> list[Finding]:
        return [f for f in self.findings if f.kind in BLOCKING_KINDS]

    def to_doc(self) -> dict[str, Any]:
        return {
            "accepted": self.accepted,
            "findings": [f.to_doc() for f in self.findings],
            "revision": self.revision,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> ReviewVerdict:
        return cls(
            accepted=bool(doc["accepted"]),
            findings=tuple(Finding.from_doc(f) for f in doc["findings"]),
            revision=doc.get("revision"),
        )


def verdict_from_findings(findings: list[Finding], revision: str | None = None) -> ReviewVerdict:
    """Build a verdict; accepted iff no blocking finding is present."""
    accepted = not any(f.kind in BLOCKING_KINDS for f in findings)
    return ReviewVerdict(accepted=accepted, findings=tuple(findings), revision=revision)
