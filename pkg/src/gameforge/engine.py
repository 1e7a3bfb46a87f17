"""Deterministic mock game engine.

A six-verb, line-oriented command language stands in for a real scripting
runtime. The engine is a pure effect recorder: executing commands returns a
new state plus log entries, and every runtime failure becomes a traceback
entry instead of an exception, so candidate testing and the final run can
always complete.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable

from gameforge.errors import MissingSnippet, ParseError

VERBS = ("SPAWN", "SET", "BIND", "EMIT", "ASSERT", "LOG")

# verb -> exact operand count; LOG takes one-or-more joined as free text
_ARITY = {"SPAWN": 2, "SET": 3, "BIND": 3, "EMIT": 2, "ASSERT": 3}

GRAMMAR_HELP = (
    "One command per line, whitespace-separated tokens. Verbs:\n"
    "  SPAWN <id> <archetype>      create an entity\n"
    "  SET <id> <prop> <value>     set a property on an entity\n"
    "  BIND <id> <event> <handler> attach an event handler\n"
    "  EMIT <id> <event>           fire a bound event\n"
    "  ASSERT <id> <prop> <value>  check a property value\n"
    "  LOG <text...>               append a log note\n"
    "Blank lines and lines starting with '#' are skipped."
)


@dataclass(frozen=True)
class Command:
    verb: str
    operands: tuple[str, ...]

    @property
    def text(self) -> str:
        return " ".join((self.verb,) + self.operands)


@dataclass(frozen=True)
class LogEntry:
    task_id: int
    unit: int
    command: str
    outcome: str  # "ok" or the error kind

    def to_doc(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "unit": self.unit,
            "command": self.command,
            "outcome": self.outcome,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> LogEntry:
        return cls(int(doc["task_id"]), int(doc["unit"]), doc["command"], doc["outcome"])


@dataclass(frozen=True)
class Traceback:
    task_id: int
    command: str
    kind: str
    message: str

    def to_doc(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "command": self.command,
            "kind": self.kind,
            "message": self.message,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> Traceback:
        return cls(int(doc["task_id"]), doc["command"], doc["kind"], doc["message"])


@dataclass(frozen=True)
class EngineState:
    """World state: entities, their properties and bindings, plus a clock."""

    entities: dict[str, str] = field(default_factory=dict)
    properties: dict[str, dict[str, str]] = field(default_factory=dict)
    bindings: dict[str, dict[str, str]] = field(default_factory=dict)
    clock: int = 0

    def copy(self) -> EngineState:
        return EngineState(
            entities=dict(self.entities),
            properties={k: dict(v) for k, v in self.properties.items()},
            bindings={k: dict(v) for k, v in self.bindings.items()},
            clock=self.clock,
        )

    def to_doc(self) -> dict[str, Any]:
        return {
            "entities": dict(self.entities),
            "properties": {k: dict(v) for k, v in self.properties.items()},
            "bindings": {k: dict(v) for k, v in self.bindings.items()},
            "clock": self.clock,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> EngineState:
        return cls(
            entities=dict(doc["entities"]),
            properties={k: dict(v) for k, v in doc["properties"].items()},
            bindings={k: dict(v) for k, v in doc["bindings"].items()},
            clock=int(doc["clock"]),
        )


@dataclass(frozen=True)
class ExecutionLog:
    entries: tuple[LogEntry, ...] = ()
    tracebacks: tuple[Traceback, ...] = ()

    def to_doc(self) -> dict[str, Any]:
        return {
            "entries": [e.to_doc() for e in self.entries],
            "tracebacks": [t.to_doc() for t in self.tracebacks],
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> ExecutionLog:
        return cls(
            entries=tuple(LogEntry.from_doc(e) for e in doc["entries"]),
            tracebacks=tuple(Traceback.from_doc(t) for t in doc["tracebacks"]),
        )


@dataclass(frozen=True)
class RunSummary:
    """Per-task statuses plus totals derived from the execution log."""

    task_status: dict[int, str]  # succeeded | failed | skipped
    tasks: int
    commands: int
    tracebacks: int
    digest: dict[str, int]  # traceback kind -> count

    def to_doc(self) -> dict[str, Any]:
        return {
            "task_status": {str(k): v for k, v in sorted(self.task_status.items())},
            "tasks": self.tasks,
            "commands": self.commands,
            "tracebacks": self.tracebacks,
            "digest": dict(sorted(self.digest.items())),
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> RunSummary:
        return cls(
            task_status={int(k): v for k, v in doc["task_status"].items()},
            tasks=int(doc["tasks"]),
            commands=int(doc["commands"]),
            tracebacks=int(doc["tracebacks"]),
            digest={k: int(v) for k, v in doc["digest"].items()},
        )


def parse_script(lines: Iterable[str]) -> list[Command]:
    """Parse script lines; the first bad line aborts with its line number."""
    commands: list[Command] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        verb, operands = tokens[0], tuple(tokens[1:])
        if verb not in VERBS:
            raise ParseError(lineno, f"unknown verb {verb!r}")
        if verb == "LOG":
            if not operands:
                raise ParseError(lineno, "LOG needs text")
            commands.append(Command("LOG", (" ".join(operands),)))
            continue
        if len(operands) != _ARITY[verb]:
            raise ParseError(
                lineno, f"{verb} takes {_ARITY[verb]} operands, got {len(operands)}"
            )
        commands.append(Command(verb, operands))
    return commands


def parse_text(text: str) -> list[Command]:
    return parse_script(text.splitlines())


def _apply(state: EngineState, cmd: Command) -> str | None:
    """Mutate state dicts in place; return an error kind or None."""
    v, ops = cmd.verb, cmd.operands
    if v == "SPAWN":
        ent, archetype = ops
        if ent in state.entities:
            return "DuplicateEntity"
        state.entities[ent] = archetype
        return None
    if v == "LOG":
        return None
    ent = ops[0]
    if ent not in state.entities:
        return "UnknownEntity"
    if v == "SET":
        state.properties.setdefault(ent, {})[ops[1]] = ops[2]
        return None
    if v == "BIND":
        state.bindings.setdefault(ent, {})[ops[1]] = ops[2]
        return None
    if v == "EMIT":
        if ops[1] not in state.bindings.get(ent, {}):
            return "UnboundEvent"
        return None
    if v == "ASSERT":
        actual = state.properties.get(ent, {}).get(ops[1])
        if actual != ops[2]:
            return "AssertionFailed"
        return None
    raise AssertionError(f"unreachable verb {v}")


def execute(
    state: EngineState,
    commands: list[Command],
    *,
    task_id: int = -1,
    unit: int = 0,
) -> tuple[EngineState, list[LogEntry], list[Traceback]]:
    """Run commands against a copy of state; failures continue as tracebacks."""
    work = state.copy()
    entries: list[LogEntry] = []
    tracebacks: list[Traceback] = []
    clock = work.clock
    for cmd in commands:
        clock += 1
        error = _apply(work, cmd)
        if error is None:
            entries.append(LogEntry(task_id, unit, cmd.text, "ok"))
        else:
            message = _describe(error, cmd)
            entries.append(LogEntry(task_id, unit, cmd.text, error))
            tracebacks.append(Traceback(task_id, cmd.text, error, message))
    return (
        EngineState(
            entities=work.entities,
            properties=work.properties,
            bindings=work.bindings,
            clock=clock,
        ),
        entries,
        tracebacks,
    )


def _describe(kind: str, cmd: Command) -> str:
    ops = cmd.operands
    if kind == "DuplicateEntity":
        return f"entity {ops[0]!r} already exists"
    if kind == "UnknownEntity":
        return f"entity {ops[0]!r} does not exist"
    if kind == "UnboundEvent":
        return f"entity {ops[0]!r} has no handler bound for event {ops[1]!r}"
    if kind == "AssertionFailed":
        return f"expected {ops[0]}.{ops[1]} == {ops[2]!r}"
    return kind


def run_sequence(
    order: list[list[int]],
    snippets: dict[int, list[str]],
    state: EngineState,
    depends_on: dict[int, tuple[int, ...]] | None = None,
) -> tuple[ExecutionLog, EngineState, dict[int, str]]:
    """Execute per-task snippet lines in concatenated layer order.

    A task with any traceback is marked failed; tasks downstream of a
    failed (or skipped) task are skipped without executing, so one failure
    does not cascade into UnknownEntity noise.
    """
    depends_on = depends_on or {}
    entries: list[LogEntry] = []
    tracebacks: list[Traceback] = []
    status: dict[int, str] = {}
    for layer in order:
        for task_id in layer:
            if task_id not in snippets:
                raise MissingSnippet(f"task {task_id} has no selected snippets")
            upstream = depends_on.get(task_id, ())
            if any(status.get(d) in ("failed", "skipped") for d in upstream):
                status[task_id] = "skipped"
                continue
            failed = False
            for unit, lines in enumerate(_units(snippets[task_id])):
                try:
                    commands = parse_script(lines)
                except ParseError as exc:
                    bad = lines[exc.line - 1].strip() if lines else ""
                    tracebacks.append(Traceback(task_id, bad, "ParseError", str(exc)))
                    entries.append(LogEntry(task_id, unit, bad, "ParseError"))
                    failed = True
                    continue
                state, new_entries, new_tb = execute(
                    state, commands, task_id=task_id, unit=unit
                )
                entries.extend(new_entries)
                tracebacks.extend(new_tb)
                if new_tb:
                    failed = True
            status[task_id] = "failed" if failed else "succeeded"
    return ExecutionLog(tuple(entries), tuple(tracebacks)), state, status


def _units(snippets: list[str] | list[list[str]]) -> list[list[str]]:
    if snippets and isinstance(snippets[0], str):
        return [list(snippets)]  # single unit given as bare lines
    return [list(u) for u in snippets]  # type: ignore[union-attr]


def summarize(
    log: ExecutionLog, order: list[list[int]], status: dict[int, str]
) -> RunSummary:
    """Consolidate the log into counts and a traceback digest."""
    digest: dict[str, int] = {}
    for tb in log.tracebacks:
        digest[tb.kind] = digest.get(tb.kind, 0) + 1
    all_tasks = [t for layer in order for t in layer]
    return RunSummary(
        task_status={t: status.get(t, "skipped") for t in all_tasks},
        tasks=len(all_tasks),
        commands=len(log.entries),
        tracebacks=len(log.tracebacks),
        digest=digest,
    )
