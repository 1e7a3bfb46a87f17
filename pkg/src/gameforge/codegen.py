"""Code generation stage: decouple each task into bounded snippet specs,
prompt with exemplars, generate K candidates, sandbox-test and select, then
review the selection."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from gameforge.agents import (
    AgentRole,
    Backend,
    PrivateMemory,
    PublicRecord,
    StagePrompt,
    agent_step,
)
from gameforge.engine import (
    GRAMMAR_HELP,
    Command,
    EngineState,
    Traceback,
    execute,
    parse_script,
)
from gameforge.errors import (
    AllCandidatesFailed,
    BackendUnavailable,
    LexiconError,
    ParseError,
    SchemaViolation,
    UnknownScriptKey,
)
from gameforge.lexicon import read_lexicon, shipped_lexicon_text
from gameforge.model import Finding, Task, TaskTypeEntry, verdict_from_findings
from gameforge.model import ReviewVerdict

DEFAULT_K = 3
MAX_K = 8
DEFAULT_LINE_BUDGET = 12
DEFAULT_EXEMPLAR_COUNT = 2


@dataclass(frozen=True)
class SnippetSpec:
    task_id: int
    unit_index: int
    goal: str
    line_budget: int = DEFAULT_LINE_BUDGET
    tags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.line_budget < 1:
            raise ValueError("line_budget must be >= 1")

    def to_doc(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "unit_index": self.unit_index,
            "goal": self.goal,
            "line_budget": self.line_budget,
            "tags": list(self.tags),
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> SnippetSpec:
        return cls(
            task_id=int(doc["task_id"]),
            unit_index=int(doc["unit_index"]),
            goal=doc["goal"],
            line_budget=int(doc["line_budget"]),
            tags=tuple(doc["tags"]),
        )


@dataclass(frozen=True)
class Exemplar:
    exemplar_id: int
    tags: tuple[str, ...]
    instruction: str
    lines: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.instruction.strip():
            raise ValueError("exemplar instruction must be non-empty")
        parse_script(self.lines)  # must parse under the engine grammar


def parse_exemplars(text: str) -> list[Exemplar]:
    exemplars: list[Exemplar] = []
    seen: set[int] = set()
    for doc in read_lexicon(text, kind="exemplars"):
        try:
            ex = Exemplar(
                exemplar_id=int(doc["exemplar_id"]),
                tags=tuple(doc["tags"]),
                instruction=doc["instruction"],
                lines=tuple(doc["lines"]),
            )
        except (KeyError, ValueError, ParseError) as exc:
            raise LexiconError(f"bad exemplar entry {doc!r}: {exc}") from exc
        if ex.exemplar_id in seen:
            raise LexiconError(f"duplicate exemplar_id {ex.exemplar_id}")
        seen.add(ex.exemplar_id)
        exemplars.append(ex)
    return exemplars


def load_exemplars(path: str | Path | None = None) -> list[Exemplar]:
    text = Path(path).read_text(encoding="utf-8") if path else shipped_lexicon_text("exemplars.jsonl")
    return parse_exemplars(text)


# --- decoupling -----------------------------------------------------------------


@dataclass(frozen=True)
class SubGoal:
    label: str
    tags: tuple[str, ...]
    arg_names: tuple[str, ...]


# Per-type decomposition into bounded sub-goals. A sub-goal that mentions
# only optional arguments is dropped when none of them was provided.
SUBGOAL_MAP: dict[str, tuple[SubGoal, ...]] = {
    "scene_setup": (
        SubGoal("create the scene entity", ("scene", "spawn", "world"), ("scene_name",)),
        SubGoal("configure scene properties", ("scene", "config", "property"), ("theme", "size")),
    ),
    "entity_creation": (
        SubGoal("spawn the entity", ("spawn", "entity", "character"), ("name", "archetype")),
        SubGoal("configure entity properties", ("property", "config", "entity"), ("hp",)),
    ),
    "behavior_scripting": (
        SubGoal("bind the behavior handler", ("behavior", "bind", "event"), ("entity", "event", "handler")),
    ),
    "ui_binding": (
        SubGoal("create the ui widget", ("ui", "spawn", "display"), ("element",)),
        SubGoal("bind the widget to entity state", ("ui", "bind", "property"), ("entity", "property")),
    ),
    "asset_config": (
        SubGoal("register the asset", ("asset", "spawn", "config"), ("asset_name",)),
        SubGoal("configure asset source", ("asset", "config", "property"), ("path", "scale")),
    ),
    "logic_wiring": (
        SubGoal("wire the trigger", ("logic", "wire", "event", "bind"), ("source", "event", "target")),
    ),
    "audio_config": (
        SubGoal("create the audio clip", ("audio", "spawn", "config"), ("clip",)),
        SubGoal("configure audio playback", ("audio", "config", "property"), ("trigger", "volume")),
    ),
    "win_condition": (
        SubGoal("declare the win condition", ("win", "condition", "logic"), ("condition", "target")),
    ),
}


def decouple(
    task: Task, entry: TaskTypeEntry, line_budget: int = DEFAULT_LINE_BUDGET
) -> list[SnippetSpec]:
    """One snippet spec per applicable sub-goal of the task's type.

    Goals embed ``name=value`` for each provided argument, so every
    required argument is referenced by at least one spec.
    """
    if task.task_type is None or task.arguments is None:
        raise ValueError(f"task {task.task_id} is not ready for decoupling")
    required_missing = [
        f.arg_name
        for f in entry.arg_schema
        if f.required and f.arg_name not in task.arguments.values
    ]
    if required_missing:
        raise ValueError(f"task {task.task_id} missing required args {required_missing}")
    values = task.arguments.values
    required = {f.arg_name for f in entry.arg_schema if f.required}
    specs: list[SnippetSpec] = []
    unit = 0
    for sub in SUBGOAL_MAP[entry.name]:
        present = [a for a in sub.arg_names if a in values]
        has_required = any(a in required for a in sub.arg_names)
        if not present and not has_required and sub.arg_names:
            continue
        rendered = " ".join(f"{a}={values[a]}" for a in present)
        goal = f"{sub.label} for task {task.task_id}"
        if rendered:
            goal += f": {rendered}"
        specs.append(
            SnippetSpec(
                task_id=task.task_id,
                unit_index=unit,
                goal=goal,
                line_budget=line_budget,
                tags=sub.tags,
            )
        )
        unit += 1
    return specs


# --- prompt assembly --------------------------------------------------------------


@dataclass(frozen=True)
class PromptBundle:
    spec: SnippetSpec
    exemplars: tuple[Exemplar, ...]
    grammar: str
    low_relevance: bool


def assemble_prompt(
    spec: SnippetSpec, exemplars: list[Exemplar], m: int = DEFAULT_EXEMPLAR_COUNT
) -> PromptBundle:
    """Top-m exemplars by tag overlap (ties by ascending exemplar_id)."""
    if not exemplars:
        raise ValueError("exemplar lexicon is empty")
    tag_set = set(spec.tags)
    ranked = sorted(
        exemplars, key=lambda ex: (-len(tag_set & set(ex.tags)), ex.exemplar_id)
    )
    chosen = tuple(ranked[:m]) if m > 0 else ()
    low_relevance = bool(chosen) and all(
        not (tag_set & set(ex.tags)) for ex in chosen
    )
    return PromptBundle(
        spec=spec, exemplars=chosen, grammar=GRAMMAR_HELP, low_relevance=low_relevance
    )


def parse_snippet_lines(raw: str) -> dict[str, Any]:
    """Codegen responses are raw engine-command text, kept verbatim."""
    lines = [line.rstrip() for line in raw.strip("\n").splitlines()]
    return {"lines": lines}


def generation_prompt(bundle: PromptBundle, key: str) -> StagePrompt:
    parts = [
        f"Goal: {bundle.spec.goal}",
        f"Write at most {bundle.spec.line_budget} engine command lines.",
        bundle.grammar,
    ]
    for ex in bundle.exemplars:
        parts.append(f"Example ({ex.instruction}):\n" + "\n".join(ex.lines))
    if bundle.low_relevance:
        parts.append("Note: no closely related example was available.")
    return StagePrompt(
        stage="gen_code",
        role=AgentRole.ENGINE_ENGINEER,
        key=key,
        instructions="You are the game engine engineer writing engine command snippets.",
        body="\n\n".join(parts),
        schema=parse_snippet_lines,
        record_stages=("request", "plan", "task_review"),
    )


# --- candidates -----------------------------------------------------------------------


@dataclass(frozen=True)
class Candidate:
    index: int
    lines: tuple[str, ...] | None
    error: str | None = None  # generation failure, not a test failure

    def to_doc(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "lines": list(self.lines) if self.lines is not None else None,
            "error": self.error,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> Candidate:
        lines = doc.get("lines")
        return cls(
            index=int(doc["index"]),
            lines=tuple(lines) if lines is not None else None,
            error=doc.get("error"),
        )


@dataclass(frozen=True)
class TestReport:
    candidate: int
    parse_ok: bool
    tracebacks: tuple[Traceback, ...]
    commands_executed: int
    state_delta: dict[str, Any]

    def __post_init__(self) -> None:
        if not self.parse_ok and self.commands_executed != 0:
            raise ValueError("parse failure cannot have executed commands")

    @property
    def passing(self) -> bool:
        return self.parse_ok and not self.tracebacks

    def to_doc(self) -> dict[str, Any]:
        return {
            "candidate": self.candidate,
            "parse_ok": self.parse_ok,
            "tracebacks": [t.to_doc() for t in self.tracebacks],
            "commands_executed": self.commands_executed,
            "state_delta": self.state_delta,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> TestReport:
        return cls(
            candidate=int(doc["candidate"]),
            parse_ok=bool(doc["parse_ok"]),
            tracebacks=tuple(Traceback.from_doc(t) for t in doc["tracebacks"]),
            commands_executed=int(doc["commands_executed"]),
            state_delta=dict(doc["state_delta"]),
        )


@dataclass
class CandidateSet:
    """K candidates for one snippet spec, their verdicts, and the pick."""

    spec: SnippetSpec
    candidates: tuple[Candidate, ...]
    reports: tuple[TestReport, ...] = ()
    user_vetoes: set[int] = field(default_factory=set)
    selected: int | None = None
    base_state: EngineState = field(default_factory=EngineState)

    def selected_lines(self) -> list[str]:
        if self.selected is None:
            raise ValueError("no candidate selected")
        lines = self.candidates[self.selected].lines
        assert lines is not None
        return list(lines)

    def to_doc(self) -> dict[str, Any]:
        return {
            "spec": self.spec.to_doc(),
            "candidates": [c.to_doc() for c in self.candidates],
            "reports": [r.to_doc() for r in self.reports],
            "user_vetoes": sorted(self.user_vetoes),
            "selected": self.selected,
            "base_state": self.base_state.to_doc(),
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> CandidateSet:
        return cls(
            spec=SnippetSpec.from_doc(doc["spec"]),
            candidates=tuple(Candidate.from_doc(c) for c in doc["candidates"]),
            reports=tuple(TestReport.from_doc(r) for r in doc["reports"]),
            user_vetoes=set(doc["user_vetoes"]),
            selected=doc.get("selected"),
            base_state=EngineState.from_doc(doc["base_state"]),
        )


def generate_candidates(
    backend: Backend,
    memory: PrivateMemory,
    record: PublicRecord,
    bundle: PromptBundle,
    k: int,
    key_base: str,
) -> tuple[list[Candidate], PublicRecord]:
    """Exactly K backend calls; individual failures become failed candidates,
    but K failures out of K escalate."""
    if k < 1:
        raise ValueError("K must be >= 1")
    candidates: list[Candidate] = []
    for i in range(k):
        prompt = generation_prompt(bundle, key=f"{key_base}:c{i}")
        try:
            output, record = agent_step(
                AgentRole.ENGINE_ENGINEER, memory, record, prompt, backend
            )
        except (UnknownScriptKey, BackendUnavailable) as exc:
            candidates.append(Candidate(index=i, lines=None, error=str(exc)))
            continue
        candidates.append(Candidate(index=i, lines=tuple(output.payload["lines"])))
    if all(c.lines is None for c in candidates):
        raise AllCandidatesFailed(
            f"all {k} generation calls failed for task {bundle.spec.task_id} "
            f"unit {bundle.spec.unit_index}"
        )
    return candidates, record


def _state_delta(commands: list[Command], outcomes: list[str]) -> dict[str, Any]:
    delta: dict[str, Any] = {"spawned": [], "set": [], "bound": [], "emitted": [], "logs": 0}
    for cmd, outcome in zip(commands, outcomes):
        if outcome != "ok":
            continue
        if cmd.verb == "SPAWN":
            delta["spawned"].append(cmd.operands[0])
        elif cmd.verb == "SET":
            delta["set"].append(f"{cmd.operands[0]}.{cmd.operands[1]}")
        elif cmd.verb == "BIND":
            delta["bound"].append(f"{cmd.operands[0]}.{cmd.operands[1]}")
        elif cmd.verb == "EMIT":
            delta["emitted"].append(f"{cmd.operands[0]}.{cmd.operands[1]}")
        elif cmd.verb == "LOG":
            delta["logs"] += 1
    return delta


def sandbox_test(
    candidate: Candidate,
    base_state: EngineState,
    *,
    unit: int = 0,
) -> TestReport:
    """Parse and execute against a copy of the base state; all failures are
    report content, never exceptions."""
    if candidate.lines is None:
        return TestReport(
            candidate=candidate.index,
            parse_ok=False,
            tracebacks=(
                Traceback(-1, "", "GenerationFailed", candidate.error or "generation failed"),
            ),
            commands_executed=0,
            state_delta={},
        )
    try:
        commands = parse_script(candidate.lines)
    except ParseError as exc:
        return TestReport(
            candidate=candidate.index,
            parse_ok=False,
            tracebacks=(Traceback(-1, candidate.lines[exc.line - 1], "ParseError", str(exc)),),
            commands_executed=0,
            state_delta={},
        )
    _, entries, tracebacks = execute(base_state, commands, task_id=-1, unit=unit)
    return TestReport(
        candidate=candidate.index,
        parse_ok=True,
        tracebacks=tuple(tracebacks),
        commands_executed=len(entries),
        state_delta=_state_delta(commands, [e.outcome for e in entries]),
    )


def select_candidate(candidate_set: CandidateSet) -> int | None:
    """Lowest-index candidate that passed testing and is not vetoed."""
    if len(candidate_set.reports) != len(candidate_set.candidates):
        raise ValueError("reports incomplete")
    by_index = {r.candidate: r for r in candidate_set.reports}
    for candidate in candidate_set.candidates:
        if candidate.index in candidate_set.user_vetoes:
            continue
        if by_index[candidate.index].passing:
            return candidate.index
    return None


# --- code review -------------------------------------------------------------------


def parse_code_review(raw: str) -> dict[str, Any]:
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"not a JSON document: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("findings"), list):
        raise SchemaViolation("code review needs a 'findings' list")
    revision = doc.get("revision")
    if revision is not None and not isinstance(revision, str):
        raise SchemaViolation("'revision' must be a string or null")
    return {"findings": doc["findings"], "revision": revision}


def code_review_prompt(lines: list[str], task: Task, key: str, stage: str, extra: str = "") -> StagePrompt:
    body = (
        f"Task {task.task_id}: {task.description}\n"
        f"Arguments: {json.dumps(task.arguments.to_doc() if task.arguments else None, sort_keys=True)}\n"
        "Snippet under review:\n" + "\n".join(lines) + "\n"
        'Answer JSON {"findings": [{"kind": ..., "target_id": ..., "note": ...}], '
        '"revision": "replacement lines or null"}'
    )
    if extra:
        body += "\n" + extra
    return StagePrompt(
        stage=stage,
        role=AgentRole.CODE_REVIEWER,
        key=key,
        instructions="You are the code reviewer inspecting an engine snippet.",
        body=body,
        schema=parse_code_review,
        record_stages=("request", "plan", "gen_code"),
    )


def deterministic_code_findings(
    lines: list[str],
    task: Task,
    entry: TaskTypeEntry,
    base_state: EngineState,
    task_snippet_text: str,
) -> list[Finding]:
    """Reference resolution against the projected state, plus required-arg
    coverage over the task's combined snippet text."""
    findings: list[Finding] = []
    report = sandbox_test(Candidate(index=0, lines=tuple(lines)), base_state)
    for tb in report.tracebacks:
        findings.append(
            Finding(
                kind="hallucination",
                target_id=task.task_id,
                note=f"{tb.kind} at {tb.command!r}: {tb.message}",
            )
        )
    values = task.arguments.values if task.arguments else {}
    for f in entry.arg_schema:
        if not f.required or f.arg_name not in values:
            continue
        if str(values[f.arg_name]) not in task_snippet_text:
            findings.append(
                Finding(
                    kind="arg_mismatch",
                    target_id=task.task_id,
                    note=f"required argument {f.arg_name}={values[f.arg_name]!r} "
                    "does not appear in the task's code",
                )
            )
    return findings


def review_code(
    backend: Backend,
    memory: PrivateMemory,
    record: PublicRecord,
    lines: list[str],
    task: Task,
    entry: TaskTypeEntry,
    base_state: EngineState,
    key: str,
    task_snippet_text: str | None = None,
) -> tuple[ReviewVerdict, list[str], PublicRecord]:
    """Deterministic checks plus backend review; an offered revision replaces
    the snippet only after it passes the sandbox."""
    combined = task_snippet_text if task_snippet_text is not None else "\n".join(lines)
    findings = deterministic_code_findings(lines, task, entry, base_state, combined)
    prompt = code_review_prompt(lines, task, key, stage="code_review")
    output, record = agent_step(AgentRole.CODE_REVIEWER, memory, record, prompt, backend)
    for f in output.payload["findings"]:
        findings.append(
            Finding(
                kind=f["kind"],
                target_id=int(f.get("target_id", task.task_id)),
                note=str(f.get("note", "")),
            )
        )
    final_lines = list(lines)
    applied_revision: str | None = None
    revision = output.payload["revision"]
    if revision:
        revised = [line.rstrip() for line in revision.strip("\n").splitlines()]
        report = sandbox_test(Candidate(index=0, lines=tuple(revised)), base_state)
        if report.passing:
            final_lines = revised
            applied_revision = revision
        else:
            findings.append(
                Finding(
                    kind="vague",
                    target_id=task.task_id,
                    note="reviewer revision failed the sandbox; original kept",
                )
            )
    return verdict_from_findings(findings, revision=applied_revision), final_lines, record


def apply_user_code_suggestion(
    backend: Backend,
    memory: PrivateMemory,
    record: PublicRecord,
    lines: list[str],
    suggestion: str,
    task: Task,
    base_state: EngineState,
    key: str,
) -> tuple[list[str], ReviewVerdict | None, PublicRecord]:
    """Route a user suggestion through the code reviewer; accepted revisions
    must pass the sandbox. An empty suggestion is a no-op."""
    if not suggestion.strip():
        return list(lines), None, record
    prompt = code_review_prompt(
        lines,
        task,
        key,
        stage="code_suggestion",
        extra=f"User suggestion to assess and incorporate as appropriate:\n{suggestion}",
    )
    output, record = agent_step(AgentRole.CODE_REVIEWER, memory, record, prompt, backend)
    findings = [
        Finding(
            kind=f["kind"],
            target_id=int(f.get("target_id", task.task_id)),
            note=str(f.get("note", "")),
        )
        for f in output.payload["findings"]
    ]
    final_lines = list(lines)
    applied: str | None = None
    revision = output.payload["revision"]
    if revision:
        revised = [line.rstrip() for line in revision.strip("\n").splitlines()]
        report = sandbox_test(Candidate(index=0, lines=tuple(revised)), base_state)
        if report.passing:
            final_lines = revised
            applied = revision
        else:
            findings.append(
                Finding(
                    kind="vague",
                    target_id=task.task_id,
                    note="suggested revision failed the sandbox; snippet kept",
                )
            )
    return final_lines, verdict_from_findings(findings, revision=applied), record
