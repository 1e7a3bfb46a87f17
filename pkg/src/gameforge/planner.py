"""Planning stage: genre classification, template-driven drafting, the plan
review loop, redundancy filtering, and user rectification."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from gameforge.agents import (
    AgentRole,
    Backend,
    PrivateMemory,
    PublicRecord,
    StagePrompt,
    agent_step,
)
from gameforge.errors import (
    BoundsViolation,
    DanglingDependency,
    InvalidPermutation,
    LexiconError,
    NoSignal,
    SchemaViolation,
    UnknownTarget,
)
from gameforge.lexicon import keyword_universe, read_lexicon, shipped_lexicon_text
from gameforge.model import (
    Finding,
    GameRequest,
    Genre,
    Task,
    TaskPlan,
    TaskTypeEntry,
    normalize,
    similarity,
    verdict_from_findings,
)
from gameforge.model import ReviewVerdict

DEFAULT_MAX_ROUNDS = 3


@dataclass(frozen=True)
class TemplateSection:
    section_name: str
    guidance: str
    min_tasks: int
    max_tasks: int

    def __post_init__(self) -> None:
        if self.min_tasks > self.max_tasks:
            raise ValueError(
                f"section {self.section_name!r}: min_tasks > max_tasks"
            )


@dataclass(frozen=True)
class PlanTemplate:
    genre: Genre
    sections: tuple[TemplateSection, ...]

    def __post_init__(self) -> None:
        if not self.sections:
            raise ValueError("template needs at least one section")


def parse_templates(text: str) -> dict[Genre, PlanTemplate]:
    templates: dict[Genre, PlanTemplate] = {}
    for entry in read_lexicon(text, kind="templates"):
        try:
            genre = Genre(entry["genre"])
            sections = tuple(
                TemplateSection(
                    section_name=s["section_name"],
                    guidance=s["guidance"],
                    min_tasks=int(s["min_tasks"]),
                    max_tasks=int(s["max_tasks"]),
                )
                for s in entry["sections"]
            )
            templates[genre] = PlanTemplate(genre=genre, sections=sections)
        except (KeyError, ValueError) as exc:
            raise LexiconError(f"bad template entry {entry!r}: {exc}") from exc
    return templates


def load_templates(path: str | Path | None = None) -> dict[Genre, PlanTemplate]:
    text = Path(path).read_text(encoding="utf-8") if path else shipped_lexicon_text("templates.jsonl")
    return parse_templates(text)


# --- genre classification ------------------------------------------------------


def classify_genre(
    request_text: str, genre_lexicon: dict[Genre, dict[str, float]]
) -> tuple[Genre, dict[str, float]]:
    """Keyword-weight voting; ties break by genre declaration order."""
    if not request_text.strip():
        raise ValueError("request text must be non-empty")
    tokens = normalize(request_text)
    scores = {
        genre: sum(w for kw, w in keywords.items() if kw in tokens)
        for genre, keywords in genre_lexicon.items()
    }
    if all(s == 0 for s in scores.values()):
        raise NoSignal("no genre keyword matched the request")
    winner = max(Genre, key=lambda g: (scores.get(g, 0.0), -list(Genre).index(g)))
    return winner, {g.value: scores.get(g, 0.0) for g in Genre}


# --- drafting -------------------------------------------------------------------


def plan_document_schema(template: PlanTemplate) -> Callable[[str], dict[str, Any]]:
    """Structural validator for a drafted plan document.

    The document must list exactly the template's sections in order; task
    dependencies are global indices over the flattened task list. Section
    bounds are checked separately so they get their own re-prompt rule.
    """

    def parse(raw: str) -> dict[str, Any]:
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"not a JSON document: {exc}") from exc
        if not isinstance(doc, dict) or not isinstance(doc.get("sections"), list):
            raise SchemaViolation("plan document needs a 'sections' list")
        names = [s.get("name") for s in doc["sections"] if isinstance(s, dict)]
        want = [s.section_name for s in template.sections]
        if names != want:
            raise SchemaViolation(f"sections must be exactly {want} in order, got {names}")
        total = 0
        for section in doc["sections"]:
            tasks = section.get("tasks")
            if not isinstance(tasks, list):
                raise SchemaViolation(f"section {section['name']!r} needs a 'tasks' list")
            for t in tasks:
                if not isinstance(t, dict) or not str(t.get("description", "")).strip():
                    raise SchemaViolation("every task needs a non-empty description")
                deps = t.get("depends_on", [])
                if not isinstance(deps, list) or not all(isinstance(d, int) for d in deps):
                    raise SchemaViolation("depends_on must be a list of task indices")
            total += len(tasks)
        flat_index = 0
        for section in doc["sections"]:
            for t in section["tasks"]:
                for d in t.get("depends_on", []):
                    if d < 0 or d >= total or d == flat_index:
                        raise SchemaViolation(
                            f"task {flat_index} has invalid dependency {d}"
                        )
                flat_index += 1
        return doc

    return parse


def _flatten_plan_doc(doc: dict[str, Any]) -> list[Task]:
    tasks: list[Task] = []
    index = 0
    for section in doc["sections"]:
        for t in section["tasks"]:
            tasks.append(
                Task(
                    task_id=index,
                    description=str(t["description"]).strip(),
                    depends_on=tuple(sorted(set(t.get("depends_on", ())))),
                )
            )
            index += 1
    return tasks


def _check_bounds(doc: dict[str, Any], template: PlanTemplate) -> None:
    by_name = {s["name"]: len(s["tasks"]) for s in doc["sections"]}
    for section in template.sections:
        count = by_name.get(section.section_name, 0)
        if not (section.min_tasks <= count <= section.max_tasks):
            raise BoundsViolation(
                f"section {section.section_name!r} has {count} tasks, "
                f"wants {section.min_tasks}..{section.max_tasks}"
            )


def draft_prompt(
    request: GameRequest,
    template: PlanTemplate,
    key: str,
    feedback: list[Finding] | None = None,
    bounds_note: str = "",
) -> StagePrompt:
    section_lines = [
        f"- {s.section_name}: {s.guidance} ({s.min_tasks}..{s.max_tasks} tasks)"
        for s in template.sections
    ]
    body = (
        f"Request: {request.text}\n"
        f"Genre: {template.genre.value}\n"
        "Complete the plan template. Answer JSON {\"sections\": [{\"name\": ..., "
        "\"tasks\": [{\"description\": ..., \"depends_on\": [indices]}]}]} listing "
        "every section in order.\n" + "\n".join(section_lines)
    )
    if feedback:
        notes = "\n".join(f"- {f.kind} on task {f.target_id}: {f.note}" for f in feedback)
        body += "\nReviewer findings to address:\n" + notes
    if bounds_note:
        body += "\n" + bounds_note
    return StagePrompt(
        stage="plan_draft",
        role=AgentRole.DEVELOPMENT_MANAGER,
        key=key,
        instructions="You are the game development manager completing a plan template.",
        body=body,
        schema=plan_document_schema(template),
        record_stages=("request",),
    )


def draft_plan(
    backend: Backend,
    memory: PrivateMemory,
    record: PublicRecord,
    request: GameRequest,
    template: PlanTemplate,
    key: str,
    prior: TaskPlan | None = None,
    feedback: list[Finding] | None = None,
) -> tuple[TaskPlan, PublicRecord]:
    """Draft (or revise) a plan; one re-prompt if section bounds break."""
    prompt = draft_prompt(request, template, key, feedback=feedback)
    output, record = agent_step(AgentRole.DEVELOPMENT_MANAGER, memory, record, prompt, backend)
    try:
        _check_bounds(output.payload, template)
    except BoundsViolation as exc:
        retry = draft_prompt(
            request,
            template,
            key,
            feedback=feedback,
            bounds_note=f"The previous plan broke the section bounds: {exc}. Stay within them.",
        )
        output, record = agent_step(
            AgentRole.DEVELOPMENT_MANAGER, memory, record, retry, backend
        )
        _check_bounds(output.payload, template)  # second violation escalates
    tasks = _flatten_plan_doc(output.payload)
    plan = TaskPlan(
        plan_id=f"{request.request_id}-plan",
        request_id=request.request_id,
        genre=template.genre,
        tasks=tuple(tasks),
        revision=prior.revision + 1 if prior else 0,
        status="draft",
    )
    return plan, record


# --- review ----------------------------------------------------------------------


def parse_review_document(raw: str) -> dict[str, Any]:
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"not a JSON document: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("findings"), list):
        raise SchemaViolation("review document needs a 'findings' list")
    for f in doc["findings"]:
        if not isinstance(f, dict) or "kind" not in f or "target_id" not in f:
            raise SchemaViolation(f"malformed finding: {f!r}")
    return doc


def deterministic_plan_findings(
    plan: TaskPlan, types: list[TaskTypeEntry], theta: float
) -> list[Finding]:
    """Redundancy via pairwise token-set similarity; hallucination via the
    lexicon keyword universe."""
    findings: list[Finding] = []
    universe = keyword_universe(types)
    token_sets = [normalize(t.description) for t in plan.tasks]
    for j, task in enumerate(plan.tasks):
        if not (token_sets[j] & universe):
            findings.append(
                Finding(
                    kind="hallucination",
                    target_id=task.task_id,
                    note="description names no capability from the task-type lexicon",
                )
            )
    for i in range(len(plan.tasks)):
        for j in range(i + 1, len(plan.tasks)):
            s = similarity(token_sets[i], token_sets[j])
            if s >= theta:
                findings.append(
                    Finding(
                        kind="redundancy",
                        target_id=j,
                        note=(
                            f"similarity {s:.2f} with task {i}: "
                            "uninformative or unnecessary duplicate"
                        ),
                    )
                )
    return findings


def review_prompt(plan: TaskPlan, key: str) -> StagePrompt:
    body = (
        "Review this plan for hallucination, redundancy, or vagueness. "
        "Answer JSON {\"findings\": [{\"kind\": ..., \"target_id\": task id, \"note\": ...}]}.\n"
        + json.dumps(plan.to_doc(), sort_keys=True)
    )
    return StagePrompt(
        stage="plan_review",
        role=AgentRole.PLAN_REVIEWER,
        key=key,
        instructions="You are the plan reviewer assessing a drafted game plan.",
        body=body,
        schema=parse_review_document,
        record_stages=("request", "plan_draft"),
    )


def review_plan(
    backend: Backend,
    memory: PrivateMemory,
    record: PublicRecord,
    plan: TaskPlan,
    types: list[TaskTypeEntry],
    theta: float,
    key: str,
) -> tuple[ReviewVerdict, PublicRecord]:
    """Deterministic checks plus the backend reviewer's findings."""
    if plan.status not in ("draft", "under_review"):
        raise ValueError(f"plan in status {plan.status!r} is not reviewable")
    findings = deterministic_plan_findings(plan, types, theta)
    output, record = agent_step(
        AgentRole.PLAN_REVIEWER, memory, record, review_prompt(plan, key), backend
    )
    for f in output.payload["findings"]:
        findings.append(
            Finding(kind=f["kind"], target_id=int(f["target_id"]), note=str(f.get("note", "")))
        )
    return verdict_from_findings(findings), record


def recheck_plan(plan: TaskPlan, types: list[TaskTypeEntry], theta: float) -> ReviewVerdict:
    """Deterministic-only re-check used after user rectifications."""
    return verdict_from_findings(deterministic_plan_findings(plan, types, theta))


# --- redundancy filter --------------------------------------------------------------


def filter_redundant(plan: TaskPlan, theta: float) -> TaskPlan:
    """Collapse each similarity-connected group to its lowest-id member.

    Survivors are re-indexed contiguously and dependencies on removed tasks
    are remapped to the group survivor. Always bumps the revision.
    """
    n = len(plan.tasks)
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    token_sets = [normalize(t.description) for t in plan.tasks]
    for i in range(n):
        for j in range(i + 1, n):
            if similarity(token_sets[i], token_sets[j]) >= theta:
                union(i, j)

    survivor = {i: find(i) for i in range(n)}
    keep = sorted({find(i) for i in range(n)})
    new_id = {old: new for new, old in enumerate(keep)}
    tasks = []
    for old in keep:
        task = plan.tasks[old]
        deps = sorted({new_id[survivor[d]] for d in task.depends_on}) if task.depends_on else []
        deps = [d for d in deps if d != new_id[old]]
        tasks.append(task.with_(task_id=new_id[old], depends_on=tuple(deps)))
    return plan.with_tasks(tasks)


# --- plan loop ------------------------------------------------------------------------


def plan_loop(
    backend: Backend,
    manager_memory: PrivateMemory,
    reviewer_memory: PrivateMemory,
    record: PublicRecord,
    request: GameRequest,
    template: PlanTemplate,
    types: list[TaskTypeEntry],
    theta: float,
    key_base: str,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
) -> tuple[TaskPlan, ReviewVerdict, PublicRecord, int]:
    """Alternate draft/revise and review until accepted or rounds run out.

    On acceptance the plan status is accepted; otherwise awaiting_user so
    the interim plan can be shown to the operator.
    """
    plan: TaskPlan | None = None
    verdict: ReviewVerdict | None = None
    feedback: list[Finding] = []
    rounds = 0
    for round_no in range(1, max_rounds + 1):
        rounds = round_no
        plan, record = draft_plan(
            backend,
            manager_memory,
            record,
            request,
            template,
            key=f"{key_base}:plan_draft:r{round_no}",
            prior=plan,
            feedback=feedback,
        )
        plan = plan.with_status("under_review")
        verdict, record = review_plan(
            backend,
            reviewer_memory,
            record,
            plan,
            types,
            theta,
            key=f"{key_base}:plan_review:r{round_no}",
        )
        if verdict.accepted:
            return plan.with_status("accepted"), verdict, record, rounds
        feedback = list(verdict.findings)
    assert plan is not None and verdict is not None
    return plan.with_status("awaiting_user"), verdict, record, rounds


# --- rectification -----------------------------------------------------------------------


RECTIFICATION_KINDS = ("add", "remove", "modify", "reorder")


@dataclass(frozen=True)
class Rectification:
    kind: str
    target_id: int | None = None
    description: str | None = None
    depends_on: tuple[int, ...] | None = None
    order: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in RECTIFICATION_KINDS:
            raise ValueError(f"unknown rectification kind {self.kind!r}")

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> Rectification:
        return cls(
            kind=doc.get("kind", ""),
            target_id=doc.get("target_id"),
            description=doc.get("description"),
            depends_on=tuple(doc["depends_on"]) if doc.get("depends_on") is not None else None,
            order=tuple(doc["order"]) if doc.get("order") is not None else None,
        )


def apply_rectification(plan: TaskPlan, rect: Rectification) -> TaskPlan:
    """Apply one user edit; the caller re-checks the result before acceptance."""
    if plan.status not in ("awaiting_user", "accepted"):
        raise ValueError(f"plan in status {plan.status!r} cannot be rectified")
    n = len(plan.tasks)
    if rect.kind == "add":
        if not rect.description or not rect.description.strip():
            raise ValueError("add needs a description")
        deps = tuple(sorted(set(rect.depends_on or ())))
        for d in deps:
            if d < 0 or d >= n:
                raise DanglingDependency(f"new task depends on missing task {d}")
        new = Task(task_id=n, description=rect.description.strip(), depends_on=deps)
        return plan.with_tasks(list(plan.tasks) + [new])

    if rect.kind == "remove":
        if rect.target_id is None or not (0 <= rect.target_id < n):
            raise UnknownTarget(f"no task {rect.target_id} in plan")
        dependents = [
            t.task_id for t in plan.tasks
            if rect.target_id in t.depends_on and t.task_id != rect.target_id
        ]
        if dependents:
            raise DanglingDependency(
                f"tasks {dependents} depend on task {rect.target_id}; edit them first"
            )
        kept = [t for t in plan.tasks if t.task_id != rect.target_id]
        remap = {t.task_id: i for i, t in enumerate(kept)}
        tasks = [
            t.with_(
                task_id=remap[t.task_id],
                depends_on=tuple(sorted(remap[d] for d in t.depends_on)),
            )
            for t in kept
        ]
        return plan.with_tasks(tasks)

    if rect.kind == "modify":
        if rect.target_id is None or not (0 <= rect.target_id < n):
            raise UnknownTarget(f"no task {rect.target_id} in plan")
        task = plan.tasks[rect.target_id]
        changes: dict[str, Any] = {"reviewed": False}
        if rect.description is not None:
            if not rect.description.strip():
                raise ValueError("modified description must be non-empty")
            changes.update(description=rect.description.strip(), task_type=None, arguments=None)
        if rect.depends_on is not None:
            deps = tuple(sorted(set(rect.depends_on)))
            for d in deps:
                if d < 0 or d >= n:
                    raise DanglingDependency(f"task {task.task_id} would depend on missing {d}")
                if d == task.task_id:
                    raise DanglingDependency(f"task {task.task_id} cannot depend on itself")
            changes["depends_on"] = deps
        tasks = list(plan.tasks)
        tasks[rect.target_id] = task.with_(**changes)
        return plan.with_tasks(tasks)

    # reorder: payload lists existing task ids in their new sequence
    order = rect.order or ()
    if sorted(order) != list(range(n)):
        raise InvalidPermutation(f"order {list(order)} is not a permutation of 0..{n - 1}")
    position = {old: new for new, old in enumerate(order)}
    tasks = [
        plan.tasks[old].with_(
            task_id=new,
            depends_on=tuple(sorted(position[d] for d in plan.tasks[old].depends_on)),
        )
        for new, old in enumerate(order)
    ]
    return plan.with_tasks(tasks)
