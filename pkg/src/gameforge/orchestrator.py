"""Pipeline orchestration: the five-stage state machine over one project.

Each ``advance`` call runs exactly one stage and ends on a state
transition, so persisting at every transition gives crash recovery for
free. Escalations land in explicit awaiting-user states; the headless
driver resolves the approvable ones and fails the rest.
"""

from __future__ import annotations

import hashlib
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from gameforge import codegen, planner, tasks as taskmod
from gameforge.agents import (
    AgentRole,
    Backend,
    PrivateMemory,
    PublicRecord,
    RemoteBackend,
    RemoteConfig,
    ScriptedBackend,
    append_event,
)
from gameforge.codegen import CandidateSet, SnippetSpec
from gameforge.engine import EngineState, ExecutionLog, RunSummary, execute, parse_script, run_sequence, summarize
from gameforge.errors import (
    AllCandidatesFailed,
    BoundsViolation,
    CycleDetected,
    GameForgeError,
    InvalidAction,
    KindMismatch,
    NoSignal,
    OscillationGuard,
    SchemaViolation,
    UnknownScriptKey,
    UnknownTarget,
)
from gameforge.lexicon import load_genre_lexicon, load_task_types
from gameforge.model import (
    ArgumentSet,
    DEFAULT_THETA,
    GameRequest,
    Genre,
    Task,
    TaskPlan,
    check_arg_value,
)
from gameforge.tasks import ExecutionOrder, TaskGraph


class PipelineState(str, Enum):
    RECEIVED = "received"
    PLANNING = "planning"
    PLAN_AWAITING_USER = "plan_awaiting_user"
    TASK_IDENTIFICATION = "task_identification"
    ARG_AWAITING_USER = "arg_awaiting_user"
    CODE_GEN = "code_gen"
    CANDIDATE_AWAITING_USER = "candidate_awaiting_user"
    CODE_REVIEW = "code_review"
    EXECUTING = "executing"
    SUMMARIZED = "summarized"
    FAILED = "failed"


AWAITING_STATES = {
    PipelineState.PLAN_AWAITING_USER,
    PipelineState.ARG_AWAITING_USER,
    PipelineState.CANDIDATE_AWAITING_USER,
}

TERMINAL_STATES = {PipelineState.SUMMARIZED, PipelineState.FAILED}

# The documented edges; the transition audit asserts runs never leave them.
TRANSITIONS: dict[PipelineState, set[PipelineState]] = {
    PipelineState.RECEIVED: {
        PipelineState.PLANNING,
        PipelineState.PLAN_AWAITING_USER,
        PipelineState.FAILED,
    },
    PipelineState.PLANNING: {
        PipelineState.TASK_IDENTIFICATION,
        PipelineState.PLAN_AWAITING_USER,
        PipelineState.FAILED,
    },
    PipelineState.PLAN_AWAITING_USER: {
        PipelineState.PLANNING,
        PipelineState.TASK_IDENTIFICATION,
        PipelineState.FAILED,
    },
    PipelineState.TASK_IDENTIFICATION: {
        PipelineState.ARG_AWAITING_USER,
        PipelineState.CODE_GEN,
        PipelineState.FAILED,
    },
    PipelineState.ARG_AWAITING_USER: {
        PipelineState.TASK_IDENTIFICATION,
        PipelineState.FAILED,
    },
    PipelineState.CODE_GEN: {
        PipelineState.CANDIDATE_AWAITING_USER,
        PipelineState.CODE_REVIEW,
        PipelineState.FAILED,
    },
    PipelineState.CANDIDATE_AWAITING_USER: {
        PipelineState.CODE_GEN,
        PipelineState.FAILED,
    },
    PipelineState.CODE_REVIEW: {
        PipelineState.EXECUTING,
        PipelineState.CANDIDATE_AWAITING_USER,
        PipelineState.FAILED,
    },
    PipelineState.EXECUTING: {
        PipelineState.SUMMARIZED,
        PipelineState.FAILED,
    },
    PipelineState.SUMMARIZED: set(),
    PipelineState.FAILED: set(),
}


@dataclass
class ProjectConfig:
    k: int = codegen.DEFAULT_K
    theta: float = DEFAULT_THETA
    max_rounds: int = planner.DEFAULT_MAX_ROUNDS
    interactive: bool = False
    line_budget: int = codegen.DEFAULT_LINE_BUDGET
    exemplar_count: int = codegen.DEFAULT_EXEMPLAR_COUNT
    backend: dict[str, Any] = field(default_factory=dict)
    lexicon_paths: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (1 <= self.k <= codegen.MAX_K):
            raise ValueError(f"K must be in 1..{codegen.MAX_K}")
        if not (0.0 < self.theta <= 1.0):
            raise ValueError("theta must be in (0, 1]")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")

    def to_doc(self) -> dict[str, Any]:
        return {
            "k": self.k,
            "theta": self.theta,
            "max_rounds": self.max_rounds,
            "interactive": self.interactive,
            "line_budget": self.line_budget,
            "exemplar_count": self.exemplar_count,
            "backend": dict(self.backend),
            "lexicon_paths": dict(self.lexicon_paths),
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> ProjectConfig:
        return cls(
            k=int(doc.get("k", codegen.DEFAULT_K)),
            theta=float(doc.get("theta", DEFAULT_THETA)),
            max_rounds=int(doc.get("max_rounds", planner.DEFAULT_MAX_ROUNDS)),
            interactive=bool(doc.get("interactive", False)),
            line_budget=int(doc.get("line_budget", codegen.DEFAULT_LINE_BUDGET)),
            exemplar_count=int(doc.get("exemplar_count", codegen.DEFAULT_EXEMPLAR_COUNT)),
            backend=dict(doc.get("backend", {})),
            lexicon_paths=dict(doc.get("lexicon_paths", {})),
        )


def build_backend(config: ProjectConfig) -> Backend:
    spec = config.backend or {"kind": "scripted", "fixtures": []}
    kind = spec.get("kind", "scripted")
    if kind == "scripted":
        return ScriptedBackend.from_paths(list(spec.get("fixtures", [])))
    if kind == "remote":
        remote = RemoteConfig.from_env(
            base_url=spec.get("base_url"),
            model=spec.get("model"),
            api_key=spec.get("api_key"),
            timeout=float(spec.get("timeout", 30.0)),
            max_retries=int(spec.get("max_retries", 2)),
            decoding=dict(spec.get("decoding", {})),
        )
        return RemoteBackend(remote)
    raise ValueError(f"unknown backend kind {kind!r}")


@dataclass
class Project:
    project_id: str
    request: GameRequest
    config: ProjectConfig
    state: PipelineState = PipelineState.RECEIVED
    genre: Genre | None = None
    genre_scores: dict[str, float] | None = None
    plan: TaskPlan | None = None
    graph: TaskGraph | None = None
    order: ExecutionOrder | None = None
    candidate_sets: list[CandidateSet] = field(default_factory=list)
    code_reviews: list[dict[str, Any]] = field(default_factory=list)
    log: ExecutionLog | None = None
    final_state: EngineState | None = None
    summary: RunSummary | None = None
    record: PublicRecord = field(default_factory=PublicRecord)
    memories: dict[str, PrivateMemory] = field(default_factory=dict)
    pending: dict[str, Any] | None = None
    failure: str | None = None
    suggestion_counts: dict[str, int] = field(default_factory=dict)

    def memory(self, role: AgentRole) -> PrivateMemory:
        mem = self.memories.get(role.value)
        if mem is None:
            mem = PrivateMemory(role.value)
            self.memories[role.value] = mem
        return mem

    def find_candidate_set(self, task_id: int, unit: int) -> CandidateSet | None:
        for cs in self.candidate_sets:
            if cs.spec.task_id == task_id and cs.spec.unit_index == unit:
                return cs
        return None

    def to_doc(self) -> dict[str, Any]:
        return {
            "project_id": self.project_id,
            "request": self.request.to_doc(),
            "config": self.config.to_doc(),
            "state": self.state.value,
            "genre": self.genre.value if self.genre else None,
            "genre_scores": self.genre_scores,
            "plan": self.plan.to_doc() if self.plan else None,
            "graph": self.graph.to_doc() if self.graph else None,
            "order": self.order.to_doc() if self.order else None,
            "candidate_sets": [cs.to_doc() for cs in self.candidate_sets],
            "code_reviews": list(self.code_reviews),
            "log": self.log.to_doc() if self.log else None,
            "final_state": self.final_state.to_doc() if self.final_state else None,
            "summary": self.summary.to_doc() if self.summary else None,
            "record": self.record.to_doc(),
            "memories": {role: mem.to_doc() for role, mem in sorted(self.memories.items())},
            "pending": self.pending,
            "failure": self.failure,
            "suggestion_counts": dict(self.suggestion_counts),
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> Project:
        return cls(
            project_id=doc["project_id"],
            request=GameRequest.from_doc(doc["request"]),
            config=ProjectConfig.from_doc(doc["config"]),
            state=PipelineState(doc["state"]),
            genre=Genre(doc["genre"]) if doc.get("genre") else None,
            genre_scores=doc.get("genre_scores"),
            plan=TaskPlan.from_doc(doc["plan"]) if doc.get("plan") else None,
            graph=TaskGraph.from_doc(doc["graph"]) if doc.get("graph") else None,
            order=ExecutionOrder.from_doc(doc["order"]) if doc.get("order") else None,
            candidate_sets=[CandidateSet.from_doc(c) for c in doc.get("candidate_sets", [])],
            code_reviews=list(doc.get("code_reviews", [])),
            log=ExecutionLog.from_doc(doc["log"]) if doc.get("log") else None,
            final_state=EngineState.from_doc(doc["final_state"]) if doc.get("final_state") else None,
            summary=RunSummary.from_doc(doc["summary"]) if doc.get("summary") else None,
            record=PublicRecord.from_doc(doc.get("record", [])),
            memories={
                role: PrivateMemory.from_doc(m) for role, m in doc.get("memories", {}).items()
            },
            pending=doc.get("pending"),
            failure=doc.get("failure"),
            suggestion_counts={k: int(v) for k, v in doc.get("suggestion_counts", {}).items()},
        )


def request_id_for_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def new_project(
    text: str,
    config: ProjectConfig | None = None,
    *,
    request_id: str | None = None,
    project_id: str | None = None,
    created_at: float | None = None,
) -> Project:
    request = GameRequest(
        request_id=request_id or request_id_for_text(text),
        text=text,
        created_at=created_at if created_at is not None else time.time(),
    )
    project = Project(
        project_id=project_id or uuid.uuid4().hex[:12],
        request=request,
        config=config or ProjectConfig(),
    )
    project.record = append_event(
        project.record,
        "user",
        "request",
        {"request_id": request.request_id, "text": request.text},
    )
    return project


# --- transitions --------------------------------------------------------------


def _transition(project: Project, to: PipelineState, cause: str | None = None) -> None:
    if to not in TRANSITIONS[project.state]:
        raise AssertionError(f"undocumented transition {project.state.value} -> {to.value}")
    payload: dict[str, Any] = {"from": project.state.value, "to": to.value}
    if cause:
        payload["cause"] = cause
    project.record = append_event(project.record, "orchestrator", "transition", payload)
    project.state = to


def _fail(project: Project, cause: str) -> None:
    project.failure = cause
    _transition(project, PipelineState.FAILED, cause=cause)


def _hold(project: Project, state: PipelineState, pending: dict[str, Any], cause: str) -> None:
    project.pending = pending
    _transition(project, state, cause=cause)


# --- stage runners ---------------------------------------------------------------


def advance(project: Project, backend: Backend | None = None) -> Project:
    """Run the current stage once and transition on its outcome."""
    if project.state in AWAITING_STATES:
        raise InvalidAction(f"project is awaiting user input ({project.state.value})")
    if project.state in TERMINAL_STATES:
        raise InvalidAction(f"project is {project.state.value}")
    backend = backend if backend is not None else build_backend(project.config)
    stage = {
        PipelineState.RECEIVED: _stage_received,
        PipelineState.PLANNING: _stage_planning,
        PipelineState.TASK_IDENTIFICATION: _stage_tasks,
        PipelineState.CODE_GEN: _stage_codegen,
        PipelineState.CODE_REVIEW: _stage_code_review,
        PipelineState.EXECUTING: _stage_executing,
    }[project.state]
    stage(project, backend)
    return project


def _stage_received(project: Project, backend: Backend) -> None:
    lexicon = load_genre_lexicon(project.config.lexicon_paths.get("genres"))
    try:
        genre, scores = planner.classify_genre(project.request.text, lexicon)
    except NoSignal:
        _hold(
            project,
            PipelineState.PLAN_AWAITING_USER,
            {"kind": "genre", "question": "No genre keyword matched; pick one."},
            cause="genre_unresolved",
        )
        return
    project.genre = genre
    project.genre_scores = scores
    project.record = append_event(
        project.record,
        AgentRole.CONTENT_DESIGNER.value,
        "genre",
        {"genre": genre.value, "scores": scores},
    )
    _transition(project, PipelineState.PLANNING)


def _stage_planning(project: Project, backend: Backend) -> None:
    assert project.genre is not None
    templates = planner.load_templates(project.config.lexicon_paths.get("templates"))
    types = load_task_types(project.config.lexicon_paths.get("task_types"))
    template = templates[project.genre]
    try:
        plan, verdict, record, rounds = planner.plan_loop(
            backend,
            project.memory(AgentRole.DEVELOPMENT_MANAGER),
            project.memory(AgentRole.PLAN_REVIEWER),
            project.record,
            project.request,
            template,
            types,
            project.config.theta,
            key_base=project.request.request_id,
            max_rounds=project.config.max_rounds,
        )
    except (SchemaViolation, BoundsViolation, UnknownScriptKey) as exc:
        _hold(
            project,
            PipelineState.PLAN_AWAITING_USER,
            {"kind": "error", "error": f"{type(exc).__name__}: {exc}"},
            cause=type(exc).__name__,
        )
        return
    project.record = record
    if plan.status == "accepted":
        plan = planner.filter_redundant(plan, project.config.theta)
        project.plan = plan
        _record_accepted_plan(project)
        if project.config.interactive:
            _hold(project, PipelineState.PLAN_AWAITING_USER, {"kind": "plan"}, "interactive_review")
        else:
            _transition(project, PipelineState.TASK_IDENTIFICATION, cause=f"accepted_round_{rounds}")
    else:  # awaiting_user after max_rounds
        project.plan = plan
        _hold(
            project,
            PipelineState.PLAN_AWAITING_USER,
            {
                "kind": "plan",
                "reason": "max_rounds",
                "findings": [f.to_doc() for f in verdict.findings],
            },
            cause="max_rounds",
        )


def _record_accepted_plan(project: Project) -> None:
    assert project.plan is not None
    project.record = append_event(
        project.record, "orchestrator", "plan", project.plan.to_doc()
    )


def _update_task(project: Project, task: Task) -> None:
    assert project.plan is not None
    new_tasks = list(project.plan.tasks)
    new_tasks[task.task_id] = task
    project.plan = project.plan.with_tasks(new_tasks)


def _stage_tasks(project: Project, backend: Backend) -> None:
    assert project.plan is not None
    types = load_task_types(project.config.lexicon_paths.get("task_types"))
    by_name = {e.name: e for e in types}
    classifier = taskmod.train_type_classifier(types)
    rid = project.request.request_id
    engineer = project.memory(AgentRole.DEVELOPMENT_ENGINEER)
    reviewer = project.memory(AgentRole.TASK_REVIEWER)

    for task_id in range(len(project.plan.tasks)):
        task = project.plan.tasks[task_id]
        posterior: list[float] | None = None
        if task.task_type is None:
            type_name, posterior = taskmod.classify_task_type(classifier, task)
            task = task.with_(task_type=type_name)
            _update_task(project, task)
            project.record = append_event(
                project.record,
                AgentRole.DEVELOPMENT_ENGINEER.value,
                "task_type",
                {
                    "task_id": task.task_id,
                    "task_type": type_name,
                    "posterior": [round(p, 9) for p in posterior],
                },
            )
        if task.arguments is None:
            try:
                arguments, project.record = taskmod.identify_arguments(
                    backend,
                    engineer,
                    project.record,
                    task,
                    by_name[task.task_type],
                    key=f"{rid}:identify_args:t{task.task_id}",
                )
            except (SchemaViolation, UnknownScriptKey) as exc:
                _hold(
                    project,
                    PipelineState.ARG_AWAITING_USER,
                    {
                        "kind": "task_review",
                        "task_id": task.task_id,
                        "error": f"{type(exc).__name__}: {exc}",
                    },
                    cause=type(exc).__name__,
                )
                return
            task = task.with_(arguments=arguments)
            _update_task(project, task)
        if not task.reviewed:
            if posterior is None:
                _, posterior = taskmod.classify_task_type(classifier, task)

            def re_identify(
                t: Task, entry: Any, record: PublicRecord
            ) -> tuple[ArgumentSet, PublicRecord]:
                return taskmod.identify_arguments(
                    backend,
                    engineer,
                    record,
                    t,
                    entry,
                    key=f"{rid}:identify_args:t{t.task_id}:alt",
                )

            try:
                verdict, task, project.record = taskmod.review_task(
                    backend,
                    reviewer,
                    project.record,
                    task,
                    posterior,
                    types,
                    key=f"{rid}:task_review:t{task.task_id}",
                    re_identify=re_identify,
                    plan_size=len(project.plan.tasks),
                )
            except (SchemaViolation, UnknownScriptKey, OscillationGuard) as exc:
                _hold(
                    project,
                    PipelineState.ARG_AWAITING_USER,
                    {
                        "kind": "task_review",
                        "task_id": task.task_id,
                        "error": f"{type(exc).__name__}: {exc}",
                    },
                    cause=type(exc).__name__,
                )
                return
            _update_task(project, task)
            if not verdict.accepted:
                _hold(
                    project,
                    PipelineState.ARG_AWAITING_USER,
                    {
                        "kind": "task_review",
                        "task_id": task.task_id,
                        "findings": [f.to_doc() for f in verdict.findings],
                    },
                    cause="task_review_blocked",
                )
                return

    requests = []
    for task in project.plan.tasks:
        ask = taskmod.elicit_missing(task, by_name[task.task_type])
        if ask is not None:
            requests.append(ask.to_doc())
    if requests:
        project.record = append_event(
            project.record, AgentRole.TASK_REVIEWER.value, "elicitation", {"requests": requests}
        )
        _hold(
            project,
            PipelineState.ARG_AWAITING_USER,
            {"kind": "elicitation", "requests": requests},
            cause="elicitation",
        )
        return

    try:
        graph = taskmod.build_graph(list(project.plan.tasks))
    except CycleDetected as exc:
        _hold(
            project,
            PipelineState.ARG_AWAITING_USER,
            {"kind": "cycle", "cycle": exc.cycle},
            cause="cycle",
        )
        return
    order = taskmod.order_tasks(graph)
    project.graph = graph
    project.order = order
    project.record = append_event(
        project.record,
        AgentRole.TASK_REVIEWER.value,
        "order",
        {"graph": graph.to_doc(), "layers": order.to_doc()["layers"]},
    )
    _transition(project, PipelineState.CODE_GEN)


def _projected_state(project: Project, upto: int | None = None) -> EngineState:
    """Engine state after the selected snippets of sets [0, upto)."""
    state = EngineState()
    sets = project.candidate_sets if upto is None else project.candidate_sets[:upto]
    for cs in sets:
        if cs.selected is None:
            break
        commands = parse_script(cs.selected_lines())
        state, _, _ = execute(
            state, commands, task_id=cs.spec.task_id, unit=cs.spec.unit_index
        )
    return state


def _pending_specs(project: Project, types_by_name: dict[str, Any]) -> list[SnippetSpec]:
    """Specs in execution order that do not have a candidate set yet."""
    assert project.plan is not None and project.order is not None
    done = {(cs.spec.task_id, cs.spec.unit_index) for cs in project.candidate_sets}
    specs: list[SnippetSpec] = []
    for task_id in project.order.sequence():
        task = project.plan.tasks[task_id]
        for spec in codegen.decouple(
            task, types_by_name[task.task_type], line_budget=project.config.line_budget
        ):
            if (spec.task_id, spec.unit_index) not in done:
                specs.append(spec)
    return specs


def _stage_codegen(project: Project, backend: Backend) -> None:
    assert project.plan is not None and project.order is not None
    types = load_task_types(project.config.lexicon_paths.get("task_types"))
    by_name = {e.name: e for e in types}
    exemplars = codegen.load_exemplars(project.config.lexicon_paths.get("exemplars"))
    rid = project.request.request_id
    engineer = project.memory(AgentRole.ENGINE_ENGINEER)

    for spec in _pending_specs(project, by_name):
        base = _projected_state(project)
        bundle = codegen.assemble_prompt(spec, exemplars, m=project.config.exemplar_count)
        key_base = f"{rid}:gen_code:t{spec.task_id}:u{spec.unit_index}"
        try:
            candidates, project.record = codegen.generate_candidates(
                backend, engineer, project.record, bundle, project.config.k, key_base
            )
        except AllCandidatesFailed as exc:
            _hold(
                project,
                PipelineState.CANDIDATE_AWAITING_USER,
                {
                    "kind": "candidates",
                    "task_id": spec.task_id,
                    "unit": spec.unit_index,
                    "error": str(exc),
                },
                cause="all_candidates_failed",
            )
            return
        reports = tuple(
            codegen.sandbox_test(c, base, unit=spec.unit_index) for c in candidates
        )
        cs = CandidateSet(
            spec=spec, candidates=tuple(candidates), reports=reports, base_state=base
        )
        project.candidate_sets.append(cs)
        if project.config.interactive:
            _hold(
                project,
                PipelineState.CANDIDATE_AWAITING_USER,
                {"kind": "candidates", "task_id": spec.task_id, "unit": spec.unit_index},
                cause="interactive_pick",
            )
            return
        selected = codegen.select_candidate(cs)
        if selected is None:
            _hold(
                project,
                PipelineState.CANDIDATE_AWAITING_USER,
                {
                    "kind": "candidates",
                    "task_id": spec.task_id,
                    "unit": spec.unit_index,
                    "zero_survivors": True,
                },
                cause="zero_survivors",
            )
            return
        _commit_selection(project, cs, selected)
    _transition(project, PipelineState.CODE_REVIEW)


def _commit_selection(project: Project, cs: CandidateSet, selected: int) -> None:
    cs.selected = selected
    project.record = append_event(
        project.record,
        "orchestrator",
        "selection",
        {
            "task_id": cs.spec.task_id,
            "unit": cs.spec.unit_index,
            "selected": selected,
            "vetoed": sorted(cs.user_vetoes),
        },
    )


def _task_snippet_text(project: Project, task_id: int) -> str:
    parts = []
    for cs in project.candidate_sets:
        if cs.spec.task_id == task_id and cs.selected is not None:
            parts.append("\n".join(cs.selected_lines()))
    return "\n".join(parts)


def _stage_code_review(project: Project, backend: Backend) -> None:
    assert project.plan is not None
    types = load_task_types(project.config.lexicon_paths.get("task_types"))
    by_name = {e.name: e for e in types}
    rid = project.request.request_id
    reviewer = project.memory(AgentRole.CODE_REVIEWER)
    reviewed = {(r["task_id"], r["unit"]) for r in project.code_reviews}

    for i, cs in enumerate(project.candidate_sets):
        if (cs.spec.task_id, cs.spec.unit_index) in reviewed:
            continue
        cs.base_state = _projected_state(project, upto=i)  # keep bases replay-consistent
        task = project.plan.tasks[cs.spec.task_id]
        try:
            verdict, final_lines, project.record = codegen.review_code(
                backend,
                reviewer,
                project.record,
                cs.selected_lines(),
                task,
                by_name[task.task_type],
                cs.base_state,
                key=f"{rid}:code_review:t{cs.spec.task_id}:u{cs.spec.unit_index}",
                task_snippet_text=_task_snippet_text(project, cs.spec.task_id),
            )
        except (SchemaViolation, UnknownScriptKey) as exc:
            _hold(
                project,
                PipelineState.CANDIDATE_AWAITING_USER,
                {
                    "kind": "error",
                    "task_id": cs.spec.task_id,
                    "unit": cs.spec.unit_index,
                    "error": f"{type(exc).__name__}: {exc}",
                },
                cause=type(exc).__name__,
            )
            return
        if verdict.revision is not None:
            cs.candidates = tuple(
                c if c.index != cs.selected else codegen.Candidate(c.index, tuple(final_lines))
                for c in cs.candidates
            )
            _recompute_bases(project)
        project.code_reviews.append(
            {
                "task_id": cs.spec.task_id,
                "unit": cs.spec.unit_index,
                "verdict": verdict.to_doc(),
            }
        )
    _transition(project, PipelineState.EXECUTING)


def _recompute_bases(project: Project) -> None:
    """Re-derive every candidate set's base state after a snippet changed."""
    for i, cs in enumerate(project.candidate_sets):
        cs.base_state = _projected_state(project, upto=i)


def _stage_executing(project: Project, backend: Backend) -> None:
    assert project.plan is not None and project.order is not None
    snippets: dict[int, list[list[str]]] = {}
    for cs in project.candidate_sets:
        snippets.setdefault(cs.spec.task_id, []).append(cs.selected_lines())
    depends = {t.task_id: t.depends_on for t in project.plan.tasks}
    log, final_state, status = run_sequence(
        [list(layer) for layer in project.order.layers],
        snippets,  # type: ignore[arg-type]
        EngineState(),
        depends_on=depends,
    )
    project.log = log
    project.final_state = final_state
    project.summary = summarize(log, [list(layer) for layer in project.order.layers], status)
    project.record = append_event(
        project.record,
        AgentRole.TESTING_ENGINEER.value,
        "summary",
        project.summary.to_doc(),
    )
    _transition(project, PipelineState.SUMMARIZED)


# --- user actions ------------------------------------------------------------------


def resolve_genre(project: Project, genre: Genre) -> Project:
    if project.state != PipelineState.PLAN_AWAITING_USER or not project.pending:
        raise InvalidAction("no genre question pending")
    if project.pending.get("kind") != "genre":
        raise InvalidAction("no genre question pending")
    project.genre = genre
    project.genre_scores = None
    project.record = append_event(
        project.record, "user", "genre", {"genre": genre.value, "source": "user"}
    )
    project.pending = None
    _transition(project, PipelineState.PLANNING, cause="genre_set_by_user")
    return project


def rectify_plan(project: Project, rect: planner.Rectification) -> Project:
    """Apply a user edit to the plan, then run the deterministic re-check."""
    if project.state not in (
        PipelineState.PLAN_AWAITING_USER,
        PipelineState.ARG_AWAITING_USER,
    ):
        raise InvalidAction(f"cannot rectify while {project.state.value}")
    if project.plan is None:
        raise InvalidAction("no plan to rectify")
    types = load_task_types(project.config.lexicon_paths.get("task_types"))
    plan = planner.apply_rectification(project.plan, rect)
    recheck = planner.recheck_plan(plan, types, project.config.theta)
    project.plan = plan
    project.record = append_event(
        project.record,
        "user",
        "rectification",
        {
            "kind": rect.kind,
            "target_id": rect.target_id,
            "description": rect.description,
            "depends_on": list(rect.depends_on) if rect.depends_on is not None else None,
            "order": list(rect.order) if rect.order is not None else None,
            "revision": plan.revision,
            "recheck": recheck.to_doc(),
        },
    )
    if project.state == PipelineState.ARG_AWAITING_USER:
        # structural edits invalidate the dependency graph; rebuild from here
        project.graph = None
        project.order = None
        project.pending = None
        _transition(project, PipelineState.TASK_IDENTIFICATION, cause="rectified")
    else:
        pending = dict(project.pending or {"kind": "plan"})
        pending["recheck"] = recheck.to_doc()
        project.pending = pending
    return project


def approve_plan(project: Project) -> Project:
    if project.state != PipelineState.PLAN_AWAITING_USER or not project.pending:
        raise InvalidAction("no plan approval pending")
    if project.pending.get("kind") != "plan" or project.plan is None:
        raise InvalidAction("no approvable plan pending")
    project.record = append_event(
        project.record, "user", "approval", {"revision": project.plan.revision}
    )
    if project.plan.status != "accepted":
        project.plan = project.plan.with_status("accepted")
    _record_accepted_plan(project)
    project.pending = None
    _transition(project, PipelineState.TASK_IDENTIFICATION, cause="user_approved")
    return project


def answer_arguments(project: Project, task_id: int, values: dict[str, Any]) -> Project:
    if project.state != PipelineState.ARG_AWAITING_USER or not project.pending:
        raise InvalidAction("no elicitation pending")
    if project.pending.get("kind") != "elicitation":
        raise InvalidAction("no elicitation pending")
    assert project.plan is not None
    if not (0 <= task_id < len(project.plan.tasks)):
        raise UnknownTarget(f"no task {task_id}")
    task = project.plan.tasks[task_id]
    types = load_task_types(project.config.lexicon_paths.get("task_types"))
    entry = {e.name: e for e in types}[task.task_type]
    merged = dict(task.arguments.values) if task.arguments else {}
    for name, value in values.items():
        field_ = entry.field_by_name(name)
        if field_ is None:
            raise KindMismatch(f"task type {entry.name!r} has no argument {name!r}")
        if not check_arg_value(field_, value):
            raise KindMismatch(f"value {value!r} does not fit {name} ({field_.arg_kind})")
        merged[name] = value
    still_missing = tuple(
        m for m in (task.arguments.missing if task.arguments else ()) if m not in merged
    )
    task = task.with_(arguments=ArgumentSet(values=merged, missing=still_missing))
    _update_task(project, task)
    project.record = append_event(
        project.record, "user", "arguments", {"task_id": task_id, "values": values}
    )
    by_name = {e.name: e for e in types}
    remaining = []
    for t in project.plan.tasks:
        if t.task_type is None:
            continue
        ask = taskmod.elicit_missing(t, by_name[t.task_type])
        if ask is not None:
            remaining.append(ask.to_doc())
    if remaining:
        project.pending = {"kind": "elicitation", "requests": remaining}
    else:
        project.pending = None
        _transition(project, PipelineState.TASK_IDENTIFICATION, cause="arguments_answered")
    return project


def candidate_action(
    project: Project,
    task_id: int,
    unit: int,
    *,
    index: int | None = None,
    veto: list[int] | None = None,
) -> Project:
    """Pick a candidate or veto some; vetoes trigger automatic re-selection."""
    if project.state != PipelineState.CANDIDATE_AWAITING_USER or not project.pending:
        raise InvalidAction("no candidate decision pending")
    pending = project.pending
    if pending.get("kind") != "candidates":
        raise InvalidAction("no candidate decision pending")
    if pending.get("task_id") != task_id or pending.get("unit") != unit:
        raise InvalidAction(
            f"pending decision is for task {pending.get('task_id')} "
            f"unit {pending.get('unit')}"
        )
    cs = project.find_candidate_set(task_id, unit)
    if cs is None:
        raise UnknownTarget(f"no candidate set for task {task_id} unit {unit}")
    if (index is None) == (veto is None):
        raise ValueError("provide exactly one of index or veto")
    reports = {r.candidate: r for r in cs.reports}
    if index is not None:
        if index not in reports:
            raise ValueError(f"no candidate {index}")
        if index in cs.user_vetoes:
            raise ValueError(f"candidate {index} is vetoed")
        if not reports[index].passing:
            raise ValueError(f"candidate {index} did not pass testing")
        project.record = append_event(
            project.record,
            "user",
            "candidate_action",
            {"task_id": task_id, "unit": unit, "action": "pick", "index": index},
        )
        _commit_selection(project, cs, index)
        project.pending = None
        _transition(project, PipelineState.CODE_GEN, cause="candidate_picked")
        return project
    for v in veto or []:
        if v not in reports:
            raise ValueError(f"no candidate {v}")
    cs.user_vetoes.update(veto or [])
    project.record = append_event(
        project.record,
        "user",
        "candidate_action",
        {"task_id": task_id, "unit": unit, "action": "veto", "veto": sorted(veto or [])},
    )
    selected = codegen.select_candidate(cs)
    if selected is None:
        project.pending = dict(pending, zero_survivors=True)
        return project
    _commit_selection(project, cs, selected)
    project.pending = None
    _transition(project, PipelineState.CODE_GEN, cause="auto_selected_after_veto")
    return project


def code_suggestion(
    project: Project, task_id: int, unit: int, text: str, backend: Backend | None = None
) -> Project:
    """Relay a user suggestion for an already-selected snippet through the
    code reviewer."""
    if project.state not in (
        PipelineState.CODE_REVIEW,
        PipelineState.CANDIDATE_AWAITING_USER,
    ):
        raise InvalidAction(f"cannot suggest code while {project.state.value}")
    cs = project.find_candidate_set(task_id, unit)
    if cs is None:
        raise UnknownTarget(f"no candidate set for task {task_id} unit {unit}")
    if cs.selected is None:
        raise ValueError(f"task {task_id} unit {unit} has no selected snippet")
    if not text.strip():
        return project  # empty suggestion is a no-op
    assert project.plan is not None
    backend = backend if backend is not None else build_backend(project.config)
    counter_key = f"t{task_id}:u{unit}"
    n = project.suggestion_counts.get(counter_key, 0) + 1
    project.suggestion_counts[counter_key] = n
    project.record = append_event(
        project.record,
        "user",
        "suggestion",
        {"task_id": task_id, "unit": unit, "text": text, "seq_no": n},
    )
    task = project.plan.tasks[task_id]
    rid = project.request.request_id
    new_lines, verdict, project.record = codegen.apply_user_code_suggestion(
        backend,
        project.memory(AgentRole.CODE_REVIEWER),
        project.record,
        cs.selected_lines(),
        text,
        task,
        cs.base_state,
        key=f"{rid}:code_suggestion:t{task_id}:u{unit}:s{n}",
    )
    if verdict is not None and verdict.revision is not None:
        cs.candidates = tuple(
            c if c.index != cs.selected else codegen.Candidate(c.index, tuple(new_lines))
            for c in cs.candidates
        )
        _recompute_bases(project)
    return project


# --- headless driver -----------------------------------------------------------------


def drive(
    project: Project,
    backend: Backend | None = None,
    *,
    auto_approve: bool = True,
    save: Any = None,
    max_steps: int = 200,
) -> Project:
    """Advance to a terminal state, auto-approving plan pauses when asked.

    ``save`` is an optional callable invoked after every mutation; the CLI
    passes the store's save so every transition is a recovery checkpoint.
    """
    backend = backend if backend is not None else build_backend(project.config)

    def checkpoint() -> None:
        if save is not None:
            save(project)

    for _ in range(max_steps):
        if project.state in TERMINAL_STATES:
            return project
        if project.state in AWAITING_STATES:
            pending = project.pending or {}
            kind = pending.get("kind")
            if auto_approve and kind == "plan":
                approve_plan(project)
                checkpoint()
                continue
            reason = pending.get("error") or f"unresolved {kind or 'hold'} requires a user"
            _fail(project, reason)
            checkpoint()
            return project
        advance(project, backend)
        checkpoint()
    raise GameForgeError("drive exceeded max_steps; pipeline is not converging")


# --- consistency -------------------------------------------------------------------------


def check_consistency(project: Project) -> None:
    """State-dependent completeness asserts used by tests."""
    s = project.state
    if s in (PipelineState.EXECUTING, PipelineState.SUMMARIZED):
        assert project.order is not None, "order missing"
        assert project.plan is not None
        for cs in project.candidate_sets:
            assert cs.selected is not None, "unselected candidate set"
    if s == PipelineState.SUMMARIZED:
        assert project.summary is not None and project.log is not None
    if s in AWAITING_STATES:
        assert project.pending is not None, "awaiting state without pending payload"
    if s == PipelineState.FAILED:
        assert project.failure
