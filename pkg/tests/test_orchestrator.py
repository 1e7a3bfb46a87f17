import json
import random

import pytest

import gameforge.agents as agents
from conftest import make_golden_project, make_mini_project, MINI_RESPONSES
from gameforge.agents import ScriptedBackend
from gameforge.errors import InvalidAction, KindMismatch, TransportError
from gameforge.model import Genre, TaskPlan
from gameforge.orchestrator import (
    AWAITING_STATES,
    PipelineState,
    TERMINAL_STATES,
    TRANSITIONS,
    ProjectConfig,
    advance,
    answer_arguments,
    approve_plan,
    candidate_action,
    check_consistency,
    code_suggestion,
    drive,
    new_project,
    rectify_plan,
    resolve_genre,
)
from gameforge.planner import Rectification
from gameforge.store import ProjectStore


def mini_backend() -> ScriptedBackend:
    return ScriptedBackend.from_paths([str(MINI_RESPONSES)])


# --- golden headless drive -----------------------------------------------------------


def test_golden_drive_reaches_summarized(golden_run):
    assert golden_run.state is PipelineState.SUMMARIZED
    assert golden_run.summary is not None
    assert golden_run.summary.tasks == 6
    assert set(golden_run.summary.task_status.values()) == {"succeeded"}
    assert golden_run.summary.tracebacks == 0
    check_consistency(golden_run)


def test_golden_plan_filtered_to_six_tasks(golden_run):
    descriptions = [t.description for t in golden_run.plan.tasks]
    assert len(descriptions) == 6
    assert "spawn the hero character" not in descriptions  # duplicate filtered
    assert "enable blockchain marketplace" not in descriptions  # revised away
    assert golden_run.plan.status == "accepted"


def test_golden_record_is_gap_free(golden_run):
    seqs = [e.seq for e in golden_run.record.events]
    assert seqs == list(range(len(seqs)))


def test_golden_selections_skip_failing_candidates(golden_run):
    # task 1 unit 0: candidate 0 carries an UnknownEntity traceback
    cs = golden_run.find_candidate_set(1, 0)
    assert cs.selected == 1
    by_index = {r.candidate: r for r in cs.reports}
    assert not by_index[0].passing and by_index[1].passing


def test_golden_memory_isolation_audit():
    violations = []
    agents.memory_audit_hooks.append(
        lambda owner, reader: violations.append((owner, reader)) if owner != reader else None
    )
    try:
        drive(make_golden_project("audit"))
    finally:
        agents.memory_audit_hooks.clear()
    assert violations == []


def test_golden_plan_mutations_bump_revision_by_exactly_one(monkeypatch):
    deltas = []
    original = TaskPlan.with_tasks

    def spy(self, tasks, *, status=None):
        result = original(self, tasks, status=status)
        deltas.append(result.revision - self.revision)
        return result

    monkeypatch.setattr(TaskPlan, "with_tasks", spy)
    drive(make_golden_project("revisions"))
    assert deltas and set(deltas) == {1}


def test_advance_rejected_in_terminal_and_awaiting_states(golden_run):
    with pytest.raises(InvalidAction):
        advance(golden_run)
    paused = make_mini_project("paused")
    backend = mini_backend()
    advance(paused, backend)
    advance(paused, backend)
    assert paused.state is PipelineState.PLAN_AWAITING_USER
    with pytest.raises(InvalidAction):
        advance(paused, backend)


# --- genre resolution ------------------------------------------------------------------


def test_no_genre_signal_asks_the_user():
    config = ProjectConfig(backend={"kind": "scripted", "fixtures": []})
    project = new_project("do something entirely unrecognizable", config)
    advance(project, ScriptedBackend({}))
    assert project.state is PipelineState.PLAN_AWAITING_USER
    assert project.pending["kind"] == "genre"
    resolve_genre(project, Genre.ADVENTURE)
    assert project.state is PipelineState.PLANNING
    assert project.genre is Genre.ADVENTURE


def test_headless_drive_fails_on_unresolved_genre():
    config = ProjectConfig(backend={"kind": "scripted", "fixtures": []})
    project = new_project("do something entirely unrecognizable", config)
    drive(project, ScriptedBackend({}))
    assert project.state is PipelineState.FAILED
    assert "genre" in project.failure


# --- interactive operator flow -----------------------------------------------------------


def drive_mini_to_summary(project, backend):
    """The scripted operator: rectify, approve, answer, veto, pick."""
    vetoed_once = False
    for _ in range(60):
        if project.state in TERMINAL_STATES:
            return project
        if project.state is PipelineState.PLAN_AWAITING_USER:
            approve_plan(project)
        elif project.state is PipelineState.ARG_AWAITING_USER:
            request = project.pending["requests"][0]
            answer_arguments(project, request["task_id"], {"archetype": "knight"})
        elif project.state is PipelineState.CANDIDATE_AWAITING_USER:
            pending = project.pending
            if not vetoed_once:
                vetoed_once = True
                candidate_action(
                    project, pending["task_id"], pending["unit"], veto=[0]
                )
            else:
                candidate_action(project, pending["task_id"], pending["unit"], index=0)
        else:
            advance(project, backend)
    raise AssertionError("mini flow did not converge")


def test_interactive_flow_to_summary():
    project = make_mini_project()
    backend = mini_backend()
    advance(project, backend)  # genre
    advance(project, backend)  # planning
    assert project.state is PipelineState.PLAN_AWAITING_USER
    assert project.pending == {"kind": "plan"}

    rectify_plan(
        project,
        Rectification(
            kind="modify",
            target_id=3,
            description="declare victory when the quest is complete for the hero",
        ),
    )
    assert project.state is PipelineState.PLAN_AWAITING_USER
    assert project.pending["recheck"]["accepted"] is True
    revision_after_edit = project.plan.revision

    approve_plan(project)
    assert project.state is PipelineState.TASK_IDENTIFICATION
    assert project.plan.status == "accepted"
    assert project.plan.revision == revision_after_edit  # approval is not a mutation

    advance(project, backend)
    assert project.state is PipelineState.ARG_AWAITING_USER
    assert project.pending["kind"] == "elicitation"
    [request] = project.pending["requests"]
    assert request["task_id"] == 1
    assert [a["arg_name"] for a in request["args"]] == ["archetype"]

    with pytest.raises(KindMismatch):
        answer_arguments(project, 1, {"archetype": "dragon"})  # not an enum choice

    answer_arguments(project, 1, {"archetype": "knight"})
    assert project.state is PipelineState.TASK_IDENTIFICATION

    project = drive_mini_to_summary(project, backend)
    assert project.state is PipelineState.SUMMARIZED
    assert set(project.summary.task_status.values()) == {"succeeded"}
    # the vetoed unit auto-selected the next survivor: candidate 1 fails parse
    cs = project.find_candidate_set(0, 0)
    assert cs.user_vetoes == {0}
    assert cs.selected == 2


def advance_answering(project, backend, steps):
    """Advance, supplying the designed elicitation answer when asked."""
    for _ in range(steps):
        if project.state in TERMINAL_STATES:
            return
        if project.state is PipelineState.ARG_AWAITING_USER:
            request = project.pending["requests"][0]
            answer_arguments(project, request["task_id"], {"archetype": "knight"})
        else:
            advance(project, backend)


def test_zero_survivors_holds_then_fails_headless():
    fixtures = json.loads(MINI_RESPONSES.read_text())
    for c in range(3):
        fixtures[f"rpg-mini:gen_code:t0:u0:c{c}"] = "SET ghost hp 1"
    project = make_mini_project("dead", interactive=False)
    backend = ScriptedBackend(fixtures)
    advance_answering(project, backend, 6)
    assert project.state is PipelineState.CANDIDATE_AWAITING_USER
    assert project.pending.get("zero_survivors") is True
    drive(project, backend)
    assert project.state is PipelineState.FAILED


def test_reviewer_induced_cycle_held_then_rectified():
    fixtures = json.loads(MINI_RESPONSES.read_text())
    # reviewer makes task 0 depend on task 1 while task 1 depends on 0
    fixtures["rpg-mini:task_review:t0"] = json.dumps(
        {"concur": True, "suggested_type": None, "add_depends_on": [1], "findings": []}
    )
    project = make_mini_project("cyclic")
    backend = ScriptedBackend(fixtures)
    advance(project, backend)
    advance(project, backend)
    approve_plan(project)
    advance(project, backend)
    assert project.state is PipelineState.ARG_AWAITING_USER
    if project.pending["kind"] == "elicitation":  # answer, then hit the cycle
        answer_arguments(project, 1, {"archetype": "knight"})
        advance(project, backend)
    assert project.pending["kind"] == "cycle"
    assert set(project.pending["cycle"]) >= {0, 1}

    rectify_plan(project, Rectification(kind="modify", target_id=1, depends_on=()))
    assert project.state is PipelineState.TASK_IDENTIFICATION
    advance(project, backend)
    assert project.state is PipelineState.CODE_GEN


# --- persistence and pause -----------------------------------------------------------------


def test_persist_load_identity_mid_codegen(tmp_path):
    project = make_mini_project("midway")
    backend = mini_backend()
    advance(project, backend)
    advance(project, backend)
    approve_plan(project)
    advance(project, backend)
    answer_arguments(project, 1, {"archetype": "knight"})
    advance(project, backend)
    advance(project, backend)
    assert project.state is PipelineState.CANDIDATE_AWAITING_USER  # mid-CodeGen

    store = ProjectStore(tmp_path)
    store.save(project)
    loaded = store.load("midway")
    assert loaded.to_doc() == project.to_doc()
    assert loaded.memories.keys() == project.memories.keys()
    for role, memory in project.memories.items():
        assert loaded.memories[role].read(role) == memory.read(role)


def test_backend_pause_is_resumable(tmp_path):
    class Flaky:
        def __init__(self, inner, failures):
            self.inner, self.failures = inner, failures
            self.calls: list[str] = []

        def complete(self, prompt):
            self.calls.append(prompt.key)
            if self.failures > 0:
                self.failures -= 1
                raise TransportError("backend flaked")
            return self.inner.complete(prompt)

    store = ProjectStore(tmp_path)
    project = make_golden_project("pausing")
    advance(project)  # genre stage needs no backend
    store.save(project)

    flaky = Flaky(ScriptedBackend.from_paths([str(MINI_RESPONSES)]), failures=1)
    with pytest.raises(TransportError):
        advance(project, flaky)

    # the service discards unpersisted work on pause; reload and resume
    resumed = store.load("pausing")
    assert resumed.state is PipelineState.PLANNING
    drive(resumed)
    assert resumed.state is PipelineState.SUMMARIZED


# --- suggestions -------------------------------------------------------------------------------


def test_code_suggestion_replaces_snippet_and_keeps_replay_consistent():
    fixtures = json.loads(MINI_RESPONSES.read_text())
    fixtures["rpg-mini:code_suggestion:t1:u0:s1"] = json.dumps(
        {"findings": [], "revision": "SPAWN hero knight\nSET hero hp 75"}
    )
    project = make_mini_project("suggest", interactive=False)
    backend = ScriptedBackend(fixtures)
    advance_answering(project, backend, 6)
    assert project.state is PipelineState.CODE_REVIEW

    code_suggestion(project, 1, 0, "give the hero 75 hp", backend=backend)
    cs = project.find_candidate_set(1, 0)
    assert cs.selected_lines() == ["SPAWN hero knight", "SET hero hp 75"]

    drive(project, backend)
    assert project.state is PipelineState.SUMMARIZED
    assert project.final_state.properties["hero"]["hp"] == "75"


def test_empty_suggestion_is_noop_without_backend_calls():
    project = make_mini_project("noop", interactive=False)
    backend = mini_backend()
    advance_answering(project, backend, 6)
    assert project.state is PipelineState.CODE_REVIEW
    before = project.to_doc()
    code_suggestion(project, 1, 0, "   ", backend=ScriptedBackend({}))
    assert project.to_doc() == before


# --- transition audit --------------------------------------------------------------------------


def observed_transitions(project):
    return [
        (e.payload["from"], e.payload["to"])
        for e in project.record.events
        if e.stage == "transition"
    ]


def assert_documented(project):
    for src, dst in observed_transitions(project):
        allowed = TRANSITIONS[PipelineState(src)]
        assert PipelineState(dst) in allowed, f"undocumented {src} -> {dst}"


def test_transition_audit_over_random_interleavings():
    rng = random.Random(17)
    for run in range(12):
        project = make_mini_project(f"fuzz{run}")
        backend = mini_backend()
        for _ in range(80):
            if project.state in TERMINAL_STATES:
                break
            if project.state in AWAITING_STATES:
                pending = project.pending or {}
                kind = pending.get("kind")
                if kind == "plan":
                    if rng.random() < 0.4:
                        rectify_plan(
                            project,
                            Rectification(
                                kind="modify",
                                target_id=rng.randrange(len(project.plan.tasks)),
                                description="spawn the wandering merchant npc entity",
                            ),
                        )
                    else:
                        approve_plan(project)
                elif kind == "elicitation":
                    request = pending["requests"][0]
                    answer_arguments(
                        project, request["task_id"], {"archetype": "villager"}
                    )
                elif kind == "candidates":
                    choice = rng.random()
                    reports = {
                        r.candidate: r
                        for r in project.find_candidate_set(
                            pending["task_id"], pending["unit"]
                        ).reports
                    }
                    passing = [i for i, r in sorted(reports.items()) if r.passing]
                    if choice < 0.5 and passing:
                        candidate_action(
                            project, pending["task_id"], pending["unit"], index=passing[0]
                        )
                    else:
                        candidate_action(
                            project, pending["task_id"], pending["unit"], veto=[]
                        )
                else:
                    break
            else:
                advance(project, backend)
            check_consistency(project)
        assert_documented(project)
        seqs = [e.seq for e in project.record.events]
        assert seqs == list(range(len(seqs)))
