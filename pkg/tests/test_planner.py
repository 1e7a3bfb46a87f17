import json
import random

import pytest

from gameforge.agents import AgentRole, PrivateMemory, PublicRecord, ScriptedBackend
from gameforge.errors import (
    BoundsViolation,
    DanglingDependency,
    InvalidPermutation,
    NoSignal,
    UnknownTarget,
)
from gameforge.lexicon import load_genre_lexicon, load_task_types
from gameforge.model import GameRequest, Genre, Task, TaskPlan, normalize, similarity
from gameforge.planner import (
    PlanTemplate,
    Rectification,
    TemplateSection,
    apply_rectification,
    classify_genre,
    draft_plan,
    filter_redundant,
    load_templates,
    plan_loop,
    recheck_plan,
    review_plan,
)


def make_plan(descriptions, deps=None, status="draft", genre=Genre.ROLE_PLAYING):
    deps = deps or {}
    tasks = tuple(
        Task(i, d, depends_on=tuple(deps.get(i, ()))) for i, d in enumerate(descriptions)
    )
    return TaskPlan(plan_id="p", request_id="r", genre=genre, tasks=tasks, status=status)


def simple_template(min_tasks=1, max_tasks=3):
    return PlanTemplate(
        genre=Genre.ROLE_PLAYING,
        sections=(TemplateSection("all", "everything", min_tasks, max_tasks),),
    )


def plan_doc(tasks_by_section):
    return json.dumps(
        {
            "sections": [
                {"name": name, "tasks": [{"description": d} for d in tasks]}
                for name, tasks in tasks_by_section
            ]
        }
    )


REQUEST = GameRequest(request_id="r", text="a quest in a dungeon", created_at=0.0)


# --- genre classification ---------------------------------------------------------


def test_classify_genre_sums_shipped_keyword_weights():
    lexicon = load_genre_lexicon()
    text = "a quest for the party in a deep dungeon"
    genre, scores = classify_genre(text, lexicon)
    tokens = normalize(text)
    oracle = {
        g.value: sum(w for kw, w in lexicon[g].items() if kw in tokens) for g in Genre
    }
    assert genre is Genre.ROLE_PLAYING
    assert scores == oracle
    assert scores["role_playing"] == 5.5  # quest 2.0 + dungeon 2.0 + party 1.5


def test_classify_genre_no_signal():
    with pytest.raises(NoSignal):
        classify_genre("completely unrelated words", load_genre_lexicon())


def test_classify_genre_tie_breaks_by_enumeration_order():
    lexicon = {
        Genre.ACTION: {"shared": 1.0},
        Genre.STRATEGY: {"shared": 1.0},
        Genre.ROLE_PLAYING: {},
        Genre.SIMULATION: {},
        Genre.ADVENTURE: {},
    }
    genre, _ = classify_genre("shared", lexicon)
    assert genre is Genre.ACTION


# --- drafting ----------------------------------------------------------------------


def run_draft(fixtures, template):
    backend = ScriptedBackend(fixtures)
    memory = PrivateMemory(AgentRole.DEVELOPMENT_MANAGER.value)
    plan, _ = draft_plan(backend, memory, PublicRecord(), REQUEST, template, key="k")
    return plan, backend


def test_draft_plan_six_task_fixture_within_bounds():
    template = load_templates()[Genre.ROLE_PLAYING]
    doc = plan_doc(
        [
            ("world", ["set up the village scene layout"]),
            ("characters", ["spawn the hero character entity", "spawn the elder npc entity"]),
            ("behaviors", ["script the elder quest dialogue behavior"]),
            ("interface", ["show a health bar on the hud"]),
            ("resolution", ["declare victory when the quest is complete"]),
        ]
    )
    plan, _ = run_draft({"k": doc}, template)
    assert len(plan.tasks) == 6
    assert plan.status == "draft" and plan.revision == 0


def test_draft_plan_bounds_violation_reprompts_once_then_escalates():
    template = simple_template(min_tasks=1)
    empty = plan_doc([("all", [])])
    backend = ScriptedBackend({"k": empty})
    memory = PrivateMemory(AgentRole.DEVELOPMENT_MANAGER.value)
    with pytest.raises(BoundsViolation):
        draft_plan(backend, memory, PublicRecord(), REQUEST, template, key="k")
    assert backend.calls == ["k", "k"]  # exactly one re-prompt


def test_draft_plan_degenerate_single_slot_template():
    template = simple_template(min_tasks=1, max_tasks=1)
    plan, _ = run_draft({"k": plan_doc([("all", ["spawn the hero entity"])])}, template)
    assert len(plan.tasks) == 1


# --- review -------------------------------------------------------------------------


def run_review(plan, theta=0.8, reviewer_findings=()):
    backend = ScriptedBackend(
        {"k": json.dumps({"findings": list(reviewer_findings)})}
    )
    memory = PrivateMemory(AgentRole.PLAN_REVIEWER.value)
    verdict, _ = review_plan(
        backend, memory, PublicRecord(), plan, load_task_types(), theta, key="k"
    )
    return verdict


def test_review_flags_redundant_pair_at_theta_point_seven():
    plan = make_plan(["create player character", "create the player character"])
    verdict = run_review(plan, theta=0.7)
    redundancy = [f for f in verdict.findings if f.kind == "redundancy"]
    assert len(redundancy) == 1
    assert redundancy[0].target_id == 1
    assert "0.75" in redundancy[0].note


def test_review_accepts_distinct_plan_with_clean_reviewer():
    plan = make_plan(
        ["spawn the hero character entity", "script the elder dialogue behavior"]
    )
    verdict = run_review(plan)
    assert verdict.accepted and verdict.findings == ()


def test_review_flags_hallucinated_capability():
    plan = make_plan(["spawn the hero entity", "enable blockchain marketplace"])
    verdict = run_review(plan)
    hallucinations = [f for f in verdict.findings if f.kind == "hallucination"]
    assert [f.target_id for f in hallucinations] == [1]
    assert not verdict.accepted


def test_review_merges_backend_findings():
    plan = make_plan(["spawn the hero entity"])
    verdict = run_review(
        plan, reviewer_findings=[{"kind": "vague", "target_id": 0, "note": "too thin"}]
    )
    assert [f.kind for f in verdict.findings] == ["vague"]
    assert verdict.accepted  # vague is advisory, not blocking


# --- redundancy filter ------------------------------------------------------------------


def test_filter_removes_duplicate_keeping_lower_id():
    plan = make_plan(
        ["spawn the hero character entity", "spawn the hero character"],
    )
    assert similarity(
        normalize(plan.tasks[0].description), normalize(plan.tasks[1].description)
    ) == 0.8
    filtered = filter_redundant(plan, 0.8)
    assert [t.description for t in filtered.tasks] == ["spawn the hero character entity"]
    assert filtered.revision == plan.revision + 1


def test_filter_no_pairs_bumps_revision_only():
    plan = make_plan(["alpha beta", "gamma delta"])
    filtered = filter_redundant(plan, 0.8)
    assert [t.to_doc() for t in filtered.tasks] == [t.to_doc() for t in plan.tasks]
    assert filtered.revision == plan.revision + 1


def test_filter_collapses_connected_chain_to_first_member():
    a = "alpha beta gamma delta epsilon"
    b = "alpha beta gamma delta zeta"
    c = "alpha beta gamma zeta eta"
    sets = [normalize(x) for x in (a, b, c)]
    assert similarity(sets[0], sets[1]) >= 0.6
    assert similarity(sets[1], sets[2]) >= 0.6
    assert similarity(sets[0], sets[2]) < 0.6
    plan = make_plan([a, b, c])
    filtered = filter_redundant(plan, 0.6)
    assert [t.description for t in filtered.tasks] == [a]


def test_filter_remaps_dependencies_to_survivor():
    plan = make_plan(
        ["spawn the hero character entity", "spawn the hero character", "craft quest journal"],
        deps={2: [1]},
    )
    filtered = filter_redundant(plan, 0.8)
    assert len(filtered.tasks) == 2
    assert filtered.tasks[1].depends_on == (0,)  # dependency now on the survivor


def union_find_oracle(descriptions, theta):
    """Independent grouping: BFS over the similarity graph."""
    sets = [normalize(d) for d in descriptions]
    n = len(sets)
    unvisited = set(range(n))
    groups = []
    while unvisited:
        start = min(unvisited)
        component = {start}
        frontier = [start]
        unvisited.discard(start)
        while frontier:
            u = frontier.pop()
            for v in list(unvisited):
                if similarity(sets[u], sets[v]) >= theta:
                    component.add(v)
                    unvisited.discard(v)
                    frontier.append(v)
        groups.append(min(component))
    return sorted(groups)


WORDS = ["spawn", "hero", "villager", "scene", "quest", "bar", "audio", "wire"]


def random_plan(rng):
    n = rng.randint(1, 8)
    descriptions = [
        " ".join(rng.choice(WORDS) for _ in range(rng.randint(2, 5))) for _ in range(n)
    ]
    return make_plan(descriptions)


def test_filter_matches_union_find_oracle_and_is_idempotent():
    rng = random.Random(31)
    for _ in range(60):
        plan = random_plan(rng)
        theta = rng.choice([0.5, 0.8])
        filtered = filter_redundant(plan, theta)
        survivors = union_find_oracle([t.description for t in plan.tasks], theta)
        assert [t.description for t in filtered.tasks] == [
            plan.tasks[s].description for s in survivors
        ]
        again = filter_redundant(filtered, theta)
        assert [t.to_doc() for t in again.tasks] == [t.to_doc() for t in filtered.tasks]
        assert again.revision == filtered.revision + 1


def test_filter_never_removes_partnerless_task():
    rng = random.Random(91)
    for _ in range(40):
        plan = random_plan(rng)
        sets = [normalize(t.description) for t in plan.tasks]
        loners = {
            i
            for i in range(len(sets))
            if all(similarity(sets[i], sets[j]) < 0.8 for j in range(len(sets)) if j != i)
        }
        kept = {t.description for t in filter_redundant(plan, 0.8).tasks}
        for i in loners:
            assert plan.tasks[i].description in kept


# --- plan loop ---------------------------------------------------------------------------


def run_loop(fixtures, max_rounds=3):
    backend = ScriptedBackend(fixtures)
    manager = PrivateMemory(AgentRole.DEVELOPMENT_MANAGER.value)
    reviewer = PrivateMemory(AgentRole.PLAN_REVIEWER.value)
    plan, verdict, _, rounds = plan_loop(
        backend,
        manager,
        reviewer,
        PublicRecord(),
        REQUEST,
        simple_template(),
        load_task_types(),
        theta=0.8,
        key_base="x",
        max_rounds=max_rounds,
    )
    return plan, verdict, rounds, backend


GOOD_DOC = plan_doc([("all", ["spawn the hero character entity"])])
CLEAN = json.dumps({"findings": []})
BLOCKING = json.dumps(
    {"findings": [{"kind": "hallucination", "target_id": 0, "note": "made up"}]}
)


def test_loop_accepts_first_round():
    plan, verdict, rounds, backend = run_loop(
        {"x:plan_draft:r1": GOOD_DOC, "x:plan_review:r1": CLEAN}
    )
    assert plan.status == "accepted" and verdict.accepted and rounds == 1
    assert backend.calls.count("x:plan_review:r1") == 1


def test_loop_round_two_revision_clears_findings():
    fixtures = {
        "x:plan_draft:r1": GOOD_DOC,
        "x:plan_review:r1": BLOCKING,
        "x:plan_draft:r2": GOOD_DOC,
        "x:plan_review:r2": CLEAN,
    }
    plan, verdict, rounds, backend = run_loop(fixtures)
    assert plan.status == "accepted" and rounds == 2
    review_calls = [k for k in backend.calls if "plan_review" in k]
    assert review_calls == ["x:plan_review:r1", "x:plan_review:r2"]


def test_loop_exhausts_rounds_and_awaits_user():
    fixtures = {}
    for r in (1, 2, 3):
        fixtures[f"x:plan_draft:r{r}"] = GOOD_DOC
        fixtures[f"x:plan_review:r{r}"] = BLOCKING
    plan, verdict, rounds, backend = run_loop(fixtures)
    assert plan.status == "awaiting_user" and rounds == 3
    assert not verdict.accepted
    assert len([k for k in backend.calls if "plan_review" in k]) == 3


# --- rectification ---------------------------------------------------------------------------


def awaiting(descriptions, deps=None):
    return make_plan(descriptions, deps=deps, status="awaiting_user")


def test_remove_reindexes_contiguously():
    plan = awaiting(["a b", "c d", "e f", "g h"])
    out = apply_rectification(plan, Rectification(kind="remove", target_id=2))
    assert [t.description for t in out.tasks] == ["a b", "c d", "g h"]
    assert [t.task_id for t in out.tasks] == [0, 1, 2]
    assert out.revision == plan.revision + 1


def test_remove_with_dependents_raises_dangling():
    plan = awaiting(["a b", "c d", "e f"], deps={2: [1]})
    with pytest.raises(DanglingDependency):
        apply_rectification(plan, Rectification(kind="remove", target_id=1))


def test_remove_unknown_target():
    with pytest.raises(UnknownTarget):
        apply_rectification(awaiting(["a b"]), Rectification(kind="remove", target_id=7))


def test_reorder_requires_permutation():
    plan = awaiting(["a b", "c d"])
    with pytest.raises(InvalidPermutation):
        apply_rectification(plan, Rectification(kind="reorder", order=(0, 0)))


def test_reorder_remaps_dependencies():
    plan = awaiting(["a b", "c d"], deps={1: [0]})
    out = apply_rectification(plan, Rectification(kind="reorder", order=(1, 0)))
    assert [t.description for t in out.tasks] == ["c d", "a b"]
    assert out.tasks[0].depends_on == (1,)


def test_modify_description_then_deterministic_recheck_accepts():
    plan = awaiting(["spawn the hero entity", "create the map terrain"])
    out = apply_rectification(
        plan,
        Rectification(kind="modify", target_id=1, description="lay out the world map terrain"),
    )
    assert out.tasks[1].description == "lay out the world map terrain"
    assert out.tasks[1].task_type is None  # progress reset for re-classification
    verdict = recheck_plan(out, load_task_types(), 0.8)
    assert verdict.accepted


def test_modify_dependencies_validates_targets():
    plan = awaiting(["a b", "c d"])
    out = apply_rectification(
        plan, Rectification(kind="modify", target_id=1, depends_on=(0,))
    )
    assert out.tasks[1].depends_on == (0,)
    with pytest.raises(DanglingDependency):
        apply_rectification(
            plan, Rectification(kind="modify", target_id=1, depends_on=(5,))
        )


def test_add_appends_task_at_end():
    plan = awaiting(["a b"])
    out = apply_rectification(
        plan, Rectification(kind="add", description="new quest task", depends_on=(0,))
    )
    assert len(out.tasks) == 2
    assert out.tasks[1].description == "new quest task"
    assert out.tasks[1].depends_on == (0,)


def test_rectification_rejected_while_draft():
    plan = make_plan(["a b"], status="draft")
    with pytest.raises(ValueError):
        apply_rectification(plan, Rectification(kind="remove", target_id=0))
