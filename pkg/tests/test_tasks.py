import json
import math
import random

import pytest

from gameforge.agents import AgentRole, PrivateMemory, PublicRecord, ScriptedBackend
from gameforge.errors import (
    CycleDetected,
    InsufficientExamples,
    OscillationGuard,
    SchemaViolation,
)
from gameforge.lexicon import load_task_types
from gameforge.model import ArgField, ArgumentSet, Task, TaskTypeEntry, normalize
from gameforge.tasks import (
    ElicitationRequest,
    TaskGraph,
    build_graph,
    classify_task_type,
    elicit_missing,
    identify_arguments,
    order_tasks,
    review_task,
    train_type_classifier,
)


def entry(name, keywords=(), examples=(), schema=()):
    return TaskTypeEntry(
        name=name,
        arg_schema=tuple(schema),
        blurb=f"{name} blurb",
        keywords=tuple(keywords),
        examples=tuple(examples),
    )


# --- training ---------------------------------------------------------------------


def test_priors_are_example_count_proportions():
    types = load_task_types()
    classifier = train_type_classifier(types)
    total = sum(len(e.examples) for e in types)
    for i, e in enumerate(types):
        assert math.isclose(
            math.exp(classifier.log_priors[i]), len(e.examples) / total, rel_tol=1e-12
        )


def test_insufficient_examples_rejected():
    bad = [
        entry("a", keywords=("x",), examples=("x one", "x two", "x three")),
        entry("b", examples=("b one", "b two")),  # only 2 entries
    ]
    with pytest.raises(InsufficientExamples):
        train_type_classifier(bad)


def test_retraining_is_deterministic():
    types = load_task_types()
    first = train_type_classifier(types)
    second = train_type_classifier(types)
    assert first.weights == second.weights
    assert first.log_priors == second.log_priors
    assert first.vocabulary == second.vocabulary


# --- classification -----------------------------------------------------------------


def naive_posterior_oracle(types, description):
    """Independent recomputation: multinomial counts with add-one smoothing
    over keyword tokens plus example-phrase tokens."""
    per_type = {}
    for e in types:
        tokens = []
        for kw in e.keywords:
            tokens.extend(sorted(normalize(kw)))
        for ph in e.examples:
            tokens.extend(sorted(normalize(ph)))
        per_type[e.name] = tokens
    vocab = sorted({t for ts in per_type.values() for t in ts})
    total_examples = sum(len(e.examples) for e in types)
    scores = {}
    doc = [t for t in sorted(normalize(description)) if t in set(vocab)]
    for e in types:
        tokens = per_type[e.name]
        score = math.log(len(e.examples) / total_examples)
        for t in doc:
            score += math.log((tokens.count(t) + 1) / (len(tokens) + len(vocab)))
        scores[e.name] = score
    return scores


def test_classify_spawn_hero_entity_matches_oracle():
    types = load_task_types()
    classifier = train_type_classifier(types)
    description = "spawn the hero entity at the start position"
    got, posterior = classify_task_type(classifier, Task(0, description))
    oracle = naive_posterior_oracle(types, description)
    assert got == max(oracle, key=oracle.get) == "entity_creation"
    # posterior must agree with the oracle's normalized scores
    top = max(oracle.values())
    exps = {n: math.exp(s - top) for n, s in oracle.items()}
    z = sum(exps.values())
    for i, e in enumerate(types):
        assert math.isclose(posterior[i], exps[e.name] / z, rel_tol=1e-9)


def test_out_of_vocabulary_falls_back_to_largest_prior():
    types = [
        entry("small", keywords=("alpha", "gamma"), examples=("alpha one",)),
        entry("large", keywords=("beta",), examples=("beta one", "beta two", "beta three")),
    ]
    classifier = train_type_classifier(types)
    got, posterior = classify_task_type(classifier, Task(0, "zzz qqq www"))
    assert got == "large"
    assert math.isclose(posterior[1], 0.75, rel_tol=1e-12)


def test_training_examples_classify_to_their_own_label():
    types = load_task_types()
    classifier = train_type_classifier(types)
    for e in types:
        for phrase in e.examples:
            got, _ = classify_task_type(classifier, Task(0, phrase))
            assert got == e.name, f"{phrase!r} -> {got}, wanted {e.name}"


def test_holdout_split_accuracy_at_least_point_nine():
    types = load_task_types()
    classifier = train_type_classifier(types)
    total = correct = 0
    for e in types:
        for phrase in e.holdout:
            total += 1
            got, _ = classify_task_type(classifier, Task(0, phrase))
            correct += got == e.name
    assert total >= 10
    assert correct / total >= 0.9


def test_tie_breaks_by_lexicon_order():
    types = [
        entry("first", keywords=("x",), examples=("x go", "x stop")),
        entry("second", keywords=("x",), examples=("x go", "x stop")),
    ]
    classifier = train_type_classifier(types)
    got, _ = classify_task_type(classifier, Task(0, "x"))
    assert got == "first"


# --- argument identification -----------------------------------------------------------


ENTITY_SCHEMA = (
    ArgField("name", "string", True),
    ArgField("archetype", "enum", True, values=("knight", "villager")),
    ArgField("hp", "integer", False),
)


def run_identify(fixtures, schema=ENTITY_SCHEMA):
    backend = ScriptedBackend(fixtures)
    memory = PrivateMemory(AgentRole.DEVELOPMENT_ENGINEER.value)
    task = Task(0, "spawn the hero", task_type="entity_creation")
    type_entry = entry("entity_creation", keywords=("spawn",), examples=("a", "b", "c"), schema=schema)
    arguments, _ = identify_arguments(
        backend, memory, PublicRecord(), task, type_entry, key="k"
    )
    return arguments, backend


def test_identify_complete_fill():
    arguments, _ = run_identify(
        {"k": json.dumps({"values": {"name": "hero", "archetype": "knight"}})}
    )
    assert arguments.values == {"name": "hero", "archetype": "knight"}
    assert arguments.missing == ()


def test_identify_kind_mismatch_twice_goes_to_missing():
    arguments, backend = run_identify(
        {"k": json.dumps({"values": {"name": "hero", "archetype": "knight", "hp": "fast"}})}
    )
    assert backend.calls == ["k", "k"]  # one re-prompt
    assert arguments.values == {"name": "hero", "archetype": "knight"}
    assert "hp" in arguments.missing


def test_identify_unfilled_required_goes_to_missing():
    arguments, _ = run_identify({"k": json.dumps({"values": {"name": "hero"}})})
    assert arguments.missing == ("archetype",)


def test_identify_empty_schema_empty_fill():
    arguments, _ = run_identify({"k": json.dumps({"values": {}})}, schema=())
    assert arguments.values == {} and arguments.missing == ()


# --- task review -----------------------------------------------------------------------


def review_fixture(concur=True, suggested=None, deps=(), findings=()):
    return json.dumps(
        {
            "concur": concur,
            "suggested_type": suggested,
            "add_depends_on": list(deps),
            "findings": list(findings),
        }
    )


def run_review(fixtures, task=None, plan_size=3):
    types = load_task_types()
    backend = ScriptedBackend(fixtures)
    memory = PrivateMemory(AgentRole.TASK_REVIEWER.value)
    task = task or Task(
        0,
        "spawn the hero character entity",
        task_type="entity_creation",
        arguments=ArgumentSet(values={"name": "hero", "archetype": "knight"}),
    )
    re_identify_calls = []

    def re_identify(t, type_entry, record):
        re_identify_calls.append(t.task_type)
        return ArgumentSet(values={"entity": "hero", "event": "e", "handler": "h"}), record

    verdict, task, _ = review_task(
        backend,
        memory,
        PublicRecord(),
        task,
        posterior=[1.0] + [0.0] * (len(types) - 1),
        lexicon=types,
        key="k",
        re_identify=re_identify,
        plan_size=plan_size,
    )
    return verdict, task, re_identify_calls, backend


def test_review_concur_accepts():
    verdict, task, calls, _ = run_review({"k": review_fixture()})
    assert verdict.accepted and task.reviewed and calls == []


def test_review_replaces_type_once_and_reidentifies():
    fixtures = {
        "k": review_fixture(concur=False, suggested="behavior_scripting"),
        "k:pass2": review_fixture(concur=True),
    }
    verdict, task, calls, _ = run_review(fixtures)
    assert verdict.accepted
    assert task.task_type == "behavior_scripting"
    assert len(calls) == 1  # arguments re-identified exactly once


def test_review_suggestion_outside_lexicon_blocks():
    verdict, task, _, _ = run_review(
        {"k": review_fixture(concur=False, suggested="quantum_sorcery")}
    )
    assert not verdict.accepted
    assert any(f.kind == "type_mismatch" for f in verdict.findings)
    assert not task.reviewed


def test_review_oscillation_guard_trips_on_second_flip():
    fixtures = {
        "k": review_fixture(concur=False, suggested="behavior_scripting"),
        "k:pass2": review_fixture(concur=False, suggested="ui_binding"),
    }
    with pytest.raises(OscillationGuard):
        run_review(fixtures)


def test_review_merges_reviewer_dependencies():
    verdict, task, _, _ = run_review({"k": review_fixture(deps=[2])})
    assert verdict.accepted
    assert task.depends_on == (2,)


def test_review_rejects_invalid_reviewer_dependency():
    with pytest.raises(SchemaViolation):
        run_review({"k": review_fixture(deps=[9])}, plan_size=3)


# --- elicitation ------------------------------------------------------------------------


def elicit_entry():
    return entry("entity_creation", keywords=("spawn",), examples=("a", "b", "c"), schema=ENTITY_SCHEMA)


def test_elicit_lists_required_missing_arg():
    task = Task(
        0,
        "spawn hero",
        task_type="entity_creation",
        arguments=ArgumentSet(values={"name": "hero"}, missing=("archetype",)),
    )
    request = elicit_missing(task, elicit_entry())
    assert isinstance(request, ElicitationRequest)
    assert [a.arg_name for a in request.args] == ["archetype"]
    assert request.args[0].choices == ("knight", "villager")


def test_elicit_none_when_nothing_missing():
    task = Task(
        0,
        "spawn hero",
        task_type="entity_creation",
        arguments=ArgumentSet(values={"name": "hero", "archetype": "knight"}),
    )
    assert elicit_missing(task, elicit_entry()) is None


def test_elicit_skips_optional_missing():
    task = Task(
        0,
        "spawn hero",
        task_type="entity_creation",
        arguments=ArgumentSet(values={"name": "hero"}, missing=("archetype", "hp")),
    )
    request = elicit_missing(task, elicit_entry())
    assert [a.arg_name for a in request.args] == ["archetype"]


# --- dependency graph ----------------------------------------------------------------------


def tasks_from_deps(deps: dict[int, list[int]]) -> list[Task]:
    n = max(deps) + 1
    return [
        Task(i, f"task {i}", depends_on=tuple(deps.get(i, ()))) for i in range(n)
    ]


def test_build_graph_edges_point_from_dependency():
    graph = build_graph(tasks_from_deps({0: [], 1: [], 2: [0, 1]}))
    assert set(graph.edges) == {(0, 2), (1, 2)}


def test_build_graph_reports_cycle():
    with pytest.raises(CycleDetected) as err:
        build_graph(tasks_from_deps({0: [1], 1: [0]}))
    cycle = err.value.cycle
    assert cycle[0] == cycle[-1] and set(cycle) == {0, 1}


def random_dag(rng: random.Random, n: int) -> dict[int, list[int]]:
    return {
        i: [j for j in range(i) if rng.random() < 0.35] for i in range(n)
    }


def is_topological(sequence: list[int], edges) -> bool:
    position = {t: i for i, t in enumerate(sequence)}
    return all(position[u] < position[v] for u, v in edges)


def test_build_graph_random_dags_validate_acyclic():
    rng = random.Random(11)
    for _ in range(50):
        deps = random_dag(rng, rng.randint(1, 10))
        graph = build_graph(tasks_from_deps(deps))
        order = order_tasks(graph)
        assert is_topological(order.sequence(), graph.edges)


# --- ordering ---------------------------------------------------------------------------------


def test_order_two_layer_example():
    graph = build_graph(tasks_from_deps({0: [], 1: [], 2: [0, 1]}))
    assert order_tasks(graph).layers == ((0, 1), (2,))


def test_order_no_edges_single_layer():
    graph = build_graph(tasks_from_deps({0: [], 1: [], 2: [], 3: []}))
    assert order_tasks(graph).layers == ((0, 1, 2, 3),)


def test_order_chain_one_per_layer():
    graph = build_graph(tasks_from_deps({0: [], 1: [0], 2: [1], 3: [2]}))
    assert order_tasks(graph).layers == ((0,), (1,), (2,), (3,))


def test_order_defensive_cycle_detection():
    graph = TaskGraph(nodes=(0, 1), edges=((0, 1), (1, 0)))
    with pytest.raises(CycleDetected):
        order_tasks(graph)


def longest_path_depths(nodes, edges) -> dict[int, int]:
    depth = {n: 0 for n in nodes}
    for _ in range(len(nodes)):
        for u, v in edges:
            depth[v] = max(depth[v], depth[u] + 1)
    return depth


def test_layer_index_equals_longest_path_depth():
    rng = random.Random(23)
    for _ in range(100):
        deps = random_dag(rng, rng.randint(1, 12))
        graph = build_graph(tasks_from_deps(deps))
        order = order_tasks(graph)
        oracle = longest_path_depths(graph.nodes, graph.edges)
        for layer_index, layer in enumerate(order.layers):
            for task_id in layer:
                assert oracle[task_id] == layer_index


def test_order_is_invariant_under_relabeling():
    rng = random.Random(5)
    for _ in range(30):
        deps = random_dag(rng, rng.randint(2, 9))
        original = order_tasks(build_graph(tasks_from_deps(deps)))
        n = max(deps) + 1
        perm = list(range(n))
        rng.shuffle(perm)
        relabeled_deps = {
            perm[i]: [perm[d] for d in deps.get(i, [])] for i in range(n)
        }
        relabeled = order_tasks(build_graph(tasks_from_deps(relabeled_deps)))
        expected = tuple(
            tuple(sorted(perm[t] for t in layer)) for layer in original.layers
        )
        assert relabeled.layers == expected
