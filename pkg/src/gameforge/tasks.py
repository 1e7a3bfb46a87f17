"""Task identification stage: type classification, argument filling, task
review with elicitation, and dependency ordering.

The type classifier is a small expert model: a multinomial bag-of-words
model with add-one smoothing trained from the task-type lexicon. It is
deterministic, retrainable in milliseconds, and sits behind an interface a
heavier model could replace.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
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
    CycleDetected,
    InsufficientExamples,
    OscillationGuard,
    SchemaViolation,
)
from gameforge.lexicon import LEXICON_VERSION
from gameforge.model import (
    ArgField,
    ArgumentSet,
    Finding,
    Task,
    TaskTypeEntry,
    check_arg_value,
    normalize,
    verdict_from_findings,
)
from gameforge.model import ReviewVerdict

MIN_TRAINING_ENTRIES = 3


@dataclass(frozen=True)
class TypeClassifier:
    """Bag-of-words type model; immutable and safely shared once trained."""

    types: tuple[str, ...]
    vocabulary: dict[str, int]
    weights: tuple[tuple[float, ...], ...]  # per type, log P(token|type) per vocab index
    log_priors: tuple[float, ...]
    trained_on: int

    def __post_init__(self) -> None:
        total = sum(math.exp(p) for p in self.log_priors)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"priors sum to {total}, not 1")
        for row in self.weights:
            if len(row) != len(self.vocabulary):
                raise ValueError("weights missing for some (token, type) pair")


def _training_tokens(entry: TaskTypeEntry) -> list[str]:
    tokens: list[str] = []
    for kw in entry.keywords:
        tokens.extend(sorted(normalize(kw)))
    for phrase in entry.examples:
        tokens.extend(sorted(normalize(phrase)))
    return tokens


def train_type_classifier(lexicon: list[TaskTypeEntry]) -> TypeClassifier:
    """Fit the expert model on the lexicon's keywords and example phrases."""
    for entry in lexicon:
        if len(entry.keywords) + len(entry.examples) < MIN_TRAINING_ENTRIES:
            raise InsufficientExamples(
                f"type {entry.name!r} has fewer than {MIN_TRAINING_ENTRIES} "
                "keyword/example entries"
            )
    per_type_tokens = {entry.name: _training_tokens(entry) for entry in lexicon}
    vocab_tokens = sorted({t for tokens in per_type_tokens.values() for t in tokens})
    vocabulary = {tok: i for i, tok in enumerate(vocab_tokens)}
    v = len(vocabulary)

    weights: list[tuple[float, ...]] = []
    for entry in lexicon:
        counts = [0] * v
        for tok in per_type_tokens[entry.name]:
            counts[vocabulary[tok]] += 1
        total = len(per_type_tokens[entry.name])
        weights.append(tuple(math.log((c + 1) / (total + v)) for c in counts))

    example_counts = [len(entry.examples) for entry in lexicon]
    total_examples = sum(example_counts)
    if total_examples == 0:
        raise InsufficientExamples("lexicon has no example phrases at all")
    log_priors = tuple(
        math.log(c / total_examples) if c else -math.inf for c in example_counts
    )
    return TypeClassifier(
        types=tuple(entry.name for entry in lexicon),
        vocabulary=vocabulary,
        weights=tuple(weights),
        log_priors=log_priors,
        trained_on=LEXICON_VERSION,
    )


def classify_task_type(classifier: TypeClassifier, task: Task) -> tuple[str, list[float]]:
    """Smoothed posterior argmax over the description's known tokens.

    Out-of-vocabulary tokens carry no signal (their smoothing mass is the
    same floor for every type), so an all-unknown description falls back to
    the largest prior. Ties break by lexicon order.
    """
    tokens = [t for t in sorted(normalize(task.description)) if t in classifier.vocabulary]
    scores: list[float] = []
    for i in range(len(classifier.types)):
        score = classifier.log_priors[i]
        for tok in tokens:
            score += classifier.weights[i][classifier.vocabulary[tok]]
        scores.append(score)
    top = max(scores)
    exps = [math.exp(s - top) if s != -math.inf else 0.0 for s in scores]
    total = sum(exps)
    posterior = [e / total for e in exps]
    best = scores.index(top)  # first index at the max: lexicon-order tie break
    return classifier.types[best], posterior


# --- argument identification -------------------------------------------------


def _parse_json_doc(raw: str) -> dict[str, Any]:
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"not a JSON document: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaViolation("document root must be an object")
    return doc


def parse_argument_fill(raw: str) -> dict[str, Any]:
    doc = _parse_json_doc(raw)
    values = doc.get("values")
    if not isinstance(values, dict):
        raise SchemaViolation("argument fill needs a 'values' object")
    return {"values": values}


def _validate_fill(
    values: dict[str, Any], schema: tuple[ArgField, ...]
) -> tuple[dict[str, Any], list[str]]:
    """Split a backend fill into conforming values and rejected arg names."""
    good: dict[str, Any] = {}
    bad: list[str] = []
    names = {f.arg_name: f for f in schema}
    for name, value in values.items():
        if name not in names or not check_arg_value(names[name], value):
            bad.append(name)
        else:
            good[name] = value
    return good, sorted(bad)


def identify_arguments(
    backend: Backend,
    memory: PrivateMemory,
    record: PublicRecord,
    task: Task,
    entry: TaskTypeEntry,
    key: str,
) -> tuple[ArgumentSet, PublicRecord]:
    """Fill the type's argument template; bad values get one re-prompt, then
    land in missing alongside unfilled required args."""
    prompt = arg_fill_prompt(task, entry, key)
    output, record = agent_step(
        AgentRole.DEVELOPMENT_ENGINEER, memory, record, prompt, backend
    )
    values, rejected = _validate_fill(output.payload["values"], entry.arg_schema)
    if rejected:
        retry = arg_fill_prompt(task, entry, key, rejected=rejected)
        output, record = agent_step(
            AgentRole.DEVELOPMENT_ENGINEER, memory, record, retry, backend
        )
        values, rejected = _validate_fill(output.payload["values"], entry.arg_schema)
    missing = set(rejected)
    for field_ in entry.arg_schema:
        if field_.required and field_.arg_name not in values:
            missing.add(field_.arg_name)
    return ArgumentSet(values=values, missing=tuple(sorted(missing))), record


def arg_fill_prompt(
    task: Task, entry: TaskTypeEntry, key: str, rejected: list[str] | None = None
) -> StagePrompt:
    schema_lines = []
    for f in entry.arg_schema:
        choice = f" one of {list(f.values)}" if f.values else ""
        schema_lines.append(
            f"- {f.arg_name}: {f.arg_kind}{choice} ({'required' if f.required else 'optional'})"
        )
    body = (
        f"Task: {task.description}\n"
        f"Type: {entry.name} ({entry.blurb})\n"
        "Fill the argument template. Answer with a JSON object "
        '{"values": {...}} using only the listed argument names.\n'
        + "\n".join(schema_lines)
    )
    if rejected:
        body += f"\nThese arguments were invalid and must be corrected: {rejected}"
    return StagePrompt(
        stage="identify_args",
        role=AgentRole.DEVELOPMENT_ENGINEER,
        key=key,
        instructions="You are the development engineer filling task argument templates.",
        body=body,
        schema=parse_argument_fill,
        record_stages=("request", "plan"),
    )


# --- task review --------------------------------------------------------------


def parse_task_review(raw: str) -> dict[str, Any]:
    doc = _parse_json_doc(raw)
    if not isinstance(doc.get("concur"), bool):
        raise SchemaViolation("task review needs boolean 'concur'")
    suggested = doc.get("suggested_type")
    if suggested is not None and not isinstance(suggested, str):
        raise SchemaViolation("'suggested_type' must be a string or null")
    deps = doc.get("add_depends_on", [])
    if not isinstance(deps, list) or not all(isinstance(d, int) for d in deps):
        raise SchemaViolation("'add_depends_on' must be a list of task ids")
    findings = doc.get("findings", [])
    if not isinstance(findings, list):
        raise SchemaViolation("'findings' must be a list")
    return {
        "concur": doc["concur"],
        "suggested_type": suggested,
        "add_depends_on": deps,
        "findings": findings,
    }


def task_review_prompt(task: Task, posterior: list[float], key: str, types: list[str]) -> StagePrompt:
    body = (
        f"Task {task.task_id}: {task.description}\n"
        f"Assigned type: {task.task_type}\n"
        f"Arguments: {json.dumps(task.arguments.to_doc() if task.arguments else None, sort_keys=True)}\n"
        f"Classifier posterior: {json.dumps(dict(zip(types, [round(p, 6) for p in posterior])), sort_keys=True)}\n"
        "Confirm the type is in range and the best fit, and that the arguments "
        "align with the task. Answer JSON: {\"concur\": bool, \"suggested_type\": "
        "string|null, \"add_depends_on\": [task ids], \"findings\": [...]}"
    )
    return StagePrompt(
        stage="task_review",
        role=AgentRole.TASK_REVIEWER,
        key=key,
        instructions="You are the task reviewer double-confirming types and arguments.",
        body=body,
        schema=parse_task_review,
        record_stages=("request", "plan", "identify_args"),
    )


def _parse_findings(raw_findings: list[Any], task_id: int) -> list[Finding]:
    findings = []
    for f in raw_findings:
        if not isinstance(f, dict) or "kind" not in f:
            raise SchemaViolation(f"malformed finding: {f!r}")
        findings.append(
            Finding(kind=f["kind"], target_id=int(f.get("target_id", task_id)), note=str(f.get("note", "")))
        )
    return findings


def review_task(
    backend: Backend,
    memory: PrivateMemory,
    record: PublicRecord,
    task: Task,
    posterior: list[float],
    lexicon: list[TaskTypeEntry],
    key: str,
    re_identify: Callable[[Task, TaskTypeEntry, PublicRecord], tuple[ArgumentSet, PublicRecord]],
    plan_size: int,
) -> tuple[ReviewVerdict, Task, PublicRecord]:
    """Double-confirm type and arguments; one type replacement is allowed,
    a second flip trips the oscillation guard."""
    types = [e.name for e in lexicon]
    by_name = {e.name: e for e in lexicon}
    if task.task_type not in by_name:
        verdict = verdict_from_findings(
            [Finding("type_mismatch", task.task_id, f"type {task.task_type!r} not in lexicon")]
        )
        return verdict, task, record

    output, record = agent_step(
        AgentRole.TASK_REVIEWER,
        memory,
        record,
        task_review_prompt(task, posterior, key, types),
        backend,
    )
    review = output.payload
    findings = _parse_findings(review["findings"], task.task_id)
    task = _merge_reviewer_deps(task, review["add_depends_on"], plan_size)

    if not review["concur"] and review["suggested_type"]:
        suggested = review["suggested_type"]
        if suggested not in by_name:
            findings.append(
                Finding("type_mismatch", task.task_id, f"suggested type {suggested!r} not in lexicon")
            )
            return verdict_from_findings(findings), task, record
        task = task.with_(task_type=suggested)
        arguments, record = re_identify(task, by_name[suggested], record)
        task = task.with_(arguments=arguments)
        output, record = agent_step(
            AgentRole.TASK_REVIEWER,
            memory,
            record,
            task_review_prompt(task, posterior, key + ":pass2", types),
            backend,
        )
        second = output.payload
        findings.extend(_parse_findings(second["findings"], task.task_id))
        task = _merge_reviewer_deps(task, second["add_depends_on"], plan_size)
        if not second["concur"] and second["suggested_type"]:
            raise OscillationGuard(
                f"task {task.task_id}: type flipped twice "
                f"({review['suggested_type']} then {second['suggested_type']})"
            )
    elif not review["concur"]:
        findings.append(
            Finding("vague", task.task_id, "reviewer rejected the type without an alternative")
        )

    verdict = verdict_from_findings(findings)
    if verdict.accepted:
        task = task.with_(reviewed=True)
    return verdict, task, record


def _merge_reviewer_deps(task: Task, deps: list[int], plan_size: int) -> Task:
    if not deps:
        return task
    for d in deps:
        if d < 0 or d >= plan_size or d == task.task_id:
            raise SchemaViolation(f"add_depends_on names invalid task id {d}")
    merged = tuple(sorted(set(task.depends_on) | set(deps)))
    return task.with_(depends_on=merged)


# --- elicitation ---------------------------------------------------------------


@dataclass(frozen=True)
class ArgRequest:
    arg_name: str
    arg_kind: str
    guidance: str
    choices: tuple[str, ...] = ()

    def to_doc(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "arg_name": self.arg_name,
            "arg_kind": self.arg_kind,
            "guidance": self.guidance,
        }
        if self.choices:
            doc["choices"] = list(self.choices)
        return doc


@dataclass(frozen=True)
class ElicitationRequest:
    task_id: int
    args: tuple[ArgRequest, ...]

    def to_doc(self) -> dict[str, Any]:
        return {"task_id": self.task_id, "args": [a.to_doc() for a in self.args]}


def elicit_missing(task: Task, entry: TaskTypeEntry) -> ElicitationRequest | None:
    """Ask the user for required-and-absent arguments only."""
    if task.arguments is None:
        return None
    required = {f.arg_name: f for f in entry.arg_schema if f.required}
    asks = []
    for name in task.arguments.missing:
        field_ = required.get(name)
        if field_ is None:
            continue  # optional args never block
        guidance = f"Provide {name} ({field_.arg_kind}) for: {task.description}"
        if field_.values:
            guidance += f" — one of {', '.join(field_.values)}"
        asks.append(
            ArgRequest(
                arg_name=name,
                arg_kind=field_.arg_kind,
                guidance=guidance,
                choices=field_.values,
            )
        )
    if not asks:
        return None
    return ElicitationRequest(task_id=task.task_id, args=tuple(asks))


# --- dependency graph and ordering ---------------------------------------------


@dataclass(frozen=True)
class TaskGraph:
    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]  # (from, to): from must precede to

    def __post_init__(self) -> None:
        node_set = set(self.nodes)
        for u, v in self.edges:
            if u == v:
                raise ValueError(f"self edge on task {u}")
            if u not in node_set or v not in node_set:
                raise ValueError(f"edge ({u}, {v}) references unknown task")

    def to_doc(self) -> dict[str, Any]:
        return {"nodes": list(self.nodes), "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> TaskGraph:
        return cls(
            nodes=tuple(int(n) for n in doc["nodes"]),
            edges=tuple((int(u), int(v)) for u, v in doc["edges"]),
        )


@dataclass(frozen=True)
class ExecutionOrder:
    layers: tuple[tuple[int, ...], ...]

    def sequence(self) -> list[int]:
        return [t for layer in self.layers for t in layer]

    def to_doc(self) -> dict[str, Any]:
        return {"layers": [list(layer) for layer in self.layers]}

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> ExecutionOrder:
        return cls(layers=tuple(tuple(int(t) for t in layer) for layer in doc["layers"]))


def _find_cycle(nodes: list[int], out_edges: dict[int, list[int]]) -> list[int]:
    """Return one cycle as [a, b, ..., a]; nodes are known to contain one."""
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {n: WHITE for n in nodes}
    stack: list[int] = []

    def visit(n: int) -> list[int] | None:
        color[n] = GRAY
        stack.append(n)
        for m in out_edges.get(n, ()):
            if color[m] == GRAY:
                return stack[stack.index(m):] + [m]
            if color[m] == WHITE:
                found = visit(m)
                if found:
                    return found
        stack.pop()
        color[n] = BLACK
        return None

    for n in nodes:
        if color[n] == WHITE:
            found = visit(n)
            if found:
                return found
    raise AssertionError("no cycle found in a graph reported cyclic")


def build_graph(tasks: list[Task]) -> TaskGraph:
    """Edges (dependency, task) from every task's depends_on; must be a DAG."""
    nodes = tuple(t.task_id for t in tasks)
    edges = tuple((d, t.task_id) for t in tasks for d in sorted(t.depends_on))
    graph = TaskGraph(nodes=nodes, edges=edges)
    _check_acyclic(graph)
    return graph


def _check_acyclic(graph: TaskGraph) -> None:
    out_edges: dict[int, list[int]] = {n: [] for n in graph.nodes}
    indegree = {n: 0 for n in graph.nodes}
    for u, v in graph.edges:
        out_edges[u].append(v)
        indegree[v] += 1
    frontier = [n for n in graph.nodes if indegree[n] == 0]
    seen = 0
    while frontier:
        n = frontier.pop()
        seen += 1
        for m in out_edges[n]:
            indegree[m] -= 1
            if indegree[m] == 0:
                frontier.append(m)
    if seen != len(graph.nodes):
        raise CycleDetected(_find_cycle(list(graph.nodes), out_edges))


def order_tasks(graph: TaskGraph) -> ExecutionOrder:
    """Layered BFS: peel the zero-in-degree frontier, ascending ids within
    a layer; the concatenated layers are the execution sequence."""
    out_edges: dict[int, list[int]] = {n: [] for n in graph.nodes}
    indegree = {n: 0 for n in graph.nodes}
    for u, v in graph.edges:
        out_edges[u].append(v)
        indegree[v] += 1
    remaining = set(graph.nodes)
    layers: list[tuple[int, ...]] = []
    frontier = sorted(n for n in remaining if indegree[n] == 0)
    while frontier:
        layers.append(tuple(frontier))
        next_frontier: list[int] = []
        for n in frontier:
            remaining.discard(n)
            for m in out_edges[n]:
                indegree[m] -= 1
                if indegree[m] == 0:
                    next_frontier.append(m)
        frontier = sorted(next_frontier)
    if remaining:
        raise CycleDetected(_find_cycle(list(graph.nodes), out_edges))
    return ExecutionOrder(layers=tuple(layers))
