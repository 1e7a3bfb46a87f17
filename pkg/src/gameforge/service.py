"""HTTP API for the operator console.

One JSON document in, one out, per endpoint; the event feed long-polls the
public record so the console can treat it as a live stream. A per-project
lock serializes advances and user actions; reads are concurrent.
"""

from __future__ import annotations

import threading
from typing import Any

from fastapi import Body, FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware

from gameforge import orchestrator as orch
from gameforge.errors import (
    BackendUnavailable,
    DanglingDependency,
    InvalidAction,
    InvalidPermutation,
    KindMismatch,
    NotFound,
    UnknownTarget,
)
from gameforge.model import Genre
from gameforge.orchestrator import PipelineState, Project, ProjectConfig
from gameforge.planner import Rectification
from gameforge.store import ProjectStore

LONG_POLL_CAP_SECONDS = 30.0


def _http_error(status: int, code: str, message: str) -> HTTPException:
    return HTTPException(status_code=status, detail={"code": code, "message": message})


class _Projects:
    """Store access plus per-project locking and event notification."""

    def __init__(self, store: ProjectStore):
        self.store = store
        self._locks: dict[str, threading.Lock] = {}
        self._conditions: dict[str, threading.Condition] = {}
        self._registry_lock = threading.Lock()

    def lock(self, project_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks.setdefault(project_id, threading.Lock())

    def condition(self, project_id: str) -> threading.Condition:
        with self._registry_lock:
            return self._conditions.setdefault(project_id, threading.Condition())

    def load(self, project_id: str) -> Project:
        try:
            return self.store.load(project_id)
        except NotFound as exc:
            raise _http_error(404, "NotFound", str(exc)) from exc

    def save_and_notify(self, project: Project) -> None:
        self.store.save(project)
        condition = self.condition(project.project_id)
        with condition:
            condition.notify_all()


def create_app(store: ProjectStore, defaults: ProjectConfig | None = None) -> FastAPI:
    app = FastAPI(title="gameforge", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    projects = _Projects(store)
    base_config = defaults or ProjectConfig()

    def mutate(project_id: str, action: Any) -> dict[str, Any]:
        """Run an action under the project lock, persist, and notify."""
        with projects.lock(project_id):
            project = projects.load(project_id)
            try:
                action(project)
            except InvalidAction as exc:
                raise _http_error(409, "InvalidAction", str(exc)) from exc
            except (
                UnknownTarget,
                InvalidPermutation,
                DanglingDependency,
                KindMismatch,
                ValueError,
            ) as exc:
                raise _http_error(422, type(exc).__name__, str(exc)) from exc
            except BackendUnavailable as exc:
                # pause without persisting; the stage will re-run on resume
                raise _http_error(503, "BackendUnavailable", str(exc)) from exc
            projects.save_and_notify(project)
            return project.to_doc()

    @app.post("/projects", status_code=201)
    def create_project(body: dict[str, Any] = Body(...)) -> dict[str, Any]:
        text = body.get("text")
        if not isinstance(text, str) or not text.strip():
            raise _http_error(422, "MalformedBody", "body needs non-empty 'text'")
        overrides = body.get("config") or {}
        if not isinstance(overrides, dict):
            raise _http_error(422, "MalformedBody", "'config' must be an object")
        try:
            config = ProjectConfig.from_doc({**base_config.to_doc(), **overrides})
        except ValueError as exc:
            raise _http_error(422, "MalformedBody", str(exc)) from exc
        request_id = body.get("request_id")
        try:
            project = orch.new_project(text, config, request_id=request_id)
        except ValueError as exc:
            raise _http_error(422, "MalformedBody", str(exc)) from exc
        if project.request.request_id in projects.store.request_ids():
            raise _http_error(
                409, "DuplicateRequest", f"request_id {project.request.request_id!r} already exists"
            )
        projects.save_and_notify(project)
        return project.to_doc()

    @app.get("/projects/{project_id}")
    def get_project(project_id: str) -> dict[str, Any]:
        return projects.load(project_id).to_doc()

    @app.post("/projects/{project_id}/advance")
    def advance(project_id: str) -> dict[str, Any]:
        return mutate(project_id, lambda p: orch.advance(p))

    @app.post("/projects/{project_id}/plan/rectify")
    def rectify(project_id: str, body: dict[str, Any] = Body(...)) -> dict[str, Any]:
        kind = body.get("kind")
        if kind == "set_genre":
            # resolves the genre question the classifier could not answer
            try:
                genre = Genre(body.get("genre"))
            except ValueError as exc:
                raise _http_error(422, "MalformedBody", f"unknown genre {body.get('genre')!r}") from exc
            return mutate(project_id, lambda p: orch.resolve_genre(p, genre))
        try:
            rect = Rectification.from_doc(body)
        except (ValueError, TypeError) as exc:
            raise _http_error(422, "MalformedBody", str(exc)) from exc
        return mutate(project_id, lambda p: orch.rectify_plan(p, rect))

    @app.post("/projects/{project_id}/plan/approve")
    def approve(project_id: str) -> dict[str, Any]:
        return mutate(project_id, lambda p: orch.approve_plan(p))

    @app.post("/projects/{project_id}/tasks/{task_id}/arguments")
    def arguments(
        project_id: str, task_id: int, body: dict[str, Any] = Body(...)
    ) -> dict[str, Any]:
        values = body.get("values")
        if not isinstance(values, dict):
            raise _http_error(422, "MalformedBody", "body needs a 'values' object")
        def act(p: Project) -> None:
            if p.plan is None or not (0 <= task_id < len(p.plan.tasks)):
                raise _http_error(404, "NotFound", f"no task {task_id}")
            orch.answer_arguments(p, task_id, values)
        return mutate(project_id, act)

    @app.post("/projects/{project_id}/tasks/{task_id}/candidate")
    def candidate(
        project_id: str, task_id: int, body: dict[str, Any] = Body(...)
    ) -> dict[str, Any]:
        unit = body.get("unit", 0)
        index = body.get("index")
        veto = body.get("veto")
        if not isinstance(unit, int):
            raise _http_error(422, "MalformedBody", "'unit' must be an integer")
        if veto is not None and (
            not isinstance(veto, list) or not all(isinstance(v, int) for v in veto)
        ):
            raise _http_error(422, "MalformedBody", "'veto' must be a list of indices")
        if index is not None and not isinstance(index, int):
            raise _http_error(422, "MalformedBody", "'index' must be an integer")
        def act(p: Project) -> None:
            if p.plan is None or not (0 <= task_id < len(p.plan.tasks)):
                raise _http_error(404, "NotFound", f"no task {task_id}")
            orch.candidate_action(p, task_id, unit, index=index, veto=veto)
        return mutate(project_id, act)

    @app.post("/projects/{project_id}/code/suggestion")
    def suggestion(project_id: str, body: dict[str, Any] = Body(...)) -> dict[str, Any]:
        task_id = body.get("task_id")
        unit = body.get("unit", 0)
        text = body.get("text", "")
        if not isinstance(task_id, int) or not isinstance(unit, int) or not isinstance(text, str):
            raise _http_error(422, "MalformedBody", "body needs task_id, unit, text")
        def act(p: Project) -> None:
            if p.plan is None or not (0 <= task_id < len(p.plan.tasks)):
                raise _http_error(404, "NotFound", f"no task {task_id}")
            orch.code_suggestion(p, task_id, unit, text)
        return mutate(project_id, act)

    @app.get("/projects/{project_id}/events")
    def events(
        project_id: str,
        since: int = Query(default=-1),
        wait: float = Query(default=0.0),
    ) -> dict[str, Any]:
        wait = max(0.0, min(wait, LONG_POLL_CAP_SECONDS))
        project = projects.load(project_id)
        fresh = project.record.since(since)
        if not fresh and wait > 0:
            condition = projects.condition(project_id)
            with condition:
                condition.wait(timeout=wait)
            project = projects.load(project_id)
            fresh = project.record.since(since)
        return {
            "events": [e.to_doc() for e in fresh],
            "latest_seq": project.record.next_seq() - 1,
        }

    @app.get("/projects/{project_id}/summary")
    def summary(project_id: str) -> dict[str, Any]:
        project = projects.load(project_id)
        if project.state != PipelineState.SUMMARIZED or project.summary is None:
            raise _http_error(
                409, "InvalidAction", f"project is {project.state.value}, not summarized"
            )
        return project.summary.to_doc()

    return app


def serve(
    store_dir: str | None = None,
    host: str = "127.0.0.1",
    port: int = 8014,
    defaults: ProjectConfig | None = None,
) -> None:
    """Run the API under uvicorn (blocking)."""
    import uvicorn

    app = create_app(ProjectStore(store_dir), defaults=defaults)
    uvicorn.run(app, host=host, port=port, log_level="warning")
