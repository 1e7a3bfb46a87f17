"""Headless command line: drive a request to a summary, or serve the API.

Exit codes for ``run``: 0 when the pipeline reaches summarized, 1 when it
fails, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from gameforge.errors import BackendUnavailable, GameForgeError
from gameforge.orchestrator import (
    PipelineState,
    ProjectConfig,
    drive,
    new_project,
)
from gameforge.store import ProjectStore


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gameforge")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="drive one request headlessly to a summary")
    run.add_argument("--request", required=True, help="request file (text or JSON)")
    run.add_argument("--backend", choices=["scripted", "remote"], default="scripted")
    run.add_argument("--fixtures", help="fixture file or directory for the scripted backend")
    run.add_argument("--auto-approve", action="store_true", help="approve plan pauses automatically")
    run.add_argument("--k", type=int, default=3, help="candidates per snippet spec")
    run.add_argument("--theta", type=float, default=0.8, help="redundancy similarity threshold")
    run.add_argument("--max-rounds", type=int, default=3, help="plan review round budget")
    run.add_argument("--out", required=True, help="output directory for result documents")

    srv = sub.add_parser("serve", help="run the operator console API")
    srv.add_argument("--store", help="project store directory (default FORGE_STORE_DIR)")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8014)
    srv.add_argument("--fixtures", help="default fixtures for scripted-backend projects")
    return parser


def _read_request(path: Path) -> tuple[str, str | None]:
    """A request file is either bare text or JSON with request_id/text."""
    content = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(content)
    except json.JSONDecodeError:
        return content.strip(), None
    if isinstance(doc, dict) and isinstance(doc.get("text"), str):
        return doc["text"], doc.get("request_id")
    return content.strip(), None


def _write_doc(out: Path, name: str, doc: object) -> None:
    (out / name).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _cmd_run(args: argparse.Namespace) -> int:
    request_path = Path(args.request)
    if not request_path.exists():
        print(f"request file not found: {request_path}", file=sys.stderr)
        return 2
    if args.backend == "scripted" and not args.fixtures:
        print("--backend scripted requires --fixtures", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.backend == "scripted":
        backend_config = {"kind": "scripted", "fixtures": [str(Path(args.fixtures).resolve())]}
    else:
        backend_config = {"kind": "remote"}
    try:
        config = ProjectConfig(
            k=args.k, theta=args.theta, max_rounds=args.max_rounds, backend=backend_config
        )
    except ValueError as exc:
        print(f"bad configuration: {exc}", file=sys.stderr)
        return 2

    text, request_id = _read_request(request_path)
    try:
        project = new_project(text, config, request_id=request_id)
    except ValueError as exc:
        print(f"bad request: {exc}", file=sys.stderr)
        return 2

    store = ProjectStore(out / "store")
    store.save(project)
    try:
        drive(project, auto_approve=args.auto_approve, save=store.save)
    except BackendUnavailable as exc:
        print(f"backend unavailable, run paused: {exc}", file=sys.stderr)
        return 1
    except GameForgeError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 1

    _write_doc(out, "record.json", project.record.to_doc())
    _write_doc(out, "project.json", project.to_doc())
    if project.summary is not None:
        _write_doc(out, "summary.json", project.summary.to_doc())
    if project.log is not None:
        _write_doc(out, "log.json", project.log.to_doc())
    if project.final_state is not None:
        _write_doc(out, "state.json", project.final_state.to_doc())

    if project.state == PipelineState.SUMMARIZED:
        print(f"summarized: {project.project_id} ({out})")
        return 0
    print(f"failed: {project.failure}", file=sys.stderr)
    return 1


def _cmd_serve(args: argparse.Namespace) -> int:
    from gameforge.service import serve

    defaults = None
    if args.fixtures:
        defaults = ProjectConfig(
            backend={"kind": "scripted", "fixtures": [str(Path(args.fixtures).resolve())]}
        )
    serve(store_dir=args.store, host=args.host, port=args.port, defaults=defaults)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_serve(args)


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
