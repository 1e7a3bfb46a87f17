"""Project persistence: one schema-versioned JSON document per project."""

from __future__ import annotations

import json
import os
from pathlib import Path

from gameforge.errors import NotFound, SchemaVersionMismatch
from gameforge.model import SCHEMA_VERSION
from gameforge.orchestrator import Project

ENV_STORE_DIR = "FORGE_STORE_DIR"


class ProjectStore:
    """Filesystem store; writes are atomic via rename."""

    def __init__(self, root: str | Path | None = None):
        resolved = root or os.environ.get(ENV_STORE_DIR) or "projects"
        self.root = Path(resolved)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, project_id: str) -> Path:
        return self.root / f"{project_id}.json"

    def save(self, project: Project) -> None:
        doc = {"schema_version": SCHEMA_VERSION, "project": project.to_doc()}
        tmp = self._path(project.project_id).with_suffix(".json.tmp")
        tmp.write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")
        tmp.replace(self._path(project.project_id))

    def load(self, project_id: str) -> Project:
        path = self._path(project_id)
        if not path.exists():
            raise NotFound(f"no project {project_id!r}")
        doc = json.loads(path.read_text(encoding="utf-8"))
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaVersionMismatch(
                f"project {project_id!r} has schema version {version!r}, "
                f"this build reads {SCHEMA_VERSION}"
            )
        return Project.from_doc(doc["project"])

    def exists(self, project_id: str) -> bool:
        return self._path(project_id).exists()

    def request_ids(self) -> set[str]:
        ids = set()
        for path in self.root.glob("*.json"):
            try:
                doc = json.loads(path.read_text(encoding="utf-8"))
                ids.add(doc["project"]["request"]["request_id"])
            except (json.JSONDecodeError, KeyError):
                continue
        return ids

    def list_ids(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("*.json"))
