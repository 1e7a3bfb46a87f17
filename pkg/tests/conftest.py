"""Shared fixtures: fixture-file paths and pre-driven golden projects."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from gameforge.orchestrator import Project, ProjectConfig, drive, new_project

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURES = REPO_ROOT / "fixtures"
GOLDEN_REQUEST = FIXTURES / "golden" / "request.json"
GOLDEN_RESPONSES = FIXTURES / "golden" / "responses.json"
MINI_REQUEST = FIXTURES / "interactive" / "request.json"
MINI_RESPONSES = FIXTURES / "interactive" / "responses.json"


def golden_config(**overrides) -> ProjectConfig:
    doc = {"backend": {"kind": "scripted", "fixtures": [str(GOLDEN_RESPONSES)]}}
    doc.update(overrides)
    return ProjectConfig(**doc)


def mini_config(**overrides) -> ProjectConfig:
    doc = {
        "backend": {"kind": "scripted", "fixtures": [str(MINI_RESPONSES)]},
        "interactive": True,
    }
    doc.update(overrides)
    return ProjectConfig(**doc)


def make_golden_project(project_id: str = "golden", **config_overrides) -> Project:
    request = json.loads(GOLDEN_REQUEST.read_text())
    return new_project(
        request["text"],
        golden_config(**config_overrides),
        request_id=request["request_id"],
        project_id=project_id,
    )


def make_mini_project(project_id: str = "mini", **config_overrides) -> Project:
    request = json.loads(MINI_REQUEST.read_text())
    return new_project(
        request["text"],
        mini_config(**config_overrides),
        request_id=request["request_id"],
        project_id=project_id,
    )


@pytest.fixture
def golden_fixtures() -> dict[str, str]:
    return json.loads(GOLDEN_RESPONSES.read_text())


@pytest.fixture
def golden_run() -> Project:
    """A golden project driven to its terminal state."""
    return drive(make_golden_project())
