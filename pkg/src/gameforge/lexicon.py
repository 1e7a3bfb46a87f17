"""Lexicon file handling.

Lexicons (genres, task types, plan templates, code exemplars) ship as
line-delimited JSON: the first record is a header carrying ``kind`` and
``version``, every following line is one entry. See README for the schema
of each kind.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Any

from gameforge.errors import LexiconError
from gameforge.model import ArgField, Genre, TaskTypeEntry

LEXICON_VERSION = 1


def read_lexicon(text: str, *, kind: str) -> list[dict[str, Any]]:
    """Parse lexicon text, check the header, and return entry records."""
    records: list[dict[str, Any]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LexiconError(f"line {lineno}: invalid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise LexiconError(f"line {lineno}: record must be an object")
        records.append(doc)
    if not records:
        raise LexiconError("lexicon is empty")
    header, entries = records[0], records[1:]
    if "version" not in header:
        raise LexiconError("lexicon header missing required version field")
    if header["version"] != LEXICON_VERSION:
        raise LexiconError(
            f"unsupported lexicon version {header['version']!r} (want {LEXICON_VERSION})"
        )
    if header.get("kind") != kind:
        raise LexiconError(f"expected lexicon kind {kind!r}, got {header.get('kind')!r}")
    return entries


def load_lexicon_file(path: str | Path, *, kind: str) -> list[dict[str, Any]]:
    return read_lexicon(Path(path).read_text(encoding="utf-8"), kind=kind)


def shipped_lexicon_text(name: str) -> str:
    """Text of a lexicon bundled with the package (data/<name>)."""
    return resources.files("gameforge").joinpath("data").joinpath(name).read_text(encoding="utf-8")


# --- genre lexicon ---------------------------------------------------------


def parse_genre_lexicon(text: str) -> dict[Genre, dict[str, float]]:
    """Map each genre to its keyword -> weight table."""
    table: dict[Genre, dict[str, float]] = {}
    for entry in read_lexicon(text, kind="genres"):
        try:
            genre = Genre(entry["genre"])
        except (KeyError, ValueError) as exc:
            raise LexiconError(f"bad genre entry: {entry!r}") from exc
        keywords = entry.get("keywords")
        if not isinstance(keywords, dict) or not keywords:
            raise LexiconError(f"genre {genre.value}: keywords must be a non-empty object")
        table[genre] = {str(k): float(w) for k, w in keywords.items()}
    missing = [g.value for g in Genre if g not in table]
    if missing:
        raise LexiconError(f"genre lexicon missing entries for: {missing}")
    return table


def load_genre_lexicon(path: str | Path | None = None) -> dict[Genre, dict[str, float]]:
    text = Path(path).read_text(encoding="utf-8") if path else shipped_lexicon_text("genres.jsonl")
    return parse_genre_lexicon(text)


# --- task-type lexicon -------------------------------------------------------


def parse_task_types(text: str) -> list[TaskTypeEntry]:
    """Ordered task-type entries; order is the classifier tie-break order."""
    entries: list[TaskTypeEntry] = []
    seen: set[str] = set()
    for doc in read_lexicon(text, kind="task_types"):
        name = doc.get("name")
        if not name or not isinstance(name, str):
            raise LexiconError(f"task type entry missing name: {doc!r}")
        if name in seen:
            raise LexiconError(f"duplicate task type {name!r}")
        seen.add(name)
        try:
            schema = tuple(ArgField.from_doc(f) for f in doc.get("arg_schema", ()))
            entries.append(
                TaskTypeEntry(
                    name=name,
                    arg_schema=schema,
                    blurb=str(doc.get("blurb", "")),
                    keywords=tuple(doc.get("keywords", ())),
                    examples=tuple(doc.get("examples", ())),
                    holdout=tuple(doc.get("holdout", ())),
                )
            )
        except ValueError as exc:
            raise LexiconError(f"task type {name!r}: {exc}") from exc
    if not entries:
        raise LexiconError("task-type lexicon has no entries")
    return entries


def load_task_types(path: str | Path | None = None) -> list[TaskTypeEntry]:
    text = (
        Path(path).read_text(encoding="utf-8") if path else shipped_lexicon_text("task_types.jsonl")
    )
    return parse_task_types(text)


def keyword_universe(types: list[TaskTypeEntry]) -> set[str]:
    """All tokens a plan may legitimately name: keywords plus example tokens.

    Used by the plan reviewer's hallucination check; a task whose
    description shares no token with this universe references capabilities
    the pipeline does not know.
    """
    from gameforge.model import normalize

    universe: set[str] = set()
    for entry in types:
        for kw in entry.keywords:
            universe |= normalize(kw)
        for phrase in entry.examples + entry.holdout:
            universe |= normalize(phrase)
    return universe
