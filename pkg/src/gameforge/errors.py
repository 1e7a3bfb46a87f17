"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class GameForgeError(Exception):
    """Base class for all pipeline errors."""


# --- backend / agent runtime ---------------------------------------------


class BackendUnavailable(GameForgeError):
    """The backend could not be reached; the pipeline may pause and resume."""


class Timeout(BackendUnavailable):
    """The backend did not answer within the configured timeout."""


class TransportError(BackendUnavailable):
    """The transport failed before a response was received."""


class UnknownScriptKey(GameForgeError):
    """A scripted backend has no canned response for the requested key."""

    def __init__(self, key: str):
        super().__init__(f"no canned response for key {key!r}")
        self.key = key


class SchemaViolation(GameForgeError):
    """Backend output failed stage-schema validation after all retries."""


# --- planning --------------------------------------------------------------


class NoSignal(GameForgeError):
    """Genre classification found no lexicon keyword in the request."""


class BoundsViolation(GameForgeError):
    """A drafted plan breaks the template's per-section task bounds."""


class UnknownTarget(GameForgeError):
    """A rectification names a task id absent from the plan."""


class InvalidPermutation(GameForgeError):
    """A reorder rectification payload is not a permutation of task ids."""


class DanglingDependency(GameForgeError):
    """A task edit would leave a depends_on pointing at a removed task."""


# --- task pipeline ----------------------------------------------------------


class InsufficientExamples(GameForgeError):
    """A task type has fewer training entries than the classifier needs."""


class KindMismatch(GameForgeError):
    """An argument value does not conform to its declared arg_kind."""


class OscillationGuard(GameForgeError):
    """Task-type review flipped the type twice; a human must decide."""


class CycleDetected(GameForgeError):
    """The dependency graph contains a cycle."""

    def __init__(self, cycle: list[int]):
        path = " -> ".join(str(t) for t in cycle)
        super().__init__(f"dependency cycle: {path}")
        self.cycle = cycle


# --- codegen ----------------------------------------------------------------


class AllCandidatesFailed(GameForgeError):
    """Every one of the K generation calls for a snippet spec failed."""


# --- engine -----------------------------------------------------------------


class ParseError(GameForgeError):
    """A script line does not match the engine command grammar."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class MissingSnippet(GameForgeError):
    """run_sequence was handed a task without a selected snippet."""


# --- orchestration ----------------------------------------------------------


class InvalidAction(GameForgeError):
    """The requested action is not valid in the project's current state."""


# --- persistence ------------------------------------------------------------


class NotFound(GameForgeError):
    """No stored project under the requested id."""


class SchemaVersionMismatch(GameForgeError):
    """A stored document carries a schema version this build cannot read."""


# --- lexicon files ----------------------------------------------------------


class LexiconError(GameForgeError):
    """A lexicon file is malformed or carries the wrong version/kind."""
