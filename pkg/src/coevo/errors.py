"""Exception hierarchy shared across the engine.

Each leaf class corresponds to one failure contract; callers catch the
narrow type when they can recover and the family base when they cannot.
"""
from __future__ import annotations


class CoevoError(Exception):
    """Base class for all engine errors."""


class InputError(CoevoError):
    """Caller-supplied input rejected before any work started."""


# --- memory model -----------------------------------------------------------

class ValidationError(CoevoError):
    """A record violates a memory-model invariant."""


class MissingField(ValidationError):
    pass


class UnexpectedField(ValidationError):
    pass


class SuggestionCountOutOfRange(ValidationError):
    pass


class UnknownTool(ValidationError):
    def __init__(self, name: str):
        super().__init__(f"unknown tool: {name!r}")
        self.name = name


class DuplicateKey(ValidationError):
    pass


class DuplicateRole(DuplicateKey):
    """Agent roles are keys of the agent bank (case-insensitive)."""


class BadName(ValidationError):
    pass


class SchemaInconsistent(ValidationError):
    pass


class MissingToolConfig(ValidationError):
    pass


class MalformedMemoryEntry(ValidationError):
    pass


class DuplicateId(ValidationError):
    pass


# --- retrieval --------------------------------------------------------------

class RetrievalError(CoevoError):
    pass


class EmptyText(RetrievalError):
    pass


class DimensionMismatch(RetrievalError):
    pass


class ZeroVector(RetrievalError):
    pass


class ProviderUnavailable(RetrievalError):
    pass


class IndexStale(RetrievalError):
    """Embedding index and memory disagree on which keys exist."""


# --- planning ---------------------------------------------------------------

class InvalidPlan(CoevoError):
    pass


class MissingIndex(InvalidPlan):
    pass


class DanglingDependency(InvalidPlan):
    def __init__(self, src: int, dst: int):
        super().__init__(f"sub-task {src} depends on missing sub-task {dst}")
        self.src = src
        self.dst = dst


class Cycle(InvalidPlan):
    def __init__(self, witness: list[int]):
        super().__init__(f"dependency cycle: {' -> '.join(map(str, witness))}")
        self.witness = witness


# --- backends ---------------------------------------------------------------

class BackendError(CoevoError):
    pass


class CassetteMiss(BackendError):
    """Replay-mode request had no matching cassette entry."""


class Unparseable(CoevoError):
    """Backend output could not be coerced into the expected structure."""


class ContractViolation(CoevoError):
    """Backend output parsed but breaks the declared field contract."""


class NameMutated(CoevoError):
    """Backend renamed an asset whose name was required verbatim."""


class SearchUnavailable(CoevoError):
    pass


# --- sandbox ----------------------------------------------------------------

class SandboxError(CoevoError):
    pass


class RuntimeUnavailable(SandboxError):
    def __init__(self, tag: str):
        super().__init__(f"no sandbox runtime registered for tag {tag!r}")
        self.tag = tag


class SpawnFailure(SandboxError):
    pass


class SandboxTimeout(SandboxError):
    def __init__(self, limit_s: float):
        super().__init__(f"sandboxed process exceeded {limit_s}s limit")
        self.limit_s = limit_s


class SandboxCrash(SandboxError):
    def __init__(self, exit_code: int, stderr_excerpt: str):
        super().__init__(f"sandboxed process exited {exit_code}: {stderr_excerpt}")
        self.exit_code = exit_code
        self.stderr_excerpt = stderr_excerpt


class SchemaViolation(CoevoError):
    """Tool arguments rejected by the input schema before dispatch."""


# --- execution --------------------------------------------------------------

class MissingPlaceholder(CoevoError):
    def __init__(self, name: str, detail: str = "absent"):
        super().__init__(f"template placeholder {{{name}}} {detail}")
        self.name = name


class StepParseError(CoevoError):
    """Step output stayed unparseable after the bounded re-ask."""


# --- persistence ------------------------------------------------------------

class PersistenceError(CoevoError):
    pass


class HashMismatch(PersistenceError):
    pass


class UnsupportedVersion(PersistenceError):
    pass


class CorruptTrajectory(PersistenceError):
    pass


# --- metrics ----------------------------------------------------------------

class EmptyLog(CoevoError):
    pass
