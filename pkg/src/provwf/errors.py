"""Exception hierarchy shared by all provwf modules."""

from __future__ import annotations


class ProvwfError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(ProvwfError):
    """An artifact (or raw record) breaks the artifact contract."""

    def __init__(self, message: str, violations: list[str] | None = None):
        super().__init__(message)
        self.violations = violations or [message]


class IntegrityError(ProvwfError):
    """Referential integrity broken, e.g. provenance cites unknown ids."""


class CatalogError(ProvwfError):
    """Rule file or catalog is malformed."""


class CyclicCatalogError(CatalogError):
    """Backward chaining ran into a producer cycle."""

    def __init__(self, cycle: list[str]):
        super().__init__("producer cycle: " + " -> ".join(cycle))
        self.cycle = cycle


class InfeasibleGoal(ProvwfError):
    """Goal targets a type no rule produces and no artifact carries."""

    def __init__(self, artifact_type: str, message: str | None = None):
        super().__init__(message or f"no producer and no artifact for type '{artifact_type}'")
        self.artifact_type = artifact_type


class ApprovalError(ProvwfError):
    """Sealing rules violated (open clarifications, wrong state, mutation)."""


class StaleConfigError(ProvwfError):
    """Configuration was sealed against a different catalog fingerprint."""


class NotFound(ProvwfError):
    """An artifact / plan / run reference does not resolve."""


class QuerySyntaxError(ProvwfError):
    """Query DSL parse failure, carrying the byte offset and expectations."""

    def __init__(self, offset: int, expected: list[str], found: str):
        self.offset = offset
        self.expected = expected
        self.found = found
        super().__init__(
            f"syntax error at offset {offset}: expected {' | '.join(expected)}, found {found}"
        )


class AdapterUnavailable(ProvwfError):
    """Natural-language adapter is not configured or not reachable."""


class TranslationFailed(ProvwfError):
    """Adapter produced text that does not parse as query DSL."""

    def __init__(self, proposal: str, cause: QuerySyntaxError):
        super().__init__(f"adapter proposal does not parse: {cause}")
        self.proposal = proposal
        self.cause = cause


class Unavailable(ProvwfError):
    """Operation cannot be answered by this backend (ablation mode)."""


class Unfinished(ProvwfError):
    """Transcript never reached an approvable plan."""


class IoError(ProvwfError):
    """Filesystem precondition failed (unreadable root, missing path)."""
