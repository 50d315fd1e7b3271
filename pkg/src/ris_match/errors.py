"""Exception types shared across the package."""

from __future__ import annotations


class RisMatchError(Exception):
    """Base class for all package errors."""


class ConfigError(RisMatchError):
    """Invalid configuration: unknown keys, bad types, or violated invariants.

    Carries a list of ``(path, message, line)`` diagnostics where ``path`` is
    the dotted key path and ``line`` is the 1-based line in the source file
    when one could be located.
    """

    def __init__(self, diagnostics):
        if isinstance(diagnostics, str):
            diagnostics = [("", diagnostics, None)]
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(self.format_lines()))

    def format_lines(self):
        lines = []
        for path, message, line in self.diagnostics:
            anchor = f":{line}" if line is not None else ""
            prefix = f"{path}{anchor}: " if path else ""
            lines.append(f"{prefix}{message}")
        return lines


class SceneError(ConfigError):
    """Scene construction rejected the geometry."""


class FieldPointError(RisMatchError):
    """An observation point violates the minimum distance to an element."""


class FieldEnergyError(RisMatchError):
    """Energy partition is undefined (total scattered energy is zero)."""


class CouplingConvergenceError(RisMatchError):
    """Fixed-point coupling solve did not reach tolerance.

    Recoverable: ``last_iterate`` holds the final (non-converged) incident
    field so callers may reject a trial instead of aborting.
    """

    def __init__(self, message, last_iterate=None, residual=None, iterations=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual
        self.iterations = iterations


class MemoryGuardError(RisMatchError):
    """Refused to materialize a dense matrix above the configured cap."""


class StageError(RisMatchError):
    """A pipeline stage failed; ``partial_trace`` preserves completed stages."""

    def __init__(self, message, partial_trace=None):
        super().__init__(message)
        self.partial_trace = partial_trace


class CodebookError(RisMatchError):
    """Malformed or unreadable codebook file."""


class CodebookVersionError(CodebookError):
    """Codebook was written by an unsupported (newer) format version."""


class CodebookIntegrityError(CodebookError):
    """Per-entry checksum mismatch: the payload bytes are corrupt."""


class KeyConflictError(CodebookError):
    """Insert would overwrite an existing key without the overwrite flag."""
