# IMPORTANT: Read instructions/architecture before making changes to this file
"""
Exception hierarchy for the simulator.
See instructions/architecture for development guidelines.
"""

from typing import Optional


class FireGuardError(Exception):
    """Base class for every error raised by the simulator."""


class ConfigError(FireGuardError):
    """Invalid run configuration, filter program or workload profile."""


class TraceError(FireGuardError):
    """Problem with a trace file or an in-memory trace."""


class TraceParseError(TraceError):
    """Malformed trace line."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class TraceOrderError(TraceParseError):
    """Seq or cycle regression, or more same-cycle records than the commit width."""


class InjectionError(FireGuardError):
    """Attack spec does not fit the trace it is applied to."""


class ProgramFault(FireGuardError):
    """A guardian kernel executed an illegal queue instruction."""


class ReportSchemaError(FireGuardError):
    """Metrics documents of unknown or mixed schema were passed to the reporter."""


class SimulationError(FireGuardError):
    """Conservation violation, or the drain limit was hit with work outstanding."""
