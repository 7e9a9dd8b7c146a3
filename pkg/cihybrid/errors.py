#!/usr/bin/env python3
"""
Error Types
Exception hierarchy shared by the simulator stages and the CLI.
"""

from typing import Any, Dict, Optional


class CiHybridError(Exception):
    """Base class for every error raised by the package."""


class DomainError(CiHybridError, ValueError):
    """Argument lies outside the mathematical domain of an operation."""


class StructuralError(CiHybridError, ValueError):
    """Inconsistent shapes, rank deficiency or violated structural limits."""


class ConfigurationError(CiHybridError):
    """Invalid, unreadable or unsatisfiable configuration."""


class AssignmentInfeasibleError(StructuralError):
    """Assignment cannot exist: fewer RF chains (or codes) than users."""


class InfeasibleError(CiHybridError):
    """
    Precoding problem has no feasible point.

    Attributes:
        diagnostics: phase-1 value, uncapped per-BS powers or the offending
            user index, depending on where infeasibility was detected
    """

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics: Dict[str, Any] = dict(diagnostics or {})


class StageError(CiHybridError):
    """Failure inside one stage of a precoding pipeline."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage
        self.cause = cause

    @property
    def diagnostics(self) -> Dict[str, Any]:
        return getattr(self.cause, 'diagnostics', {})


class ConvergenceError(CiHybridError):
    """Solver stopped without a point meeting every constraint or a certificate."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics: Dict[str, Any] = dict(diagnostics or {})
