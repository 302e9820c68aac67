"""Exception taxonomy shared across the package.

Validation problems subclass ValueError so they read naturally at call
sites; runtime failures subclass RuntimeError and carry enough state to
report partial results.
"""

from __future__ import annotations


class InputError(ValueError):
    """Malformed argument (wrong shape, non-finite value, bad range)."""


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


class FitFailureError(RuntimeError):
    """Kernel matrix stayed singular after the jitter escalation ladder."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to converge.

    Carries the raw (unrenormalized) probability estimates so callers can
    inspect how far off the run was.
    """

    def __init__(self, message: str, raw_values=None):
        super().__init__(message)
        self.raw_values = raw_values


class ModelEvaluationError(RuntimeError):
    """A model evaluation failed; records the offending input point."""

    def __init__(self, message: str, point=None):
        super().__init__(message)
        self.point = point


class ProtocolError(ModelEvaluationError):
    """External solver violated the line protocol (bad id, malformed line)."""


class SeedSelectionError(ConfigError):
    """Fewer eligible points than chains when selecting subset seeds."""


class NonConvergenceError(RuntimeError):
    """Subset simulation exhausted max_subsets without reaching the target.

    Carries the partial estimate and per-subset records for reporting.
    """

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial
