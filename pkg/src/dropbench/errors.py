"""Exception types shared across the package."""

from __future__ import annotations


class ConfigurationError(ValueError):
    """Invalid configuration: bad shapes, bad layer specs, mismatched dims."""


class ParameterError(ValueError):
    """Invalid method parameter (zero permutations, even kernel, ...)."""


class NumericError(ArithmeticError):
    """Non-finite value produced where finiteness is guaranteed."""


class StateError(RuntimeError):
    """Operation called out of order (e.g. backward before forward)."""


class TrainingError(RuntimeError):
    """Training diverged or could not proceed."""


class GenerationError(RuntimeError):
    """Synthetic data generation could not satisfy its constraints."""


class ParseError(ValueError):
    """Malformed external input (CSV rows, config files, wire messages)."""


class ScorerError(RuntimeError):
    """External scorer process failed, timed out, or broke protocol."""


class ArtifactError(RuntimeError):
    """Missing or inconsistent pipeline artifact."""
