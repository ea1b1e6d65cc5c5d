"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: configuration problems exit 2,
generation/training failures exit 3.
"""


class HrmLabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(HrmLabError):
    """Invalid config value, shape mismatch, or malformed input file."""


class GenerationError(HrmLabError):
    """Data generation failed (e.g. rejection sampling hit its attempt cap)."""


class TrainingError(HrmLabError):
    """Optimization diverged or was handed unusable inputs."""
