"""
Exception hierarchy for the killed-diffusion toolkit
"""


class KilledDiffusionError(Exception):
    """Base class for all toolkit errors"""


class ModelDomainError(KilledDiffusionError, ValueError):
    """A state or parameter lies outside the model's domain"""


class NumericalFailure(KilledDiffusionError):
    """A numerical routine could not produce a trustworthy value"""


class QuadratureError(NumericalFailure):
    """Adaptive quadrature exceeded its maximum depth"""


class DivergenceError(NumericalFailure):
    """A simulation or integral did not terminate (runaway path, divergent integral)"""


class NonConvergenceError(KilledDiffusionError):
    """An optimizer or bootstrap run did not meet its convergence criteria"""


class ConfigError(KilledDiffusionError):
    """Invalid run configuration"""


class TrajectoryParseError(KilledDiffusionError):
    """Malformed trajectory input"""

    def __init__(self, message: str, line: int = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")
