"""
Exceptions raised across ldlgrid.

The CLI maps ConfigurationError (and subclasses) to exit status 2 and
SimulationAbort / NetworkSolveError / InitializationError to exit status 1.
"""
from typing import List


class ConfigurationError(ValueError):
    pass


class ScenarioValidationError(ConfigurationError):
    """Carries every schema violation found, not just the first"""

    def __init__(self, errors: List[str], source=None):
        self.errors = list(errors)
        self.source = source
        header = (
            f"{len(self.errors)} problem(s) in {source}"
            if source is not None
            else f"{len(self.errors)} problem(s)"
        )
        super().__init__("\n".join([header] + [f"  - {e}" for e in self.errors]))


class ScenarioError(ValueError):
    pass


class InitializationError(RuntimeError):
    pass


class NetworkSolveError(RuntimeError):
    def __init__(self, message, islands=None):
        self.islands = islands or []
        super().__init__(message)


class SimulationAbort(RuntimeError):
    def __init__(self, message, result=None):
        self.result = result
        super().__init__(message)
