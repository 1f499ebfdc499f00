"""
Error Hierarchy
Every failure raised by the lab derives from MgcError
"""

from typing import Any, Dict, Optional


class MgcError(Exception):
    """Base error carrying an optional context dictionary"""

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = context

    def __str__(self) -> str:
        if not self.context:
            return self.message
        details = ", ".join(f"{key}={value}" for key, value in self.context.items())
        return f"{self.message} ({details})"


# ==================== CONFIGURATION ====================

class ConfigError(MgcError):
    """Problem with a configuration or data file"""


class ConfigParseError(ConfigError):
    """File is not well-formed JSON"""


class ConfigValidationError(ConfigError):
    """File parsed but a field is missing, unknown or out of range"""

    def __init__(self, message: str, field_path: str = "", reason: str = "", **context: Any):
        super().__init__(message, field=field_path, reason=reason, **context)
        self.field_path = field_path
        self.reason = reason


# ==================== NETWORK ====================

class NetworkError(MgcError):
    """Problem with the distribution network model or its power flow"""


class NonRadialNetwork(NetworkError):
    """Topology is not a tree rooted at the slack bus"""


class PowerFlowDiverged(NetworkError):
    """Forward-backward sweep failed (iteration cap or voltage collapse)"""

    def __init__(self, message: str, solution: Optional[Any] = None, **context: Any):
        super().__init__(message, **context)
        self.solution = solution


class NotConverged(NetworkError):
    """A post-processing routine received an unconverged solution"""


# ==================== ENVIRONMENT ====================

class EnvError(MgcError):
    """Problem raised by the microgrid-cluster environment"""


class BadScenario(EnvError):
    """Fleet, network and scenario references are inconsistent"""


class BadCorrelationMatrix(EnvError):
    """Correlation matrix is not symmetric positive semi-definite"""


class EmptyFeasibleSet(EnvError):
    """Ramp band and capacity band of a generator do not intersect"""


class EpisodeFinished(EnvError):
    """step() called after the last hour of the day"""


class DispatchInfeasible(EnvError):
    """Demand exceeds every available DSO resource"""

    def __init__(self, message: str, dispatch: Optional[Any] = None, **context: Any):
        super().__init__(message, **context)
        self.dispatch = dispatch


# ==================== LEARNING ====================

class LearningError(MgcError):
    """Problem raised by the function approximators or the trainers"""


class DimMismatch(LearningError):
    """Input or parameter dimensions disagree with the network spec"""


class NonFiniteError(LearningError):
    """NaN or Inf appeared in a value, gradient or parameter"""


class RatioOverflow(LearningError):
    """Accumulated importance factor exceeded its cap"""


class EmptyBatch(LearningError):
    """An operation received a batch without episodes"""


class CgBreakdown(LearningError):
    """Conjugate gradient produced a non-ascent direction"""


class TrainingAborted(LearningError):
    """Training loop stopped before the configured iteration count"""


# ==================== HARNESS ====================

class HarnessError(MgcError):
    """Problem raised while running, evaluating or comparing experiments"""


class MismatchedScenarios(HarnessError):
    """Reports to compare do not share scenario ids"""
