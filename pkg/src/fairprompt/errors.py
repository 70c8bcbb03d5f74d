"""Exception hierarchy shared by every module of the package."""


class FairPromptError(Exception):
    """Base class for all errors raised by fairprompt."""


# causal core
class GraphError(FairPromptError):
    pass


class CycleDetected(GraphError):
    pass


class CptShapeMismatch(GraphError):
    pass


class RowNotNormalized(GraphError):
    pass


class StateSpaceTooLarge(GraphError):
    pass


class UnknownVariable(FairPromptError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ZeroProbabilityEvidence(FairPromptError):
    pass


class RoleUnmapped(FairPromptError):
    pass


class TopologyMismatch(FairPromptError):
    pass


# prompt strategies
class MissingAnnotation(FairPromptError):
    pass


class IrreducibleInstance(FairPromptError):
    pass


class UnsupportedCategoryForTemplate(FairPromptError):
    pass


# benchmark data
class ParseError(FairPromptError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class ValidationError(ParseError):
    """A record parsed but contradicts its benchmark schema."""


class MarkerNotFound(FairPromptError):
    pass


class UnknownCategory(FairPromptError):
    pass


class SlotMissing(FairPromptError):
    pass


class PronounUnresolved(FairPromptError):
    pass


class ExclusionError(FairPromptError):
    pass


# llm gateway
class GatewayError(FairPromptError):
    pass


class TransportError(GatewayError):
    pass


class AuthError(GatewayError):
    pass


class ProviderRefusedLogprobs(GatewayError):
    pass


class LogprobsMissing(GatewayError):
    pass


class YesTokenAbsent(GatewayError):
    pass


class FixtureMiss(GatewayError):
    pass


# metrics
class EmptyDenominator(FairPromptError):
    pass


class MissingBaseAnswer(FairPromptError):
    pass


class EmptyMap(FairPromptError, ValueError):
    pass


class ZeroMax(FairPromptError, ValueError):
    pass


# harness
class ConfigError(FairPromptError):
    pass


class RunError(FairPromptError):
    """An instance failed mid-run; completed records were flushed."""
