class TsAgentError(Exception):
    """Base class for package errors."""


class ConfigError(TsAgentError, ValueError):
    pass


class DataError(TsAgentError, ValueError):
    pass


class ToolError(TsAgentError):
    """A diagnostic tool could not run on the given window."""


class ModelError(TsAgentError):
    """A forecaster could not produce a forecast."""


class ExternalModelError(ModelError):
    pass


class ExternalTimeout(ExternalModelError):
    pass


class ExternalContractError(ExternalModelError):
    """Malformed response, wrong shape or a 4xx status."""


class ExternalUpstreamError(ExternalModelError):
    """Unreachable endpoint or a 5xx status."""


class TransportError(TsAgentError):
    """The policy endpoint could not be reached or answered badly."""
