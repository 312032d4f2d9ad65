"""Exception hierarchy shared across the toolkit."""


class RphmError(Exception):
    """Base class for every domain error raised by the package."""


class ParameterError(RphmError, ValueError):
    """A rate, probability or reliability parameter is out of range."""


class ParseError(RphmError, ValueError):
    """An input file could not be parsed into a domain object."""


class CapacityError(RphmError):
    """A joint state space or scenario product exceeds its configured cap."""

    def __init__(self, message, required=None):
        super().__init__(message)
        self.required = required


class AssemblyError(RphmError):
    """Parameter records are missing or inconsistent while building a model."""


class MergeError(RphmError):
    """Two models cannot be merged over a shared fault set."""


class SpecError(RphmError):
    """A decision definition is inconsistent with the model it targets."""


class BindingError(RphmError):
    """A scenario assignment does not cover every decision vertex."""


class EvidenceError(RphmError):
    """Evidence is malformed, contradictory or has zero likelihood."""


class InferenceError(RphmError):
    """An inference engine cannot produce a result for the query."""


class ModelError(RphmError):
    """A model fails validation where a valid model is required."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(f"{v.variable}: {v.message}" for v in self.violations[:5])
        more = "" if len(self.violations) <= 5 else f" (+{len(self.violations) - 5} more)"
        super().__init__(f"invalid model: {lines}{more}")
