"""Exception hierarchy shared by all modules."""


class DegCtrlError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(DegCtrlError, ValueError):
    """Invalid problem ingredient. ``field`` names the offending input when known."""

    def __init__(self, message, field=None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class NotCoercive(ValidationError):
    pass


class NonPositiveSpectrum(ValidationError):
    pass


class NotDegenerate(ValidationError):
    pass


class TooDegenerate(ValidationError):
    pass


class NoAdmissibleTheta(ValidationError):
    pass


class ConfigError(ValidationError):
    """Malformed or unreadable configuration document."""


class SingularElement(DegCtrlError):
    pass


class SolverFailure(DegCtrlError):
    pass


class DimensionMismatch(DegCtrlError, ValueError):
    pass


class SingularResolvent(DegCtrlError):
    pass


class EmptySupport(DegCtrlError):
    pass


class UnstableStep(DegCtrlError):
    pass


class CGStalled(DegCtrlError):
    """Conjugate gradient stopped above tolerance.

    ``trace`` holds the per-iteration residual norms and ``result`` the last
    iterate packaged as a result object, when one could be assembled.
    """

    def __init__(self, message, trace=None, result=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []
        self.result = result


class IntegralDiverged(DegCtrlError):
    pass


class NoFeasibleParameters(DegCtrlError):
    def __init__(self, message, margins=None):
        super().__init__(message)
        self.margins = margins


class OutOfDomain(DegCtrlError, ValueError):
    pass


class NoConvergence(DegCtrlError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []


class RankLostAtIterate(DegCtrlError):
    def __init__(self, message, iterate=None, report=None, history=None):
        super().__init__(message)
        self.iterate = iterate
        self.report = report
        self.history = history if history is not None else []
