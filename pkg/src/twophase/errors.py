"""Exception hierarchy shared by all modules."""


class TwoPhaseError(Exception):
    """Base class for every error raised by the toolkit."""


class ModelError(TwoPhaseError, ValueError):
    """A model instance violates one of its construction invariants."""


class MalformedDrift(ModelError):
    pass


class GammaInadmissible(ModelError):
    pass


class AnchorViolation(ModelError):
    pass


class DomainTooLarge(TwoPhaseError, OverflowError):
    """The exponent of the scale derivative leaves the representable range."""


class DegenerateGamma(TwoPhaseError, ValueError):
    pass


class HazardUnderflow(TwoPhaseError, ArithmeticError):
    """The onset hazard is numerically zero over the whole search bracket."""


class StepCapExceeded(TwoPhaseError, RuntimeError):
    pass
