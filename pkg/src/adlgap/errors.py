"""Exception types shared across the package."""


class AdlgapError(Exception):
    pass


class ParameterError(AdlgapError, ValueError):
    pass


class NonMorseError(AdlgapError):
    pass


class EmptyLandscapeError(AdlgapError):
    pass


class DegenerateWellsError(AdlgapError):
    pass


class NotDoubleWellError(AdlgapError):
    pass


class TopologyError(AdlgapError):
    pass


class NearResonantError(AdlgapError):
    pass


class GeometryError(AdlgapError):
    pass


class DomainTooSmallError(AdlgapError):
    pass


class SingularityError(AdlgapError):
    pass


class ConvergenceError(AdlgapError):
    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


class AccuracyError(AdlgapError):
    def __init__(self, msg, estimate=None):
        super().__init__(msg)
        self.estimate = estimate


class ConditioningError(AdlgapError):
    pass


class InstabilityError(AdlgapError):
    pass


class PartialResultsError(AdlgapError):
    def __init__(self, msg, samples=None):
        super().__init__(msg)
        self.samples = samples


class ConfigError(AdlgapError, ValueError):
    pass
