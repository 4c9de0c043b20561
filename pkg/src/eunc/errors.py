"""Exception hierarchy shared across the package."""


class EuncError(Exception):
    """Base class for all package errors."""


class DegenerateColumn(EuncError):
    pass


class InvalidSpec(EuncError):
    pass


class InvalidDataset(EuncError, ValueError):
    pass


class UnsupportedMoment(EuncError):
    pass


class UnsupportedSpec(EuncError):
    pass


class SampleTooSmall(EuncError):
    pass


class DimensionMismatch(EuncError, ValueError):
    pass


class TooFewSamples(EuncError):
    pass


class SingularBasis(EuncError):
    pass


class CollinearDesign(EuncError):
    pass


class RankDeficientInstruments(EuncError):
    pass


class TooManyFailures(EuncError):
    pass


class ConfigError(EuncError):
    pass


class WeakFirstStage(UserWarning):
    """First-stage F statistic below 10; the 2SLS estimate is unreliable."""
