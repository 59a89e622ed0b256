"""Exception hierarchy.

``DataError`` subclasses describe bad inputs (files, chips, configuration
that contradicts the data); the CLI maps them to exit status 3.  Anything
else escaping a command is treated as an internal failure.
"""


class LandmarkError(Exception):
    """Base class for all package errors."""


class DataError(LandmarkError):
    """Input data violates a contract."""


class MalformedContainer(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class BadMaskCode(DataError):
    def __init__(self, value, pixel, source=None):
        self.value = value
        self.pixel = tuple(int(p) for p in pixel)
        self.source = source
        where = f" in {source}" if source else ""
        super().__init__(f"invalid mask code {value!r} at pixel {self.pixel}{where}")


class InvariantViolation(DataError):
    pass


class IoFailure(DataError):
    pass


class EmptyArchive(DataError):
    pass


class UnknownChannel(DataError):
    pass


class NonSolarChannel(DataError):
    pass


class NonThermalChannel(DataError):
    pass


class SunBelowHorizon(DataError):
    pass


class NonPositiveRadiance(DataError):
    pass


class AlreadyCalibrated(DataError):
    pass


class UncalibratedChip(DataError):
    pass


class InvalidLatitude(DataError):
    pass


class TimestampOutOfRange(DataError):
    pass


class NoCloudFreeChips(DataError):
    pass


class UnresolvedPixel(DataError):
    pass


class RegimeMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class NoDaytimeChips(DataError):
    pass


class EmptyPool(DataError):
    pass


class SingleClassInput(DataError):
    pass


class TooFewSamples(DataError):
    pass


class RangeUnderpopulated(DataError):
    def __init__(self, range_name, detail=""):
        self.range = range_name
        msg = f"illumination range {range_name!r} is underpopulated"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class WrongLandmark(DataError):
    pass


class VersionMismatch(DataError):
    pass


class CorruptBundle(DataError):
    pass


class EmptyMatrix(DataError):
    pass


class NoTestData(DataError):
    pass


class SolarPositionErrors(DataError):
    """Raised by batch annotation; carries every per-chip failure."""

    def __init__(self, failures):
        self.failures = list(failures)
        first = self.failures[0]
        super().__init__(f"{len(self.failures)} chip(s) failed sun-position; first: #{first[0]}: {first[1]}")


class NonConvergence(UserWarning):
    """SMO hit its iteration cap; the best iterate is returned."""


class InsufficientPool(UserWarning):
    """Sampling fell back to degraded train/test sizes."""


class DegenerateMarginals(UserWarning):
    """Kappa undefined (chance agreement 1); reported as 0."""
