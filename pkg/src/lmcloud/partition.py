"""Illumination ranges driven by the chip-centre solar zenith angle.

Intervals are half-open so every zenith falls in exactly one range::

    high    [0, sza_m)
    medium  [sza_m, 80)
    low     [80, 90)
    night   [90, 180]
"""

import dataclasses
import enum

import numpy as np

from .errors import InvariantViolation, NoDaytimeChips

LOW_LIGHT_SZA = 80.0
NIGHT_SZA = 90.0


class IlluminationRange(str, enum.Enum):
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"
    NIGHT = "night"


RANGES = tuple(IlluminationRange)


@dataclasses.dataclass(frozen=True)
class SzaThresholds:
    sza_m: float
    low: float = LOW_LIGHT_SZA
    night: float = NIGHT_SZA

    def __post_init__(self):
        if not 0 < self.sza_m < self.low:
            raise InvariantViolation(f"sza_m={self.sza_m} must lie in (0, {self.low})")


def compute_sza_m(szas):
    """Median of the zenith angles below 80 degrees."""
    values = np.asarray(list(szas), dtype=np.float64)
    day = values[(values >= 0) & (values < LOW_LIGHT_SZA)]
    if day.size == 0 or not np.any(day > 0):
        raise NoDaytimeChips("no zenith angle in (0, 80) degrees")
    return float(np.median(day))


def assign_range(sza, thresholds):
    if sza < thresholds.sza_m:
        return IlluminationRange.HIGH
    if sza < thresholds.low:
        return IlluminationRange.MEDIUM
    if sza < thresholds.night:
        return IlluminationRange.LOW
    return IlluminationRange.NIGHT


def partition_archive(chips, thresholds):
    """Split sza-annotated chips into the four ranges, keeping input order."""
    parts = {r: [] for r in RANGES}
    for chip in chips:
        parts[assign_range(chip.sza, thresholds)].append(chip)
    return parts
