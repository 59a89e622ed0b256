"""Level 1.5 counts to radiance, TOA reflectance and brightness temperature.

Radiance is ``offset + slope * count``.  Reflective channels use

    r = pi * L * d**2 / (E_sun * cos(sza))

with ``d`` the Sun-Earth distance in AU, and thermal channels invert the
band-corrected Planck function

    T = (C2 * nu_c / ln(1 + C1 * nu_c**3 / L) - beta) / alpha.

All scalar operations also accept numpy arrays.
"""

import dataclasses
import math
from importlib import resources

import numpy as np

from .errors import (AlreadyCalibrated, InvariantViolation, IoFailure, NonPositiveRadiance, NonSolarChannel,
                     NonThermalChannel, SunBelowHorizon, UnknownChannel)

SOLAR_CHANNELS = (1, 2, 3)        # VIS0.6, VIS0.8, NIR1.6
FEATURE_THERMAL_CHANNELS = (4, 7, 9, 10)  # IR3.9, IR8.7, IR10.8, IR12.0
CHANNEL_NAMES = {1: "VIS0.6", 2: "VIS0.8", 3: "NIR1.6", 4: "IR3.9", 5: "WV6.2", 6: "WV7.3",
                 7: "IR8.7", 8: "IR9.7", 9: "IR10.8", 10: "IR12.0", 11: "IR13.4"}
MAX_COUNT = 1023
# Written into solar channels at night and wherever a conversion is undefined.
INVALID = -999.0


@dataclasses.dataclass(frozen=True)
class PlanckCoefficients:
    nu_c: float
    alpha: float
    beta: float


@dataclasses.dataclass
class CalibrationConfig:
    slope: dict
    offset: dict
    esun: dict
    planck: dict
    c1: float = 1.19104e-5
    c2: float = 1.43877

    def __post_init__(self):
        for ch, s in self.slope.items():
            if not s > 0:
                raise InvariantViolation(f"ch{ch}.slope must be > 0")
        for ch, e in self.esun.items():
            if not e > 0:
                raise InvariantViolation(f"ch{ch}.esun must be > 0")
        for ch, p in self.planck.items():
            if not (p.nu_c > 0 and p.alpha > 0):
                raise InvariantViolation(f"ch{ch}: nu_c and alpha must be > 0")
        if not (self.c1 > 0 and self.c2 > 0):
            raise InvariantViolation("c1 and c2 must be > 0")

    @property
    def thermal_channels(self):
        return tuple(sorted(self.planck))


def parse_calibration(text):
    """Parse the flat ``key = value`` calibration format."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvariantViolation(f"calibration line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            values[key] = float(val)
        except ValueError:
            raise InvariantViolation(f"calibration line {lineno}: bad number {val!r}") from None

    per_channel = {}
    for key, val in values.items():
        if key in ("c1", "c2"):
            continue
        head, _, field = key.partition(".")
        if not head.startswith("ch") or not head[2:].isdigit() or not field:
            raise InvariantViolation(f"unknown calibration key {key!r}")
        per_channel.setdefault(int(head[2:]), {})[field] = val

    slope, offset, esun, planck = {}, {}, {}, {}
    for ch, fields in sorted(per_channel.items()):
        unknown = set(fields) - {"slope", "offset", "esun", "nu_c", "alpha", "beta"}
        if unknown:
            raise InvariantViolation(f"ch{ch}: unknown fields {sorted(unknown)}")
        if "slope" in fields:
            slope[ch] = fields["slope"]
            offset[ch] = fields.get("offset", 0.0)
        if "esun" in fields:
            esun[ch] = fields["esun"]
        if "nu_c" in fields:
            planck[ch] = PlanckCoefficients(fields["nu_c"], fields.get("alpha", 1.0),
                                            fields.get("beta", 0.0))
    return CalibrationConfig(slope, offset, esun, planck,
                             c1=values.get("c1", 1.19104e-5), c2=values.get("c2", 1.43877))


def load_calibration(path=None):
    """Load a calibration file; ``None`` gives the shipped MSG-2 defaults."""
    if path is None:
        text = resources.files("lmcloud").joinpath("data/msg2_default.cfg").read_text()
    else:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise IoFailure(f"cannot read calibration file {path}: {exc}") from exc
    return parse_calibration(text)


def format_calibration(cal):
    lines = [f"c1 = {cal.c1!r}", f"c2 = {cal.c2!r}"]
    for ch in sorted(set(cal.slope) | set(cal.esun) | set(cal.planck)):
        if ch in cal.slope:
            lines += [f"ch{ch}.slope = {cal.slope[ch]!r}", f"ch{ch}.offset = {cal.offset[ch]!r}"]
        if ch in cal.esun:
            lines.append(f"ch{ch}.esun = {cal.esun[ch]!r}")
        if ch in cal.planck:
            p = cal.planck[ch]
            lines += [f"ch{ch}.nu_c = {p.nu_c!r}", f"ch{ch}.alpha = {p.alpha!r}",
                      f"ch{ch}.beta = {p.beta!r}"]
    return "\n".join(lines) + "\n"


def sun_earth_distance(doy):
    """Sun-Earth distance in AU from day of year (first-order eccentricity)."""
    return 1.0 / np.sqrt(1.0 + 0.033 * np.cos(2.0 * np.pi * doy / 365.0))


def _doy(when):
    return when.timetuple().tm_yday


def counts_to_radiance(count, channel, cal):
    if channel not in cal.slope:
        raise UnknownChannel(f"no slope/offset for channel {channel}")
    count = np.asarray(count, dtype=np.float64)
    if np.any((count < 0) | (count > MAX_COUNT)):
        raise InvariantViolation(f"counts must lie in [0, {MAX_COUNT}]")
    rad = cal.offset[channel] + cal.slope[channel] * count
    return float(rad) if rad.ndim == 0 else rad


def radiance_to_reflectance(radiance, channel, sza, when, cal):
    if channel not in SOLAR_CHANNELS or channel not in cal.esun:
        raise NonSolarChannel(f"channel {channel} is not a configured solar channel")
    if sza >= 90:
        raise SunBelowHorizon(f"sza={sza} >= 90")
    d = sun_earth_distance(_doy(when))
    refl = math.pi * np.asarray(radiance, dtype=np.float64) * d * d / (
        cal.esun[channel] * math.cos(math.radians(sza)))
    return float(refl) if refl.ndim == 0 else refl


def forward_planck(temperature, channel, cal):
    """Radiance of a blackbody at ``temperature`` K in a thermal band."""
    if channel not in cal.planck:
        raise NonThermalChannel(f"channel {channel} has no Planck coefficients")
    p = cal.planck[channel]
    t = np.asarray(temperature, dtype=np.float64)
    rad = cal.c1 * p.nu_c ** 3 / np.expm1(cal.c2 * p.nu_c / (p.alpha * t + p.beta))
    return float(rad) if rad.ndim == 0 else rad


def radiance_to_bt(radiance, channel, cal):
    if channel not in cal.planck:
        raise NonThermalChannel(f"channel {channel} has no Planck coefficients")
    rad = np.asarray(radiance, dtype=np.float64)
    if np.any(rad <= 0):
        raise NonPositiveRadiance("brightness temperature needs radiance > 0")
    p = cal.planck[channel]
    bt = (cal.c2 * p.nu_c / np.log1p(cal.c1 * p.nu_c ** 3 / rad) - p.beta) / p.alpha
    return float(bt) if bt.ndim == 0 else bt


def calibrate_chip(chip, cal):
    """Convert a chip cube from counts to reflectance / brightness temperature.

    Needs the chip-centre solar zenith; it is computed when the chip has not
    been annotated yet.  Solar channels become INVALID at night, thermal
    pixels with non-positive radiance become INVALID.
    """
    if chip.calibrated:
        raise AlreadyCalibrated(f"chip LM{chip.num} {chip.time} is already calibrated")
    sza = chip.sza
    if sza is None:
        from .solar import sun_position
        sza = sun_position(chip.latlon, chip.datetime).zenith
    when = chip.datetime
    out = np.empty_like(chip.cube, dtype=np.float64)
    for k, ch in enumerate(chip.channels):
        rad = counts_to_radiance(chip.cube[:, :, k], ch, cal)
        if ch in SOLAR_CHANNELS:
            if sza < 90:
                out[:, :, k] = radiance_to_reflectance(rad, ch, sza, when, cal)
            else:
                out[:, :, k] = INVALID
        elif ch in cal.planck:
            good = rad > 0
            plane = np.full(rad.shape, INVALID)
            if good.any():
                plane[good] = radiance_to_bt(rad[good], ch, cal)
            out[:, :, k] = plane
        else:
            raise UnknownChannel(f"channel {ch} is neither solar nor thermal in this config")
    return chip.replace(cube=out, sza=float(sza), calibrated=True)


def counts_from_radiance(radiance, channel, cal):
    """Nearest 10-bit count for a radiance (inverse scaling, clipped)."""
    c = np.rint((np.asarray(radiance, dtype=np.float64) - cal.offset[channel]) / cal.slope[channel])
    return np.clip(c, 0, MAX_COUNT)
