"""Solar zenith and azimuth at a landmark centre.

Uses the Astronomical Almanac low-precision ephemeris (Michalsky 1988):
mean longitude and anomaly, ecliptic longitude, obliquity, then right
ascension / declination and the local hour angle.  Good to about 0.01 deg
for 1950-2050.  No refraction correction.
"""

import dataclasses
import datetime as dt
import math

from .errors import InvalidLatitude, SolarPositionErrors, TimestampOutOfRange

_J2000 = dt.datetime(2000, 1, 1, 12, 0, 0)
_MIN_YEAR, _MAX_YEAR = 1950, 2050


@dataclasses.dataclass(frozen=True)
class SunPosition:
    zenith: float
    azimuth: float

    @property
    def elevation(self):
        return 90.0 - self.zenith


def _as_naive_utc(when):
    if when.tzinfo is not None:
        when = when.astimezone(dt.timezone.utc).replace(tzinfo=None)
    return when


def sun_position(latlon, when):
    lat, lon = latlon
    if not -90.0 <= lat <= 90.0:
        raise InvalidLatitude(f"latitude {lat} outside [-90, 90]")
    if not _MIN_YEAR <= when.year <= _MAX_YEAR:
        raise TimestampOutOfRange(f"{when} outside {_MIN_YEAR}-{_MAX_YEAR}")
    when = _as_naive_utc(when)
    n = (when - _J2000).total_seconds() / 86400.0

    mean_long = (280.460 + 0.9856474 * n) % 360.0
    mean_anom = math.radians((357.528 + 0.9856003 * n) % 360.0)
    ecl_long = math.radians(mean_long + 1.915 * math.sin(mean_anom) + 0.020 * math.sin(2 * mean_anom))
    obliq = math.radians(23.439 - 0.0000004 * n)

    ra = math.atan2(math.cos(obliq) * math.sin(ecl_long), math.cos(ecl_long))
    dec = math.asin(math.sin(obliq) * math.sin(ecl_long))

    ut_hours = when.hour + when.minute / 60.0 + (when.second + when.microsecond * 1e-6) / 3600.0
    gmst = (6.697375 + 0.0657098242 * n + ut_hours) % 24.0
    lmst = gmst + lon / 15.0
    hour_angle = math.radians(lmst * 15.0) - ra

    phi = math.radians(lat)
    cos_z = math.sin(phi) * math.sin(dec) + math.cos(phi) * math.cos(dec) * math.cos(hour_angle)
    zenith = math.degrees(math.acos(max(-1.0, min(1.0, cos_z))))

    # Azimuth clockwise from north.
    az = math.atan2(-math.sin(hour_angle),
                    math.tan(dec) * math.cos(phi) - math.sin(phi) * math.cos(hour_angle))
    azimuth = math.degrees(az) % 360.0
    return SunPosition(zenith=zenith, azimuth=azimuth)


def annotate_sza(chips):
    """Return copies of ``chips`` with the ``sza`` field filled, in order.

    Every chip is attempted; failures are collected and raised together.
    """
    out, failures = [], []
    for i, chip in enumerate(chips):
        try:
            pos = sun_position(chip.latlon, chip.datetime)
        except (InvalidLatitude, TimestampOutOfRange) as exc:
            failures.append((i, exc))
            continue
        out.append(chip.replace(sza=pos.zenith))
    if failures:
        raise SolarPositionErrors(failures)
    return out
