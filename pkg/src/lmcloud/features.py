"""Per-pixel feature vectors and the 0-1 scaler.

Day vectors (16 values, in order)::

    R1 R2 R3 R4 BT7 BT9 BT10
    R2/R1  (R1-R3)/(R1+R3)  (R2-R1)/(R2+R1)
    mean3(R1) std3(R1) mean5(R1) std5(R1) mean3(BT9) std3(BT9)

R1-R3 are reflectances of VIS0.6, VIS0.8 and NIR1.6; R4 is the IR3.9
brightness temperature; BT7, BT9 and BT10 are the IR8.7, IR10.8 and IR12.0
brightness temperatures.  Night vectors keep the thermal subset
``R4 BT7 BT9 BT10 mean3(BT9) std3(BT9)``.
"""

import dataclasses
import enum
import struct

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionMismatch, EmptyInput, MalformedContainer, RegimeMismatch, UncalibratedChip
from .radiometry import INVALID


class Regime(str, enum.Enum):
    DAY = "day"
    NIGHT = "night"


DAY_FEATURES = ("R1", "R2", "R3", "R4", "BT7", "BT9", "BT10", "cloud_test", "snow_test",
                "ndvi", "mean3_R1", "std3_R1", "mean5_R1", "std5_R1", "mean3_BT9", "std3_BT9")
NIGHT_FEATURES = ("R4", "BT7", "BT9", "BT10", "mean3_BT9", "std3_BT9")
FEATURE_NAMES = {Regime.DAY: DAY_FEATURES, Regime.NIGHT: NIGHT_FEATURES}
N_FEATURES = {Regime.DAY: 16, Regime.NIGHT: 6}

EPS = 1e-12


def regime_for_sza(sza):
    return Regime.DAY if sza < 90 else Regime.NIGHT


@dataclasses.dataclass
class FeatureGrid:
    values: np.ndarray      # rows x cols x n_features
    flags: np.ndarray       # rows x cols, True where a guard fired or inputs were invalid
    regime: Regime

    def rows(self):
        """Flatten to an (n_pixels, n_features) matrix, row-major pixel order."""
        return self.values.reshape(-1, self.values.shape[2])


def window_stats(plane, size):
    """Mean and population std over a size x size window truncated at borders.

    NaN entries are treated as absent.  Windows with no valid value give NaN.
    """
    half = size // 2
    padded = np.pad(np.asarray(plane, dtype=np.float64), half, constant_values=np.nan)
    windows = sliding_window_view(padded, (size, size))
    count = np.sum(~np.isnan(windows), axis=(2, 3))
    total = np.nansum(windows, axis=(2, 3))
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = total / count
        dev = windows - mean[:, :, None, None]
        var = np.nansum(dev * dev, axis=(2, 3)) / count
    return mean, np.sqrt(var)


def _ratio(num, den, flags):
    small = np.abs(den) < EPS
    flags |= small
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=~small)
    return out


def extract_features(chip, regime):
    regime = Regime(regime)
    if not chip.calibrated:
        raise UncalibratedChip(f"chip LM{chip.num} {chip.time} is not calibrated")
    if chip.sza is None or regime_for_sza(chip.sza) != regime:
        raise RegimeMismatch(f"regime {regime.value} does not match sza={chip.sza}")

    def plane(ch):
        p = chip.channel(ch).astype(np.float64)
        return np.where(p == INVALID, np.nan, p)

    r4, bt7, bt9, bt10 = plane(4), plane(7), plane(9), plane(10)
    mean3_bt9, std3_bt9 = window_stats(bt9, 3)
    flags = np.zeros(chip.shape, dtype=bool)

    if regime is Regime.NIGHT:
        stack = [r4, bt7, bt9, bt10, mean3_bt9, std3_bt9]
    else:
        r1, r2, r3 = plane(1), plane(2), plane(3)
        mean3_r1, std3_r1 = window_stats(r1, 3)
        mean5_r1, std5_r1 = window_stats(r1, 5)
        bad = np.isnan(r1) | np.isnan(r2) | np.isnan(r3)
        a1, a2, a3 = (np.nan_to_num(x) for x in (r1, r2, r3))
        cloud = _ratio(a2, a1, flags)
        snow = _ratio(a1 - a3, a1 + a3, flags)
        ndvi = _ratio(a2 - a1, a2 + a1, flags)
        flags |= bad
        stack = [r1, r2, r3, r4, bt7, bt9, bt10, cloud, snow, ndvi,
                 mean3_r1, std3_r1, mean5_r1, std5_r1, mean3_bt9, std3_bt9]

    values = np.stack(stack, axis=-1)
    missing = ~np.isfinite(values)
    flags |= missing.any(axis=-1)
    values[missing] = 0.0
    return FeatureGrid(values=values, flags=flags, regime=regime)


@dataclasses.dataclass
class MinMaxScaler:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        self.min = np.asarray(self.min, dtype=np.float64)
        self.max = np.asarray(self.max, dtype=np.float64)
        if self.min.shape != self.max.shape or np.any(self.max < self.min):
            raise DimensionMismatch("scaler needs matching min/max with max >= min")

    @property
    def n_features(self):
        return self.min.shape[0]

    def transform(self, rows):
        return apply_scaler(self, rows)


def fit_scaler(rows):
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if rows.shape[0] == 0:
        raise EmptyInput("cannot fit a scaler on zero rows")
    return MinMaxScaler(rows.min(axis=0), rows.max(axis=0))


def apply_scaler(scaler, rows):
    """(x - min) / (max - min); degenerate features map to 0, no clipping."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[-1] != scaler.n_features:
        raise DimensionMismatch(f"expected {scaler.n_features} features, got {rows.shape[-1]}")
    span = scaler.max - scaler.min
    live = span > 0
    out = np.zeros_like(rows)
    np.divide(rows - scaler.min, span, out=out, where=live)
    return out


# -- flat binary feature table ------------------------------------------------

_REGIME_TAG = {Regime.DAY: 0, Regime.NIGHT: 1}


def write_feature_table(path, rows, regime):
    rows = np.ascontiguousarray(rows, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQB", rows.shape[0], rows.shape[1], _REGIME_TAG[Regime(regime)]))
        fh.write(rows.tobytes())


def read_feature_table(path):
    """Return ``(rows, regime)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    head = struct.calcsize("<QQB")
    if len(data) < head:
        raise MalformedContainer(f"{path}: truncated feature table")
    n, d, tag = struct.unpack("<QQB", data[:head])
    if len(data) != head + 8 * n * d or tag not in (0, 1):
        raise MalformedContainer(f"{path}: feature table size/tag mismatch")
    rows = np.frombuffer(data[head:], dtype="<f8").astype(np.float64).reshape(n, d)
    return rows, (Regime.DAY if tag == 0 else Regime.NIGHT)
