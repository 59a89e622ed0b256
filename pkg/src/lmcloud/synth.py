"""Synthetic landmark archives with known cloud truth.

Each chip is built in physical units and then encoded to raw counts with
the calibration table, so the full chain (counts -> radiance -> reflectance
/ brightness temperature -> features) is exercised.  Surfaces have fixed
reflectances and a diurnal land temperature cycle; clouds are Gaussian
smoothed random fields thresholded to the requested coverage, brighter in
the solar channels and colder in the thermal ones by ``contrast`` noise
standard deviations.
"""

import dataclasses
import datetime as dt
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import archive
from .errors import InvariantViolation
from .masks import PixelLabel
from .radiometry import SOLAR_CHANNELS, counts_from_radiance, forward_planck, load_calibration, sun_earth_distance
from .solar import sun_position

LAYOUTS = ("island", "coast", "lake")

# clear-sky reflectance of channels 1-3
SURFACE_REFLECTANCE = {"land": (0.08, 0.25, 0.20), "water": (0.04, 0.02, 0.01)}
WATER_TEMPERATURE = 291.0
LAND_NIGHT_TEMPERATURE = 289.5
LAND_DIURNAL_AMPLITUDE = 12.0
# per-channel brightness temperature offsets from the skin temperature
CHANNEL_DT = {4: 2.0, 5: -48.0, 6: -35.0, 7: -2.0, 8: -25.0, 9: 0.0, 10: -1.5, 11: -12.0}
THERMAL_NOISE_SCALE = 100.0     # sigma_T [K] = noise * scale
# cloud cooling per channel, relative; IR3.9 emissivity of water clouds is low
CLOUD_COOLING = {4: 1.6, 5: 0.3, 6: 0.5, 7: 1.0, 8: 0.8, 9: 1.0, 10: 1.1, 11: 0.9}


@dataclasses.dataclass(frozen=True)
class SynthLandmark:
    num: int
    name: str
    latlon: tuple
    layout: str = "island"

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise InvariantViolation(f"layout must be one of {LAYOUTS}")


DEFAULT_LANDMARKS = (SynthLandmark(1, "Valencia", (39.47, -0.38), "coast"),
                     SynthLandmark(2, "Dakhla", (23.73, -15.93), "island"))


@dataclasses.dataclass(frozen=True)
class SynthSpec:
    landmarks: tuple = DEFAULT_LANDMARKS
    rows: int = 16
    cols: int = 16
    start: dt.datetime = dt.datetime(2010, 3, 1)
    days: int = 30
    cadence_minutes: int = 15
    coverage: float = 0.5           # mean cloud fraction of cloudy chips
    clear_fraction: float = 0.1     # share of chips forced cloud-free
    blob_size: float = 2.0          # smoothing sigma, pixels
    contrast: float = 6.0           # cloud signal in noise standard deviations
    noise: float = 0.01             # reflectance noise sigma
    nodata_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.cadence_minutes <= 0 or (24 * 60) % self.cadence_minutes:
            raise InvariantViolation("cadence must divide 24 h")
        if not 0 <= self.coverage <= 1 or not 0 <= self.clear_fraction <= 1:
            raise InvariantViolation("coverage and clear_fraction must lie in [0, 1]")
        if not 0 <= self.nodata_rate < 1:
            raise InvariantViolation("nodata_rate must lie in [0, 1)")
        if self.rows < 1 or self.cols < 1 or self.days < 1:
            raise InvariantViolation("rows, cols and days must be >= 1")
        if self.noise < 0 or self.contrast < 0 or self.blob_size < 0:
            raise InvariantViolation("noise, contrast and blob_size must be >= 0")
        if len({lm.num for lm in self.landmarks}) != len(self.landmarks):
            raise InvariantViolation("landmark numbers must be unique")

    @property
    def chips_per_day(self):
        return 24 * 60 // self.cadence_minutes


def land_layout(layout, rows, cols):
    """Boolean land grid for a layout."""
    r, c = np.mgrid[0:rows, 0:cols]
    yr, xr = (r - (rows - 1) / 2) / rows, (c - (cols - 1) / 2) / cols
    radius = np.hypot(yr, xr)
    if layout == "island":
        return radius < 0.3
    if layout == "lake":
        return radius >= 0.3
    if layout == "coast":
        return xr < 0.12 * np.sin(2 * np.pi * yr)
    raise InvariantViolation(f"unknown layout {layout!r}")


def cloud_field(rng, shape, coverage, blob_size):
    """Spatially correlated boolean field holding round(coverage * n) cloud pixels."""
    n = shape[0] * shape[1]
    k = int(round(coverage * n))
    if k == 0:
        return np.zeros(shape, dtype=bool)
    field = rng.standard_normal(shape)
    if blob_size > 0:
        field = ndimage.gaussian_filter(field, blob_size, mode="wrap")
    order = np.argsort(-field.ravel(), kind="stable")
    out = np.zeros(n, dtype=bool)
    out[order[:k]] = True
    return out.reshape(shape)


def _chip_coverage(rng, spec):
    if rng.random() < spec.clear_fraction:
        return 0.0
    c = spec.coverage
    if c in (0.0, 1.0):
        return c
    return float(rng.beta(2 * c, 2 * (1 - c)))


def make_chip(spec, lm, index, when, cal):
    """Return (chip, truth) for acquisition ``index`` of landmark ``lm``."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, lm.num, index])))
    shape = (spec.rows, spec.cols)
    land = land_layout(lm.layout, *shape)
    cloud = cloud_field(rng, shape, _chip_coverage(rng, spec), spec.blob_size)
    sza = sun_position(lm.latlon, when).zenith
    mu = math.cos(math.radians(sza))
    sigma_r, sigma_t = spec.noise, spec.noise * THERMAL_NOISE_SCALE

    cube = np.empty(shape + (len(archive.SEVIRI_CHANNELS),))
    d2 = sun_earth_distance(when.timetuple().tm_yday) ** 2
    for k, ch in enumerate(archive.SEVIRI_CHANNELS):
        if ch in SOLAR_CHANNELS:
            j = SOLAR_CHANNELS.index(ch)
            refl = np.where(land, SURFACE_REFLECTANCE["land"][j], SURFACE_REFLECTANCE["water"][j])
            refl = refl + spec.contrast * sigma_r * cloud + sigma_r * rng.standard_normal(shape)
            rad = np.clip(refl, 0, None) * cal.esun[ch] * max(mu, 0.0) / (math.pi * d2)
        else:
            land_t = LAND_NIGHT_TEMPERATURE + LAND_DIURNAL_AMPLITUDE * max(mu, 0.0)
            temp = np.where(land, land_t, WATER_TEMPERATURE) + CHANNEL_DT[ch]
            temp = temp - CLOUD_COOLING[ch] * spec.contrast * sigma_t * cloud + sigma_t * rng.standard_normal(shape)
            rad = forward_planck(np.clip(temp, 150.0, None), ch, cal)
        cube[:, :, k] = counts_from_radiance(rad, ch, cal)

    labels = np.where(cloud, PixelLabel.CLOUD, np.where(land, PixelLabel.LAND, PixelLabel.WATER))
    if spec.nodata_rate > 0:
        labels = np.where(rng.random(shape) < spec.nodata_rate, PixelLabel.NODATA, labels)
    chip = archive.LandmarkChip(id=1000 + lm.num, num=lm.num, name=lm.name,
                                centre=((spec.rows - 1) / 2, (spec.cols - 1) / 2), latlon=tuple(lm.latlon),
                                time=archive.format_time(when), cube=cube,
                                l2mask=labels.astype(np.float64))
    return chip, cloud.astype(np.float64)


def truth_path(chip_path):
    return chip_path.with_suffix(archive.TRUTH_SUFFIX)


def _write_day(args):
    spec, lm, day, out, cal = args
    folder = archive.landmark_dir(out, lm.num)
    step = dt.timedelta(minutes=spec.cadence_minutes)
    base = spec.start + dt.timedelta(days=day)
    for slot in range(spec.chips_per_day):
        index = day * spec.chips_per_day + slot
        chip, truth = make_chip(spec, lm, index, base + slot * step, cal)
        path = folder / archive.chip_filename(chip)
        archive.write_chip(chip, path)
        archive.write_grid(truth, truth_path(path), name=f"LM{lm.num} truth", time=chip.time)
    return day


def generate_archive(spec, out, cal=None, workers=1):
    """Write a synthetic archive below ``out`` and return its registry.

    Chips go to ``out/LMnnn/LMnnn_<time>.lmch`` with the true cloud mask
    next to each as ``.lmt``.  The output depends only on ``spec``.
    """
    cal = cal or load_calibration()
    for lm in spec.landmarks:
        archive.ensure_dir(archive.landmark_dir(out, lm.num))
    jobs = [(spec, lm, day, out, cal) for lm in spec.landmarks for day in range(spec.days)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_write_day, jobs))
    else:
        for job in jobs:
            _write_day(job)
    registry = archive.scan_archive(out, exclude={})
    archive.write_registry(registry, Path(out) / "registry.csv")
    return registry


def read_truth(chip_path):
    grid, _, _ = archive.read_grid(truth_path(Path(chip_path)))
    return grid.astype(bool)
