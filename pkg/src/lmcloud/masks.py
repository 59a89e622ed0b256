"""L2 cloud-mask decoding, static land/water maps and coastline bands."""

import dataclasses
import enum

import numpy as np
from scipy import ndimage

from .errors import BadMaskCode, NoCloudFreeChips, UnresolvedPixel


class PixelLabel(enum.IntEnum):
    NODATA = 0
    WATER = 50
    LAND = 100
    CLOUD = 200


_CODES = np.array([int(v) for v in PixelLabel])


@dataclasses.dataclass
class LandCoverMask:
    grid: np.ndarray        # PixelLabel.WATER / PixelLabel.LAND codes
    provenance: int         # number of cloud-free chips that voted

    @property
    def land(self):
        return self.grid == PixelLabel.LAND

    @property
    def water(self):
        return self.grid == PixelLabel.WATER


@dataclasses.dataclass
class CoastlineMask:
    grid: np.ndarray        # bool
    derived_from: LandCoverMask = dataclasses.field(repr=False, default=None)


@dataclasses.dataclass
class ScreenResult:
    drop: np.ndarray        # nodata pixels, removed everywhere
    suspect: np.ndarray     # cloud labels on the coastline band; excluded from training only


def decode_mask(raw):
    """Validate a raw L2 mask and return it as an int array of PixelLabel codes."""
    raw = np.asarray(raw)
    bad = ~np.isin(raw, _CODES)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise BadMaskCode(raw[r, c].item(), (r, c))
    return raw.astype(np.int16)


def encode_mask(labels):
    return np.asarray(labels, dtype=np.float64)


def is_cloud_free(mask):
    return not np.any(np.asarray(mask) == PixelLabel.CLOUD)


def landcover_from_votes(chips):
    """Per-pixel land/water majority over the cloud-free chips.

    Nodata votes are ignored; a tie goes to land.  Each acquisition time
    votes once, so a duplicated chip cannot change the outcome.
    """
    land = water = None
    voters = 0
    seen = set()
    for chip in chips:
        if chip.time in seen:
            continue
        mask = decode_mask(chip.l2mask)
        if not is_cloud_free(mask):
            continue
        seen.add(chip.time)
        if land is None:
            land = np.zeros(mask.shape, dtype=np.int64)
            water = np.zeros(mask.shape, dtype=np.int64)
        land += mask == PixelLabel.LAND
        water += mask == PixelLabel.WATER
        voters += 1
    if voters == 0:
        raise NoCloudFreeChips("no cloud-free chip available for the land-cover vote")
    unresolved = (land + water) == 0
    if unresolved.any():
        r, c = np.argwhere(unresolved)[0]
        raise UnresolvedPixel(f"pixel ({r}, {c}) received no land/water vote")
    grid = np.where(land >= water, int(PixelLabel.LAND), int(PixelLabel.WATER)).astype(np.int16)
    return LandCoverMask(grid=grid, provenance=voters)


_BOX = np.ones((3, 3), dtype=bool)


def coastline_from_landcover(lc):
    """Pixels whose (border-truncated) 3x3 neighbourhood holds both land and water."""
    near_land = ndimage.binary_dilation(lc.land, structure=_BOX, border_value=0)
    near_water = ndimage.binary_dilation(lc.water, structure=_BOX, border_value=0)
    return CoastlineMask(grid=near_land & near_water, derived_from=lc)


def screen_labels(chip, coast):
    mask = decode_mask(chip.l2mask)
    drop = mask == PixelLabel.NODATA
    suspect = (mask == PixelLabel.CLOUD) & coast.grid
    return ScreenResult(drop=drop, suspect=suspect)


# Cover strata shared by sampling and metrics.
COVER_LAND, COVER_WATER, COVER_COAST_LAND, COVER_COAST_WATER = 0, 1, 2, 3
COVER_NAMES = ("land", "water", "coast-land", "coast-water")


def cover_grid(lc, coast):
    """Map each pixel to one of the four cover strata."""
    cover = np.where(lc.land, COVER_LAND, COVER_WATER)
    cover = np.where(coast.grid, cover + 2, cover)
    return cover.astype(np.int8)
