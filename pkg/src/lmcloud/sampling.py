"""Labelled pixel pools and balanced train/test draws.

A pool is stored column-wise (one array per attribute) because a landmark
range easily holds a few hundred thousand pixels.  Training draws are
stratified on (month, cover) with equal cloud/clear quotas; shortfalls in a
cell are redistributed over the remaining cells of the same class first,
then over the other class.  Random draws use numpy's PCG64 generator seeded
from ``SampleSpec.seed``.
"""

import dataclasses
import logging
import warnings
from collections import namedtuple

import numpy as np

from .errors import EmptyPool, InsufficientPool, InvariantViolation
from .features import Regime, extract_features, regime_for_sza
from .masks import COVER_NAMES, PixelLabel, cover_grid, decode_mask, screen_labels

LOG = logging.getLogger(__name__)

CLOUD, CLEAR = 1, -1
MIN_TEST = 100

LabeledPixel = namedtuple("LabeledPixel", "features label month cover chip_time row col")


@dataclasses.dataclass
class SampleSpec:
    n_train: int = 10000
    n_test: int = 100000
    seed: int = 0

    def __post_init__(self):
        if self.n_train <= 0 or self.n_test <= 0:
            raise InvariantViolation("n_train and n_test must be positive")


@dataclasses.dataclass
class PixelPool:
    features: np.ndarray    # (n, d) unscaled
    label: np.ndarray       # +1 cloud, -1 clear
    month: np.ndarray
    cover: np.ndarray       # index into COVER_NAMES
    chip: np.ndarray        # index into chip_times
    row: np.ndarray
    col: np.ndarray
    sza: np.ndarray
    suspect: np.ndarray     # cloud label on the coastline band
    flagged: np.ndarray     # feature guard fired
    chip_times: tuple
    shape: tuple            # chip rows, cols
    regime: str

    def __len__(self):
        return self.label.shape[0]

    @property
    def train_eligible(self):
        return ~(self.suspect | self.flagged)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        arrays = {f.name: getattr(self, f.name)[idx] for f in dataclasses.fields(self)
                  if isinstance(getattr(self, f.name), np.ndarray)}
        return PixelPool(chip_times=self.chip_times, shape=self.shape, regime=self.regime, **arrays)

    def keys(self):
        """Traceability keys: (chip time, row, col)."""
        return [(self.chip_times[c], int(r), int(k)) for c, r, k in zip(self.chip, self.row, self.col)]

    def pixel(self, i):
        return LabeledPixel(self.features[i], "cloud" if self.label[i] == CLOUD else "clear",
                            int(self.month[i]), COVER_NAMES[self.cover[i]],
                            self.chip_times[self.chip[i]], int(self.row[i]), int(self.col[i]))


@dataclasses.dataclass
class SampleSplit:
    train: PixelPool
    test: PixelPool
    warnings: list

    def __iter__(self):
        return iter((self.train, self.test))


def collect_labeled(chips, lc, coast, regime=None):
    """Pool every non-nodata pixel of calibrated, single-range chips."""
    cover = cover_grid(lc, coast).ravel()
    if not chips:
        raise EmptyPool("no chips given")
    regime = Regime(regime or regime_for_sza(chips[0].sza))
    parts = []
    times = []
    for k, chip in enumerate(chips):
        grid = extract_features(chip, regime)
        mask = decode_mask(chip.l2mask)
        screen = screen_labels(chip, coast)
        keep = ~screen.drop.ravel()
        n = int(keep.sum())
        times.append(chip.time)
        if n == 0:
            continue
        rows, cols = np.divmod(np.flatnonzero(keep), chip.shape[1])
        parts.append(dict(
            features=grid.rows()[keep],
            label=np.where(mask.ravel()[keep] == PixelLabel.CLOUD, CLOUD, CLEAR).astype(np.int8),
            month=np.full(n, int(chip.time[4:6]), dtype=np.int8),
            cover=cover[keep],
            chip=np.full(n, k, dtype=np.int32),
            row=rows.astype(np.int32), col=cols.astype(np.int32),
            sza=np.full(n, chip.sza),
            suspect=screen.suspect.ravel()[keep],
            flagged=grid.flags.ravel()[keep]))
    if not parts:
        raise EmptyPool("no labelled pixels in the given chips")
    merged = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
    return PixelPool(chip_times=tuple(times), shape=tuple(chips[0].shape),
                     regime=regime.value, **merged)


def _water_fill(total, supplies):
    """Split ``total`` as evenly as possible over cells capped by ``supplies``."""
    counts = [0] * len(supplies)
    remaining = min(total, sum(supplies))
    open_cells = [i for i, s in enumerate(supplies) if s > 0]
    while remaining > 0 and open_cells:
        share, extra = divmod(remaining, len(open_cells))
        if share == 0:
            for i in open_cells[:extra]:
                counts[i] += 1
            break
        still_open = []
        for i in open_cells:
            give = min(share, supplies[i] - counts[i])
            counts[i] += give
            remaining -= give
            if counts[i] < supplies[i]:
                still_open.append(i)
        open_cells = still_open
    return counts


def _class_totals(n, cloud_supply, clear_supply):
    cloud = min(n // 2, cloud_supply)
    clear = min(n - cloud, clear_supply)
    cloud = min(n - clear, cloud_supply)
    return cloud, clear


def draw_balanced(pool, spec):
    """Draw a stratified, class-balanced training set and a disjoint test set."""
    n = len(pool)
    if n == 0:
        raise EmptyPool("empty pool")
    notes = []
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    n_train = spec.n_train
    if n < spec.n_train + MIN_TEST:
        n_train = max(1, min(spec.n_train, n // 2))
        msg = (f"pool of {n} pixels is smaller than n_train + {MIN_TEST}; "
               f"training set reduced to {n_train}")
        notes.append(msg)
        warnings.warn(msg, InsufficientPool, stacklevel=2)

    eligible = np.flatnonzero(pool.train_eligible)
    strata = np.stack([pool.label[eligible], pool.month[eligible], pool.cover[eligible]], axis=1)
    keys, inverse = np.unique(strata, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    cells = {tuple(int(v) for v in key): eligible[inverse == j] for j, key in enumerate(keys)}
    picked = []
    by_class = {c: sorted(k for k in cells if k[0] == c) for c in (CLOUD, CLEAR)}
    supply = {c: sum(cells[k].size for k in by_class[c]) for c in (CLOUD, CLEAR)}
    totals = dict(zip((CLOUD, CLEAR), _class_totals(n_train, supply[CLOUD], supply[CLEAR])))
    for c in (CLOUD, CLEAR):
        keys_c = by_class[c]
        counts = _water_fill(totals[c], [cells[k].size for k in keys_c])
        for key, count in zip(keys_c, counts):
            members = cells[key]
            picked.append(members[rng.permutation(members.size)[:count]])
    train_idx = np.sort(np.concatenate(picked)) if picked else np.empty(0, dtype=np.int64)
    if train_idx.size < n_train:
        notes.append(f"training set holds {train_idx.size} of {n_train} requested pixels")

    rest = np.setdiff1d(np.arange(n), train_idx, assume_unique=True)
    n_test = min(spec.n_test, rest.size)
    if n_test < spec.n_test:
        notes.append(f"test set holds {n_test} of {spec.n_test} requested pixels")
    test_idx = np.sort(rng.choice(rest, size=n_test, replace=False)) if n_test else rest[:0]
    for msg in notes:
        LOG.info("%s", msg)
    return SampleSplit(pool.subset(train_idx), pool.subset(test_idx), notes)
