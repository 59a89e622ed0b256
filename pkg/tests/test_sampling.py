import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lmcloud import masks, sampling
from lmcloud.errors import EmptyPool, InsufficientPool, InvariantViolation
from lmcloud.masks import LandCoverMask
from lmcloud.sampling import CLEAR, CLOUD, PixelPool, SampleSpec

from conftest import make_chip


def make_pool(label, month, cover, suspect=None):
    n = len(label)
    return PixelPool(features=np.arange(2 * n, dtype=np.float64).reshape(n, 2),
                     label=np.asarray(label, dtype=np.int8), month=np.asarray(month, dtype=np.int8),
                     cover=np.asarray(cover, dtype=np.int8), chip=np.arange(n, dtype=np.int32) // 100,
                     row=(np.arange(n) % 100 // 10).astype(np.int32), col=(np.arange(n) % 10).astype(np.int32),
                     sza=np.full(n, 30.0),
                     suspect=np.zeros(n, bool) if suspect is None else np.asarray(suspect, bool),
                     flagged=np.zeros(n, bool), chip_times=tuple(f"t{k}" for k in range((n + 99) // 100)),
                     shape=(10, 10), regime="day")


def random_pool(seed, n, p_cloud=0.5, months=(1, 2, 3), covers=(0, 1, 2, 3)):
    rng = np.random.default_rng(seed)
    return make_pool(np.where(rng.random(n) < p_cloud, CLOUD, CLEAR), rng.choice(months, n), rng.choice(covers, n),
                     suspect=rng.random(n) < 0.05)


def calibrated_chip(mask, sza=30.0, time="20100315120000"):
    mask = np.asarray(mask, dtype=np.float64)
    cube = np.full(mask.shape + (11,), 280.0)
    cube[:, :, :3] = 0.2
    return make_chip(mask=mask, time=time).replace(cube=cube, sza=sza, calibrated=True)


def lc_of(grid):
    lc = LandCoverMask(np.asarray(grid, dtype=np.int16), provenance=1)
    return lc, masks.coastline_from_landcover(lc)


def test_collect_drops_nodata():
    lc, coast = lc_of([[100, 100], [100, 100]])
    pool = sampling.collect_labeled([calibrated_chip([[100, 0], [200, 100]])], lc, coast)
    assert len(pool) == 3
    assert sorted(zip(pool.row.tolist(), pool.col.tolist())) == [(0, 0), (1, 0), (1, 1)]


def test_collect_strata_and_labels():
    grid = np.full((5, 5), 50)
    grid[:, :1] = 100
    lc, coast = lc_of(grid)
    mask = grid.copy()
    mask[2, 4] = 200        # cloud over open water
    mask[2, 1] = 200        # cloud on the coastline band
    pool = sampling.collect_labeled([calibrated_chip(mask, time="20100715120000")], lc, coast)
    i = int(np.flatnonzero((pool.row == 2) & (pool.col == 4))[0])
    px = pool.pixel(i)
    assert (px.label, px.month, px.cover) == ("cloud", 7, "water")
    j = int(np.flatnonzero((pool.row == 2) & (pool.col == 1))[0])
    assert pool.suspect[j] and not pool.train_eligible[j]


def test_collect_empty():
    lc, coast = lc_of([[100]])
    with pytest.raises(EmptyPool):
        sampling.collect_labeled([], lc, coast)
    with pytest.raises(EmptyPool):
        sampling.collect_labeled([calibrated_chip([[0]])], lc, coast)


def test_spec_guard():
    with pytest.raises(InvariantViolation):
        SampleSpec(n_train=0)


def test_exact_balance_with_ample_supply():
    pool = random_pool(0, 5000)
    train, test = sampling.draw_balanced(pool, SampleSpec(400, 1000, seed=1))
    assert len(train) == 400
    assert int(np.sum(train.label == CLOUD)) == 200
    for m in (1, 2, 3):
        for c in range(4):
            sel = (train.month == m) & (train.cover == c)
            assert abs(int(np.sum(train.label[sel] == CLOUD)) - int(np.sum(train.label[sel] == CLEAR))) <= 1


def test_clear_only_stratum_redistributed():
    rng = np.random.default_rng(5)
    n = 3000
    month = rng.choice([1, 2], n)
    label = np.where(rng.random(n) < 0.5, CLOUD, CLEAR)
    label[month == 2] = CLEAR
    train, _ = sampling.draw_balanced(make_pool(label, month, np.zeros(n)), SampleSpec(300, 500, seed=0))
    assert len(train) == 300
    assert int(np.sum(train.label == CLOUD)) == 150
    assert np.all(train.month[train.label == CLOUD] == 1)


def test_class_shortfall_filled_by_other_class():
    label = np.array([CLOUD] * 20 + [CLEAR] * 980)
    train, _ = sampling.draw_balanced(make_pool(label, np.ones(1000), np.zeros(1000)), SampleSpec(200, 100, seed=0))
    assert len(train) == 200 and int(np.sum(train.label == CLOUD)) == 20


def test_same_seed_same_sets():
    pool = random_pool(3, 2000)
    a = sampling.draw_balanced(pool, SampleSpec(300, 700, seed=9))
    b = sampling.draw_balanced(pool, SampleSpec(300, 700, seed=9))
    assert a.train.keys() == b.train.keys() and a.test.keys() == b.test.keys()
    c = sampling.draw_balanced(pool, SampleSpec(300, 700, seed=10))
    assert c.train.keys() != a.train.keys()


def test_frozen_draw():
    # PCG64 streams are specified bit-for-bit, so the drawn keys are portable
    train, test = sampling.draw_balanced(random_pool(42, 500), SampleSpec(20, 30, seed=7))
    assert len(train) == 20 and len(test) == 30
    assert train.keys()[:6] == [("t0", 0, 1), ("t0", 0, 2), ("t0", 3, 5), ("t0", 5, 5), ("t0", 5, 9), ("t0", 8, 4)]
    assert test.keys()[:6] == [("t0", 1, 1), ("t0", 1, 5), ("t0", 1, 6), ("t0", 4, 9), ("t0", 6, 4), ("t0", 6, 5)]


def test_insufficient_pool_degrades():
    pool = random_pool(1, 150)
    with pytest.warns(InsufficientPool):
        split = sampling.draw_balanced(pool, SampleSpec(100, 1000, seed=0))
    assert len(split.train) <= 75 and split.warnings
    assert len(split.train) + len(split.test) <= 150


def test_suspects_only_in_test():
    pool = random_pool(8, 3000)
    pool.suspect[:] = False
    pool.suspect[::7] = True
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        train, test = sampling.draw_balanced(pool, SampleSpec(500, 2400, seed=2))
    assert not train.suspect.any() and test.suspect.any()


@given(seed=st.integers(0, 10**6), n=st.integers(150, 1500), n_train=st.integers(2, 400),
       p=st.floats(0.05, 0.95))
def test_draw_properties(seed, n, n_train, p):
    pool = random_pool(seed, n, p_cloud=p, months=tuple(range(1, 13)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InsufficientPool)
        train, test = sampling.draw_balanced(pool, SampleSpec(n_train, 500, seed=seed))
    tk, sk = set(train.keys()), set(test.keys())
    assert len(tk) == len(train) and not tk & sk
    assert not train.suspect.any()
    eligible = pool.subset(np.flatnonzero(pool.train_eligible))
    n_cloud = int(np.sum(eligible.label == CLOUD))
    n_clear = len(eligible) - n_cloud
    want = min(n_train, n // 2) if n < n_train + sampling.MIN_TEST else n_train
    if min(n_cloud, n_clear) >= want // 2 + 1 and want >= 20:
        frac = np.mean(train.label == CLOUD)
        assert abs(frac - 0.5) <= 0.05
    if len(train) >= 2 * 12 * 4:
        months = set(eligible.month.tolist())
        assert months <= set(train.month.tolist())


def test_empty_pool():
    with pytest.raises(EmptyPool):
        sampling.draw_balanced(make_pool([], [], []), SampleSpec())
