import json
import types
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lmcloud import metrics
from lmcloud.errors import DegenerateMarginals, DimensionMismatch, EmptyMatrix, InvariantViolation, NoTestData
from lmcloud.masks import COVER_NAMES
from lmcloud.metrics import GLOBAL, ConfusionMatrix, Records
from lmcloud.partition import RANGES, IlluminationRange, SzaThresholds

from conftest import make_chip

HAND = ConfusionMatrix(tp=40, fp=10, fn=5, tn=45)


def brute_scores(pred, truth):
    pairs = list(zip(pred, truth))
    n = len(pairs)
    po = Fraction(sum(p == t for p, t in pairs), n)
    p_yes = Fraction(sum(p for p, _ in pairs), n)
    t_yes = Fraction(sum(t for _, t in pairs), n)
    pe = p_yes * t_yes + (1 - p_yes) * (1 - t_yes)
    kappa = 0.0 if pe == 1 else float((po - pe) / (1 - pe))
    return float(100 * po), kappa


def records(pred, truth, sza=30.0, cover=0, rows=None, cols=None, suspect=None):
    n = len(pred)
    return Records(pred=np.asarray(pred, bool), truth=np.asarray(truth, bool), sza=np.full(n, sza),
                   cover=np.full(n, cover, dtype=np.int8),
                   row=np.zeros(n, np.int32) if rows is None else np.asarray(rows, np.int32),
                   col=np.arange(n, dtype=np.int32) if cols is None else np.asarray(cols, np.int32),
                   suspect=np.zeros(n, bool) if suspect is None else np.asarray(suspect, bool))


def test_hand_example_exact():
    assert metrics.overall_accuracy(HAND) == 85.0
    assert metrics.cohens_kappa(HAND) == 0.7


def test_accuracy_examples():
    assert metrics.overall_accuracy(ConfusionMatrix(7, 0, 0, 3)) == 100.0
    assert metrics.overall_accuracy(ConfusionMatrix(0, 50, 50, 0)) == 0.0
    with pytest.raises(EmptyMatrix):
        metrics.overall_accuracy(ConfusionMatrix())
    with pytest.raises(EmptyMatrix):
        metrics.cohens_kappa(ConfusionMatrix())
    with pytest.raises(ValueError):
        ConfusionMatrix(-1, 0, 0, 0)


def test_kappa_examples():
    assert metrics.cohens_kappa(ConfusionMatrix(30, 0, 0, 70)) == 1.0
    # counts proportional to the marginal products: rater A 60/40, rater B 30/70
    assert abs(metrics.cohens_kappa(ConfusionMatrix(tp=18, fp=42, fn=12, tn=28))) <= 1e-12


def test_degenerate_kappa():
    cm = ConfusionMatrix(tp=0, fp=0, fn=0, tn=25)
    assert cm.kappa_degenerate
    with pytest.warns(DegenerateMarginals):
        assert metrics.cohens_kappa(cm) == 0.0
    assert not HAND.kappa_degenerate


def test_confusion_examples():
    truth = np.array([[200, 50], [100, 200]])
    assert metrics.confusion(truth == 200, truth) == ConfusionMatrix(tp=2, fp=0, fn=0, tn=2)
    clear = np.full((3, 3), 50)
    assert metrics.confusion(np.ones((3, 3)), clear).fp == 9
    # hand-enumerated 2x2 with a nodata pixel: (cloud, cloud), (clear, cloud), (cloud, clear), nodata
    pred = np.array([[1, 0], [1, 1]])
    truth = np.array([[200, 200], [100, 0]])
    assert metrics.confusion(pred, truth) == ConfusionMatrix(tp=1, fp=1, fn=1, tn=0)
    with pytest.raises(DimensionMismatch):
        metrics.confusion(np.ones((2, 3)), truth)


def test_random_fixtures_against_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 200))
        truth = rng.random(n) < rng.uniform(0, 1)
        pred = np.where(rng.random(n) < rng.uniform(0, 1), truth, rng.random(n) < 0.5)
        cm = ConfusionMatrix.from_labels(pred, truth)
        oa, kappa = brute_scores(pred.tolist(), truth.tolist())
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateMarginals)
            assert abs(metrics.overall_accuracy(cm) - oa) <= 1e-12
            assert abs(metrics.cohens_kappa(cm) - kappa) <= 1e-12


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=300))
def test_score_ranges_and_perfect_kappa(pairs):
    pred, truth = zip(*pairs)
    cm = ConfusionMatrix.from_labels(pred, truth)
    oa, k, deg = metrics._scores(cm)
    assert 0 <= oa <= 100 and -1 <= k <= 1
    if not deg:
        assert (k == 1.0) == (cm.fp == 0 and cm.fn == 0)


def single_chip_ensemble(sza_m=40.0, train_keys=None):
    return types.SimpleNamespace(num=1, name="LM1", thresholds=SzaThresholds(sza_m), train_keys=train_keys)


def test_single_perfect_chip():
    mask = np.array([[200, 50, 100], [100, 200, 50]], dtype=np.float64)
    chip = make_chip(mask=mask, sza=20.0)
    cover = np.array([[0, 1, 2], [3, 0, 1]])
    rep = metrics.evaluate_chips(single_chip_ensemble(), [chip], [(mask == 200).astype(np.uint8)], cover)
    for key in ("high", GLOBAL):
        assert rep.scores(key) == (100.0, 1.0, False)
    assert np.all(rep.maps["high"] == 1.0)
    assert all(np.isnan(rep.maps[r.value]).all() for r in RANGES[1:])
    assert rep.mode == "chips" and rep.sza_curve == [(20.0, 22.0, 6, 100.0)]


def test_training_pixels_excluded_from_chip_scoring():
    mask = np.array([[200, 50]], dtype=np.float64)
    chip = make_chip(mask=mask, sza=20.0)
    ens = single_chip_ensemble(train_keys={IlluminationRange.HIGH: {(chip.time, 0, 0)}})
    rep = metrics.evaluate_chips(ens, [chip], [np.array([[0, 0]])], np.zeros((1, 2), int))
    assert rep.confusion[GLOBAL] == ConfusionMatrix(tn=1)


def test_coastline_errors_fixture():
    # 20 coastal pixels with 10 errors, 80 interior pixels without errors
    truth = np.tile([True, False], 50)
    cover = np.array([2] * 10 + [3] * 10 + [0] * 40 + [1] * 40)
    pred = truth.copy()
    pred[:20:2] = ~pred[:20:2]
    rec = records(pred, truth)
    rec.cover = cover.astype(np.int8)
    rep = metrics.build_report({IlluminationRange.HIGH: rec}, 1, "x", 40.0, (1, 100))
    row = rep.cover["high"]
    coast = (row["coast-land"][0] * row["coast-land"][1] + row["coast-water"][0] * row["coast-water"][1]) / 20
    off = (row["land"][0] * row["land"][1] + row["water"][0] * row["water"][1]) / 80
    assert coast == 50.0 and off == 100.0
    assert coast < rep.scores(GLOBAL)[0] < off


@given(seed=st.integers(0, 10**6))
def test_global_is_sum_of_ranges(seed):
    rng = np.random.default_rng(seed)
    recs = {}
    for r in RANGES:
        n = int(rng.integers(0, 60))
        recs[r] = records(rng.random(n) < 0.5, rng.random(n) < 0.5, sza=float(rng.uniform(0, 180)),
                          cover=int(rng.integers(0, 4)), rows=rng.integers(0, 5, n), cols=rng.integers(0, 5, n),
                          suspect=rng.random(n) < 0.1)
    if sum(len(v) for v in recs.values()) == 0:
        with pytest.raises(NoTestData):
            metrics.build_report(recs, 1, "x", 40.0, (5, 5))
        return
    rep = metrics.build_report(recs, 1, "x", 40.0, (5, 5))
    total = sum((rep.confusion[r.value] for r in RANGES), ConfusionMatrix())
    assert rep.confusion[GLOBAL] == total
    assert sum(n for _, _, n, _ in rep.sza_curve) == total.total
    assert sum(rep.cover[GLOBAL][c][0] for c in COVER_NAMES) == total.total
    for grid in rep.maps.values():
        vals = grid[~np.isnan(grid)]
        assert np.all((vals >= 0) & (vals <= 1))
    back = metrics.EvaluationReport.from_dict(json.loads(json.dumps(rep.to_dict())))
    assert back.same_as(rep)
    for key in rep.confusion:
        assert back.confusion[key] == rep.confusion[key]


def test_evaluate_guards(small_ensembles):
    ens = small_ensembles[0]
    with pytest.raises(NoTestData):
        metrics.evaluate(ens, test_sets={})
    leaky = dict(ens.test_sets)
    train = ens.train_keys[IlluminationRange.LOW]
    pool = ens.test_sets[IlluminationRange.LOW]
    fake = types.SimpleNamespace(**vars(ens))
    fake.train_keys = dict(ens.train_keys)
    fake.train_keys[IlluminationRange.LOW] = train | {pool.keys()[0]}
    with pytest.raises(InvariantViolation):
        metrics.evaluate(fake, leaky)


def test_evaluate_and_emit(small_ensembles, tmp_path):
    reports = [metrics.evaluate(e) for e in small_ensembles]
    for rep in reports:
        n_test = sum(len(p) for p in small_ensembles[0].test_sets.values())
        assert rep.confusion[GLOBAL].total > 0 and rep.mode == "test-pixels"
        assert rep.scores(GLOBAL)[0] > 90
    assert n_test > 0
    out = metrics.write_report_files(reports, tmp_path)
    metrics.write_histograms(reports, tmp_path)
    for name in ("ranges.csv", "sza_curve.csv", "cover.csv", "suspects.csv", "summary.csv", "table.txt",
                 "histogram_oa.csv", "histogram_kappa.csv"):
        assert (out / name).is_file()
    assert metrics.load_report(out / "report_LM001.json").same_as(reports[0])
    lines = (out / "summary.csv").read_text().splitlines()
    assert lines[0].split(",")[:4] == ["landmark", "name", "oa_high", "kappa_high"] and len(lines) == 3
    table = (out / "table.txt").read_text()
    assert "(" in table and metrics.AGGREGATION_NOTE in table
    hist = (out / "histogram_oa.csv").read_text().splitlines()
    assert len(hist) == 41 and sum(int(l.split(",")[2]) for l in hist[1:]) == len(reports)


def test_histogram_rows():
    rows = metrics.histogram_rows([0.0, 100.0, 50.0, float("nan")], 0.0, 100.0, 2.5)
    assert len(rows) == 40 and rows[0][2] == 1 and rows[-1][2] == 1 and rows[20][2] == 1
    assert len(metrics.histogram_rows([], -1.0, 1.0, 0.05)) == 40
