"""Confusion matrices, overall accuracy, Cohen's kappa and evaluation reports.

Cloud is the positive class.  Scores are computed in exact integer
arithmetic and rounded once, so e.g. TP=40, FP=10, FN=5, TN=45 gives
OA == 85.0 and kappa == 0.7 exactly.
"""

import csv
import dataclasses
import json
import math
import warnings
from pathlib import Path

import numpy as np

from .errors import DegenerateMarginals, DimensionMismatch, EmptyMatrix, InvariantViolation, NoTestData
from .masks import COVER_NAMES, PixelLabel, decode_mask
from .partition import RANGES, IlluminationRange

SZA_BIN_WIDTH = 2.0
GLOBAL = "global"
AGGREGATION_NOTE = "global scores pool the pixels of all four ranges"


@dataclasses.dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be >= 0")

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other):
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def kappa_degenerate(self):
        n = self.total
        return n > 0 and _chance_numerator(self) == n * n

    @classmethod
    def from_labels(cls, pred, truth):
        """From boolean/0-1 arrays where True/1 means cloud."""
        p = np.asarray(pred).astype(bool).ravel()
        t = np.asarray(truth).astype(bool).ravel()
        if p.shape != t.shape:
            raise DimensionMismatch("prediction and truth differ in size")
        return cls(tp=int(np.sum(p & t)), fp=int(np.sum(p & ~t)), fn=int(np.sum(~p & t)),
                   tn=int(np.sum(~p & ~t)))


def confusion(pred, truth):
    """Compare a predicted cloud mask with a raw/decoded L2 mask; nodata skipped."""
    pred = np.asarray(pred)
    truth = decode_mask(truth)
    if pred.shape != truth.shape:
        raise DimensionMismatch(f"prediction {pred.shape} vs truth {truth.shape}")
    valid = truth != PixelLabel.NODATA
    return ConfusionMatrix.from_labels(pred[valid] != 0, truth[valid] == PixelLabel.CLOUD)


def overall_accuracy(cm):
    if cm.total == 0:
        raise EmptyMatrix("overall accuracy of an empty confusion matrix")
    return 100 * (cm.tp + cm.tn) / cm.total


def _chance_numerator(cm):
    """N^2 * p_e, an integer."""
    return (cm.tp + cm.fp) * (cm.tp + cm.fn) + (cm.fn + cm.tn) * (cm.fp + cm.tn)


def cohens_kappa(cm):
    """(p_o - p_e) / (1 - p_e); 0.0 with a DegenerateMarginals warning when p_e == 1."""
    n = cm.total
    if n == 0:
        raise EmptyMatrix("kappa of an empty confusion matrix")
    chance = _chance_numerator(cm)
    if chance == n * n:
        warnings.warn("kappa undefined (both raters constant); reported as 0", DegenerateMarginals,
                      stacklevel=2)
        return 0.0
    return (n * (cm.tp + cm.tn) - chance) / (n * n - chance)


def _scores(cm):
    if cm.total == 0:
        return float("nan"), float("nan"), False
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateMarginals)
        return overall_accuracy(cm), cohens_kappa(cm), cm.kappa_degenerate


# -- evaluation records -------------------------------------------------------

@dataclasses.dataclass
class Records:
    """Per-pixel evaluation outcomes for one illumination range."""
    pred: np.ndarray        # bool, True = cloud
    truth: np.ndarray       # bool, True = cloud
    sza: np.ndarray
    cover: np.ndarray
    row: np.ndarray
    col: np.ndarray
    suspect: np.ndarray

    @classmethod
    def empty(cls):
        z = np.zeros(0)
        return cls(z.astype(bool), z.astype(bool), z, z.astype(np.int8), z.astype(np.int32),
                   z.astype(np.int32), z.astype(bool))

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(**{f.name: np.concatenate([getattr(p, f.name) for p in parts])
                      for f in dataclasses.fields(cls)})

    def __len__(self):
        return self.pred.shape[0]


@dataclasses.dataclass
class EvaluationReport:
    num: int
    name: str
    sza_m: float
    shape: tuple
    confusion: dict         # range value or "global" -> ConfusionMatrix
    sza_curve: list         # [(lo, hi, n, oa)]
    cover: dict             # range value or "global" -> {cover name or "global": (n, oa)}
    maps: dict              # range value -> 2-D mean accuracy (NaN where never evaluated)
    suspects: dict          # range value -> (n, oa)
    mode: str = "test-pixels"
    note: str = AGGREGATION_NOTE

    def scores(self, key):
        """(OA %, kappa, degenerate flag) for a range value or "global"."""
        return _scores(self.confusion[key])

    def to_dict(self):
        return {
            "num": self.num, "name": self.name, "sza_m": self.sza_m, "shape": list(self.shape),
            "mode": self.mode, "note": self.note,
            "confusion": {k: dataclasses.asdict(v) for k, v in self.confusion.items()},
            "sza_curve": [list(r) for r in self.sza_curve],
            "cover": {k: {c: list(v) for c, v in d.items()} for k, d in self.cover.items()},
            "maps": {k: m.tolist() for k, m in self.maps.items()},
            "suspects": {k: list(v) for k, v in self.suspects.items()},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(num=d["num"], name=d["name"], sza_m=d["sza_m"], shape=tuple(d["shape"]),
                   confusion={k: ConfusionMatrix(**v) for k, v in d["confusion"].items()},
                   sza_curve=[tuple(r) for r in d["sza_curve"]],
                   cover={k: {c: tuple(v) for c, v in dd.items()} for k, dd in d["cover"].items()},
                   maps={k: np.array(m, dtype=np.float64).reshape(d["shape"]) for k, m in d["maps"].items()},
                   suspects={k: tuple(v) for k, v in d["suspects"].items()},
                   mode=d["mode"], note=d["note"])

    def same_as(self, other):
        return json.dumps(self.to_dict(), sort_keys=True) == json.dumps(other.to_dict(), sort_keys=True)


def _oa_of(pred, truth):
    n = int(pred.shape[0])
    if n == 0:
        return 0, float("nan")
    return n, 100 * int(np.sum(pred == truth)) / n


def build_report(records, num, name, sza_m, shape, mode="test-pixels"):
    """Assemble an EvaluationReport from per-range Records."""
    if sum(len(r) for r in records.values()) == 0:
        raise NoTestData(f"landmark {num}: nothing to evaluate")
    keys = [r.value for r in RANGES]
    conf = {}
    for rng in RANGES:
        rec = records.get(rng, Records.empty())
        conf[rng.value] = ConfusionMatrix.from_labels(rec.pred, rec.truth)
    conf[GLOBAL] = sum((conf[k] for k in keys), ConfusionMatrix())

    everything = Records.concat(records.get(r, Records.empty()) for r in RANGES)
    curve = []
    if len(everything):
        lo = math.floor(everything.sza.min() / SZA_BIN_WIDTH) * SZA_BIN_WIDTH
        hi = everything.sza.max()
        edge = lo
        while edge <= hi:
            sel = (everything.sza >= edge) & (everything.sza < edge + SZA_BIN_WIDTH)
            n, oa = _oa_of(everything.pred[sel], everything.truth[sel])
            if n:
                curve.append((edge, edge + SZA_BIN_WIDTH, n, oa))
            edge += SZA_BIN_WIDTH

    cover = {}
    for key, rec in [(r.value, records.get(r, Records.empty())) for r in RANGES] + [(GLOBAL, everything)]:
        row = {GLOBAL: _oa_of(rec.pred, rec.truth)}
        for code, cname in enumerate(COVER_NAMES):
            sel = rec.cover == code
            row[cname] = _oa_of(rec.pred[sel], rec.truth[sel])
        cover[key] = row

    maps, suspects = {}, {}
    for rng in RANGES:
        rec = records.get(rng, Records.empty())
        hits = np.zeros(shape)
        seen = np.zeros(shape)
        np.add.at(seen, (rec.row, rec.col), 1)
        np.add.at(hits, (rec.row, rec.col), (rec.pred == rec.truth).astype(np.float64))
        with np.errstate(invalid="ignore", divide="ignore"):
            maps[rng.value] = np.where(seen > 0, hits / seen, np.nan)
        suspects[rng.value] = _oa_of(rec.pred[rec.suspect], rec.truth[rec.suspect])
    return EvaluationReport(num=num, name=name, sza_m=sza_m, shape=tuple(shape), confusion=conf,
                            sza_curve=curve, cover=cover, maps=maps, suspects=suspects, mode=mode)


def records_from_pool(model, pool):
    """Predict a held-out pixel pool with one range model."""
    if len(pool) == 0:
        return Records.empty()
    pred = model.predict(model.scaler.transform(pool.features)) == 1
    return Records(pred=pred, truth=pool.label == 1, sza=pool.sza.astype(np.float64),
                   cover=pool.cover.astype(np.int8), row=pool.row.astype(np.int32),
                   col=pool.col.astype(np.int32), suspect=pool.suspect.astype(bool))


def evaluate(ensemble, test_sets=None):
    """Score an ensemble on its held-out test pixels (one pool per range)."""
    test_sets = test_sets if test_sets is not None else ensemble.test_sets
    if not test_sets:
        raise NoTestData(f"landmark {ensemble.num}: no test sets")
    if ensemble.train_keys:
        for rng, pool in test_sets.items():
            if ensemble.train_keys.get(rng, set()).intersection(pool.keys()):
                raise InvariantViolation(f"landmark {ensemble.num}: {rng.value} test set overlaps training")
    records = {rng: records_from_pool(ensemble.models[rng], test_sets[rng])
               for rng in RANGES if rng in test_sets}
    shape = ensemble.shape or next(iter(test_sets.values())).shape
    return build_report(records, ensemble.num, ensemble.name, ensemble.thresholds.sza_m, shape)


def evaluate_chips(ensemble, chips, predictions, cover, suspect_of=None):
    """Score predicted masks against the chips' own L2 masks.

    ``predictions`` holds one 0/1 mask per chip; ``cover`` is the landmark's
    cover-strata grid.  Chips must carry their sza.  Pixels listed in the
    ensemble's training keys are left out.
    """
    from .partition import assign_range
    parts = {r: [] for r in RANGES}
    trained = {}
    for keys in (ensemble.train_keys or {}).values():
        for t, r, c in keys:
            trained.setdefault(t, []).append((r, c))
    for chip, pred in zip(chips, predictions):
        truth = decode_mask(chip.l2mask)
        if pred.shape != truth.shape:
            raise DimensionMismatch(f"prediction {pred.shape} vs chip {truth.shape}")
        valid = truth != PixelLabel.NODATA
        rng = assign_range(chip.sza, ensemble.thresholds)
        for r, c in trained.get(chip.time, ()):
            valid[r, c] = False
        rows, cols = np.nonzero(valid)
        susp = suspect_of(chip)[valid] if suspect_of else np.zeros(rows.size, dtype=bool)
        parts[rng].append(Records(
            pred=np.asarray(pred)[valid] != 0, truth=truth[valid] == PixelLabel.CLOUD,
            sza=np.full(rows.size, chip.sza), cover=cover[valid].astype(np.int8),
            row=rows.astype(np.int32), col=cols.astype(np.int32), suspect=susp))
    records = {r: Records.concat(p) for r, p in parts.items()}
    return build_report(records, ensemble.num, ensemble.name, ensemble.thresholds.sza_m,
                        chips[0].shape, mode="chips")


# -- emitters -----------------------------------------------------------------

RANGE_CSV = ("landmark", "range", "tp", "fp", "fn", "tn", "oa", "kappa", "kappa_degenerate")
CURVE_CSV = ("landmark", "sza_lo", "sza_hi", "n", "oa")
COVER_CSV = ("landmark", "range", "cover", "n", "oa")
SUSPECT_CSV = ("landmark", "range", "n_suspect", "oa_suspect")
SUMMARY_CSV = ("landmark", "name") + tuple(f"{k}_{r}" for r in [r.value for r in RANGES] + [GLOBAL]
                                           for k in ("oa", "kappa"))


def _num(x):
    return "" if isinstance(x, float) and math.isnan(x) else repr(float(x))


def table_summary(reports):
    """Fixed-width table: one row per landmark, kappa (OA%) per range and global."""
    cols = [r.value for r in RANGES] + [GLOBAL]
    head = f"{'Name':<16}{'#LM':>5}  " + "".join(f"{c:>16}" for c in cols)
    lines = [AGGREGATION_NOTE, head, "-" * len(head)]
    for rep in sorted(reports, key=lambda r: r.num):
        cells = []
        for c in cols:
            oa, k, _ = rep.scores(c)
            cells.append(f"{'n/a':>16}" if math.isnan(oa) else f"{f'{k:.2f} ({oa:.2f})':>16}")
        lines.append(f"{rep.name[:16]:<16}{rep.num:>5}  " + "".join(cells))
    return "\n".join(lines) + "\n"


def write_report_files(reports, out_dir):
    """CSV breakdowns, JSON reports, the text table and spatial maps."""
    from .archive import ensure_dir, write_grid
    out = ensure_dir(out_dir)
    reports = sorted(reports, key=lambda r: r.num)
    with open(out / "ranges.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RANGE_CSV)
        for rep in reports:
            for key in [r.value for r in RANGES] + [GLOBAL]:
                cm = rep.confusion[key]
                oa, k, deg = rep.scores(key)
                w.writerow([rep.num, key, cm.tp, cm.fp, cm.fn, cm.tn, _num(oa), _num(k), int(deg)])
    with open(out / "sza_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_CSV)
        for rep in reports:
            for lo, hi, n, oa in rep.sza_curve:
                w.writerow([rep.num, repr(lo), repr(hi), n, _num(oa)])
    with open(out / "cover.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COVER_CSV)
        for rep in reports:
            for key, row in rep.cover.items():
                for cname, (n, oa) in row.items():
                    w.writerow([rep.num, key, cname, n, _num(oa)])
    with open(out / "suspects.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUSPECT_CSV)
        for rep in reports:
            for key, (n, oa) in rep.suspects.items():
                w.writerow([rep.num, key, n, _num(oa)])
    write_summary(reports, out / "summary.csv")
    (out / "table.txt").write_text(table_summary(reports))
    for rep in reports:
        with open(out / f"report_LM{rep.num:03d}.json", "w") as fh:
            json.dump(rep.to_dict(), fh, sort_keys=True)
        for key, grid in rep.maps.items():
            write_grid(grid, out / f"map_LM{rep.num:03d}_{key}.lmch", name=f"LM{rep.num} {key} accuracy")
    return out


def write_summary(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_CSV)
        for rep in sorted(reports, key=lambda r: r.num):
            row = [rep.num, rep.name]
            for key in [r.value for r in RANGES] + [GLOBAL]:
                oa, k, _ = rep.scores(key)
                row += [_num(oa), _num(k)]
            w.writerow(row)


def histogram_rows(values, lo, hi, width):
    """[(bin_lo, bin_hi, count)] over [lo, hi]; the last bin is closed."""
    values = np.asarray([v for v in values if not math.isnan(v)], dtype=np.float64)
    nbins = int(round((hi - lo) / width))
    edges = lo + width * np.arange(nbins + 1)
    counts, _ = np.histogram(values, bins=edges)
    return [(float(edges[k]), float(edges[k + 1]), int(counts[k])) for k in range(nbins)]


def write_histograms(reports, out_dir):
    out = Path(out_dir)
    oas = [r.scores(GLOBAL)[0] for r in reports]
    kappas = [r.scores(GLOBAL)[1] for r in reports]
    for fname, rows in (("histogram_oa.csv", histogram_rows(oas, 0.0, 100.0, 2.5)),
                        ("histogram_kappa.csv", histogram_rows(kappas, -1.0, 1.0, 0.05))):
        with open(out / fname, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("bin_lo", "bin_hi", "count"))
            for lo, hi, n in rows:
                w.writerow((repr(round(lo, 10)), repr(round(hi, 10)), n))


def load_report(path):
    with open(path) as fh:
        return EvaluationReport.from_dict(json.load(fh))


def range_key(rng):
    return IlluminationRange(rng).value
